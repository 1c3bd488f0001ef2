use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::batching::batch_indices;
use super::model::{Example, FlowModel, ModelMode};
use super::optim::{Adam, AdamConfig};
use crate::csvio::{read_rows, write_rows};
use crate::error::{Error, Result};
use crate::features::{build_conditioning, ConditioningSet, SpeakerTable, Utterance};
use crate::flow::{find_section, read_checkpoint, write_checkpoint, FlowConfig, FlowStack, Section, FLOW_TAG};
use crate::numerics::{gaussian_log_density, SeededRng};
use crate::priors::{EncoderConfig, PhonemeEncoder, ENCODER_TAG};

pub const OPTIMIZER_TAG: [u8; 4] = *b"OPTM";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Write a checkpoint every this many steps; `0` writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 16,
            optimizer: AdamConfig::default(),
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", o.learning_rate)));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub nll: f64,
    pub bits_per_dim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Number of completed optimizer steps.
    pub step: usize,
    pub optimizer: Adam,
    pub history: Vec<LossRecord>,
}

impl TrainState {
    pub fn new(model: &FlowModel) -> Self {
        Self {
            step: 0,
            optimizer: Adam::new(model.trainable_len()),
            history: Vec::new(),
        }
    }
}

/// A corpus with its conditioning built once for the model's mode.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub utterances: Vec<Utterance>,
    pub conds: Vec<ConditioningSet>,
}

impl TrainData {
    pub fn new(utterances: Vec<Utterance>, speakers: &SpeakerTable, mode: ModelMode) -> Result<TrainData> {
        let conds = utterances
            .iter()
            .map(|u| build_conditioning(u, speakers, mode.text_conditioned()))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainData { utterances, conds })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn example(&self, i: usize) -> Example<'_> {
        Example::new(&self.utterances[i], &self.conds[i])
    }

    pub fn examples(&self, idx: &[usize]) -> Vec<Example<'_>> {
        idx.iter().map(|&i| self.example(i)).collect()
    }

    pub fn all(&self) -> Vec<Example<'_>> {
        (0..self.len()).map(|i| self.example(i)).collect()
    }
}

/// Run one optimizer step. Initializes actnorm from the batch when needed.
pub fn train_step(model: &mut FlowModel, state: &mut TrainState, data: &TrainData, cfg: &TrainConfig) -> Result<LossRecord> {
    let step = state.step;
    let idx = batch_indices(cfg.seed, step, data.len(), cfg.batch_size);
    let batch = data.examples(&idx);
    let wrap = |e: Error| Error::Training { step, reason: e.to_string() };
    if !model.flow.actnorm_initialized() {
        model.initialize_actnorm(&batch).map_err(wrap)?;
    }
    let (loss, mut grads) = model.loss_and_gradient(&batch).map_err(wrap)?;
    let mut values = model.trainable_values();
    state.optimizer.step(&mut values, &mut grads, &cfg.optimizer);
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Training {
            step,
            reason: format!("parameter {i} became non-finite"),
        });
    }
    model.set_trainable_values(&values);
    model.flow.ensure_nonsingular();
    let rec = LossRecord {
        step,
        nll: loss.nll,
        bits_per_dim: loss.bits_per_dim,
    };
    state.history.push(rec);
    state.step += 1;
    Ok(rec)
}

/// Train until `cfg.steps` optimizer steps have completed, calling
/// `on_checkpoint` every `cfg.checkpoint_every` steps and once at the end.
pub fn train(
    model: &mut FlowModel,
    state: &mut TrainState,
    data: &TrainData,
    cfg: &TrainConfig,
    mut on_checkpoint: impl FnMut(&FlowModel, &TrainState) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    let frozen_hash = (!model.mode.trains_encoder()).then(|| model.encoder.params().hash());
    while state.step < cfg.steps {
        train_step(model, state, data, cfg)?;
        if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 && state.step < cfg.steps {
            on_checkpoint(model, state)?;
        }
    }
    if let Some(h) = frozen_hash {
        if model.encoder.params().hash() != h {
            return Err(Error::State("frozen encoder parameters changed during training".into()));
        }
    }
    on_checkpoint(model, state)
}

/// Pooled bits-per-dim of `model` over every utterance in `data`.
pub fn corpus_bits_per_dim(model: &FlowModel, data: &TrainData) -> Result<f64> {
    Ok(model.nll_loss(&data.all())?.bits_per_dim)
}

/// Bits-per-dim of a per-channel Gaussian fit by closed-form mean and
/// variance to the same (squeeze-trimmed) frames the flow models.
pub fn diagonal_gaussian_bits_per_dim(utterances: &[Utterance], squeeze_factor: usize) -> Result<f64> {
    let mel = utterances
        .first()
        .ok_or_else(|| Error::Config("baseline needs at least one utterance".into()))?
        .mel
        .channels();
    let used = |u: &Utterance| u.frames() - u.frames() % squeeze_factor;
    let mut sum = vec![0.0; mel];
    let mut n = 0usize;
    for u in utterances {
        for (c, s) in sum.iter_mut().enumerate() {
            *s += u.mel.row(c)[..used(u)].iter().sum::<f64>();
        }
        n += used(u);
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let mut var = vec![0.0; mel];
    for u in utterances {
        for (c, v) in var.iter_mut().enumerate() {
            *v += u.mel.row(c)[..used(u)].iter().map(|x| (x - mean[c]).powi(2)).sum::<f64>();
        }
    }
    let sigma: Vec<f64> = var.iter().map(|v| (v / n as f64).sqrt()).collect();
    let mut log_lik = 0.0;
    for u in utterances {
        for c in 0..mel {
            let row = &u.mel.row(c)[..used(u)];
            log_lik += gaussian_log_density(row, &vec![mean[c]; row.len()], &vec![sigma[c]; row.len()])?;
        }
    }
    Ok(-log_lik / ((n * mel) as f64 * std::f64::consts::LN_2))
}

pub fn write_history_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    write_rows(path, history, &["step", "nll", "bits_per_dim"])
}

pub fn read_history_csv(path: &Path) -> Result<Vec<LossRecord>> {
    read_rows(path)
}

/// Checkpoint sections for a model, optionally with optimizer state.
pub fn model_sections(model: &FlowModel, state: Option<&TrainState>) -> Vec<Section> {
    let mut flow = model.flow.to_section();
    flow.header.insert("mode".into(), Value::String(model.mode.name().into()));
    let mut sections = vec![flow, model.encoder.to_section()];
    if let Some(s) = state {
        let mut header = Map::new();
        header.insert("step".into(), Value::from(s.step as u64));
        header.insert("t".into(), Value::from(s.optimizer.t));
        header.insert("n".into(), Value::from(s.optimizer.m.len() as u64));
        let values = s.optimizer.m.iter().chain(&s.optimizer.v).copied().collect();
        sections.push(Section {
            tag: OPTIMIZER_TAG,
            header,
            values,
        });
    }
    sections
}

pub fn save_model(path: &Path, model: &FlowModel, state: Option<&TrainState>) -> Result<()> {
    write_checkpoint(path, &model_sections(model, state))
}

/// Load a model checkpoint. Optimizer state comes back when present; its
/// loss history is not stored in the checkpoint and starts empty.
pub fn load_model(path: &Path) -> Result<(FlowModel, Option<TrainState>)> {
    let sections = read_checkpoint(path)?;
    let flow_sec = find_section(&sections, &FLOW_TAG).ok_or_else(|| Error::format(path, "FLOW", "section missing"))?;
    let mode: String = flow_sec.field(path, "mode")?;
    let mode = ModelMode::parse(&mode).map_err(|e| Error::format(path, "FLOW.mode", e.to_string()))?;
    let flow = FlowStack::from_section(flow_sec, path)?;
    let enc_sec = find_section(&sections, &ENCODER_TAG).ok_or_else(|| Error::format(path, "PENC", "section missing"))?;
    let encoder = PhonemeEncoder::from_section(enc_sec, path)?;
    let model = FlowModel::new(mode, flow, encoder)?;
    let state = match find_section(&sections, &OPTIMIZER_TAG) {
        None => None,
        Some(s) => {
            let step: usize = s.field(path, "step")?;
            let t: u64 = s.field(path, "t")?;
            let n: usize = s.field(path, "n")?;
            if s.values.len() != 2 * n || n != model.trainable_len() {
                return Err(Error::format(path, "OPTM.values", "optimizer state does not match the model"));
            }
            Some(TrainState {
                step,
                optimizer: Adam {
                    m: s.values[..n].to_vec(),
                    v: s.values[n..].to_vec(),
                    t,
                },
                history: Vec::new(),
            })
        }
    };
    Ok((model, state))
}

/// Read a frozen encoder from any checkpoint containing a `PENC` section.
pub fn load_encoder(path: &Path) -> Result<PhonemeEncoder> {
    let sections = read_checkpoint(path)?;
    let sec = find_section(&sections, &ENCODER_TAG).ok_or_else(|| {
        Error::Config(format!("{} has no phoneme encoder section", path.display()))
    })?;
    PhonemeEncoder::from_section(sec, path)
}

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("checkpoint_{step:06}.fckp"))
}

pub fn save_encoder(path: &Path, encoder: &PhonemeEncoder) -> Result<()> {
    write_checkpoint(path, &[encoder.to_section()])
}

/// Fresh model for `mode`. The flow's phoneme-feature width is derived from
/// the mode. Pretrained mode requires `pretrained`; the other modes start
/// from it when given, otherwise from a seeded random encoder.
pub fn initial_model(
    mode: ModelMode,
    flow: &FlowConfig,
    encoder: &EncoderConfig,
    pretrained: Option<PhonemeEncoder>,
    seed: u64,
) -> Result<FlowModel> {
    let rng = SeededRng::new(seed);
    let encoder = match (mode, pretrained) {
        (_, Some(e)) => e.into_mean_only(),
        (ModelMode::FreePretrain, None) => {
            return Err(Error::Config("free-pretrain mode requires a pre-trained encoder checkpoint".into()))
        }
        (_, None) => PhonemeEncoder::new(encoder, false, &mut rng.derive(1))?,
    };
    let flow_cfg = FlowConfig {
        phone_cond_dim: if mode.text_conditioned() { encoder.config().out_dim } else { 0 },
        ..flow.clone()
    };
    let stack = FlowStack::new(&flow_cfg, &mut rng.derive(0))?;
    FlowModel::new(mode, stack, encoder)
}
