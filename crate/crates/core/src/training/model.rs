//! A flow plus its phoneme encoder, with the exact negative log-likelihood
//! and its analytic gradient for each training mode.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ConditioningSet, Utterance};
use crate::flow::{usable_frames, FlowCond, FlowConfig, FlowStack, LatentBundle};
use crate::priors::{
    field_to_frames, fixed_prior, phoneme_prior_field, prior_log_density, prior_residual, EncoderTrace, PhonemeEncoder,
    PriorField, PriorMode,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelMode {
    /// Couplings see `μ_phone`; the prior is a fixed standard normal.
    #[serde(rename = "text-cond")]
    TextCond,
    /// Text-free; prior mean from a frozen pre-trained encoder.
    #[serde(rename = "free-pretrain")]
    FreePretrain,
    /// Text-free; prior mean from an encoder trained with the flow.
    #[serde(rename = "free-joint")]
    FreeJoint,
}

impl ModelMode {
    pub const ALL: [ModelMode; 3] = [ModelMode::TextCond, ModelMode::FreePretrain, ModelMode::FreeJoint];

    pub fn prior_mode(self) -> PriorMode {
        match self {
            ModelMode::TextCond => PriorMode::Fixed,
            ModelMode::FreePretrain => PriorMode::Pretrained,
            ModelMode::FreeJoint => PriorMode::Joint,
        }
    }

    pub fn text_conditioned(self) -> bool {
        self == ModelMode::TextCond
    }

    /// Whether the encoder's parameters are optimized.
    pub fn trains_encoder(self) -> bool {
        self != ModelMode::FreePretrain
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelMode::TextCond => "text-cond",
            ModelMode::FreePretrain => "free-pretrain",
            ModelMode::FreeJoint => "free-joint",
        }
    }

    pub fn parse(s: &str) -> Result<ModelMode> {
        ModelMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}` (expected text-cond, free-pretrain or free-joint)")))
    }
}

impl std::fmt::Display for ModelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One utterance's inputs as the model sees them.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub id: &'a str,
    pub mel: &'a crate::numerics::FrameMatrix,
    pub cond: &'a ConditioningSet,
    /// Frame-level alignment; read by the phoneme prior in text-free modes.
    pub phoneme_ids: &'a [u32],
}

impl<'a> Example<'a> {
    pub fn new(u: &'a Utterance, cond: &'a ConditioningSet) -> Self {
        Self {
            id: &u.id,
            mel: &u.mel,
            cond,
            phoneme_ids: &u.phoneme_ids,
        }
    }
}

/// Likelihood terms of one utterance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtteranceTerms {
    pub log_prior: f64,
    pub logdet: f64,
    /// Latent element count (mel_dim × frames used).
    pub count: usize,
}

impl UtteranceTerms {
    pub fn nll(&self) -> f64 {
        -(self.log_prior + self.logdet)
    }
}

/// Batch summary: `nll` is the mean per-utterance negative log-likelihood
/// (nats); bits-per-dim pools every element of the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub nll: f64,
    pub bits_per_dim: f64,
    pub log_prior: f64,
    pub logdet: f64,
    pub count: usize,
    pub utterances: usize,
}

impl BatchLoss {
    pub fn from_terms(terms: &[UtteranceTerms]) -> BatchLoss {
        let n = terms.len().max(1) as f64;
        let log_prior: f64 = terms.iter().map(|t| t.log_prior).sum();
        let logdet: f64 = terms.iter().map(|t| t.logdet).sum();
        let count: usize = terms.iter().map(|t| t.count).sum();
        let total_nll = -(log_prior + logdet);
        BatchLoss {
            nll: total_nll / n,
            bits_per_dim: total_nll / (count.max(1) as f64 * std::f64::consts::LN_2),
            log_prior,
            logdet,
            count,
            utterances: terms.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowModel {
    pub mode: ModelMode,
    pub flow: FlowStack,
    pub encoder: PhonemeEncoder,
}

struct Forward {
    cond: FlowCond,
    field: PriorField,
    enc_trace: Option<EncoderTrace>,
    z: LatentBundle,
    logdet: f64,
}

impl FlowModel {
    pub fn new(mode: ModelMode, flow: FlowStack, encoder: PhonemeEncoder) -> Result<FlowModel> {
        let fc = flow.config();
        let ec = encoder.config();
        if mode.text_conditioned() {
            if fc.phone_cond_dim != ec.out_dim {
                return Err(Error::Config(format!(
                    "text-conditioned flow expects {}-dim phoneme features, encoder emits {}",
                    fc.phone_cond_dim, ec.out_dim
                )));
            }
        } else {
            if fc.phone_cond_dim != 0 {
                return Err(Error::Config("text-free flow must not take phoneme features".into()));
            }
            if ec.out_dim != fc.mel_dim {
                return Err(Error::Config(format!(
                    "prior encoder emits {} dims, flow models {}",
                    ec.out_dim, fc.mel_dim
                )));
            }
        }
        Ok(FlowModel { mode, flow, encoder })
    }

    pub fn flow_config(&self) -> &FlowConfig {
        self.flow.config()
    }

    /// Length of the optimized parameter vector: flow first, then the
    /// encoder when it is trained.
    pub fn trainable_len(&self) -> usize {
        self.flow.params().len() + if self.mode.trains_encoder() { self.encoder.params().len() } else { 0 }
    }

    pub fn trainable_values(&self) -> Vec<f64> {
        let mut v = self.flow.params().values().to_vec();
        if self.mode.trains_encoder() {
            v.extend_from_slice(self.encoder.params().values());
        }
        v
    }

    pub fn set_trainable_values(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.trainable_len(), "trainable vector length");
        let n = self.flow.params().len();
        self.flow.params_mut().values_mut().copy_from_slice(&v[..n]);
        if self.mode.trains_encoder() {
            self.encoder.params_mut().values_mut().copy_from_slice(&v[n..]);
        }
    }

    pub fn frames_used(&self, frames: usize) -> usize {
        usable_frames(frames, self.flow_config().squeeze_factor)
    }

    /// Coupling conditioning for `ex`, with the encoder trace in text mode.
    pub fn flow_cond(&self, ex: &Example) -> Result<(FlowCond, Option<EncoderTrace>)> {
        let used = self.frames_used(ex.mel.frames());
        if self.mode.text_conditioned() {
            let ids = ex.cond.phoneme_ids.as_deref().ok_or_else(|| {
                Error::Config(format!("{}: text-conditioned model needs phoneme ids in the conditioning", ex.id))
            })?;
            if ids.len() < used {
                return Err(Error::Shape(format!("{}: {} phoneme ids for {used} frames", ex.id, ids.len())));
            }
            let out = self.encoder.forward(&ids[..used])?;
            let cond = FlowCond::build(self.flow_config(), ex.cond, Some(&out.mu), used)?;
            Ok((cond, Some(out.trace)))
        } else {
            Ok((FlowCond::build(self.flow_config(), ex.cond, None, used)?, None))
        }
    }

    fn prior_field(&self, ex: &Example, z: &LatentBundle) -> Result<(PriorField, Option<EncoderTrace>)> {
        if self.mode.text_conditioned() {
            return Ok((fixed_prior(z), None));
        }
        let used = self.frames_used(ex.mel.frames());
        let (field, trace) = phoneme_prior_field(&self.encoder, self.flow_config(), ex.phoneme_ids, used)?;
        Ok((field, Some(trace)))
    }

    fn forward(&self, ex: &Example) -> Result<Forward> {
        let (cond, cond_trace) = self.flow_cond(ex)?;
        let (z, logdet) = self.flow.encode(ex.mel, &cond)?;
        let (field, prior_trace) = self.prior_field(ex, &z)?;
        Ok(Forward {
            cond,
            field,
            enc_trace: cond_trace.or(prior_trace),
            z,
            logdet,
        })
    }

    fn terms_of(&self, ex: &Example, f: &Forward) -> Result<UtteranceTerms> {
        let log_prior = prior_log_density(&f.z, &f.field)?;
        let t = UtteranceTerms {
            log_prior,
            logdet: f.logdet,
            count: f.z.element_count(),
        };
        if !t.nll().is_finite() {
            return Err(Error::NonFinite(format!("negative log-likelihood of utterance {}", ex.id)));
        }
        Ok(t)
    }

    pub fn utterance_terms(&self, ex: &Example) -> Result<UtteranceTerms> {
        let f = self.forward(ex)?;
        self.terms_of(ex, &f)
    }

    /// Accumulate `weight · ∂nll/∂θ` for one utterance into `grads`
    /// (trainable layout). Returns the utterance's terms.
    pub fn accumulate_gradient(&self, ex: &Example, weight: f64, grads: &mut [f64]) -> Result<UtteranceTerms> {
        let (cond, cond_trace) = self.flow_cond(ex)?;
        let (z, logdet, trace) = self.flow.encode_traced(ex.mel, &cond)?;
        let (field, prior_trace) = self.prior_field(ex, &z)?;
        let fwd = Forward {
            cond,
            field,
            enc_trace: cond_trace.or(prior_trace),
            z,
            logdet,
        };
        let terms = self.terms_of(ex, &fwd)?;

        // nll = ½‖z − μ‖² − logdet + const per utterance.
        let mut dz = prior_residual(&fwd.z, &fwd.field)?;
        for part in dz.parts_mut() {
            part.as_mut_slice().iter_mut().for_each(|v| *v *= weight);
        }
        let n_flow = self.flow.params().len();
        let (g_flow, g_enc) = grads.split_at_mut(n_flow);
        let d_cond = self.flow.backward(&fwd.cond, &trace, &dz, -weight, g_flow)?;

        if self.mode.trains_encoder() {
            let enc_trace = fwd.enc_trace.as_ref().expect("encoder ran for this mode");
            let d_mu = if self.mode.text_conditioned() {
                FlowCond::phone_gradient(self.flow_config(), &d_cond)?
            } else {
                let mut dmu = dz;
                for part in dmu.parts_mut() {
                    part.as_mut_slice().iter_mut().for_each(|v| *v = -*v);
                }
                field_to_frames(self.flow_config(), &dmu)?
            };
            self.encoder.backward(enc_trace, &d_mu, None, g_enc);
        }
        Ok(terms)
    }

    pub fn nll_loss(&self, batch: &[Example]) -> Result<BatchLoss> {
        let terms = batch.iter().map(|ex| self.utterance_terms(ex)).collect::<Result<Vec<_>>>()?;
        Ok(BatchLoss::from_terms(&terms))
    }

    /// Loss and gradient of the mean per-utterance NLL over `batch`.
    pub fn loss_and_gradient(&self, batch: &[Example]) -> Result<(BatchLoss, Vec<f64>)> {
        let mut grads = vec![0.0; self.trainable_len()];
        let w = 1.0 / batch.len().max(1) as f64;
        let mut terms = Vec::with_capacity(batch.len());
        for ex in batch {
            terms.push(self.accumulate_gradient(ex, w, &mut grads)?);
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient component {i}")));
        }
        Ok((BatchLoss::from_terms(&terms), grads))
    }

    /// Data-dependent actnorm initialization from `batch`.
    pub fn initialize_actnorm(&mut self, batch: &[Example]) -> Result<()> {
        let conds = batch.iter().map(|ex| Ok(self.flow_cond(ex)?.0)).collect::<Result<Vec<_>>>()?;
        let pairs: Vec<_> = batch.iter().zip(&conds).map(|(ex, c)| (ex.mel, c)).collect();
        self.flow.initialize_actnorm(&pairs)
    }
}
