//! Shared fixtures for the integration and acceptance tests.
#![allow(dead_code)]

use flowvc::conversion::{all_pairs_grid, convert, converted_utterance};
use flowvc::evaluation::{conversion_metrics, ConversionMetrics};
use flowvc::features::{generate_corpus, speaker_name, GeneratedCorpus, SpeakerTable, SynthSpec, Utterance};
use flowvc::flow::{FlowCond, FlowConfig, FlowStack};
use flowvc::numerics::{FrameMatrix, SeededRng};
use flowvc::priors::{pretrain_phoneme_prior, EncoderConfig, PhonemeEncoder, PretrainConfig};
use flowvc::training::{initial_model, train, AdamConfig, FlowModel, ModelMode, TrainConfig, TrainData, TrainState};

pub fn random_frames(rng: &mut SeededRng, channels: usize, frames: usize) -> FrameMatrix {
    FrameMatrix::from_vec(channels, frames, rng.standard_normal_vec(channels * frames)).unwrap()
}

pub fn random_cond(rng: &mut SeededRng, cfg: &FlowConfig, squeezed_frames: usize) -> FlowCond {
    FlowCond {
        speaker: rng.standard_normal_vec(cfg.speaker_dim),
        frames: random_frames(rng, cfg.frame_cond_dim(), squeezed_frames),
    }
}

/// Small multi-scale config used by the exactness suites.
pub fn tiny_flow(mel_dim: usize) -> FlowConfig {
    FlowConfig {
        mel_dim,
        n_steps: 12,
        split_every: 4,
        split_channels: 2,
        hidden_channels: 6,
        speaker_dim: 3,
        ..FlowConfig::default()
    }
}

/// Hand-built utterance with a voiced frame guaranteed.
pub fn toy_utterance(rng: &mut SeededRng, id: &str, speaker: &str, mel: usize, frames: usize, n_phonemes: usize) -> Utterance {
    let vuv: Vec<bool> = (0..frames).map(|t| t == 0 || rng.uniform() < 0.6).collect();
    Utterance {
        id: id.into(),
        speaker_id: speaker.into(),
        mel: random_frames(rng, mel, frames),
        f0_raw: vuv.iter().map(|&v| if v { rng.uniform_range(90.0, 200.0) } else { 0.0 }).collect(),
        vuv,
        phoneme_ids: (0..frames).map(|_| rng.below(n_phonemes) as u32).collect(),
        words: vec!["w".into()],
    }
}

pub fn toy_speakers(rng: &mut SeededRng, names: &[&str], dim: usize) -> SpeakerTable {
    let mut t = SpeakerTable::new();
    for n in names {
        t.insert(*n, rng.standard_normal_vec(dim)).unwrap();
    }
    t
}

/// Random model for `mode` whose every parameter is non-trivial.
pub fn random_model(mode: ModelMode, flow: &FlowConfig, enc: &EncoderConfig, rng: &mut SeededRng) -> FlowModel {
    let flow = FlowConfig {
        phone_cond_dim: if mode.text_conditioned() { enc.out_dim } else { 0 },
        ..flow.clone()
    };
    let stack = FlowStack::random(&flow, rng, 0.3).unwrap();
    let encoder = PhonemeEncoder::new(enc, false, rng).unwrap();
    FlowModel::new(mode, stack, encoder).unwrap()
}

/// The desk-scale experiment: 4 speakers, 10 phonemes, 8 mel channels.
pub struct Experiment {
    pub steps: usize,
    pub pretrain_steps: usize,
}

impl Default for Experiment {
    fn default() -> Self {
        Self {
            steps: 1000,
            pretrain_steps: 400,
        }
    }
}

impl Experiment {
    pub fn corpus(&self, seed: u64) -> GeneratedCorpus {
        generate_corpus(&SynthSpec {
            mel_dim: 8,
            embed_dim: 8,
            seed,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            n_phonemes: 10,
            embed_dim: 16,
            out_dim: 8,
            ..EncoderConfig::default()
        }
    }

    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            mel_dim: 8,
            hidden_channels: 16,
            speaker_dim: 8,
            split_channels: 4,
            ..FlowConfig::default()
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: 16,
            seed,
            optimizer: AdamConfig::default(),
            checkpoint_every: 0,
        }
    }

    pub fn pretrain(&self, g: &GeneratedCorpus, seed: u64) -> PhonemeEncoder {
        let cfg = PretrainConfig {
            encoder: self.encoder_config(),
            steps: self.pretrain_steps,
            seed,
            ..PretrainConfig::default()
        };
        pretrain_phoneme_prior(&g.utterances, &g.speakers, &cfg).unwrap().0
    }

    pub fn train(&self, mode: ModelMode, g: &GeneratedCorpus, seed: u64, pretrained: Option<PhonemeEncoder>) -> (FlowModel, TrainData) {
        let pretrained = if mode == ModelMode::FreePretrain {
            Some(pretrained.unwrap_or_else(|| self.pretrain(g, seed)))
        } else {
            None
        };
        let mut model = initial_model(mode, &self.flow_config(), &self.encoder_config(), pretrained, seed).unwrap();
        let data = TrainData::new(g.utterances.clone(), &g.speakers, mode).unwrap();
        let mut state = TrainState::new(&model);
        train(&mut model, &mut state, &data, &self.train_config(seed), |_, _| Ok(())).unwrap();
        (model, data)
    }
}

/// Converted utterances of the all-pairs grid over 5 utterances per speaker.
pub fn convert_grid(model: &FlowModel, g: &GeneratedCorpus) -> Vec<Utterance> {
    let speakers: Vec<String> = (0..g.truth.speaker_ids.len()).map(speaker_name).collect();
    all_pairs_grid(&g.utterances, &speakers, 5)
        .iter()
        .map(|r| {
            let u = g.utterances.iter().find(|u| u.id == r.utterance_id).unwrap();
            let c = convert(model, u, &r.target_speaker, &g.speakers).unwrap();
            converted_utterance(u, &r.target_speaker, &c)
        })
        .collect()
}

pub fn grid_metrics(model: &FlowModel, g: &GeneratedCorpus) -> ConversionMetrics {
    conversion_metrics(&convert_grid(model, g), &g.truth).unwrap()
}

/// Largest reconstruction error of converting every utterance to its own speaker.
pub fn identity_conversion_error(model: &FlowModel, g: &GeneratedCorpus) -> f64 {
    g.utterances
        .iter()
        .map(|u| {
            let c = convert(model, u, &u.speaker_id, &g.speakers).unwrap();
            c.mel.max_abs_diff(&u.mel.truncate_frames(c.mel.frames()))
        })
        .fold(0.0, f64::max)
}
