//! Synthetic multi-speaker corpus with known generating parameters.
//!
//! Each frame is `phone prototype + speaker offset + f0-linked term + noise`,
//! where the f0-linked term is the frame's normalized log-f0 times a fixed
//! direction vector (voiced frames only). Because every component is returned
//! in [`GroundTruth`], an exact nearest-mean classifier can label the speaker
//! and phoneme of any frame, converted or not.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::conditioning::{SpeakerTable, Utterance};
use super::f0::normalized_log_f0;
use crate::error::{Error, Result};
use crate::numerics::{FrameMatrix, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_speakers: usize,
    pub n_phonemes: usize,
    pub mel_dim: usize,
    pub embed_dim: usize,
    pub utterances_per_speaker: usize,
    /// Inclusive range.
    pub phones_per_utterance: (usize, usize),
    /// Inclusive range.
    pub frames_per_phone: (usize, usize),
    pub speaker_offset_scale: f64,
    pub phone_pattern_scale: f64,
    pub noise_scale: f64,
    /// Hz.
    pub base_f0_range: (f64, f64),
    /// Amplitude of the slow sinusoidal log-f0 drift within a sentence.
    pub f0_drift: f64,
    /// Probability that a phoneme is voiced.
    pub voiced_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_speakers: 4,
            n_phonemes: 10,
            mel_dim: 80,
            embed_dim: 32,
            utterances_per_speaker: 20,
            phones_per_utterance: (4, 8),
            frames_per_phone: (3, 8),
            speaker_offset_scale: 2.0,
            phone_pattern_scale: 3.0,
            noise_scale: 0.3,
            base_f0_range: (90.0, 250.0),
            f0_drift: 0.1,
            voiced_fraction: 0.7,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth spec: {m}")));
        if self.n_speakers == 0 || self.n_phonemes == 0 {
            return bad("need at least one speaker and one phoneme");
        }
        if self.mel_dim == 0 || self.embed_dim == 0 {
            return bad("mel_dim and embed_dim must be positive");
        }
        if self.utterances_per_speaker == 0 {
            return bad("utterances_per_speaker must be positive");
        }
        let (pl, ph) = self.phones_per_utterance;
        let (fl, fh) = self.frames_per_phone;
        if pl == 0 || fl == 0 || pl > ph || fl > fh {
            return bad("phone and frame ranges must be non-empty and start at >= 1");
        }
        for (name, v) in [
            ("speaker_offset_scale", self.speaker_offset_scale),
            ("phone_pattern_scale", self.phone_pattern_scale),
            ("noise_scale", self.noise_scale),
            ("f0_drift", self.f0_drift),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(&format!("{name} must be finite and >= 0"));
            }
        }
        let (lo, hi) = self.base_f0_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad("base_f0_range must be positive and ordered");
        }
        if !(0.0..=1.0).contains(&self.voiced_fraction) {
            return bad("voiced_fraction must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Generating parameters of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub speaker_ids: Vec<String>,
    pub speaker_offsets: Vec<Vec<f64>>,
    pub speaker_base_f0: Vec<f64>,
    pub phoneme_prototypes: Vec<Vec<f64>>,
    pub phoneme_voiced: Vec<bool>,
    /// Already scaled; the f0-linked term is `f0_norm · f0_direction`.
    pub f0_direction: Vec<f64>,
    pub noise_scale: f64,
}

impl GroundTruth {
    pub fn mel_dim(&self) -> usize {
        self.f0_direction.len()
    }

    pub fn speaker_index(&self, id: &str) -> Option<usize> {
        self.speaker_ids.iter().position(|s| s == id)
    }

    /// Noise-free frame the generator would emit.
    pub fn frame_mean(&self, speaker: usize, phoneme: usize, f0_norm: f64, voiced: bool) -> Vec<f64> {
        let f0 = if voiced { f0_norm } else { 0.0 };
        self.phoneme_prototypes[phoneme]
            .iter()
            .zip(&self.speaker_offsets[speaker])
            .zip(&self.f0_direction)
            .map(|((p, o), d)| p + o + f0 * d)
            .collect()
    }

    /// Maximum-likelihood (speaker, phoneme) under the generator's isotropic noise
    /// and uniform priors: the nearest frame mean.
    pub fn classify_frame(&self, frame: &[f64], f0_norm: f64, voiced: bool) -> (usize, usize) {
        let f0 = if voiced { f0_norm } else { 0.0 };
        let mut best = (0, 0);
        let mut best_d = f64::INFINITY;
        for (s, off) in self.speaker_offsets.iter().enumerate() {
            for (p, proto) in self.phoneme_prototypes.iter().enumerate() {
                let d: f64 = frame
                    .iter()
                    .enumerate()
                    .map(|(c, x)| {
                        let m = proto[c] + off[c] + f0 * self.f0_direction[c];
                        (x - m) * (x - m)
                    })
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = (s, p);
                }
            }
        }
        best
    }

    /// Least-squares coefficient of the f0 direction in a frame after removing
    /// the prototype and offset of the given labels.
    pub fn f0_component(&self, frame: &[f64], speaker: usize, phoneme: usize) -> f64 {
        let dd: f64 = self.f0_direction.iter().map(|d| d * d).sum();
        if dd == 0.0 {
            return 0.0;
        }
        let proto = &self.phoneme_prototypes[phoneme];
        let off = &self.speaker_offsets[speaker];
        let dot: f64 = frame
            .iter()
            .enumerate()
            .map(|(c, x)| (x - proto[c] - off[c]) * self.f0_direction[c])
            .sum();
        dot / dd
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("ground truth serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub utterances: Vec<Utterance>,
    pub speakers: SpeakerTable,
    pub truth: GroundTruth,
}

pub fn speaker_name(i: usize) -> String {
    format!("spk{i}")
}

pub fn generate_corpus(spec: &SynthSpec) -> Result<GeneratedCorpus> {
    spec.validate()?;
    let root = SeededRng::new(spec.seed);
    let mut rng = root.derive(0);
    let d = spec.mel_dim;

    let speaker_ids: Vec<String> = (0..spec.n_speakers).map(speaker_name).collect();
    let speaker_offsets: Vec<Vec<f64>> = (0..spec.n_speakers)
        .map(|_| {
            (0..d)
                .map(|_| spec.speaker_offset_scale * rng.standard_normal())
                .collect()
        })
        .collect();
    let speaker_base_f0: Vec<f64> = (0..spec.n_speakers)
        .map(|_| rng.uniform_range(spec.base_f0_range.0, spec.base_f0_range.1))
        .collect();
    let phoneme_prototypes: Vec<Vec<f64>> = (0..spec.n_phonemes)
        .map(|_| {
            (0..d)
                .map(|_| spec.phone_pattern_scale * rng.standard_normal())
                .collect()
        })
        .collect();
    let mut phoneme_voiced: Vec<bool> = (0..spec.n_phonemes)
        .map(|_| rng.uniform() < spec.voiced_fraction)
        .collect();
    // Every utterance needs a voiced frame, so phoneme 0 is always voiced.
    phoneme_voiced[0] = true;

    let raw_dir = rng.standard_normal_vec(d);
    let norm = raw_dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let f0_direction: Vec<f64> = raw_dir
        .iter()
        .map(|v| 0.5 * spec.phone_pattern_scale * v / norm)
        .collect();

    // Fixed random projection from offset space to the embedding space.
    let offset_scale = if spec.speaker_offset_scale > 0.0 {
        spec.speaker_offset_scale
    } else {
        1.0
    };
    let proj_std = 1.0 / ((d as f64).sqrt() * offset_scale);
    let projection: Vec<f64> = (0..spec.embed_dim * d)
        .map(|_| proj_std * rng.standard_normal())
        .collect();
    let mut speakers = SpeakerTable::new();
    for (id, off) in speaker_ids.iter().zip(&speaker_offsets) {
        let emb: Vec<f64> = (0..spec.embed_dim)
            .map(|r| (0..d).map(|c| projection[r * d + c] * off[c]).sum())
            .collect();
        speakers.insert(id.clone(), emb)?;
    }

    let truth = GroundTruth {
        speaker_ids: speaker_ids.clone(),
        speaker_offsets,
        speaker_base_f0,
        phoneme_prototypes,
        phoneme_voiced,
        f0_direction,
        noise_scale: spec.noise_scale,
    };

    let mut utterances = Vec::with_capacity(spec.n_speakers * spec.utterances_per_speaker);
    for s in 0..spec.n_speakers {
        for k in 0..spec.utterances_per_speaker {
            let mut urng = root.derive(1 + (s * spec.utterances_per_speaker + k) as u64);
            utterances.push(generate_utterance(spec, &truth, s, k, &mut urng)?);
        }
    }
    Ok(GeneratedCorpus {
        utterances,
        speakers,
        truth,
    })
}

fn range_draw(rng: &mut SeededRng, (lo, hi): (usize, usize)) -> usize {
    lo + rng.below(hi - lo + 1)
}

fn generate_utterance(
    spec: &SynthSpec,
    truth: &GroundTruth,
    speaker: usize,
    index: usize,
    rng: &mut SeededRng,
) -> Result<Utterance> {
    let n_phones = range_draw(rng, spec.phones_per_utterance);
    let mut phones: Vec<usize> = (0..n_phones).map(|_| rng.below(spec.n_phonemes)).collect();
    if !phones.iter().any(|&p| truth.phoneme_voiced[p]) {
        phones[0] = 0;
    }
    let durations: Vec<usize> = phones
        .iter()
        .map(|_| range_draw(rng, spec.frames_per_phone))
        .collect();
    let frames: usize = durations.iter().sum();

    let mut phoneme_ids = Vec::with_capacity(frames);
    for (&p, &dur) in phones.iter().zip(&durations) {
        phoneme_ids.extend(std::iter::repeat(p as u32).take(dur));
    }
    let vuv: Vec<bool> = phoneme_ids
        .iter()
        .map(|&p| truth.phoneme_voiced[p as usize])
        .collect();

    let period = rng.uniform_range(30.0, 90.0);
    let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
    let tilt = 0.5 * spec.f0_drift * rng.standard_normal();
    let base = truth.speaker_base_f0[speaker];
    let f0_raw: Vec<f64> = (0..frames)
        .map(|t| {
            if !vuv[t] {
                return 0.0;
            }
            let x = t as f64;
            let rel = if frames > 1 { x / (frames - 1) as f64 - 0.5 } else { 0.0 };
            base * (spec.f0_drift * (std::f64::consts::TAU * x / period + phase).sin() + tilt * rel).exp()
        })
        .collect();
    let f0_norm = normalized_log_f0(&f0_raw, &vuv)?;

    let d = spec.mel_dim;
    let mut mel = FrameMatrix::zeros(d, frames);
    for t in 0..frames {
        let mean = truth.frame_mean(speaker, phoneme_ids[t] as usize, f0_norm[t], vuv[t]);
        for (c, m) in mean.iter().enumerate() {
            mel.set(c, t, m + spec.noise_scale * rng.standard_normal());
        }
    }

    let mut words = Vec::new();
    let mut i = 0;
    while i < phones.len() {
        let len = (1 + rng.below(3)).min(phones.len() - i);
        let word: Vec<String> = phones[i..i + len].iter().map(|p| format!("p{p}")).collect();
        words.push(word.join(""));
        i += len;
    }

    Ok(Utterance {
        id: format!("{}_{index:04}", speaker_name(speaker)),
        speaker_id: speaker_name(speaker),
        mel,
        f0_raw,
        vuv,
        phoneme_ids,
        words,
    })
}
