//! Variational pre-training of the phoneme encoder.
//!
//! The encoder emits `(μ, log σ)` per frame; a sample `u = μ + σ ⊙ ε` is
//! decoded by a small speaker-aware linear frame decoder
//! `mel_hat = A u + B spk + c`. The loss per batch is
//!
//! ```text
//! MSE(mel_hat, mel) + β(step) · KLD(N(μ, σ²) ‖ N(0, 1))
//! ```
//!
//! with both terms averaged over every (channel, frame) element and β rising
//! linearly from 0 to `beta_max` over the first `warmup_fraction` of steps.

use serde::{Deserialize, Serialize};

use super::encoder::{EncoderConfig, PhonemeEncoder};
use crate::error::{Error, Result};
use crate::features::{SpeakerTable, Utterance};
use crate::flow::{ParamRange, ParamSet};
use crate::numerics::{matmul_frames, matmul_frames_transposed, outer_frames, FrameMatrix, SeededRng};
use crate::training::{batch_indices, Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub encoder: EncoderConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub beta_max: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            steps: 1000,
            batch_size: 16,
            optimizer: AdamConfig {
                learning_rate: 1e-2,
                ..AdamConfig::default()
            },
            beta_max: 1e-2,
            warmup_fraction: 0.5,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    /// KLD weight at `step`.
    pub fn beta(&self, step: usize) -> f64 {
        let warm = self.warmup_fraction * self.steps as f64;
        if warm <= 0.0 {
            return self.beta_max;
        }
        self.beta_max * (step as f64 / warm).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub step: usize,
    pub beta: f64,
    /// Reconstruction MSE of the noisy sample that was optimized.
    pub mse: f64,
    pub kld: f64,
    pub loss: f64,
    /// Reconstruction MSE on the same batch with `u = μ`, before the update.
    pub mean_mse: f64,
}

pub fn write_pretrain_history_csv(path: &std::path::Path, history: &[PretrainRecord]) -> Result<()> {
    crate::csvio::write_rows(path, history, &["step", "beta", "mse", "kld", "loss", "mean_mse"])
}

/// KLD of `N(μ, σ²)` against `N(0, 1)`, summed over elements.
pub fn gaussian_kld(mu: &[f64], log_sigma: &[f64]) -> f64 {
    mu.iter()
        .zip(log_sigma)
        .map(|(m, ls)| 0.5 * (m * m + (2.0 * ls).exp() - 1.0 - 2.0 * ls))
        .sum()
}

struct FrameDecoder {
    params: ParamSet,
    a: ParamRange,
    b: ParamRange,
    c: ParamRange,
    mel: usize,
    spk: usize,
}

impl FrameDecoder {
    fn new(mel: usize, latent: usize, spk: usize) -> Self {
        let mut params = ParamSet::new();
        let a = params.add("decoder.latent", &[mel, latent]);
        let b = params.add("decoder.speaker", &[mel, spk]);
        let c = params.add("decoder.bias", &[mel]);
        let p = params.values_mut();
        for i in 0..mel.min(latent) {
            a.of_mut(p)[i * latent + i] = 1.0;
        }
        Self { params, a, b, c, mel, spk }
    }

    fn latent(&self) -> usize {
        self.a.len / self.mel
    }

    fn forward(&self, u: &FrameMatrix, speaker: &[f64]) -> FrameMatrix {
        let p = self.params.values();
        let t = u.frames();
        let mut y = FrameMatrix::zeros(self.mel, t);
        matmul_frames(self.a.of(p), self.mel, self.latent(), u.as_slice(), t, y.as_mut_slice());
        let (bw, c) = (self.b.of(p), self.c.of(p));
        for o in 0..self.mel {
            let off = c[o] + (0..self.spk).map(|k| bw[o * self.spk + k] * speaker[k]).sum::<f64>();
            y.row_mut(o).iter_mut().for_each(|v| *v += off);
        }
        y
    }

    /// Accumulates parameter gradients; returns `dL/du`.
    fn backward(&self, u: &FrameMatrix, speaker: &[f64], dy: &FrameMatrix, grads: &mut [f64]) -> FrameMatrix {
        let p = self.params.values();
        let t = u.frames();
        let l = self.latent();
        outer_frames(self.a.of_mut(grads), self.mel, l, dy.as_slice(), u.as_slice(), t);
        for o in 0..self.mel {
            let s: f64 = dy.row(o).iter().sum();
            self.c.of_mut(grads)[o] += s;
            let gb = self.b.of_mut(grads);
            for k in 0..self.spk {
                gb[o * self.spk + k] += s * speaker[k];
            }
        }
        let mut du = FrameMatrix::zeros(l, t);
        matmul_frames_transposed(self.a.of(p), self.mel, l, dy.as_slice(), t, du.as_mut_slice());
        du
    }
}

fn sq_err(a: &FrameMatrix, b: &FrameMatrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Pre-train a variational phoneme encoder on `corpus`. Returns the encoder
/// with its `μ_phone` head only, plus the per-step history.
pub fn pretrain_phoneme_prior(
    corpus: &[Utterance],
    speakers: &SpeakerTable,
    config: &PretrainConfig,
) -> Result<(PhonemeEncoder, Vec<PretrainRecord>)> {
    if corpus.is_empty() {
        return Err(Error::Config("pre-training needs a non-empty corpus".into()));
    }
    let mel = corpus[0].mel.channels();
    if config.encoder.out_dim != mel {
        return Err(Error::Config(format!(
            "encoder out_dim {} differs from corpus mel dimension {mel}",
            config.encoder.out_dim
        )));
    }
    let spk_dim = speakers
        .dim()
        .ok_or_else(|| Error::Config("speaker table is empty".into()))?;
    for u in corpus {
        u.validate(Some(config.encoder.n_phonemes))?;
        speakers.get(&u.speaker_id)?;
    }
    let root = SeededRng::new(config.seed);
    let mut enc = PhonemeEncoder::new(&config.encoder, true, &mut root.derive(0))?;
    let mut dec = FrameDecoder::new(mel, config.encoder.out_dim, spk_dim);
    let mut noise = root.derive(1);
    let n_enc = enc.params().len();
    let mut opt = Adam::new(n_enc + dec.params.len());
    let mut history = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let batch = batch_indices(config.seed, step, corpus.len(), config.batch_size);
        let beta = config.beta(step);
        let n_elem: usize = batch.iter().map(|&i| corpus[i].mel.len()).sum();
        let inv_n = 1.0 / n_elem as f64;
        let mut g_enc = enc.params().zeros_like();
        let mut g_dec = dec.params.zeros_like();
        let (mut mse, mut kld, mut mean_mse) = (0.0, 0.0, 0.0);
        for &i in &batch {
            let u = &corpus[i];
            let spk = speakers.get(&u.speaker_id)?;
            let out = enc.forward(&u.phoneme_ids)?;
            let log_sigma = out.log_sigma.as_ref().expect("variational head present");
            mean_mse += sq_err(&dec.forward(&out.mu, spk), &u.mel);

            let eps = noise.standard_normal_vec(out.mu.len());
            let sigma: Vec<f64> = log_sigma.as_slice().iter().map(|v| v.exp()).collect();
            let sample: Vec<f64> = (0..out.mu.len())
                .map(|k| out.mu.as_slice()[k] + sigma[k] * eps[k])
                .collect();
            let sample = FrameMatrix::from_vec(mel, u.frames(), sample)
                .map_err(|e| Error::Training { step, reason: format!("{}: {e}", u.id) })?;
            let recon = dec.forward(&sample, spk);
            mse += sq_err(&recon, &u.mel);
            kld += gaussian_kld(out.mu.as_slice(), log_sigma.as_slice());

            let mut dy = recon.clone();
            for (d, x) in dy.as_mut_slice().iter_mut().zip(u.mel.as_slice()) {
                *d = 2.0 * (*d - x) * inv_n;
            }
            let du = dec.backward(&sample, spk, &dy, &mut g_dec);
            let mut d_mu = du.clone();
            let mut d_ls = du;
            for k in 0..d_mu.len() {
                let (m, s) = (out.mu.as_slice()[k], sigma[k]);
                d_mu.as_mut_slice()[k] += beta * m * inv_n;
                let g = d_ls.as_slice()[k];
                d_ls.as_mut_slice()[k] = g * s * eps[k] + beta * (s * s - 1.0) * inv_n;
            }
            enc.backward(&out.trace, &d_mu, Some(&d_ls), &mut g_enc);
        }
        let (mse, kld, mean_mse) = (mse * inv_n, kld * inv_n, mean_mse * inv_n);
        let loss = mse + beta * kld;
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                reason: format!("pre-training loss became {loss}"),
            });
        }
        history.push(PretrainRecord {
            step,
            beta,
            mse,
            kld,
            loss,
            mean_mse,
        });

        let mut all: Vec<f64> = enc.params().values().iter().chain(dec.params.values()).copied().collect();
        let mut grads: Vec<f64> = g_enc.into_iter().chain(g_dec).collect();
        opt.step(&mut all, &mut grads, &config.optimizer);
        enc.params_mut().values_mut().copy_from_slice(&all[..n_enc]);
        dec.params.values_mut().copy_from_slice(&all[n_enc..]);
    }
    Ok((enc.into_mean_only(), history))
}

/// How well `μ_phone` separates phonemes on a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhonemeSeparation {
    /// Smallest L2 distance between two distinct phonemes' mean `μ_phone`.
    pub min_between: f64,
    /// Largest per-phoneme RMS deviation of `μ_phone` from its phoneme mean.
    pub max_within_std: f64,
}

pub fn phoneme_separation(enc: &PhonemeEncoder, corpus: &[Utterance]) -> Result<PhonemeSeparation> {
    let d = enc.config().out_dim;
    let n = enc.config().n_phonemes;
    let mut frames: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
    for u in corpus {
        let mu = enc.forward(&u.phoneme_ids)?.mu;
        for (t, &id) in u.phoneme_ids.iter().enumerate() {
            frames[id as usize].push(mu.column(t));
        }
    }
    let mut means = Vec::new();
    let mut max_within: f64 = 0.0;
    for group in frames.iter().filter(|g| !g.is_empty()) {
        let k = group.len() as f64;
        let mean: Vec<f64> = (0..d).map(|c| group.iter().map(|f| f[c]).sum::<f64>() / k).collect();
        let ms = group
            .iter()
            .map(|f| f.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum::<f64>()
            / k;
        max_within = max_within.max(ms.sqrt());
        means.push(mean);
    }
    let mut min_between = f64::INFINITY;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            let dist = means[i].iter().zip(&means[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            min_between = min_between.min(dist);
        }
    }
    Ok(PhonemeSeparation {
        min_between,
        max_within_std: max_within,
    })
}
