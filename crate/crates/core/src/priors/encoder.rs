//! Phoneme encoder producing per-frame `μ_phone` (and `log σ_phone` while
//! pre-training).
//!
//! ```text
//! h₀[:, t] = E[id_t]
//! h_{l+1}  = h_l + tanh(conv_l(h_l) + b_l)
//! μ        = M h_L + m
//! log σ    = S h_L + s        (variational head; pre-training only)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Map;

use crate::error::{Error, Result};
use crate::flow::{ParamRange, ParamSet, Section};
use crate::numerics::{conv1d_backward, conv1d_forward, matmul_frames, matmul_frames_transposed, outer_frames, FrameMatrix, SeededRng};

pub const ENCODER_TAG: [u8; 4] = *b"PENC";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub n_phonemes: usize,
    pub embed_dim: usize,
    pub conv_layers: usize,
    pub kernel_width: usize,
    /// Width of `μ_phone`; equals the mel dimension when used as a prior.
    pub out_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            n_phonemes: 10,
            embed_dim: 32,
            conv_layers: 2,
            kernel_width: 3,
            out_dim: 80,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_phonemes == 0 || self.embed_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config("encoder: n_phonemes, embed_dim and out_dim must be positive".into()));
        }
        if self.kernel_width % 2 == 0 {
            return Err(Error::Config(format!("encoder: kernel_width must be odd, got {}", self.kernel_width)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    weight: ParamRange,
    bias: ParamRange,
}

#[derive(Debug, Clone)]
pub struct PhonemeEncoder {
    config: EncoderConfig,
    params: ParamSet,
    embed: ParamRange,
    convs: Vec<ConvLayer>,
    mu_w: ParamRange,
    mu_b: ParamRange,
    /// `(weight, bias)` of the log-σ head, present only while variational.
    log_sigma: Option<(ParamRange, ParamRange)>,
}

/// Activations from one forward pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    ids: Vec<u32>,
    inputs: Vec<Vec<f64>>,
    tanh_out: Vec<Vec<f64>>,
    last: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub mu: FrameMatrix,
    pub log_sigma: Option<FrameMatrix>,
    pub trace: EncoderTrace,
}

impl PhonemeEncoder {
    fn allocate(config: &EncoderConfig, variational: bool) -> Result<Self> {
        config.validate()?;
        let e = config.embed_dim;
        let mut params = ParamSet::new();
        let embed = params.add("encoder.embed", &[config.n_phonemes, e]);
        let convs = (0..config.conv_layers)
            .map(|l| ConvLayer {
                weight: params.add(format!("encoder.conv{l}.weight"), &[e, e, config.kernel_width]),
                bias: params.add(format!("encoder.conv{l}.bias"), &[e]),
            })
            .collect();
        let mu_w = params.add("encoder.mu.weight", &[config.out_dim, e]);
        let mu_b = params.add("encoder.mu.bias", &[config.out_dim]);
        // Kept last so dropping it is a truncation of the parameter blob.
        let log_sigma = variational.then(|| {
            (
                params.add("encoder.log_sigma.weight", &[config.out_dim, e]),
                params.add("encoder.log_sigma.bias", &[config.out_dim]),
            )
        });
        Ok(Self {
            config: config.clone(),
            params,
            embed,
            convs,
            mu_w,
            mu_b,
            log_sigma,
        })
    }

    /// Random embedding and weights; the log-σ head starts at zero (σ = 1).
    pub fn new(config: &EncoderConfig, variational: bool, rng: &mut SeededRng) -> Result<Self> {
        let mut enc = Self::allocate(config, variational)?;
        let e = config.embed_dim as f64;
        let p = enc.params.values_mut();
        for v in enc.embed.of_mut(p) {
            *v = rng.standard_normal();
        }
        let conv_std = 0.1 / (e * config.kernel_width as f64).sqrt();
        for l in &enc.convs {
            for v in l.weight.of_mut(p) {
                *v = conv_std * rng.standard_normal();
            }
        }
        for v in enc.mu_w.of_mut(p) {
            *v = rng.standard_normal() / e.sqrt();
        }
        Ok(enc)
    }

    /// Every parameter zero; callers fill in what a test needs.
    pub fn zeros(config: &EncoderConfig, variational: bool) -> Result<Self> {
        Self::allocate(config, variational)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn is_variational(&self) -> bool {
        self.log_sigma.is_some()
    }

    /// Embedding-table row of phoneme `id`.
    pub fn embedding(&self, id: usize) -> &[f64] {
        let e = self.config.embed_dim;
        &self.embed.of(self.params.values())[id * e..(id + 1) * e]
    }

    pub fn embedding_mut(&mut self, id: usize) -> &mut [f64] {
        let e = self.config.embed_dim;
        &mut self.embed.of_mut(self.params.values_mut())[id * e..(id + 1) * e]
    }

    pub fn mu_head_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let (w, b) = (self.mu_w, self.mu_b);
        let (lo, hi) = self.params.values_mut().split_at_mut(b.offset);
        (&mut lo[w.offset..w.offset + w.len], &mut hi[..b.len])
    }

    /// Drop the variational head, keeping only `μ_phone`.
    pub fn into_mean_only(self) -> PhonemeEncoder {
        if self.log_sigma.is_none() {
            return self;
        }
        let mut out = Self::allocate(&self.config, false).expect("config already validated");
        let n = out.params.len();
        out.params.values_mut().copy_from_slice(&self.params.values()[..n]);
        out
    }

    pub fn forward(&self, ids: &[u32]) -> Result<EncoderOutput> {
        let p = self.params.values();
        let e = self.config.embed_dim;
        let t_len = ids.len();
        let table = self.embed.of(p);
        let mut h = vec![0.0; e * t_len];
        for (t, &id) in ids.iter().enumerate() {
            let id = id as usize;
            if id >= self.config.n_phonemes {
                return Err(Error::Lookup(format!(
                    "phoneme id {id} at frame {t} outside inventory of {}",
                    self.config.n_phonemes
                )));
            }
            for c in 0..e {
                h[c * t_len + t] = table[id * e + c];
            }
        }
        let mut inputs = Vec::with_capacity(self.convs.len());
        let mut tanh_out = Vec::with_capacity(self.convs.len());
        for l in &self.convs {
            let mut a = vec![0.0; e * t_len];
            conv1d_forward(l.weight.of(p), e, e, self.config.kernel_width, &h, t_len, &mut a);
            let b = l.bias.of(p);
            for c in 0..e {
                for v in &mut a[c * t_len..(c + 1) * t_len] {
                    *v = (*v + b[c]).tanh();
                }
            }
            let next: Vec<f64> = h.iter().zip(&a).map(|(x, y)| x + y).collect();
            inputs.push(std::mem::replace(&mut h, next));
            tanh_out.push(a);
        }
        let head = |w: &ParamRange, b: &ParamRange| {
            let d = self.config.out_dim;
            let mut out = vec![0.0; d * t_len];
            matmul_frames(w.of(p), d, e, &h, t_len, &mut out);
            let bv = b.of(p);
            for c in 0..d {
                out[c * t_len..(c + 1) * t_len].iter_mut().for_each(|v| *v += bv[c]);
            }
            FrameMatrix::from_vec(d, t_len, out)
        };
        let mu = head(&self.mu_w, &self.mu_b)?;
        let log_sigma = match &self.log_sigma {
            Some((w, b)) => Some(head(w, b)?),
            None => None,
        };
        Ok(EncoderOutput {
            mu,
            log_sigma,
            trace: EncoderTrace {
                ids: ids.to_vec(),
                inputs,
                tanh_out,
                last: h,
            },
        })
    }

    /// Accumulate parameter gradients for upstream `dμ` and optional `d log σ`.
    pub fn backward(&self, trace: &EncoderTrace, d_mu: &FrameMatrix, d_log_sigma: Option<&FrameMatrix>, grads: &mut [f64]) {
        let p = self.params.values();
        let e = self.config.embed_dim;
        let d = self.config.out_dim;
        let t_len = trace.ids.len();
        let mut dh = vec![0.0; e * t_len];
        let mut head_back = |w: &ParamRange, b: &ParamRange, dy: &FrameMatrix, grads: &mut [f64]| {
            let db = b.of_mut(grads);
            for (c, g) in db.iter_mut().enumerate() {
                *g += dy.row(c).iter().sum::<f64>();
            }
            outer_frames(w.of_mut(grads), d, e, dy.as_slice(), &trace.last, t_len);
            matmul_frames_transposed(w.of(p), d, e, dy.as_slice(), t_len, &mut dh);
        };
        head_back(&self.mu_w, &self.mu_b, d_mu, grads);
        if let (Some((w, b)), Some(dls)) = (&self.log_sigma, d_log_sigma) {
            head_back(w, b, dls, grads);
        }
        for (li, l) in self.convs.iter().enumerate().rev() {
            let th = &trace.tanh_out[li];
            let da: Vec<f64> = dh.iter().zip(th).map(|(g, y)| g * (1.0 - y * y)).collect();
            let db = l.bias.of_mut(grads);
            for (c, g) in db.iter_mut().enumerate() {
                *g += da[c * t_len..(c + 1) * t_len].iter().sum::<f64>();
            }
            // Residual path keeps dh; the conv adds its input gradient on top.
            conv1d_backward(
                l.weight.of(p),
                e,
                e,
                self.config.kernel_width,
                &trace.inputs[li],
                t_len,
                &da,
                l.weight.of_mut(grads),
                Some(&mut dh),
            );
        }
        let dtable = self.embed.of_mut(grads);
        for (t, &id) in trace.ids.iter().enumerate() {
            for c in 0..e {
                dtable[id as usize * e + c] += dh[c * t_len + t];
            }
        }
    }

    pub fn to_section(&self) -> Section {
        let mut header = Map::new();
        header.insert("config".into(), serde_json::to_value(&self.config).expect("config serializes"));
        header.insert("variational".into(), serde_json::Value::Bool(self.is_variational()));
        Section::from_params(ENCODER_TAG, header, &self.params)
    }

    pub fn from_section(section: &Section, path: &Path) -> Result<Self> {
        let config: EncoderConfig = section.field(path, "config")?;
        let variational: bool = section.field(path, "variational")?;
        let params = section.params(path)?;
        let mut enc = Self::allocate(&config, variational).map_err(|e| Error::format(path, "PENC.config", e.to_string()))?;
        if enc.params.entries() != params.entries() {
            return Err(Error::format(path, "PENC.manifest", "manifest does not match encoder configuration"));
        }
        enc.params = params;
        Ok(enc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, relative_error};

    fn cfg() -> EncoderConfig {
        EncoderConfig {
            n_phonemes: 3,
            embed_dim: 4,
            conv_layers: 2,
            kernel_width: 3,
            out_dim: 5,
        }
    }

    #[test]
    fn zeroed_convs_give_per_phoneme_constant() {
        let mut rng = SeededRng::new(0);
        let mut enc = PhonemeEncoder::new(&cfg(), false, &mut rng).unwrap();
        let p = enc.params.values_mut();
        for l in enc.convs.clone() {
            l.weight.of_mut(p).iter_mut().for_each(|v| *v = 0.0);
            l.bias.of_mut(p).iter_mut().for_each(|v| *v = 0.0);
        }
        let out = enc.forward(&[2; 6]).unwrap();
        let p = enc.params.values();
        let emb = &enc.embed.of(p)[8..12];
        for c in 0..5 {
            let expect: f64 = (0..4).map(|k| enc.mu_w.of(p)[c * 4 + k] * emb[k]).sum::<f64>() + enc.mu_b.of(p)[c];
            for t in 0..6 {
                assert!((out.mu.get(c, t) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_range_id_is_lookup_error() {
        let enc = PhonemeEncoder::new(&cfg(), false, &mut SeededRng::new(1)).unwrap();
        assert!(matches!(enc.forward(&[0, 3]), Err(Error::Lookup(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SeededRng::new(2);
        let mut enc = PhonemeEncoder::new(&cfg(), true, &mut rng).unwrap();
        for v in enc.params.values_mut() {
            *v += 0.3 * rng.standard_normal();
        }
        let ids = [0u32, 2, 2, 1, 0, 1, 2];
        let wm = rng.standard_normal_vec(5 * 7);
        let ws = rng.standard_normal_vec(5 * 7);
        let loss = |e: &PhonemeEncoder| {
            let o = e.forward(&ids).unwrap();
            let a: f64 = o.mu.as_slice().iter().zip(&wm).map(|(x, w)| x * w).sum();
            let b: f64 = o.log_sigma.unwrap().as_slice().iter().zip(&ws).map(|(x, w)| x * w).sum();
            a + b
        };
        let out = enc.forward(&ids).unwrap();
        let mut grads = enc.params.zeros_like();
        let dmu = FrameMatrix::from_vec(5, 7, wm.clone()).unwrap();
        let dls = FrameMatrix::from_vec(5, 7, ws.clone()).unwrap();
        enc.backward(&out.trace, &dmu, Some(&dls), &mut grads);
        let p0 = enc.params.values().to_vec();
        let mut probe = enc.clone();
        let fd = finite_diff_grad(
            |p| {
                probe.params.values_mut().copy_from_slice(p);
                loss(&probe)
            },
            &p0,
            1e-6,
        )
        .unwrap();
        assert!(relative_error(&grads, &fd) < 1e-7);
    }

    #[test]
    fn mean_only_keeps_mu_and_round_trips() {
        let mut rng = SeededRng::new(3);
        let mut enc = PhonemeEncoder::new(&cfg(), true, &mut rng).unwrap();
        for v in enc.params.values_mut() {
            *v = rng.standard_normal();
        }
        let ids = [1u32, 0, 2];
        let full = enc.forward(&ids).unwrap();
        let slim = enc.clone().into_mean_only();
        assert!(!slim.is_variational());
        let out = slim.forward(&ids).unwrap();
        assert_eq!(out.mu, full.mu);
        assert!(out.log_sigma.is_none());

        let path = Path::new("enc.fckp");
        let back = PhonemeEncoder::from_section(&slim.to_section(), path).unwrap();
        assert_eq!(back.params(), slim.params());
    }
}
