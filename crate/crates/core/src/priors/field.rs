use serde::{Deserialize, Serialize};

use super::encoder::{EncoderTrace, PhonemeEncoder};
use crate::error::{Error, Result};
use crate::flow::{squeeze, unsqueeze, FlowConfig, LatentBundle};
use crate::numerics::{unit_gaussian_log_density, FrameMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorMode {
    /// Standard normal; used with text-conditioned flows.
    Fixed,
    /// Phoneme-dependent mean from a frozen pre-trained encoder.
    Pretrained,
    /// Phoneme-dependent mean from an encoder trained with the flow.
    Joint,
}

/// Per-element prior mean laid out exactly like a [`LatentBundle`]. The
/// standard deviation is 1 everywhere and is not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorField {
    pub mean: LatentBundle,
}

impl PriorField {
    pub fn element_count(&self) -> usize {
        self.mean.element_count()
    }
}

/// Zero mean with the layout of `shape`.
pub fn fixed_prior(shape: &LatentBundle) -> PriorField {
    PriorField {
        mean: shape.zeros_like(),
    }
}

/// Lay a per-frame `mel_dim × frames_used` mean out through the same squeeze
/// and split schedule as the data path.
pub fn field_from_frames(config: &FlowConfig, mu_phone: &FrameMatrix, trimmed_frames: usize) -> Result<PriorField> {
    if mu_phone.channels() != config.mel_dim {
        return Err(Error::Shape(format!(
            "prior mean has {} channels, flow expects {}",
            mu_phone.channels(),
            config.mel_dim
        )));
    }
    let sq = squeeze(mu_phone, config.squeeze_factor)?;
    Ok(PriorField {
        mean: LatentBundle::from_squeezed(config, &sq, trimmed_frames)?,
    })
}

/// Inverse of [`field_from_frames`] for gradients: a field-shaped bundle back
/// to per-frame layout.
pub fn field_to_frames(config: &FlowConfig, field_grad: &LatentBundle) -> Result<FrameMatrix> {
    unsqueeze(&field_grad.to_squeezed()?, config.squeeze_factor)
}

/// Phoneme prior for one utterance. `phoneme_ids` covers the untrimmed
/// utterance; only the first `frames_used` frames enter the encoder.
pub fn phoneme_prior_field(
    enc: &PhonemeEncoder,
    config: &FlowConfig,
    phoneme_ids: &[u32],
    frames_used: usize,
) -> Result<(PriorField, EncoderTrace)> {
    if phoneme_ids.len() < frames_used {
        return Err(Error::Shape(format!(
            "{} phoneme ids for {frames_used} frames",
            phoneme_ids.len()
        )));
    }
    let out = enc.forward(&phoneme_ids[..frames_used])?;
    let field = field_from_frames(config, &out.mu, phoneme_ids.len() - frames_used)?;
    Ok((field, out.trace))
}

/// `Σ log N(z; μ, 1)` over every latent element.
pub fn prior_log_density(z: &LatentBundle, field: &PriorField) -> Result<f64> {
    if !z.same_layout(&field.mean) {
        return Err(Error::Shape("latent and prior field layouts differ".into()));
    }
    Ok(z
        .parts()
        .zip(field.mean.parts())
        .map(|(a, m)| unit_gaussian_log_density(a.as_slice(), m.as_slice()))
        .sum())
}

/// Residual `z − μ`, which is both `−∂/∂z` and `∂/∂μ` of the log density.
pub fn prior_residual(z: &LatentBundle, field: &PriorField) -> Result<LatentBundle> {
    if !z.same_layout(&field.mean) {
        return Err(Error::Shape("latent and prior field layouts differ".into()));
    }
    let mut r = z.clone();
    for (rp, mp) in r.parts_mut().zip(field.mean.parts()) {
        for (a, b) in rp.as_mut_slice().iter_mut().zip(mp.as_slice()) {
            *a -= b;
        }
    }
    Ok(r)
}
