use super::config::FlowConfig;
use super::squeeze::{squeeze, unsqueeze};
use crate::error::{Error, Result};
use crate::features::ConditioningSet;
use crate::numerics::FrameMatrix;

/// Conditioning as seen by the coupling networks: the utterance speaker
/// vector (broadcast over time) and per-squeezed-frame features.
///
/// Per-frame streams (f0, vuv, then optional phoneme features) are stacked
/// over the same sub-frames as the data squeeze, so squeezed step `t` sees the
/// conditioning of every original frame it folds together.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowCond {
    pub speaker: Vec<f64>,
    pub frames: FrameMatrix,
}

impl FlowCond {
    pub fn build(
        config: &FlowConfig,
        cond: &ConditioningSet,
        phone: Option<&FrameMatrix>,
        frames_used: usize,
    ) -> Result<FlowCond> {
        if cond.speaker.len() != config.speaker_dim {
            return Err(Error::Shape(format!(
                "speaker embedding has {} dims, flow expects {}",
                cond.speaker.len(),
                config.speaker_dim
            )));
        }
        if cond.f0_norm.len() < frames_used || cond.vuv.len() < frames_used {
            return Err(Error::Shape(format!(
                "conditioning covers {} frames, need {frames_used}",
                cond.f0_norm.len().min(cond.vuv.len())
            )));
        }
        let stream = config.frame_stream_dim();
        let mut per_frame = FrameMatrix::zeros(stream, frames_used);
        for t in 0..frames_used {
            per_frame.set(0, t, cond.f0_norm[t]);
            per_frame.set(1, t, if cond.vuv[t] { 1.0 } else { 0.0 });
        }
        match (config.phone_cond_dim, phone) {
            (0, None) => {}
            (0, Some(_)) => {
                return Err(Error::Config(
                    "phoneme features supplied to a text-free flow".into(),
                ))
            }
            (d, Some(p)) => {
                if p.channels() != d || p.frames() < frames_used {
                    return Err(Error::Shape(format!(
                        "phoneme features are {}x{}, need {d}x{frames_used}",
                        p.channels(),
                        p.frames()
                    )));
                }
                for c in 0..d {
                    per_frame.row_mut(2 + c).copy_from_slice(&p.row(c)[..frames_used]);
                }
            }
            (_, None) => {
                return Err(Error::Config(
                    "text-conditioned flow requires phoneme features".into(),
                ))
            }
        }
        Ok(FlowCond {
            speaker: cond.speaker.clone(),
            frames: squeeze(&per_frame, config.squeeze_factor)?,
        })
    }

    pub fn with_speaker(&self, speaker: &[f64]) -> FlowCond {
        FlowCond {
            speaker: speaker.to_vec(),
            frames: self.frames.clone(),
        }
    }

    /// Map a gradient on the squeezed features back to per-frame phoneme
    /// features (rows past f0 and vuv).
    pub fn phone_gradient(config: &FlowConfig, d_frames: &FrameMatrix) -> Result<FrameMatrix> {
        let per_frame = unsqueeze(d_frames, config.squeeze_factor)?;
        Ok(per_frame.channel_slice(2, per_frame.channels()))
    }
}
