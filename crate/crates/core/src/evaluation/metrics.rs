use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{normalized_log_f0, GroundTruth, Utterance};

/// Oracle scores of a converted corpus. Each utterance is attributed to its
/// target speaker and carries the source's phoneme, f0 and voicing streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionMetrics {
    pub utterances: usize,
    pub frames: usize,
    /// Frames whose oracle speaker label equals the utterance's speaker.
    pub speaker_accuracy: f64,
    /// Frames whose oracle phoneme label equals the carried phoneme id.
    pub phoneme_retention: f64,
    /// Pearson correlation over voiced frames between the normalized f0 and
    /// the f0-direction component of the frame. Absent without variation.
    pub f0_correlation: Option<f64>,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

pub fn conversion_metrics(converted: &[Utterance], truth: &GroundTruth) -> Result<ConversionMetrics> {
    let (mut frames, mut spk_hits, mut ph_hits) = (0usize, 0usize, 0usize);
    let (mut f0_src, mut f0_out) = (Vec::new(), Vec::new());
    for u in converted {
        let s = truth.speaker_index(&u.speaker_id).ok_or_else(|| {
            Error::Config(format!("speaker {} of {} has no ground truth", u.speaker_id, u.id))
        })?;
        if u.mel.channels() != truth.mel_dim() {
            return Err(Error::Config(format!(
                "{} has {} mel channels, ground truth has {}",
                u.id,
                u.mel.channels(),
                truth.mel_dim()
            )));
        }
        let f0 = normalized_log_f0(&u.f0_raw, &u.vuv)?;
        for t in 0..u.frames() {
            let frame = u.mel.column(t);
            let p = u.phoneme_ids[t] as usize;
            if p >= truth.phoneme_prototypes.len() {
                return Err(Error::Config(format!("phoneme {p} of {} has no ground truth", u.id)));
            }
            let (cs, cp) = truth.classify_frame(&frame, f0[t], u.vuv[t]);
            spk_hits += usize::from(cs == s);
            ph_hits += usize::from(cp == p);
            if u.vuv[t] {
                f0_src.push(f0[t]);
                f0_out.push(truth.f0_component(&frame, s, p));
            }
            frames += 1;
        }
    }
    if frames == 0 {
        return Err(Error::Domain("converted corpus has no frames".into()));
    }
    Ok(ConversionMetrics {
        utterances: converted.len(),
        frames,
        speaker_accuracy: spk_hits as f64 / frames as f64,
        phoneme_retention: ph_hits as f64 / frames as f64,
        f0_correlation: pearson(&f0_src, &f0_out),
    })
}
