use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::f0::normalized_log_f0;
use crate::error::{Error, Result};
use crate::numerics::FrameMatrix;

/// One utterance with its frame-level alignment and transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub mel: FrameMatrix,
    /// Hz, zero on unvoiced frames.
    pub f0_raw: Vec<f64>,
    pub vuv: Vec<bool>,
    pub phoneme_ids: Vec<u32>,
    pub words: Vec<String>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.mel.frames()
    }

    /// Check the per-frame invariants; `n_phonemes` bounds the ids when given.
    pub fn validate(&self, n_phonemes: Option<usize>) -> Result<()> {
        let t = self.mel.frames();
        if self.f0_raw.len() != t || self.vuv.len() != t || self.phoneme_ids.len() != t {
            return Err(Error::Shape(format!(
                "utterance {}: mel has {t} frames, f0 {}, vuv {}, phonemes {}",
                self.id,
                self.f0_raw.len(),
                self.vuv.len(),
                self.phoneme_ids.len()
            )));
        }
        for (i, (&f, &v)) in self.f0_raw.iter().zip(&self.vuv).enumerate() {
            if (f > 0.0) != v {
                return Err(Error::Domain(format!(
                    "utterance {}: frame {i} has f0 {f} but vuv {v}",
                    self.id
                )));
            }
        }
        if let Some(n) = n_phonemes {
            if let Some(&bad) = self.phoneme_ids.iter().find(|&&p| p as usize >= n) {
                return Err(Error::Lookup(format!(
                    "utterance {}: phoneme id {bad} outside inventory of {n}",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Speaker id → fixed-dimension embedding.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpeakerTable {
    embeddings: BTreeMap<String, Vec<f64>>,
}

impl SpeakerTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, embedding: Vec<f64>) -> Result<()> {
        if let Some(d) = self.dim() {
            if d != embedding.len() {
                return Err(Error::Shape(format!(
                    "speaker embedding has dimension {} but table uses {d}",
                    embedding.len()
                )));
            }
        }
        if embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("speaker embedding".into()));
        }
        self.embeddings.insert(id.into(), embedding);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        self.embeddings
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Lookup(format!("unknown speaker `{id}`")))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.embeddings.contains_key(id)
    }

    pub fn dim(&self) -> Option<usize> {
        self.embeddings.values().next().map(Vec::len)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.embeddings.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: SpeakerTable = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let mut dims = table.embeddings.values().map(Vec::len);
        if let Some(d) = dims.next() {
            if dims.any(|x| x != d) {
                return Err(Error::format(path, "embeddings", "mixed dimensions"));
            }
        }
        Ok(table)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("speaker table serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Conditioning inputs for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningSet {
    pub speaker: Vec<f64>,
    /// Interpolated, sentence-mean-normalized log-f0.
    pub f0_norm: Vec<f64>,
    pub vuv: Vec<bool>,
    /// Present only in text-conditioned mode.
    pub phoneme_ids: Option<Vec<u32>>,
}

impl ConditioningSet {
    pub fn frames(&self) -> usize {
        self.f0_norm.len()
    }

    /// Same conditioning with a different speaker embedding.
    pub fn with_speaker(&self, speaker: &[f64]) -> ConditioningSet {
        ConditioningSet {
            speaker: speaker.to_vec(),
            ..self.clone()
        }
    }
}

pub fn build_conditioning(
    utterance: &Utterance,
    table: &SpeakerTable,
    text_conditioned: bool,
) -> Result<ConditioningSet> {
    let speaker = table.get(&utterance.speaker_id)?.to_vec();
    let f0_norm = normalized_log_f0(&utterance.f0_raw, &utterance.vuv)
        .map_err(|e| match e {
            Error::Unusable(m) => Error::Unusable(format!("utterance {}: {m}", utterance.id)),
            other => other,
        })?;
    Ok(ConditioningSet {
        speaker,
        f0_norm,
        vuv: utterance.vuv.clone(),
        phoneme_ids: text_conditioned.then(|| utterance.phoneme_ids.clone()),
    })
}
