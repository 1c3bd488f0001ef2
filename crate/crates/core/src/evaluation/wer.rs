use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Case-fold and strip everything but letters and digits; drops tokens that
/// become empty.
pub fn normalize_words<S: AsRef<str>>(words: &[S]) -> Vec<String> {
    words
        .iter()
        .map(|w| w.as_ref().chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect::<String>())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Minimum substitutions + insertions + deletions turning `a` into `b`.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WerCount {
    pub errors: usize,
    pub words: usize,
}

impl WerCount {
    pub fn rate(&self) -> f64 {
        self.errors as f64 / self.words as f64
    }
}

/// Word errors of `hyp` against `reference` after normalization.
pub fn wer<S: AsRef<str>>(reference: &[S], hyp: &[S]) -> Result<WerCount> {
    let r = normalize_words(reference);
    let h = normalize_words(hyp);
    if r.is_empty() {
        return Err(Error::Domain("word error rate needs a non-empty reference".into()));
    }
    Ok(WerCount {
        errors: edit_distance(&r, &h),
        words: r.len(),
    })
}

/// One manifest row: `utterance_id,system_id,reference,hypothesis`, with the
/// word sequences space-separated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WerRow {
    pub utterance_id: String,
    pub system_id: String,
    pub reference: String,
    pub hypothesis: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemWer {
    pub system_id: String,
    pub utterances: usize,
    pub errors: usize,
    pub words: usize,
    /// Σ errors / Σ words.
    pub pooled_rate: f64,
    /// Mean of per-utterance rates.
    pub mean_rate: f64,
    /// 1.96 · sd / √n over per-utterance rates; absent for a single utterance.
    pub ci95_half_width: Option<f64>,
}

/// Per-system WER, in order of first appearance.
pub fn wer_aggregate(rows: &[WerRow]) -> Result<Vec<SystemWer>> {
    let mut order: Vec<&str> = Vec::new();
    let mut per: std::collections::HashMap<&str, Vec<WerCount>> = Default::default();
    for row in rows {
        let r: Vec<&str> = row.reference.split_whitespace().collect();
        let h: Vec<&str> = row.hypothesis.split_whitespace().collect();
        let c = wer(&r, &h).map_err(|e| Error::Domain(format!("utterance {}: {e}", row.utterance_id)))?;
        if !per.contains_key(row.system_id.as_str()) {
            order.push(&row.system_id);
        }
        per.entry(&row.system_id).or_default().push(c);
    }
    Ok(order
        .into_iter()
        .map(|sys| {
            let counts = &per[sys];
            let n = counts.len();
            let errors: usize = counts.iter().map(|c| c.errors).sum();
            let words: usize = counts.iter().map(|c| c.words).sum();
            let rates: Vec<f64> = counts.iter().map(WerCount::rate).collect();
            let mean = rates.iter().sum::<f64>() / n as f64;
            let ci = (n > 1).then(|| {
                let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                1.96 * var.sqrt() / (n as f64).sqrt()
            });
            SystemWer {
                system_id: sys.to_string(),
                utterances: n,
                errors,
                words,
                pooled_rate: errors as f64 / words as f64,
                mean_rate: mean,
                ci95_half_width: ci,
            }
        })
        .collect())
}
