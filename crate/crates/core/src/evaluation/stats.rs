use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};

/// Holm step-down decisions, in the input order. Sorted ascending, `p_(i)` is
/// compared against `α/(m−i+1)`; everything from the first failure on is kept.
pub fn holm(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut out = vec![false; m];
    for (rank, &i) in order.iter().enumerate() {
        if p_values[i] > alpha / (m - rank) as f64 {
            break;
        }
        out[i] = true;
    }
    out
}

pub fn bonferroni(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let m = p_values.len() as f64;
    p_values.iter().map(|&p| p <= alpha / m).collect()
}

/// Two-sided paired t-test on `a − b`. `None` when the differences have zero
/// variance (or there are fewer than two pairs).
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<Option<(f64, f64)>> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("paired samples of {} and {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Ok(None);
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var <= 0.0 {
        return Ok(None);
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("degrees of freedom are positive");
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(Some((t, p)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub system_a: String,
    pub system_b: String,
    pub n: usize,
    pub mean_difference: f64,
    pub t: Option<f64>,
    pub p_value: Option<f64>,
    /// Zero-variance differences; excluded from the correction.
    pub degenerate: bool,
    pub significant: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub method: String,
    pub alpha: f64,
    pub pairs: Vec<PairTest>,
}

/// All pairwise paired t-tests between the named score columns (screen-wise
/// complete cases), Holm-corrected over the non-degenerate pairs.
pub fn paired_t_holm(columns: &[(String, Vec<f64>)], alpha: f64) -> Result<SignificanceReport> {
    if columns.len() < 2 {
        return Err(Error::Domain("paired comparison needs at least two systems".into()));
    }
    let mut pairs = Vec::new();
    for i in 0..columns.len() {
        for j in i + 1..columns.len() {
            let (a, b) = (&columns[i].1, &columns[j].1);
            let test = paired_t_test(a, b)?;
            let n = a.len();
            let mean_difference = a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / n.max(1) as f64;
            pairs.push(PairTest {
                system_a: columns[i].0.clone(),
                system_b: columns[j].0.clone(),
                n,
                mean_difference,
                t: test.map(|t| t.0),
                p_value: test.map(|t| t.1),
                degenerate: test.is_none(),
                significant: None,
            });
        }
    }
    let live: Vec<usize> = (0..pairs.len()).filter(|&i| !pairs[i].degenerate).collect();
    let p: Vec<f64> = live.iter().map(|&i| pairs[i].p_value.unwrap()).collect();
    for (&i, d) in live.iter().zip(holm(&p, alpha)) {
        pairs[i].significant = Some(d);
    }
    Ok(SignificanceReport {
        method: "holm".into(),
        alpha,
        pairs,
    })
}

/// Two-sided exact binomial test of `k` successes in `n` fair trials:
/// `min(1, 2·P(X ≤ min(k, n−k)))`.
pub fn binomial_two_sided(k: u64, n: u64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let lo = k.min(n - k);
    let tail = if n <= 1000 {
        // P(X=i) by the ratio recurrence, starting from 2^-n.
        let mut term = 0.5f64.powi(n as i32);
        let mut sum = term;
        for i in 0..lo {
            term *= (n - i) as f64 / (i + 1) as f64;
            sum += term;
        }
        sum
    } else {
        let ln_half = 0.5f64.ln() * n as f64;
        (0..=lo).map(|i| (ln_binomial(n, i) + ln_half).exp()).sum()
    };
    (2.0 * tail).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceResult {
    pub wins_a: u64,
    pub wins_b: u64,
    pub ties: u64,
    /// Absent when every screen tied.
    pub p_value: Option<f64>,
    pub threshold: f64,
    pub significant: Option<bool>,
    pub preferred: Option<String>,
}

/// Screen-wise preference between A and B, Bonferroni-corrected for
/// `m_comparisons` tests. Ties are dropped.
pub fn binomial_preference(a: &[f64], b: &[f64], alpha: f64, m_comparisons: usize) -> Result<PreferenceResult> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("paired screens of {} and {}", a.len(), b.len())));
    }
    if m_comparisons == 0 {
        return Err(Error::Domain("number of comparisons must be positive".into()));
    }
    let wins_a = a.iter().zip(b).filter(|(x, y)| x > y).count() as u64;
    let wins_b = a.iter().zip(b).filter(|(x, y)| x < y).count() as u64;
    let ties = a.len() as u64 - wins_a - wins_b;
    let threshold = alpha / m_comparisons as f64;
    let n = wins_a + wins_b;
    let p_value = (n > 0).then(|| binomial_two_sided(wins_a, n));
    let significant = p_value.map(|p| p <= threshold);
    let preferred = match significant {
        Some(true) if wins_a > wins_b => Some("a".to_string()),
        Some(true) if wins_b > wins_a => Some("b".to_string()),
        _ => None,
    };
    Ok(PreferenceResult {
        wins_a,
        wins_b,
        ties,
        p_value,
        threshold,
        significant,
        preferred,
    })
}
