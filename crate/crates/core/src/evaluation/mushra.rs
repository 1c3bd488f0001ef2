use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::stats::{binomial_preference, paired_t_holm, PreferenceResult, SignificanceReport};
use crate::error::{Error, Result};

/// One manifest row: `screen_id,system_id,listener_id,score`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MushraRow {
    pub screen_id: String,
    pub system_id: String,
    pub listener_id: String,
    pub score: f64,
}

/// Scores in [0, 100] and no (screen, system, listener) repeated.
pub fn validate_mushra(rows: &[MushraRow]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in rows {
        if !(0.0..=100.0).contains(&r.score) {
            return Err(Error::Domain(format!(
                "score {} for system {} on screen {} is outside [0, 100]",
                r.score, r.system_id, r.screen_id
            )));
        }
        if !seen.insert((&r.screen_id, &r.system_id, &r.listener_id)) {
            return Err(Error::Domain(format!(
                "listener {} rated system {} twice on screen {}",
                r.listener_id, r.system_id, r.screen_id
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemScore {
    pub system_id: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn system_order(rows: &[MushraRow]) -> Vec<&str> {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.system_id.as_str()) {
            order.push(&r.system_id);
        }
    }
    order
}

/// Mean and median per system over every screen and listener, in order of
/// first appearance.
pub fn mushra_aggregate(rows: &[MushraRow]) -> Result<Vec<SystemScore>> {
    validate_mushra(rows)?;
    Ok(system_order(rows)
        .into_iter()
        .map(|sys| {
            let scores: Vec<f64> = rows.iter().filter(|r| r.system_id == sys).map(|r| r.score).collect();
            SystemScore {
                system_id: sys.to_string(),
                n: scores.len(),
                mean: scores.iter().sum::<f64>() / scores.len() as f64,
                median: median(&scores),
            }
        })
        .collect())
}

/// Per-screen score of every system (mean over that screen's listeners),
/// restricted to screens where all systems were rated. Screens are sorted.
pub fn screen_columns(rows: &[MushraRow]) -> Vec<(String, Vec<f64>)> {
    let systems = system_order(rows);
    let mut cells: BTreeMap<&str, BTreeMap<&str, (f64, usize)>> = BTreeMap::new();
    for r in rows {
        let c = cells.entry(&r.screen_id).or_default().entry(&r.system_id).or_insert((0.0, 0));
        c.0 += r.score;
        c.1 += 1;
    }
    let complete: Vec<&BTreeMap<&str, (f64, usize)>> =
        cells.values().filter(|m| systems.iter().all(|s| m.contains_key(s))).collect();
    systems
        .iter()
        .map(|s| {
            let col = complete
                .iter()
                .map(|m| {
                    let (sum, n) = m[s];
                    sum / n as f64
                })
                .collect();
            (s.to_string(), col)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MushraReport {
    pub systems: Vec<SystemScore>,
    pub screens: usize,
    pub significance: SignificanceReport,
    /// Screen-wise preference for every system pair, Bonferroni-corrected
    /// over the number of pairs.
    pub preferences: Vec<PairPreference>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPreference {
    pub system_a: String,
    pub system_b: String,
    pub result: PreferenceResult,
}

pub fn mushra_report(rows: &[MushraRow], alpha: f64) -> Result<MushraReport> {
    let systems = mushra_aggregate(rows)?;
    let columns = screen_columns(rows);
    let significance = paired_t_holm(&columns, alpha)?;
    let m = significance.pairs.len();
    let mut preferences = Vec::with_capacity(m);
    for i in 0..columns.len() {
        for j in i + 1..columns.len() {
            preferences.push(PairPreference {
                system_a: columns[i].0.clone(),
                system_b: columns[j].0.clone(),
                result: binomial_preference(&columns[i].1, &columns[j].1, alpha, m)?,
            });
        }
    }
    Ok(MushraReport {
        systems,
        screens: columns.first().map_or(0, |c| c.1.len()),
        significance,
        preferences,
    })
}
