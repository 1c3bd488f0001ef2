//! Word error rate, listening-test score aggregation with multiple-comparison
//! corrections, and oracle metrics for converted synthetic corpora.
//!
//! Manifests are CSV with a header row:
//! `utterance_id,system_id,reference,hypothesis` for WER and
//! `screen_id,system_id,listener_id,score` for listening scores.

mod metrics;
mod mushra;
mod stats;
mod wer;

use std::path::Path;

use serde::Serialize;

use crate::csvio::{read_rows, write_rows};
use crate::error::Result;

pub use metrics::{conversion_metrics, pearson, ConversionMetrics};
pub use mushra::{
    median, mushra_aggregate, mushra_report, screen_columns, validate_mushra, MushraReport, MushraRow, PairPreference,
    SystemScore,
};
pub use stats::{
    binomial_preference, binomial_two_sided, bonferroni, holm, paired_t_holm, paired_t_test, PairTest,
    PreferenceResult, SignificanceReport,
};
pub use wer::{edit_distance, normalize_words, wer, wer_aggregate, SystemWer, WerCount, WerRow};

pub const WER_HEADER: [&str; 4] = ["utterance_id", "system_id", "reference", "hypothesis"];
pub const MUSHRA_HEADER: [&str; 4] = ["screen_id", "system_id", "listener_id", "score"];

pub fn read_wer_manifest(path: &Path) -> Result<Vec<WerRow>> {
    read_rows(path)
}

pub fn write_wer_manifest(path: &Path, rows: &[WerRow]) -> Result<()> {
    write_rows(path, rows, &WER_HEADER)
}

pub fn read_mushra_manifest(path: &Path) -> Result<Vec<MushraRow>> {
    read_rows(path)
}

pub fn write_mushra_manifest(path: &Path, rows: &[MushraRow]) -> Result<()> {
    write_rows(path, rows, &MUSHRA_HEADER)
}

pub fn to_json<T: Serialize>(report: &T) -> String {
    serde_json::to_string_pretty(report).expect("reports serialize")
}

/// Left-aligned first column, right-aligned others, two spaces between.
pub fn format_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.digits$}"))
}

pub fn wer_table(systems: &[SystemWer]) -> String {
    let rows: Vec<Vec<String>> = systems
        .iter()
        .map(|s| {
            vec![
                s.system_id.clone(),
                s.utterances.to_string(),
                format!("{}/{}", s.errors, s.words),
                format!("{:.2}%", 100.0 * s.pooled_rate),
                format!("{:.2}%", 100.0 * s.mean_rate),
                s.ci95_half_width.map_or_else(|| "n/a".into(), |c| format!("±{:.2}%", 100.0 * c)),
            ]
        })
        .collect();
    format_table(&["system", "utts", "errors/words", "pooled", "mean", "ci95"], &rows)
}

pub fn mushra_table(report: &MushraReport) -> String {
    let rows: Vec<Vec<String>> = report
        .systems
        .iter()
        .map(|s| vec![s.system_id.clone(), s.n.to_string(), format!("{:.2}", s.mean), format!("{:.2}", s.median)])
        .collect();
    let mut out = format_table(&["system", "n", "mean", "median"], &rows);
    out.push('\n');
    out.push_str(&significance_table(&report.significance));
    out.push('\n');
    out.push_str(&preference_table(&report.preferences));
    out
}

pub fn preference_table(prefs: &[PairPreference]) -> String {
    let rows: Vec<Vec<String>> = prefs
        .iter()
        .map(|p| {
            let r = &p.result;
            let decision = match (&r.significant, r.preferred.as_deref()) {
                (None, _) => "no decision".to_string(),
                (Some(true), Some("a")) => format!("prefer {}", p.system_a),
                (Some(true), _) => format!("prefer {}", p.system_b),
                (Some(false), _) => "n.s.".to_string(),
            };
            vec![
                format!("{} vs {}", p.system_a, p.system_b),
                format!("{}/{}/{}", r.wins_a, r.wins_b, r.ties),
                opt(r.p_value, 4),
                format!("{:.4}", r.threshold),
                decision,
            ]
        })
        .collect();
    let mut out = "binomial preference tests, bonferroni correction\n".to_string();
    out.push_str(&format_table(&["pair", "wins/losses/ties", "p", "threshold", "decision"], &rows));
    out
}

pub fn significance_table(report: &SignificanceReport) -> String {
    let rows: Vec<Vec<String>> = report
        .pairs
        .iter()
        .map(|p| {
            let decision = match (p.degenerate, p.significant) {
                (true, _) => "degenerate",
                (false, Some(true)) => "significant",
                _ => "n.s.",
            };
            vec![
                format!("{} vs {}", p.system_a, p.system_b),
                p.n.to_string(),
                format!("{:.3}", p.mean_difference),
                opt(p.t, 3),
                opt(p.p_value, 4),
                decision.to_string(),
            ]
        })
        .collect();
    let mut out = format!("paired t-tests, {} correction at alpha {}\n", report.method, report.alpha);
    out.push_str(&format_table(&["pair", "n", "mean diff", "t", "p", "decision"], &rows));
    out
}

pub fn metrics_table(m: &ConversionMetrics) -> String {
    format_table(
        &["metric", "value"],
        &[
            vec!["utterances".into(), m.utterances.to_string()],
            vec!["frames".into(), m.frames.to_string()],
            vec!["speaker accuracy".into(), format!("{:.4}", m.speaker_accuracy)],
            vec!["phoneme retention".into(), format!("{:.4}", m.phoneme_retention)],
            vec!["f0 correlation".into(), opt(m.f0_correlation, 4)],
        ],
    )
}
