//! Attribute conversion: encode with the source conditioning, swap in the
//! target speaker, decode. f0, voicing and (in text mode) phoneme features
//! stay those of the source.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::csvio::{read_rows, write_rows};
use crate::error::{Error, Result};
use crate::features::{build_conditioning, utterance_file_name, write_corpus, SpeakerTable, Utterance};
use crate::numerics::FrameMatrix;
use crate::training::{Example, FlowModel};

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversionRequest {
    pub utterance_id: String,
    pub target_speaker: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Converted {
    pub mel: FrameMatrix,
    pub trimmed_frames: usize,
}

/// Convert `u` to `target`. The output covers the squeeze-trimmed frames.
pub fn convert(model: &FlowModel, u: &Utterance, target: &str, table: &SpeakerTable) -> Result<Converted> {
    let target_vec = table.get(target)?;
    let cond = build_conditioning(u, table, model.mode.text_conditioned())?;
    let ex = Example::new(u, &cond);
    let (src_cond, _) = model.flow_cond(&ex)?;
    let (z, _) = model.flow.encode(&u.mel, &src_cond)?;
    let mel = model.flow.decode(&z, &src_cond.with_speaker(target_vec))?;
    Ok(Converted {
        mel,
        trimmed_frames: z.trimmed_frames,
    })
}

pub fn converted_id(source_id: &str, target: &str) -> String {
    format!("{source_id}_to_{target}")
}

/// Package a conversion as an utterance attributed to the target speaker,
/// carrying the source's per-frame streams and transcript.
pub fn converted_utterance(source: &Utterance, target: &str, converted: &Converted) -> Utterance {
    let t = converted.mel.frames();
    Utterance {
        id: converted_id(&source.id, target),
        speaker_id: target.to_string(),
        mel: converted.mel.clone(),
        f0_raw: source.f0_raw[..t].to_vec(),
        vuv: source.vuv[..t].to_vec(),
        phoneme_ids: source.phoneme_ids[..t].to_vec(),
        words: source.words.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub source_id: String,
    pub source_speaker: String,
    pub target_speaker: String,
    /// Relative to the output directory; empty when the conversion failed.
    pub output_path: String,
    pub trimmed_frames: usize,
    /// `ok` or the error message.
    pub status: String,
}

/// Convert every request, writing successes as a corpus container under
/// `out_dir` plus `manifest.csv`. A failing request is recorded in its row
/// and the run continues.
pub fn batch_convert(
    model: &FlowModel,
    corpus: &[Utterance],
    table: &SpeakerTable,
    requests: &[ConversionRequest],
    out_dir: &Path,
) -> Result<Vec<ManifestRow>> {
    let mut rows = Vec::with_capacity(requests.len());
    let mut outputs = Vec::new();
    for req in requests {
        let source = corpus.iter().find(|u| u.id == req.utterance_id);
        let result = source
            .ok_or_else(|| Error::Lookup(format!("utterance {} not in corpus", req.utterance_id)))
            .and_then(|u| convert(model, u, &req.target_speaker, table).map(|c| (u, c)));
        let row = match result {
            Ok((u, c)) => {
                let out = converted_utterance(u, &req.target_speaker, &c);
                let row = ManifestRow {
                    source_id: u.id.clone(),
                    source_speaker: u.speaker_id.clone(),
                    target_speaker: req.target_speaker.clone(),
                    output_path: utterance_file_name(&out.id),
                    trimmed_frames: c.trimmed_frames,
                    status: "ok".into(),
                };
                outputs.push(out);
                row
            }
            Err(e) => ManifestRow {
                source_id: req.utterance_id.clone(),
                source_speaker: source.map(|u| u.speaker_id.clone()).unwrap_or_default(),
                target_speaker: req.target_speaker.clone(),
                output_path: String::new(),
                trimmed_frames: 0,
                status: e.to_string(),
            },
        };
        rows.push(row);
    }
    write_corpus(out_dir, &outputs)?;
    write_manifest(&out_dir.join(MANIFEST_FILE), &rows)?;
    Ok(rows)
}

/// Every ordered (source, target) speaker pair over the first
/// `per_speaker` utterances of each speaker, targets excluding the source.
pub fn all_pairs_grid(corpus: &[Utterance], speakers: &[String], per_speaker: usize) -> Vec<ConversionRequest> {
    let mut out = Vec::new();
    for src in speakers {
        let utts = corpus.iter().filter(|u| &u.speaker_id == src).take(per_speaker);
        for u in utts {
            for tgt in speakers.iter().filter(|t| *t != src) {
                out.push(ConversionRequest {
                    utterance_id: u.id.clone(),
                    target_speaker: tgt.clone(),
                });
            }
        }
    }
    out
}

const MANIFEST_HEADER: [&str; 6] = [
    "source_id",
    "source_speaker",
    "target_speaker",
    "output_path",
    "trimmed_frames",
    "status",
];

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    write_rows(path, rows, &MANIFEST_HEADER)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    read_rows(path)
}

/// Pairs file: CSV `utterance_id,target_speaker` with a header row.
pub fn read_pairs(path: &Path) -> Result<Vec<ConversionRequest>> {
    read_rows(path)
}

pub fn write_pairs(path: &Path, pairs: &[ConversionRequest]) -> Result<()> {
    write_rows(path, pairs, &["utterance_id", "target_speaker"])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{generate_corpus, speaker_name, SynthSpec};

    #[test]
    fn grid_counts_follow_combinatorics() {
        let g = generate_corpus(&SynthSpec {
            mel_dim: 4,
            embed_dim: 4,
            utterances_per_speaker: 6,
            ..SynthSpec::default()
        })
        .unwrap();
        let speakers: Vec<String> = (0..4).map(speaker_name).collect();
        let grid = all_pairs_grid(&g.utterances, &speakers, 5);
        assert_eq!(grid.len(), 4 * 3 * 5);
        assert!(grid.iter().all(|r| {
            let u = g.utterances.iter().find(|u| u.id == r.utterance_id).unwrap();
            u.speaker_id != r.target_speaker
        }));
    }

    #[test]
    fn pairs_and_manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = vec![
            ConversionRequest {
                utterance_id: "a".into(),
                target_speaker: "spk1".into(),
            },
            ConversionRequest {
                utterance_id: "b".into(),
                target_speaker: "spk0".into(),
            },
        ];
        let p = dir.path().join("pairs.csv");
        write_pairs(&p, &pairs).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("utterance_id,target_speaker\n"));
        assert_eq!(read_pairs(&p).unwrap(), pairs);
        let rows = vec![ManifestRow {
            source_id: "a".into(),
            source_speaker: "spk0".into(),
            target_speaker: "spk1".into(),
            output_path: "a_to_spk1.fcv".into(),
            trimmed_frames: 1,
            status: "ok".into(),
        }];
        let m = dir.path().join(MANIFEST_FILE);
        write_manifest(&m, &rows).unwrap();
        assert_eq!(read_manifest(&m).unwrap(), rows);
        write_manifest(&m, &[]).unwrap();
        assert!(read_manifest(&m).unwrap().is_empty());
    }
}
