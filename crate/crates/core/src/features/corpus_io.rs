//! On-disk corpus container.
//!
//! A corpus is a directory holding `index.json` and one binary file per
//! utterance. Each binary file is:
//!
//! ```text
//! "FCV1"
//! u32 channels, u32 frames                  (little-endian)
//! channels*frames f64 mel                   (channel-major)
//! frames f64 f0_raw
//! frames u8 vuv                             (0 or 1)
//! frames u32 phoneme_ids
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::Reader;
use super::conditioning::Utterance;
use crate::error::{Error, Result};
use crate::numerics::FrameMatrix;

pub const UTTERANCE_MAGIC: &[u8; 4] = b"FCV1";
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub speaker_id: String,
    pub words: Vec<String>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub utterances: Vec<IndexEntry>,
}

impl CorpusIndex {
    pub fn ids(&self) -> Vec<&str> {
        self.utterances.iter().map(|e| e.id.as_str()).collect()
    }
}

pub fn utterance_file_name(id: &str) -> String {
    format!("{id}.fcv")
}

pub fn encode_utterance(u: &Utterance) -> Vec<u8> {
    let c = u.mel.channels();
    let t = u.mel.frames();
    let mut buf = Vec::with_capacity(12 + 8 * c * t + 13 * t);
    buf.extend_from_slice(UTTERANCE_MAGIC);
    buf.extend_from_slice(&(c as u32).to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    for v in u.mel.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in &u.f0_raw {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend(u.vuv.iter().map(|&v| v as u8));
    for p in &u.phoneme_ids {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    buf
}

pub fn decode_utterance(
    bytes: &[u8],
    path: &Path,
    id: &str,
    speaker_id: &str,
    words: Vec<String>,
) -> Result<Utterance> {
    let mut r = Reader { bytes, pos: 0, path };
    let magic = r.take(4, "magic")?;
    if magic != UTTERANCE_MAGIC {
        return Err(Error::format(
            path,
            "magic",
            format!("expected {:?}, found {:?}", UTTERANCE_MAGIC, magic),
        ));
    }
    let channels = r.u32("channels")? as usize;
    let frames = r.u32("frames")? as usize;
    if channels == 0 {
        return Err(Error::format(path, "channels", "must be positive"));
    }
    let mel = r.f64s(channels * frames, "mel")?;
    let f0_raw = r.f64s(frames, "f0_raw")?;
    let vuv = r
        .take(frames, "vuv")?
        .iter()
        .enumerate()
        .map(|(i, &b)| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::format(
                path,
                "vuv",
                format!("frame {i} holds {other}, expected 0 or 1"),
            )),
        })
        .collect::<Result<Vec<bool>>>()?;
    let phoneme_ids = (0..frames)
        .map(|_| r.u32("phoneme_ids"))
        .collect::<Result<Vec<u32>>>()?;
    if r.pos != bytes.len() {
        return Err(Error::format(
            path,
            "trailer",
            format!("{} unexpected trailing bytes", bytes.len() - r.pos),
        ));
    }
    let mel = FrameMatrix::from_vec(channels, frames, mel)
        .map_err(|e| Error::format(path, "mel", e.to_string()))?;
    Ok(Utterance {
        id: id.to_string(),
        speaker_id: speaker_id.to_string(),
        mel,
        f0_raw,
        vuv,
        phoneme_ids,
        words,
    })
}

pub fn write_corpus(dir: &Path, utterances: &[Utterance]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(utterances.len());
    for u in utterances {
        let file = utterance_file_name(&u.id);
        let path = dir.join(&file);
        std::fs::write(&path, encode_utterance(u)).map_err(|e| Error::io(&path, e))?;
        entries.push(IndexEntry {
            id: u.id.clone(),
            speaker_id: u.speaker_id.clone(),
            words: u.words.clone(),
            file,
        });
    }
    let index = CorpusIndex { utterances: entries };
    let path = dir.join(INDEX_FILE);
    let text = serde_json::to_string_pretty(&index).expect("index serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_index(dir: &Path) -> Result<CorpusIndex> {
    let path = dir.join(INDEX_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path, source })
}

pub fn read_corpus(dir: &Path) -> Result<Vec<Utterance>> {
    let index = read_index(dir)?;
    let mut out = Vec::with_capacity(index.utterances.len());
    let mut mel_dim = None;
    for entry in index.utterances {
        let path = dir.join(&entry.file);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let u = decode_utterance(&bytes, &path, &entry.id, &entry.speaker_id, entry.words)?;
        match mel_dim {
            None => mel_dim = Some(u.mel.channels()),
            Some(d) if d != u.mel.channels() => {
                return Err(Error::format(
                    &path,
                    "channels",
                    format!("dimension mismatch: {} vs corpus {d}", u.mel.channels()),
                ))
            }
            _ => {}
        }
        u.validate(None)
            .map_err(|e| Error::format(&path, "frames", e.to_string()))?;
        out.push(u);
    }
    Ok(out)
}
