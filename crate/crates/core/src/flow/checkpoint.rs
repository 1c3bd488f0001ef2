//! Checkpoint container shared by the flow, the phoneme encoder and the
//! optimizer state.
//!
//! ```text
//! "FCKP"
//! u32 version, u32 n_sections              (little-endian)
//! per section:
//!   4-byte tag                             e.g. "FLOW", "PENC", "OPTM"
//!   u32 header_len, header_len bytes JSON  config plus parameter manifest
//!   u64 n_values, n_values f64             flat parameter blob
//! ```

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use super::config::FlowConfig;
use super::params::{ParamEntry, ParamSet};
use super::stack::FlowStack;
use crate::binio::Reader;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FCKP";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const FLOW_TAG: [u8; 4] = *b"FLOW";

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub tag: [u8; 4],
    /// JSON object; always carries a `manifest` describing `values`.
    pub header: Map<String, Value>,
    pub values: Vec<f64>,
}

impl Section {
    pub fn from_params(tag: [u8; 4], mut header: Map<String, Value>, params: &ParamSet) -> Section {
        header.insert(
            "manifest".into(),
            serde_json::to_value(params.entries()).expect("manifest serializes"),
        );
        Section {
            tag,
            header,
            values: params.values().to_vec(),
        }
    }

    pub fn tag_str(&self) -> String {
        String::from_utf8_lossy(&self.tag).into_owned()
    }

    pub fn field<T: DeserializeOwned>(&self, path: &Path, name: &str) -> Result<T> {
        let v = self
            .header
            .get(name)
            .ok_or_else(|| Error::format(path, format!("{}.{name}", self.tag_str()), "missing"))?;
        serde_json::from_value(v.clone())
            .map_err(|e| Error::format(path, format!("{}.{name}", self.tag_str()), e.to_string()))
    }

    pub fn params(&self, path: &Path) -> Result<ParamSet> {
        let entries: Vec<ParamEntry> = self.field(path, "manifest")?;
        ParamSet::from_parts(self.values.clone(), entries).ok_or_else(|| {
            Error::format(
                path,
                format!("{}.manifest", self.tag_str()),
                "manifest offsets do not tile the parameter blob",
            )
        })
    }
}

pub fn header_of<T: Serialize>(pairs: &[(&str, T)]) -> Map<String, Value> {
    pairs
        .iter()
        .map(|(k, v)| ((*k).to_string(), serde_json::to_value(v).expect("header serializes")))
        .collect()
}

pub fn find_section<'a>(sections: &'a [Section], tag: &[u8; 4]) -> Option<&'a Section> {
    sections.iter().find(|s| &s.tag == tag)
}

pub fn encode_checkpoint(sections: &[Section]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for s in sections {
        buf.extend_from_slice(&s.tag);
        let json = serde_json::to_vec(&s.header).expect("header serializes");
        buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&json);
        buf.extend_from_slice(&(s.values.len() as u64).to_le_bytes());
        for v in &s.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Vec<Section>> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "magic", "not an FCKP checkpoint"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, "version", format!("unsupported version {version}")));
    }
    let n = r.u32("n_sections")?;
    let mut sections = Vec::with_capacity(n as usize);
    for i in 0..n {
        let tag: [u8; 4] = r.take(4, &format!("section{i}.tag"))?.try_into().unwrap();
        let len = r.u32(&format!("section{i}.header_len"))? as usize;
        let raw = r.take(len, &format!("section{i}.header"))?;
        let header: Map<String, Value> = serde_json::from_slice(raw)
            .map_err(|e| Error::format(path, format!("section{i}.header"), e.to_string()))?;
        let n_values = r.u64(&format!("section{i}.n_values"))?;
        if n_values > (r.remaining() / 8) as u64 {
            return Err(Error::format(path, format!("section{i}.values"), "truncated payload"));
        }
        let values = r.f64s(n_values as usize, &format!("section{i}.values"))?;
        sections.push(Section { tag, header, values });
    }
    if r.remaining() != 0 {
        return Err(Error::format(path, "trailer", format!("{} unexpected trailing bytes", r.remaining())));
    }
    Ok(sections)
}

pub fn write_checkpoint(path: &Path, sections: &[Section]) -> Result<()> {
    std::fs::write(path, encode_checkpoint(sections)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<Section>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

impl FlowStack {
    pub fn to_section(&self) -> Section {
        let mut header = Map::new();
        header.insert("config".into(), serde_json::to_value(self.config()).expect("config serializes"));
        header.insert("actnorm_initialized".into(), Value::Bool(self.actnorm_initialized()));
        Section::from_params(FLOW_TAG, header, self.params())
    }

    pub fn from_section(section: &Section, path: &Path) -> Result<FlowStack> {
        let config: FlowConfig = section.field(path, "config")?;
        let init: bool = section.field(path, "actnorm_initialized")?;
        let params = section.params(path)?;
        FlowStack::from_params(&config, params, init)
            .map_err(|e| Error::format(path, "FLOW.manifest", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    #[test]
    fn flow_section_round_trips_bitwise() {
        let cfg = FlowConfig {
            mel_dim: 4,
            split_channels: 2,
            hidden_channels: 5,
            speaker_dim: 3,
            ..FlowConfig::default()
        };
        let mut rng = SeededRng::new(8);
        let stack = FlowStack::random(&cfg, &mut rng, 0.5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.fckp");
        write_checkpoint(&path, &[stack.to_section()]).unwrap();
        let first = std::fs::read(&path).unwrap();
        let sections = read_checkpoint(&path).unwrap();
        let back = FlowStack::from_section(find_section(&sections, &FLOW_TAG).unwrap(), &path).unwrap();
        assert_eq!(back.params(), stack.params());
        assert_eq!(back.config(), stack.config());
        assert_eq!(encode_checkpoint(&[back.to_section()]), first);
    }

    #[test]
    fn corrupted_files_name_the_field() {
        let path = Path::new("bad.fckp");
        let s = Section {
            tag: *b"TEST",
            header: header_of(&[("x", 1)]),
            values: vec![1.0, 2.0],
        };
        let mut bytes = encode_checkpoint(&[s]);
        let err = decode_checkpoint(&bytes[..bytes.len() - 3], path).unwrap_err();
        assert!(matches!(err, Error::Format { ref field, .. } if field == "section0.values"), "{err}");
        bytes[0] = b'X';
        let err = decode_checkpoint(&bytes, path).unwrap_err();
        assert!(matches!(err, Error::Format { ref field, .. } if field == "magic"));
    }
}
