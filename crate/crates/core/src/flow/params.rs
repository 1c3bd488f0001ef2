use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Location of one named tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamRange {
    pub offset: usize,
    pub len: usize,
}

impl ParamRange {
    #[inline]
    pub fn of<'a>(&self, values: &'a [f64]) -> &'a [f64] {
        &values[self.offset..self.offset + self.len]
    }

    #[inline]
    pub fn of_mut<'a>(&self, values: &'a mut [f64]) -> &'a mut [f64] {
        &mut values[self.offset..self.offset + self.len]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> ParamRange {
        ParamRange {
            offset: self.offset,
            len: self.len(),
        }
    }
}

/// All trainable values of a model in one flat buffer, plus a manifest of
/// named, shaped slices into it. Gradients use a buffer of the same length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    values: Vec<f64>,
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(values: Vec<f64>, entries: Vec<ParamEntry>) -> Option<Self> {
        let mut end = 0;
        for e in &entries {
            if e.offset != end {
                return None;
            }
            end += e.len();
        }
        (end == values.len()).then_some(Self { values, entries })
    }

    /// Append a zero-filled tensor.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamRange {
        let len: usize = shape.iter().product();
        let offset = self.values.len();
        self.values.resize(offset + len, 0.0);
        self.entries.push(ParamEntry {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
        });
        ParamRange { offset, len }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }

    /// SHA-256 over the little-endian bytes of every value.
    pub fn hash(&self) -> String {
        hash_values(&self.values)
    }
}

pub fn hash_values(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}
