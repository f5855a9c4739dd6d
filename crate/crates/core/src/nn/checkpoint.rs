//! JSON container of named parameter arrays.
//!
//! ```json
//! { "format_version": 1, "arrays": { "policy.encoder.0.weight": { "shape": [7, 64], "data": [...] } }, "meta": {...} }
//! ```
//!
//! Arrays are flat row-major with an explicit shape header. `meta` carries
//! anything that is not a parameter tensor (configs, normalization stats).

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn from_array2(a: &Array2<f64>) -> Self {
        Self {
            shape: a.shape().to_vec(),
            data: a.iter().copied().collect(),
        }
    }

    pub fn from_array1(a: &Array1<f64>) -> Self {
        Self {
            shape: vec![a.len()],
            data: a.to_vec(),
        }
    }

    pub fn into_array2(self) -> Result<Array2<f64>> {
        match self.shape[..] {
            [r, c] => Array2::from_shape_vec((r, c), self.data)
                .map_err(|e| Error::Checkpoint(format!("bad 2-d array: {e}"))),
            _ => Err(Error::Checkpoint(format!("expected 2-d shape, got {:?}", self.shape))),
        }
    }

    pub fn into_array1(self) -> Result<Array1<f64>> {
        match self.shape[..] {
            [n] if n == self.data.len() => Ok(Array1::from(self.data)),
            _ => Err(Error::Checkpoint(format!("expected 1-d shape, got {:?}", self.shape))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub arrays: BTreeMap<String, NamedArray>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Default for Checkpoint {
    fn default() -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            arrays: BTreeMap::new(),
            meta: serde_json::Value::Null,
        }
    }
}

impl Checkpoint {
    pub fn insert(&mut self, entries: impl IntoIterator<Item = (String, NamedArray)>) {
        self.arrays.extend(entries);
    }

    pub fn get(&self, name: &str) -> Option<NamedArray> {
        self.arrays.get(name).cloned()
    }

    pub fn has_namespace(&self, prefix: &str) -> bool {
        let p = format!("{prefix}.");
        self.arrays.keys().any(|k| k.starts_with(&p))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                ck.format_version
            )));
        }
        for (name, a) in &ck.arrays {
            let n: usize = a.shape.iter().product();
            if n != a.data.len() {
                return Err(Error::Checkpoint(format!(
                    "array `{name}` shape {:?} does not match {} values",
                    a.shape,
                    a.data.len()
                )));
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
