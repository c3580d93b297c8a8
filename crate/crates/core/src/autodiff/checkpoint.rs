//! Parameter checkpoints.
//!
//! A checkpoint is a JSON document
//! `{"format": "rsd4-params", "version": 1, "meta": {...}, "sets": {...}}`
//! where each set is a list of `{"name", "rows", "cols", "data"}` arrays in
//! row-major order. Floats round-trip exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::ParamSet;
use crate::error::{Error, Result};

pub const FORMAT: &str = "rsd4-params";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub sets: BTreeMap<String, ParamSet>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            meta,
            sets: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, set: ParamSet) {
        self.sets.insert(name.into(), set);
    }

    pub fn take(&mut self, name: &str) -> Result<ParamSet> {
        self.sets
            .remove(name)
            .ok_or_else(|| Error::Serde(format!("checkpoint has no parameter set {name:?}")))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::Serde(format!(
                "unsupported checkpoint {} v{} (expected {FORMAT} v{VERSION})",
                ck.format, ck.version
            )));
        }
        for (name, set) in &ck.sets {
            for (k, m) in set.values().enumerate() {
                if m.data.len() != m.rows * m.cols {
                    return Err(Error::Serde(format!("{name}/{}: data length mismatch", set.name(k))));
                }
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Matrix;

    #[test]
    fn round_trip_is_exact() {
        let mut ps = ParamSet::new();
        ps.add("w", Matrix::from_vec(1, 3, vec![0.1, 1.0 / 3.0, -2e-300]).unwrap());
        let mut ck = Checkpoint::new(serde_json::json!({"k": 1}));
        ck.insert("actor", ps.clone());
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_foreign_format() {
        let text = r#"{"format":"other","version":1,"sets":{}}"#;
        assert!(Checkpoint::from_json(text).is_err());
        let text = r#"{"format":"rsd4-params","version":1,"sets":{"a":[{"name":"w","rows":2,"cols":2,"data":[1.0]}]}}"#;
        assert!(Checkpoint::from_json(text).is_err());
    }
}
