//! Named parameter storage, rebound to a fresh tape every step.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Tape, Var};

/// Named trainable matrices. Iteration order is the name order, so updates,
/// serialization and checksums are deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    values: BTreeMap<String, Array2<f64>>,
}

/// Wire format for one matrix: row-major data plus its shape.
#[derive(Serialize, Deserialize)]
struct MatrixData {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) {
        let prev = self.values.insert(name.to_string(), value);
        assert!(prev.is_none(), "duplicate parameter name {name}");
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        self.values
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        self.values
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.values.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn param_count(&self) -> usize {
        self.values.values().map(|v| v.len()).sum()
    }

    /// Create one leaf per parameter on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> TapeBinding {
        let vars = self
            .values
            .iter()
            .map(|(name, value)| (name.clone(), tape.leaf(value.clone())))
            .collect();
        TapeBinding { vars }
    }

    /// Exact-bit content signature; used to prove a frozen model never moved.
    pub fn checksum(&self) -> u64 {
        // FNV-1a over names and IEEE bit patterns.
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut eat = |byte: u8| {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        };
        for (name, value) in &self.values {
            name.bytes().for_each(&mut eat);
            for v in value.iter() {
                v.to_bits().to_le_bytes().iter().copied().for_each(&mut eat);
            }
        }
        hash
    }

    pub fn save_json<W: Write>(&self, mut w: W) -> Result<()> {
        let wire: BTreeMap<&String, MatrixData> = self
            .values
            .iter()
            .map(|(name, v)| {
                (
                    name,
                    MatrixData {
                        rows: v.nrows(),
                        cols: v.ncols(),
                        data: v.iter().copied().collect(),
                    },
                )
            })
            .collect();
        serde_json::to_writer(&mut w, &wire)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn load_json<R: BufRead>(r: R) -> Result<Self> {
        let wire: BTreeMap<String, MatrixData> = serde_json::from_reader(r)?;
        let mut out = ParamSet::new();
        for (name, m) in wire {
            let value = Array2::from_shape_vec((m.rows, m.cols), m.data)
                .map_err(|e| Error::Parse(format!("parameter {name}: {e}")))?;
            out.insert(&name, value);
        }
        Ok(out)
    }
}

/// The tape leaves for one step, keyed by parameter name.
pub struct TapeBinding {
    vars: BTreeMap<String, Var>,
}

impl TapeBinding {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
