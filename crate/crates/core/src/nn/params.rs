//! Named parameter storage, RMSProp and the checkpoint file format.
//!
//! A checkpoint is two files: `<name>.bin` holds a versioned header followed
//! by every parameter as little-endian `f64`, and `<name>.manifest` lists
//! `name rows cols offset` per parameter (offset counted in values).

use std::fmt::Write as _;
use std::fs;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tape::Gradients;

const MAGIC: &[u8; 8] = b"TOPCKPT\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }

    /// Copy all values from a store with identical layout.
    pub fn copy_from(&mut self, other: &ParamStore) {
        assert_eq!(self.names, other.names, "parameter layouts differ");
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            dst.assign(src);
        }
    }

    /// Hash of the exact bit patterns of every value.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (n, v) in self.names.iter().zip(&self.values) {
            n.hash(&mut h);
            v.dim().hash(&mut h);
            for x in v.iter() {
                x.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    pub fn manifest_path(bin: &Path) -> PathBuf {
        bin.with_extension("manifest")
    }

    pub fn save(&self, bin: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(16 + self.scalar_count() * 8);
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(self.scalar_count() as u64).to_le_bytes());
        let mut manifest = format!("topsim-checkpoint {FORMAT_VERSION}\n");
        let mut offset = 0;
        for (n, v) in self.names.iter().zip(&self.values) {
            let _ = writeln!(manifest, "{n} {} {} {offset}", v.nrows(), v.ncols());
            for x in v.iter() {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
            offset += v.len();
        }
        if let Some(dir) = bin.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(bin, bytes)?;
        fs::write(Self::manifest_path(bin), manifest)?;
        Ok(())
    }

    pub fn load(bin: &Path) -> Result<ParamStore> {
        let bytes = fs::read(bin)?;
        let manifest = fs::read_to_string(Self::manifest_path(bin))?;
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint(format!("{} is not a checkpoint", bin.display())));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        if bytes.len() != 20 + count * 8 {
            return Err(Error::Checkpoint("truncated data section".into()));
        }
        let data: Vec<f64> = bytes[20..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut lines = manifest.lines();
        if lines.next() != Some(&format!("topsim-checkpoint {FORMAT_VERSION}")) {
            return Err(Error::Checkpoint("bad manifest header".into()));
        }
        let mut store = ParamStore::default();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Checkpoint(format!("bad manifest line `{line}`")))
            };
            if f.len() != 4 {
                return Err(Error::Checkpoint(format!("bad manifest line `{line}`")));
            }
            let (rows, cols, offset) = (parse(f[1])?, parse(f[2])?, parse(f[3])?);
            let end = offset + rows * cols;
            if end > data.len() {
                return Err(Error::Checkpoint(format!("parameter {} out of range", f[0])));
            }
            let value = Array2::from_shape_vec((rows, cols), data[offset..end].to_vec())
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            store.add(f[0], value);
        }
        Ok(store)
    }

    /// Load values into an existing layout, checking names and shapes.
    pub fn load_into(&mut self, bin: &Path) -> Result<()> {
        let loaded = ParamStore::load(bin)?;
        if loaded.names != self.names {
            return Err(Error::Checkpoint("parameter names do not match the network".into()));
        }
        for (dst, src) in self.values.iter().zip(&loaded.values) {
            if dst.dim() != src.dim() {
                return Err(Error::Checkpoint("parameter shapes do not match the network".into()));
            }
        }
        self.values = loaded.values;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            lr: 1e-4,
            alpha: 0.99,
            eps: 1e-8,
        }
    }
}

/// `acc ← α·acc + (1−α)·g²`, `p ← p − lr·g / (√acc + ε)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    acc: Vec<Array2<f64>>,
}

impl RmsProp {
    pub fn new(config: RmsPropConfig, store: &ParamStore) -> Self {
        RmsProp {
            config,
            acc: store.values.iter().map(|v| Array2::zeros(v.dim())).collect(),
        }
    }

    pub fn accumulator(&self, id: ParamId) -> &Array2<f64> {
        &self.acc[id.0]
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        let RmsPropConfig { lr, alpha, eps } = self.config;
        for (id, g) in grads.iter() {
            let acc = &mut self.acc[id.0];
            Zip::from(&mut store.values[id.0])
                .and(acc)
                .and(g)
                .for_each(|p, a, &g| {
                    *a = alpha * *a + (1.0 - alpha) * g * g;
                    *p -= lr * g / (a.sqrt() + eps);
                });
        }
    }
}
