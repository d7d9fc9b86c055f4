//! Named parameter arrays, initialization and binary checkpoints.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::Mat;

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

fn fresh_uid() -> u64 {
    NEXT_UID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Ordered collection of named matrices. Every store carries a process-unique
/// id so gradients from several stores on one tape stay apart.
#[derive(Debug)]
pub struct ParamStore {
    uid: u64,
    names: Vec<String>,
    values: Vec<Mat>,
    /// Frozen stores are bound as constants and never receive gradients.
    pub frozen: bool,
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        Self { uid: fresh_uid(), names: self.names.clone(), values: self.values.clone(), frozen: self.frozen }
    }
}

impl PartialEq for ParamStore {
    /// Bitwise equality of names and values.
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names
            && self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| {
                a.dim() == b.dim() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self { uid: fresh_uid(), names: Vec::new(), values: Vec::new(), frozen: false }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
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

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn values(&self) -> &[Mat] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Mat] {
        &mut self.values
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Glorot-uniform `rows×cols` matrix.
    pub fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..limit))
    }

    /// Copies values from `other` for every parameter whose name and shape
    /// match; returns how many were copied.
    pub fn load_matching(&mut self, other: &ParamStore) -> usize {
        let mut n = 0;
        for (name, value) in other.names.iter().zip(&other.values) {
            if let Some(id) = self.id(name) {
                if self.values[id.0].dim() == value.dim() {
                    self.values[id.0].assign(value);
                    n += 1;
                }
            }
        }
        n
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: {0}")]
    Format(String),
    #[error("checkpoint holds a {found} model, expected {expected}")]
    Kind { expected: String, found: String },
    #[error("checkpoint fingerprint {found} does not match the configuration ({expected})")]
    Fingerprint { expected: String, found: String },
}

const MAGIC: &[u8; 8] = b"MOLCFCK1";

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    config: serde_json::Value,
    stores: Vec<StoreHeader>,
}

#[derive(Serialize, Deserialize)]
struct StoreHeader {
    name: String,
    params: Vec<(String, usize, usize)>,
}

/// Contents of a checkpoint file.
#[derive(Debug)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub stores: Vec<(String, ParamStore)>,
}

impl Checkpoint {
    pub fn store(&self, name: &str) -> Option<&ParamStore> {
        self.stores.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn take_store(&mut self, name: &str) -> Option<ParamStore> {
        let i = self.stores.iter().position(|(n, _)| n == name)?;
        Some(self.stores.remove(i).1)
    }
}

/// Writes a JSON header followed by raw little-endian `f64` data, so values
/// reload bit for bit.
pub fn save_checkpoint(
    path: &Path,
    kind: &str,
    config: serde_json::Value,
    stores: &[(&str, &ParamStore)],
) -> Result<(), CheckpointError> {
    let header = Header {
        kind: kind.to_string(),
        config,
        stores: stores
            .iter()
            .map(|(name, s)| StoreHeader {
                name: name.to_string(),
                params: s.names.iter().zip(&s.values).map(|(n, v)| (n.clone(), v.nrows(), v.ncols())).collect(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| CheckpointError::Format(e.to_string()))?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    for (_, s) in stores {
        for v in &s.values {
            for x in v.iter() {
                out.write_all(&x.to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, expected_kind: &str) -> Result<Checkpoint, CheckpointError> {
    let mut f = std::io::BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::Format(path.display().to_string()));
    }
    let mut len = [0u8; 8];
    f.read_exact(&mut len)?;
    let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
    f.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header).map_err(|e| CheckpointError::Format(e.to_string()))?;
    if header.kind != expected_kind {
        return Err(CheckpointError::Kind { expected: expected_kind.into(), found: header.kind });
    }
    let mut stores = Vec::new();
    let mut buf = [0u8; 8];
    for sh in header.stores {
        let mut store = ParamStore::new();
        for (name, r, c) in sh.params {
            let mut data = Vec::with_capacity(r * c);
            for _ in 0..r * c {
                f.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            let m = Array2::from_shape_vec((r, c), data).map_err(|e| CheckpointError::Format(e.to_string()))?;
            store.add(name, m);
        }
        stores.push((sh.name, store));
    }
    let mut rest = Vec::new();
    f.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(CheckpointError::Format("trailing bytes".into()));
    }
    Ok(Checkpoint { kind: header.kind, config: header.config, stores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        s.add("w", ParamStore::glorot(&mut rng, 3, 4));
        s.add("b", Array2::from_elem((1, 4), 0.1 + 0.2));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, "test", serde_json::json!({"k": 1}), &[("main", &s)]).unwrap();
        let ck = load_checkpoint(&path, "test").unwrap();
        assert_eq!(ck.store("main").unwrap(), &s);
        assert_eq!(ck.config["k"], 1);
        assert!(matches!(load_checkpoint(&path, "other"), Err(CheckpointError::Kind { .. })));
    }

    #[test]
    fn clones_get_new_ids() {
        let s = ParamStore::new();
        assert_ne!(s.uid(), s.clone().uid());
    }
}
