//! Binary checkpoint serialization.
//!
//! Layout (all integers little-endian):
//! magic `PDTC`, version `u16`, fingerprint (`u32` length + UTF-8),
//! best validation loss `f64`, epoch `u32`, tensor count `u32`, then per
//! tensor: name (`u16` length + UTF-8), rank `u8`, dims (`u64` each), and the
//! raw IEEE-754 32-bit payload.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use crate::nn::{build_model, Model, ModelConfig, NnError};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"PDTC";
const VERSION: u16 = 1;

#[derive(Debug)]
pub enum CheckpointError {
    IoFailure(io::Error),
    CorruptCheckpoint(String),
    ArchitectureMismatch { expected: String, found: String },
    Model(NnError),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::IoFailure(e) => write!(f, "checkpoint I/O failed: {e}"),
            CheckpointError::CorruptCheckpoint(msg) => write!(f, "corrupt checkpoint: {msg}"),
            CheckpointError::ArchitectureMismatch { expected, found } => write!(
                f,
                "architecture mismatch: model is '{expected}', checkpoint holds '{found}'"
            ),
            CheckpointError::Model(e) => write!(f, "checkpoint model rebuild failed: {e}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<io::Error> for CheckpointError {
    fn from(e: io::Error) -> Self {
        CheckpointError::IoFailure(e)
    }
}

impl From<NnError> for CheckpointError {
    fn from(e: NnError) -> Self {
        CheckpointError::Model(e)
    }
}

/// Named parameter snapshot taken at the best validation loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: String,
    pub best_val_loss: f64,
    pub epoch: u32,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    /// Snapshot a model's parameters.
    pub fn from_model(model: &Model<f32>, best_val_loss: f64, epoch: u32) -> Self {
        Checkpoint {
            fingerprint: model.fingerprint(),
            best_val_loss,
            epoch,
            tensors: model
                .params()
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    /// Restore the parameters into an existing model of the same architecture.
    pub fn apply(&self, model: &mut Model<f32>) -> Result<(), CheckpointError> {
        let expected = model.fingerprint();
        if expected != self.fingerprint {
            return Err(CheckpointError::ArchitectureMismatch {
                expected,
                found: self.fingerprint.clone(),
            });
        }
        model.load_params(&self.tensors)?;
        Ok(())
    }

    /// Rebuild the full model from the embedded fingerprint and parameters.
    pub fn into_model(&self) -> Result<Model<f32>, CheckpointError> {
        use rand::SeedableRng;
        let cfg = ModelConfig::from_fingerprint(&self.fingerprint)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = build_model(&cfg, &mut rng)?;
        self.apply(&mut model)?;
        Ok(model)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let fp = ckpt.fingerprint.as_bytes();
    buf.extend_from_slice(&(fp.len() as u32).to_le_bytes());
    buf.extend_from_slice(fp);
    buf.extend_from_slice(&ckpt.best_val_loss.to_le_bytes());
    buf.extend_from_slice(&ckpt.epoch.to_le_bytes());
    buf.extend_from_slice(&(ckpt.tensors.len() as u32).to_le_bytes());
    for (name, tensor) in &ckpt.tensors {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.push(tensor.rank() as u8);
        for &dim in tensor.shape() {
            buf.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path)?;
    let mut reader = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    let magic = reader.take(4)?;
    if magic != MAGIC {
        return Err(CheckpointError::CorruptCheckpoint(
            "bad magic bytes".into(),
        ));
    }
    let version = u16::from_le_bytes(reader.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::CorruptCheckpoint(format!(
            "unsupported version {version}"
        )));
    }
    let fp_len = u32::from_le_bytes(reader.take(4)?.try_into().unwrap()) as usize;
    let fingerprint = String::from_utf8(reader.take(fp_len)?.to_vec())
        .map_err(|_| CheckpointError::CorruptCheckpoint("fingerprint is not UTF-8".into()))?;
    let best_val_loss = f64::from_le_bytes(reader.take(8)?.try_into().unwrap());
    let epoch = u32::from_le_bytes(reader.take(4)?.try_into().unwrap());
    let count = u32::from_le_bytes(reader.take(4)?.try_into().unwrap()) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(reader.take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(reader.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::CorruptCheckpoint("tensor name is not UTF-8".into()))?;
        let rank = reader.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let dim = u64::from_le_bytes(reader.take(8)?.try_into().unwrap()) as usize;
            numel = numel.checked_mul(dim).ok_or_else(|| {
                CheckpointError::CorruptCheckpoint("tensor dims overflow".into())
            })?;
            shape.push(dim);
        }
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f32::from_le_bytes(reader.take(4)?.try_into().unwrap()));
        }
        let tensor = Tensor::new(shape, data)
            .map_err(|e| CheckpointError::CorruptCheckpoint(e.to_string()))?;
        tensors.push((name, tensor));
    }
    if reader.pos != bytes.len() {
        return Err(CheckpointError::CorruptCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - reader.pos
        )));
    }
    Ok(Checkpoint {
        fingerprint,
        best_val_loss,
        epoch,
        tensors,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::CorruptCheckpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_model, ModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn desk8() -> ModelConfig {
        let mut cfg = ModelConfig::desk();
        cfg.input_size = 8;
        cfg
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model = build_model::<f32>(&desk8(), &mut rng).unwrap();
        let ckpt = Checkpoint::from_model(&model, 0.123456789, 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&ckpt, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, ckpt);
        for ((_, a), (_, b)) in loaded.tensors.iter().zip(ckpt.tensors.iter()) {
            let a_bits: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
            let b_bits: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a_bits, b_bits);
        }
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model = build_model::<f32>(&desk8(), &mut rng).unwrap();
        let ckpt = Checkpoint::from_model(&model, 1.0, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&ckpt, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            load_checkpoint(&path).unwrap_err(),
            CheckpointError::CorruptCheckpoint(_)
        ));
    }

    #[test]
    fn bad_magic_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.ckpt");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(matches!(
            load_checkpoint(&path).unwrap_err(),
            CheckpointError::CorruptCheckpoint(_)
        ));
    }

    #[test]
    fn mismatched_architecture_rejected_on_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model = build_model::<f32>(&desk8(), &mut rng).unwrap();
        let ckpt = Checkpoint::from_model(&model, 1.0, 1);
        let mut other_cfg = desk8();
        other_cfg.input_size = 16;
        let mut other = build_model::<f32>(&other_cfg, &mut rng).unwrap();
        assert!(matches!(
            ckpt.apply(&mut other).unwrap_err(),
            CheckpointError::ArchitectureMismatch { .. }
        ));
    }

    #[test]
    fn into_model_rebuilds_from_fingerprint() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let model = build_model::<f32>(&desk8(), &mut rng).unwrap();
        let ckpt = Checkpoint::from_model(&model, 0.5, 3);
        let rebuilt = ckpt.into_model().unwrap();
        assert_eq!(rebuilt.fingerprint(), model.fingerprint());
        for (a, b) in rebuilt.params().iter().zip(model.params()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn missing_file_is_io_failure() {
        assert!(matches!(
            load_checkpoint(Path::new("/nonexistent/never.ckpt")).unwrap_err(),
            CheckpointError::IoFailure(_)
        ));
    }

    mod proptests {
        use super::*;
        use proptest::prelude::*;

        fn arb_tensor() -> impl Strategy<Value = Tensor<f32>> {
            (1usize..4, 1usize..4, proptest::collection::vec(-1e3f32..1e3, 1..16)).prop_map(
                |(r, c, mut data)| {
                    data.resize(r * c, 0.5);
                    Tensor::new(vec![r, c], data).unwrap()
                },
            )
        }

        proptest! {
            // Any checkpoint content survives the byte format unchanged.
            #[test]
            fn round_trip_any_tensor_set(
                tensors in proptest::collection::vec(arb_tensor(), 1..6),
                loss in -1e6f64..1e6,
                epoch in 1u32..10_000,
            ) {
                let ckpt = Checkpoint {
                    fingerprint: "v1;test".to_string(),
                    best_val_loss: loss,
                    epoch,
                    tensors: tensors
                        .into_iter()
                        .enumerate()
                        .map(|(i, t)| (format!("p{i}"), t))
                        .collect(),
                };
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("rt.ckpt");
                save_checkpoint(&ckpt, &path).unwrap();
                prop_assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
            }
        }
    }
}
