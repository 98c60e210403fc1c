//! Versioned binary checkpoints: magic, version, JSON manifest, then a
//! little-endian f64 payload.
//!
//! ```text
//! b"SMFCKPT\0" | u32 version | u64 manifest_len | manifest JSON
//!            | u64 payload_len | payload_len × f64
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::ParamStore;
use crate::optim::{OptimizerConfig, OptimizerState};
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SMFCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated: needed {needed} bytes at offset {offset}, file has {len}")]
    Truncated { needed: usize, offset: usize, len: usize },
    #[error("parameter `{name}`: checkpoint shape {found:?}, model shape {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("parameter `{0}` is missing from the checkpoint")]
    MissingParam(String),
    #[error("checkpoint holds unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

type CkResult<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerEntry {
    pub config: OptimizerConfig,
    pub step: u64,
    pub buffers_per_param: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub fingerprint: String,
    pub epoch: u64,
    pub step: u64,
    pub params: Vec<TensorEntry>,
    pub optimizer: Option<OptimizerEntry>,
    pub rng: Vec<(String, RngState)>,
    /// Arbitrary trainer state (history, early-stopping bookkeeping).
    #[serde(default)]
    pub trainer: serde_json::Value,
    /// Whether a second parameter set (best-so-far) follows the buffers.
    pub has_best: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub params: Vec<Tensor>,
    pub optimizer_buffers: Vec<Vec<Tensor>>,
    pub best: Option<Vec<Tensor>>,
}

impl Checkpoint {
    /// Captures a store (and optionally an optimizer) with empty trainer state.
    pub fn from_store(kind: &str, fingerprint: &str, store: &ParamStore, opt: Option<&OptimizerState>) -> Self {
        let params = store
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                trainable: p.trainable,
            })
            .collect();
        Self {
            manifest: Manifest {
                kind: kind.to_string(),
                fingerprint: fingerprint.to_string(),
                epoch: 0,
                step: 0,
                params,
                optimizer: opt.map(|o| OptimizerEntry {
                    config: o.cfg,
                    step: o.step,
                    buffers_per_param: o.buffers.first().map_or(0, Vec::len),
                }),
                rng: Vec::new(),
                trainer: serde_json::Value::Null,
                has_best: false,
            },
            params: store.iter().map(|p| p.value.clone()).collect(),
            optimizer_buffers: opt.map(|o| o.buffers.clone()).unwrap_or_default(),
            best: None,
        }
    }

    pub fn encode(&self) -> CkResult<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)
            .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
        let mut payload: Vec<f64> = Vec::new();
        for t in &self.params {
            payload.extend_from_slice(t.data());
        }
        for bufs in &self.optimizer_buffers {
            for t in bufs {
                payload.extend_from_slice(t.data());
            }
        }
        if let Some(best) = &self.best {
            for t in best {
                payload.extend_from_slice(t.data());
            }
        }
        let mut out = Vec::with_capacity(28 + manifest.len() + 8 * payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        for v in payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> CkResult<Self> {
        let mut r = Reader { bytes, offset: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let mlen = r.u64()? as usize;
        let manifest: Manifest = serde_json::from_slice(r.take(mlen)?)
            .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
        let plen = r.u64()? as usize;
        let raw = r.take(plen.checked_mul(8).ok_or(CheckpointError::Truncated {
            needed: usize::MAX,
            offset: r.offset,
            len: bytes.len(),
        })?)?;
        if r.offset != bytes.len() {
            return Err(CheckpointError::Manifest(format!(
                "{} trailing bytes after payload",
                bytes.len() - r.offset
            )));
        }
        let payload: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();

        let mut cursor = 0usize;
        let mut next = |shape: &[usize]| -> CkResult<Tensor> {
            let n: usize = shape.iter().product();
            if cursor + n > payload.len() {
                return Err(CheckpointError::Manifest("payload shorter than manifest".into()));
            }
            let t = Tensor::new(shape.to_vec(), payload[cursor..cursor + n].to_vec())
                .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
            cursor += n;
            Ok(t)
        };
        let params = manifest
            .params
            .iter()
            .map(|e| next(&e.shape))
            .collect::<CkResult<Vec<_>>>()?;
        let per = manifest.optimizer.as_ref().map_or(0, |o| o.buffers_per_param);
        let optimizer_buffers = if manifest.optimizer.is_some() {
            manifest
                .params
                .iter()
                .map(|e| (0..per).map(|_| next(&e.shape)).collect::<CkResult<Vec<_>>>())
                .collect::<CkResult<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let best = if manifest.has_best {
            Some(
                manifest
                    .params
                    .iter()
                    .map(|e| next(&e.shape))
                    .collect::<CkResult<Vec<_>>>()?,
            )
        } else {
            None
        };
        if cursor != payload.len() {
            return Err(CheckpointError::Manifest("payload longer than manifest".into()));
        }
        Ok(Self {
            manifest,
            params,
            optimizer_buffers,
            best,
        })
    }

    pub fn save(&self, path: &Path) -> CkResult<()> {
        let bytes = self.encode()?;
        std::fs::write(path, bytes).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> CkResult<Self> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::decode(&bytes)
    }

    /// Overwrites every entry of `store` by name. The store is untouched
    /// unless every name and shape matches.
    pub fn restore_into(&self, store: &mut ParamStore) -> CkResult<()> {
        restore_tensors(&self.manifest.params, &self.params, store)
    }

    pub fn restore_best_into(&self, store: &mut ParamStore) -> CkResult<bool> {
        match &self.best {
            Some(best) => restore_tensors(&self.manifest.params, best, store).map(|_| true),
            None => Ok(false),
        }
    }

    /// Optimizer state aligned with `store`'s parameter order.
    pub fn optimizer_state(&self, store: &ParamStore) -> CkResult<Option<OptimizerState>> {
        let Some(entry) = &self.manifest.optimizer else {
            return Ok(None);
        };
        let mut buffers = Vec::with_capacity(store.len());
        for p in store.iter() {
            let i = self
                .manifest
                .params
                .iter()
                .position(|e| e.name == p.name)
                .ok_or_else(|| CheckpointError::MissingParam(p.name.clone()))?;
            buffers.push(self.optimizer_buffers[i].clone());
        }
        Ok(Some(OptimizerState {
            cfg: entry.config,
            step: entry.step,
            buffers,
        }))
    }
}

fn restore_tensors(entries: &[TensorEntry], values: &[Tensor], store: &mut ParamStore) -> CkResult<()> {
    let mut plan = Vec::with_capacity(store.len());
    for id in store.ids() {
        let p = store.param(id);
        let i = entries
            .iter()
            .position(|e| e.name == p.name)
            .ok_or_else(|| CheckpointError::MissingParam(p.name.clone()))?;
        if entries[i].shape != p.value.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: p.name.clone(),
                expected: p.value.shape().to_vec(),
                found: entries[i].shape.clone(),
            });
        }
        plan.push((id, i));
    }
    if let Some(e) = entries.iter().find(|e| store.find(&e.name).is_none()) {
        return Err(CheckpointError::UnknownParam(e.name.clone()));
    }
    for (id, i) in plan {
        store.get_mut(id).data_mut().copy_from_slice(values[i].data());
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> CkResult<&'a [u8]> {
        let end = self.offset.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.offset..end];
                self.offset = end;
                Ok(s)
            }
            None => Err(CheckpointError::Truncated {
                needed: n,
                offset: self.offset,
                len: self.bytes.len(),
            }),
        }
    }

    fn u64(&mut self) -> CkResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
