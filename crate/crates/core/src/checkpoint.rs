//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `MDNCKPT1`, a little-endian `u64` header
//! length, a JSON header (config, segment map, batch-norm state,
//! normalization, optimizer progress), then raw little-endian `f64`
//! parameter values, followed by the Adam first and second moments when
//! the header says optimizer state is present.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{layout, BatchNormStats, Model, Normalization};
use crate::tensor::{GradientVector, Layout, ParameterVector};
use crate::trainer::AdamState;

const MAGIC: &[u8; 8] = b"MDNCKPT1";

/// Optimizer progress saved alongside the weights for resuming.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Number of completed epochs.
    pub epoch: usize,
    pub adam: AdamState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train: Option<TrainState>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TrainConfig,
    layout: Layout,
    batch_norm: Vec<BatchNormStats>,
    normalization: Normalization,
    epoch: Option<usize>,
    adam_step: Option<u64>,
}

fn corrupt(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: message.into(),
    }
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Self { model, train: None }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.model.cfg.clone(),
            layout: self.model.params.layout().clone(),
            batch_norm: self.model.bn.clone(),
            normalization: self.model.norm.clone(),
            epoch: self.train.as_ref().map(|t| t.epoch),
            adam_step: self.train.as_ref().map(|t| t.adam.step),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.model.params.len() * 3);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |vals: &[f64]| vals.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        put(self.model.params.values());
        if let Some(t) = &self.train {
            put(t.adam.m.values());
            put(t.adam.v.values());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt(path, "not a checkpoint file"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16usize.saturating_add(hlen))
            .ok_or_else(|| corrupt(path, "truncated header"))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| corrupt(path, e.to_string()))?;
        header.config.validate()?;
        header.layout.validate()?;
        if header.layout != layout(&header.config) {
            return Err(corrupt(path, "segment map does not match the embedded configuration"));
        }
        let n = header.layout.len();
        let blocks = if header.epoch.is_some() { 3 } else { 1 };
        let data = &bytes[16 + hlen..];
        if data.len() != 8 * n * blocks {
            return Err(corrupt(path, format!("expected {} value bytes, found {}", 8 * n * blocks, data.len())));
        }
        let read = |k: usize| -> Vec<f64> {
            data[8 * n * k..8 * n * (k + 1)]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect()
        };
        let params = ParameterVector::from_values(header.layout.clone(), read(0))?;
        let train = match (header.epoch, header.adam_step) {
            (Some(epoch), Some(step)) => Some(TrainState {
                epoch,
                adam: AdamState {
                    m: GradientVector::from_values(header.layout.clone(), read(1))?,
                    v: GradientVector::from_values(header.layout.clone(), read(2))?,
                    step,
                },
            }),
            (None, None) => None,
            _ => return Err(corrupt(path, "inconsistent optimizer state")),
        };
        let model = Model {
            cfg: header.config,
            params,
            bn: header.batch_norm,
            norm: header.normalization,
        };
        model.check_consistent()?;
        Ok(Self { model, train })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp-write");
        fs::File::create(&tmp)
            .and_then(|mut f| {
                f.write_all(&self.to_bytes())?;
                f.sync_all()
            })
            .map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
