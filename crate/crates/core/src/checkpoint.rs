//! Single-file model archive.
//!
//! ```text
//! magic    8 bytes  "STRKPOSE"
//! version  u32 LE
//! length   u64 LE   byte length of the JSON header
//! header   JSON     kind, model config, run config, tensor index
//! data     f32 LE   tensors back to back in index order
//! ```
//!
//! Temporal checkpoints hold the frozen estimator's parameters under the
//! `estimator.` prefix next to the refiner's own.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use strokepose_nn::{ParamStore, Tensor};

use crate::posenet::PoseNet;
use crate::predict::Predictor;
use crate::temporal::TemporalRefiner;
use crate::types::ModelConfig;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"STRKPOSE";
pub const VERSION: u32 = 1;
const ESTIMATOR_PREFIX: &str = "estimator.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Estimator,
    /// Refiner with trained branches and initial pooling weights.
    TemporalPhase1,
    /// Refiner with trained pooling weights.
    TemporalPhase2,
}

impl CheckpointKind {
    pub fn is_temporal(self) -> bool {
        self != CheckpointKind::Estimator
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: CheckpointKind,
    model: ModelConfig,
    run_config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub model: ModelConfig,
    /// The full configuration of the run that produced the checkpoint.
    pub run_config: serde_json::Value,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn from_estimator(net: &PoseNet, run_config: serde_json::Value) -> Self {
        Self {
            kind: CheckpointKind::Estimator,
            model: net.config().clone(),
            run_config,
            params: net.store().clone(),
        }
    }

    pub fn from_temporal(
        estimator: &PoseNet,
        refiner: &TemporalRefiner,
        kind: CheckpointKind,
        run_config: serde_json::Value,
    ) -> Result<Self> {
        let mut params = ParamStore::new();
        for (name, t) in estimator.store().iter() {
            params.insert(format!("{ESTIMATOR_PREFIX}{name}"), t.clone())?;
        }
        for (name, t) in refiner.store().iter() {
            params.insert(name, t.clone())?;
        }
        Ok(Self {
            kind,
            model: refiner.config().clone(),
            run_config,
            params,
        })
    }

    pub fn estimator(&self) -> Result<PoseNet> {
        let config = ModelConfig {
            seq_spec: crate::types::SequenceSpec::new(0),
            ..self.model.clone()
        };
        if !self.kind.is_temporal() {
            return PoseNet::from_params(config, &self.params);
        }
        let mut inner = ParamStore::new();
        for (name, t) in self.params.iter() {
            if let Some(rest) = name.strip_prefix(ESTIMATOR_PREFIX) {
                inner.insert(rest, t.clone())?;
            }
        }
        PoseNet::from_params(config, &inner)
    }

    pub fn refiner(&self) -> Result<TemporalRefiner> {
        if !self.kind.is_temporal() {
            return Err(Error::Checkpoint("estimator checkpoint holds no temporal refiner".into()));
        }
        TemporalRefiner::from_params(self.model.clone(), &self.params)
    }

    pub fn predictor(&self) -> Result<Predictor> {
        let estimator = self.estimator()?;
        Ok(if self.kind.is_temporal() {
            Predictor::Temporal {
                estimator,
                refiner: self.refiner()?,
            }
        } else {
            Predictor::Estimator(estimator)
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind,
            model: self.model.clone(),
            run_config: self.run_config.clone(),
            tensors: self
                .params
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::json("checkpoint header", e))?;
        let numel: usize = self.params.iter().map(|(_, t)| t.numel()).sum();
        let mut out = Vec::with_capacity(20 + json.len() + 4 * numel);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < len {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..len]).map_err(|e| Error::json("checkpoint header", e))?;
        let mut data = &body[len..];
        let mut params = ParamStore::new();
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            if data.len() < 4 * n {
                return Err(Error::Checkpoint(format!("truncated data for tensor {}", entry.name)));
            }
            let values = data[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            data = &data[4 * n..];
            params.insert(entry.name, Tensor::from_vec(&entry.shape, values)?)?;
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Self {
            kind: header.kind,
            model: header.model,
            run_config: header.run_config,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
