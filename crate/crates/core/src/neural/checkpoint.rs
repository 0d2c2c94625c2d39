//! Checkpoint file: a magic line, one JSON header line, then every
//! parameter as a little-endian `f64` in layout order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::NormStats;

use super::{MlpDims, ModelDims, NeuralError, TrainConfig};

pub const CHECKPOINT_MAGIC: &str = "RISLAB-CKPT 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Bilstm { dims: ModelDims },
    Mlp { dims: MlpDims },
}

impl Architecture {
    pub fn n_params(&self) -> usize {
        match self {
            Architecture::Bilstm { dims } => dims.n_params(),
            Architecture::Mlp { dims } => dims.n_params(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: Architecture,
    pub hyper: TrainConfig,
    pub split_seed: u64,
    pub dataset_hash: String,
    pub val_loss: f64,
    pub best_epoch: usize,
    /// Feature standardization fitted on the training split.
    pub norm: NormStats,
    /// Feature sequence length the model was trained on.
    pub steps: usize,
    pub n_params: usize,
    #[serde(default)]
    pub producer: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub theta: Vec<f64>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.theta.len() * 8 + 4096);
        out.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(&serde_json::to_vec(&self.header).expect("header serializes"));
        out.push(b'\n');
        for v in &self.theta {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn model_dims(&self) -> Result<ModelDims, NeuralError> {
        match self.header.architecture {
            Architecture::Bilstm { dims } => Ok(dims),
            _ => Err(NeuralError::Checkpoint(
                "expected a recurrent-model checkpoint".into(),
            )),
        }
    }

    pub fn mlp_dims(&self) -> Result<MlpDims, NeuralError> {
        match self.header.architecture {
            Architecture::Mlp { dims } => Ok(dims),
            _ => Err(NeuralError::Checkpoint(
                "expected a baseline checkpoint".into(),
            )),
        }
    }
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let i = bytes.iter().position(|&b| b == b'\n')?;
    Some((&bytes[..i], &bytes[i + 1..]))
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint, NeuralError> {
    let bad = |m: &str| NeuralError::Checkpoint(m.to_string());
    let (magic, rest) = split_line(bytes).ok_or_else(|| bad("missing magic line"))?;
    if magic != CHECKPOINT_MAGIC.as_bytes() {
        return Err(bad("not a checkpoint file"));
    }
    let (head, body) = split_line(rest).ok_or_else(|| bad("missing header line"))?;
    let header: CheckpointHeader = serde_json::from_slice(head)
        .map_err(|e| NeuralError::Checkpoint(format!("bad header: {e}")))?;
    let n = header.architecture.n_params();
    if header.n_params != n {
        return Err(bad(
            "header parameter count disagrees with the architecture",
        ));
    }
    if body.len() != 8 * n {
        return Err(NeuralError::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            8 * n,
            body.len()
        )));
    }
    let theta = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Checkpoint { header, theta })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), NeuralError> {
    fs::write(path, ck.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NeuralError> {
    parse_checkpoint(&fs::read(path)?)
}
