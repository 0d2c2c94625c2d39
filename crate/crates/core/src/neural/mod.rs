//! Dual-input, dual-output recurrent localizer.
//!
//! A feature sequence (one step per frequency) runs through a bidirectional
//! LSTM, then a second LSTM with rectified activations whose final state is
//! concatenated with a learned embedding of the active RIS configuration.
//! Two heads read the concatenation: a linear one for the UE coordinates
//! and a softmax one that identifies the configuration.
//!
//! All parameters live in one flat `f64` vector (see [`ModelDims::layout`]),
//! which keeps the optimizer, clipping, regularizer and checkpoint format
//! trivial.

mod adam;
mod baseline;
mod checkpoint;
mod lstm;
mod model;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, adam_step_scalar, AdamState};
pub use baseline::{MlpDims, MlpNet};
pub use checkpoint::{
    load_checkpoint, parse_checkpoint, save_checkpoint, Architecture, Checkpoint, CheckpointHeader,
    CHECKPOINT_MAGIC,
};
pub use lstm::{lstm_cell, Activation, LstmWeights};
pub use model::{
    bilstm_forward, hybrid_loss, model_forward, softmax, BiLstmNet, LossParts, LossSpec,
};
pub use train::{
    evaluate_loss, grid_search, loss_and_grad, train, EpochRecord, GridPoint, GridRow, Network,
    Sample, TrainConfig, TrainOutcome, CHUNK,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("class index {index} out of range for {k} classes")]
    ClassIndex { index: usize, k: usize },
    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
    #[error("empty {0} set")]
    Empty(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for NeuralError {
    fn from(e: std::io::Error) -> Self {
        NeuralError::Io(e.to_string())
    }
}

/// Sizes of every layer of the recurrent model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Feature width per step.
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub n_classes: usize,
    pub embed: usize,
}

/// A contiguous block of the flat parameter vector, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Input weights (`in x 4H`, gate columns ordered i, f, g, o), recurrent
/// weights (`H x 4H`) and bias (`1 x 4H`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellBlocks {
    pub wx: Block,
    pub wh: Block,
    pub b: Block,
}

impl CellBlocks {
    fn range(&self) -> std::ops::Range<usize> {
        self.wx.offset..self.b.range().end
    }
}

/// Positions of every parameter group, in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub bilstm_fw: CellBlocks,
    pub bilstm_bw: CellBlocks,
    pub lstm2: CellBlocks,
    pub embed: Block,
    pub coord_w: Block,
    pub coord_b: Block,
    pub class_w: Block,
    pub class_b: Block,
    pub total: usize,
}

impl Layout {
    /// Named parameter groups as index ranges.
    pub fn groups(&self) -> Vec<(&'static str, std::ops::Range<usize>)> {
        vec![
            ("bilstm_fw", self.bilstm_fw.range()),
            ("bilstm_bw", self.bilstm_bw.range()),
            ("lstm2", self.lstm2.range()),
            ("embed", self.embed.range()),
            ("head_coord", self.coord_w.offset..self.coord_b.range().end),
            ("head_class", self.class_w.offset..self.class_b.range().end),
        ]
    }
}

struct Cursor(usize);

impl Cursor {
    fn take(&mut self, rows: usize, cols: usize) -> Block {
        let b = Block {
            offset: self.0,
            rows,
            cols,
        };
        self.0 += rows * cols;
        b
    }

    fn cell(&mut self, input: usize, hidden: usize) -> CellBlocks {
        CellBlocks {
            wx: self.take(input, 4 * hidden),
            wh: self.take(hidden, 4 * hidden),
            b: self.take(1, 4 * hidden),
        }
    }
}

impl ModelDims {
    /// Architecture used throughout: 50-unit BiLSTM, 50-unit second layer,
    /// 20-dimensional configuration embedding.
    pub fn standard(input: usize, n_classes: usize) -> Self {
        Self {
            input,
            hidden1: 50,
            hidden2: 50,
            n_classes,
            embed: 20,
        }
    }

    pub fn concat(&self) -> usize {
        self.hidden2 + self.embed
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.input == 0 || self.hidden1 == 0 || self.hidden2 == 0 || self.n_classes == 0 {
            return Err(NeuralError::Shape(format!(
                "degenerate dimensions {self:?}"
            )));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        let mut c = Cursor(0);
        let bilstm_fw = c.cell(self.input, self.hidden1);
        let bilstm_bw = c.cell(self.input, self.hidden1);
        let lstm2 = c.cell(2 * self.hidden1, self.hidden2);
        let embed = c.take(self.n_classes, self.embed);
        let coord_w = c.take(self.concat(), 2);
        let coord_b = c.take(1, 2);
        let class_w = c.take(self.concat(), self.n_classes);
        let class_b = c.take(1, self.n_classes);
        Layout {
            bilstm_fw,
            bilstm_bw,
            lstm2,
            embed,
            coord_w,
            coord_b,
            class_w,
            class_b,
            total: c.0,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layout().total
    }

    /// Uniform(-s, s) with `s = 1/sqrt(fan_in)` per weight matrix; forget
    /// gate biases 1; other biases and the embedding follow the same rule
    /// except head biases, which start at zero.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let l = self.layout();
        let mut theta = vec![0.0; l.total];
        let mut fill = |b: Block, fan_in: usize, theta: &mut [f64]| {
            let s = 1.0 / (fan_in as f64).sqrt();
            for v in &mut theta[b.range()] {
                *v = rng.random_range(-s..s);
            }
        };
        for (cell, fan_in, hidden) in [
            (l.bilstm_fw, self.input, self.hidden1),
            (l.bilstm_bw, self.input, self.hidden1),
            (l.lstm2, 2 * self.hidden1, self.hidden2),
        ] {
            fill(cell.wx, fan_in, &mut theta);
            fill(cell.wh, hidden, &mut theta);
            for (j, v) in theta[cell.b.range()].iter_mut().enumerate() {
                *v = if (hidden..2 * hidden).contains(&j) {
                    1.0
                } else {
                    0.0
                };
            }
        }
        fill(l.embed, 1, &mut theta);
        fill(l.coord_w, self.concat(), &mut theta);
        fill(l.class_w, self.concat(), &mut theta);
        theta
    }
}

/// Squared Euclidean norm of a parameter vector.
pub fn sq_norm(theta: &[f64]) -> f64 {
    theta.iter().map(|v| v * v).sum()
}

/// Scales `g` in place so its Euclidean norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(g: &mut [f64], max_norm: f64) -> f64 {
    let n = sq_norm(g).sqrt();
    if n > max_norm {
        let s = max_norm / n;
        for v in g.iter_mut() {
            *v *= s;
        }
    }
    n
}
