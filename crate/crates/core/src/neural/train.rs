//! Mini-batch training with validation checkpointing, and grid search.
//!
//! Every batch is cut into fixed-size chunks whose gradients are computed
//! independently and summed in chunk order. The chunking does not depend
//! on the number of workers, so the data-parallel mode produces exactly the
//! same bits as serial execution.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureSequence;
use crate::rng::{self, Domain};

use super::model::LossParts;
use super::{adam_step, clip_global_norm, sq_norm, AdamState, NeuralError};

/// Samples per gradient chunk.
pub const CHUNK: usize = 16;
/// Samples per chunk when only the loss is needed.
const EVAL_CHUNK: usize = 128;

/// One supervised example in feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: FeatureSequence,
    pub k: usize,
    pub u: [f64; 2],
}

/// A model whose data terms can be evaluated and differentiated on a chunk.
pub trait Network: Sync {
    fn n_params(&self) -> usize;
    fn init(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    fn check_sample(&self, s: &Sample) -> Result<(), NeuralError>;
    /// Coordinate and class terms summed over `samples` and divided by `n`;
    /// when `grad` is given, their gradient is added to it.
    fn data_loss(
        &self,
        theta: &[f64],
        samples: &[&Sample],
        n: f64,
        grad: Option<&mut [f64]>,
    ) -> (f64, f64);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub alpha: f64,
    pub seed: u64,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip: Option<f64>,
    /// Spread gradient chunks over the rayon pool.
    #[serde(skip)]
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch: 32,
            lr: 1e-4,
            alpha: 1e-4,
            seed: 0,
            clip: Some(5.0),
            parallel: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), NeuralError> {
        if self.batch == 0 {
            return Err(NeuralError::Hyper("batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(NeuralError::Hyper(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(NeuralError::Hyper(format!(
                "alpha {} must be nonnegative",
                self.alpha
            )));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(NeuralError::Hyper(format!(
                    "clip norm {c} must be positive"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_coord: f64,
    pub val_class: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters with the lowest recorded validation loss.
    pub theta: Vec<f64>,
    pub best_val: f64,
    /// 0 when the initialization was never beaten.
    pub best_epoch: usize,
    pub initial_val: f64,
    pub history: Vec<EpochRecord>,
}

/// Hybrid loss over a set, without gradients.
pub fn evaluate_loss<N: Network>(net: &N, theta: &[f64], set: &[&Sample], alpha: f64) -> LossParts {
    let n = set.len() as f64;
    let parts: Vec<(f64, f64)> = set
        .par_chunks(EVAL_CHUNK)
        .map(|c| net.data_loss(theta, c, n, None))
        .collect();
    let (coord, class) = parts
        .iter()
        .fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
    LossParts::new(coord, class, alpha * sq_norm(theta))
}

/// Hybrid loss and its gradient over one batch.
pub fn loss_and_grad<N: Network>(
    net: &N,
    theta: &[f64],
    batch: &[&Sample],
    alpha: f64,
    parallel: bool,
) -> (LossParts, Vec<f64>) {
    let n = batch.len() as f64;
    let work = |c: &[&Sample]| {
        let mut g = vec![0.0; theta.len()];
        let (a, b) = net.data_loss(theta, c, n, Some(&mut g));
        (a, b, g)
    };
    let parts: Vec<(f64, f64, Vec<f64>)> = if parallel {
        batch.par_chunks(CHUNK).map(work).collect()
    } else {
        batch.chunks(CHUNK).map(work).collect()
    };
    let mut grad = vec![0.0; theta.len()];
    let (mut coord, mut class) = (0.0, 0.0);
    for (a, b, g) in parts {
        coord += a;
        class += b;
        for (s, v) in grad.iter_mut().zip(&g) {
            *s += v;
        }
    }
    for (s, t) in grad.iter_mut().zip(theta) {
        *s += 2.0 * alpha * t;
    }
    (LossParts::new(coord, class, alpha * sq_norm(theta)), grad)
}

fn check_set<N: Network>(net: &N, set: &[&Sample], name: &'static str) -> Result<(), NeuralError> {
    if set.is_empty() {
        return Err(NeuralError::Empty(name));
    }
    let steps = set[0].x.steps;
    for s in set {
        net.check_sample(s)?;
        if s.x.steps != steps {
            return Err(NeuralError::Shape(
                "all sequences must share their length".into(),
            ));
        }
    }
    Ok(())
}

/// Trains from a seeded initialization and keeps the parameters with the
/// strictly lowest validation loss seen (the initialization counts).
pub fn train<N: Network>(
    net: &N,
    train_set: &[&Sample],
    val_set: &[&Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, NeuralError> {
    cfg.validate()?;
    check_set(net, train_set, "training")?;
    check_set(net, val_set, "validation")?;

    let mut theta = net.init(&mut rng::stream(cfg.seed, Domain::Init, 0));
    let initial_val = evaluate_loss(net, &theta, val_set, cfg.alpha).total;
    if !initial_val.is_finite() {
        return Err(NeuralError::NonFiniteLoss { epoch: 0, batch: 0 });
    }
    let mut best = theta.clone();
    let (mut best_val, mut best_epoch) = (initial_val, 0);
    let mut opt = AdamState::new(theta.len(), cfg.lr);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng::stream(cfg.seed, Domain::Shuffle, epoch as u64));
        let mut seen = 0.0;
        let mut train_loss = 0.0;
        for (bi, idx) in order.chunks(cfg.batch).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| train_set[i]).collect();
            let (loss, mut grad) = loss_and_grad(net, &theta, &batch, cfg.alpha, cfg.parallel);
            if !loss.total.is_finite() {
                return Err(NeuralError::NonFiniteLoss { epoch, batch: bi });
            }
            if let Some(c) = cfg.clip {
                clip_global_norm(&mut grad, c);
            }
            adam_step(&mut theta, &grad, &mut opt)?;
            train_loss += loss.total * batch.len() as f64;
            seen += batch.len() as f64;
        }
        let val = evaluate_loss(net, &theta, val_set, cfg.alpha);
        if !val.total.is_finite() {
            return Err(NeuralError::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
            });
        }
        let improved = val.total < best_val;
        if improved {
            best.clone_from(&theta);
            best_val = val.total;
            best_epoch = epoch;
        }
        history.push(EpochRecord {
            epoch,
            train_loss: train_loss / seen,
            val_loss: val.total,
            val_coord: val.coord,
            val_class: val.class,
            improved,
        });
    }
    Ok(TrainOutcome {
        theta: best,
        best_val,
        best_epoch,
        initial_val,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lr: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub point: GridPoint,
    pub best_val: f64,
    pub best_epoch: usize,
    pub final_train_loss: f64,
}

/// Trains one model per grid point (with `base`'s epoch budget) and returns
/// the index of the lowest best-validation loss, earliest point on ties.
pub fn grid_search<N: Network>(
    net: &N,
    grid: &[GridPoint],
    train_set: &[&Sample],
    val_set: &[&Sample],
    base: &TrainConfig,
) -> Result<(usize, Vec<GridRow>), NeuralError> {
    if grid.is_empty() {
        return Err(NeuralError::Hyper("empty hyperparameter grid".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for p in grid {
        let cfg = TrainConfig {
            lr: p.lr,
            alpha: p.alpha,
            ..*base
        };
        let out = train(net, train_set, val_set, &cfg)?;
        rows.push(GridRow {
            point: *p,
            best_val: out.best_val,
            best_epoch: out.best_epoch,
            final_train_loss: out.history.last().map_or(f64::NAN, |h| h.train_loss),
        });
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.best_val < rows[best].best_val {
            best = i;
        }
    }
    Ok((best, rows))
}
