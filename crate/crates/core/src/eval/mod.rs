//! Localization error, the baseline-vs-optimized comparison and its
//! CSV/table reports.

mod report;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::{runtime_step, Codebook, CodebookError, Localizer, RuntimeOutcome};
use crate::dataset::{featurize, Dataset, NormStats};
use crate::neural::{Checkpoint, MlpNet, NeuralError, Sample};
use crate::rng::{self, Domain};
use crate::scene::SceneTemplate;

pub use crate::pipeline::train_baseline;
pub use report::{
    parse_series_csv, parse_summary_csv, report_csv, series_csv, summary_csv, table_text,
    SERIES_HEADER, SUMMARY_HEADER,
};

/// Number of test instances scored by [`evaluate`].
pub const TEST_INSTANCES: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("length mismatch: {0} predictions, {1} targets")]
    Length(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("record {0} does not sit on a UE site of the scene")]
    UnknownSite(usize),
    #[error("missing artifact: {0}")]
    Missing(String),
    #[error("malformed CSV at line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `(1/N) sum ((x_hat - x)^2 + (y_hat - y)^2)`.
pub fn mse(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<f64, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::Length(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    let s: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2))
        .sum();
    Ok(s / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub n_ris: usize,
    pub k: usize,
    pub baseline_mse: f64,
    pub optimized_mse: f64,
    /// Population standard deviation of the optimized per-instance errors.
    pub sigma: f64,
    pub pct_error_reduction: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn pct_reduction(baseline: f64, optimized: f64) -> f64 {
    if baseline > 0.0 {
        100.0 * (baseline - optimized) / baseline
    } else {
        0.0
    }
}

impl ReportRow {
    pub fn from_series(
        n_ris: usize,
        k: usize,
        se_random: &[f64],
        se_optimized: &[f64],
    ) -> Result<Self, EvalError> {
        if se_random.len() != se_optimized.len() {
            return Err(EvalError::Length(se_optimized.len(), se_random.len()));
        }
        if se_random.is_empty() {
            return Err(EvalError::Empty);
        }
        let b = mean(se_random);
        let o = mean(se_optimized);
        let sigma = (se_optimized.iter().map(|e| (e - o).powi(2)).sum::<f64>()
            / se_optimized.len() as f64)
            .sqrt();
        Ok(Self {
            n_ris,
            k,
            baseline_mse: b,
            optimized_mse: o,
            sigma,
            pct_error_reduction: pct_reduction(b, o),
        })
    }
}

/// Per-instance squared errors of both pipelines.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSeries {
    pub test_index: Vec<usize>,
    pub se_random: Vec<f64>,
    pub se_optimized: Vec<f64>,
}

/// Baseline regressor restored from its checkpoint.
#[derive(Debug, Clone)]
pub struct BaselineModel {
    pub net: MlpNet,
    pub theta: Vec<f64>,
    pub norm: NormStats,
}

impl BaselineModel {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, EvalError> {
        let dims = ck.mlp_dims()?;
        if ck.theta.len() != dims.n_params() {
            return Err(NeuralError::Checkpoint(
                "baseline checkpoint dimensions are inconsistent".into(),
            )
            .into());
        }
        Ok(Self {
            net: MlpNet::new(dims),
            theta: ck.theta.clone(),
            norm: ck.header.norm.clone(),
        })
    }

    pub fn locate(&self, ds: &Dataset, idx: &[usize]) -> Result<Vec<[f64; 2]>, EvalError> {
        let samples = idx
            .iter()
            .map(|&i| {
                let r = &ds.records[i];
                let mut x =
                    featurize(r, &self.norm).map_err(|e| NeuralError::Shape(e.to_string()))?;
                x.width *= x.steps;
                x.steps = 1;
                Ok(Sample {
                    x,
                    k: r.k_index,
                    u: [r.u.x, r.u.y],
                })
            })
            .collect::<Result<Vec<_>, EvalError>>()?;
        for s in &samples {
            crate::neural::Network::check_sample(&self.net, s)?;
        }
        let refs: Vec<&Sample> = samples.iter().collect();
        Ok(self.net.predict(&self.theta, &refs))
    }
}

/// `n` test records in a seeded random order (all of them if fewer).
pub fn select_instances(test: &[usize], n: usize, seed: u64) -> Vec<usize> {
    let mut v = test.to_vec();
    v.shuffle(&mut rng::stream(seed, Domain::Evaluation, 0));
    v.truncate(n);
    v
}

/// Index of the UE site a record was generated at.
pub fn record_site(tpl: &SceneTemplate, ds: &Dataset, i: usize) -> Result<usize, EvalError> {
    let u = ds.records[i].u;
    tpl.ue_sites()
        .iter()
        .position(|s| *s == u)
        .ok_or(EvalError::UnknownSite(i))
}

/// Scores both pipelines on the given test records. The baseline sees the
/// record as generated (random configuration); the optimized path replays
/// the record's object state and UE site through the closed loop.
pub fn evaluate(
    tpl: &SceneTemplate,
    ds: &Dataset,
    instances: &[usize],
    model: &Localizer,
    cb: &Codebook,
    baseline: &BaselineModel,
) -> Result<(EvalSeries, ReportRow, Vec<RuntimeOutcome>), EvalError> {
    if instances.is_empty() {
        return Err(EvalError::Empty);
    }
    let truth: Vec<[f64; 2]> = instances
        .iter()
        .map(|&i| [ds.records[i].u.x, ds.records[i].u.y])
        .collect();
    let base_pred = baseline.locate(ds, instances)?;
    let runs: Vec<RuntimeOutcome> = instances
        .par_iter()
        .map(|&i| {
            let site = record_site(tpl, ds, i)?;
            Ok(runtime_step(tpl, &ds.records[i].p, site, cb, model)?)
        })
        .collect::<Result<_, EvalError>>()?;
    let se = |p: &[f64; 2], t: &[f64; 2]| (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2);
    let se_random: Vec<f64> = base_pred
        .iter()
        .zip(&truth)
        .map(|(p, t)| se(p, t))
        .collect();
    let se_optimized: Vec<f64> = runs
        .iter()
        .zip(&truth)
        .map(|(r, t)| se(&r.u_hat, t))
        .collect();
    let row = ReportRow::from_series(tpl.n_ris(), cb.configs.len(), &se_random, &se_optimized)?;
    Ok((
        EvalSeries {
            test_index: (0..instances.len()).collect(),
            se_random,
            se_optimized,
        },
        row,
        runs,
    ))
}
