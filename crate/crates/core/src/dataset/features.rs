//! Per-frequency feature rows and train-set standardization.
//!
//! Step `f` of a record is `[Re h_ue, Im h_ue, (Re h_s, Im h_s) for each
//! sensing element, p_1 .. p_n]`, so the width is `2 + 2 S + n_obj` and the
//! object state is repeated at every step.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{DatasetError, DatasetRecord};

/// Lower bound on a feature's standard deviation, so constant features
/// standardize to zero instead of dividing by zero.
pub const STD_FLOOR: f64 = 1e-8;

pub(crate) fn width(n_sense: usize, n_obj: usize) -> usize {
    2 + 2 * n_sense + n_obj
}

/// Row-major `steps x width` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub steps: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureSequence {
    pub fn step(&self, f: usize) -> &[f64] {
        &self.data[f * self.width..(f + 1) * self.width]
    }
}

pub fn raw_features(h_ue: &[Complex64], h_sense: &[Vec<Complex64>], p: &[f64]) -> FeatureSequence {
    let steps = h_ue.len();
    let w = width(h_sense.len(), p.len());
    let mut data = Vec::with_capacity(steps * w);
    for f in 0..steps {
        data.push(h_ue[f].re);
        data.push(h_ue[f].im);
        for row in h_sense {
            data.push(row[f].re);
            data.push(row[f].im);
        }
        data.extend_from_slice(p);
    }
    FeatureSequence {
        steps,
        width: w,
        data,
    }
}

/// Per-feature mean and standard deviation, pooled over all steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, raw: &FeatureSequence) -> Result<FeatureSequence, DatasetError> {
        if raw.width != self.width() {
            return Err(DatasetError::WidthMismatch {
                expected: self.width(),
                got: raw.width,
            });
        }
        let data = raw
            .data
            .chunks(raw.width)
            .flat_map(|row| {
                row.iter()
                    .zip(&self.mean)
                    .zip(&self.std)
                    .map(|((x, m), s)| (x - m) / s)
            })
            .collect();
        Ok(FeatureSequence {
            steps: raw.steps,
            width: raw.width,
            data,
        })
    }
}

/// Statistics from training records only; two passes for accuracy.
pub fn fit_norm<'a>(
    records: impl IntoIterator<Item = &'a DatasetRecord> + Clone,
) -> Result<NormStats, DatasetError> {
    let mut w = None;
    let mut n = 0usize;
    let mut sum: Vec<f64> = Vec::new();
    for r in records.clone() {
        let x = raw_features(&r.h_ue, &r.h_sense, &r.p.t);
        let w = *w.get_or_insert(x.width);
        if x.width != w {
            return Err(DatasetError::WidthMismatch {
                expected: w,
                got: x.width,
            });
        }
        sum.resize(w, 0.0);
        for row in x.data.chunks(w) {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
        }
        n += x.steps;
    }
    if n == 0 {
        return Err(DatasetError::Invalid(
            "cannot fit normalization on an empty set".into(),
        ));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let mut sq = vec![0.0; mean.len()];
    for r in records {
        let x = raw_features(&r.h_ue, &r.h_sense, &r.p.t);
        for row in x.data.chunks(x.width) {
            for ((s, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
    }
    let std = sq
        .iter()
        .map(|s| (s / n as f64).sqrt().max(STD_FLOOR))
        .collect();
    Ok(NormStats { mean, std })
}

pub fn featurize(rec: &DatasetRecord, stats: &NormStats) -> Result<FeatureSequence, DatasetError> {
    stats.apply(&raw_features(&rec.h_ue, &rec.h_sense, &rec.p.t))
}
