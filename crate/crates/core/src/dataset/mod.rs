//! Supervised records `{h_ue, h_sense, p, k, u}`: generation, splitting,
//! featurization, noise and on-disk format.

mod features;
mod io;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Domain};
use crate::scene::{
    realize_environment, sample_so_state, RisConfig, SceneError, SceneTemplate, SoState,
};
use crate::wavesim::{DipoleProperties, Point, SimError, SweepResponse, SweepSolver};

pub use features::{featurize, fit_norm, raw_features, FeatureSequence, NormStats, STD_FLOOR};
pub use io::{dataset_bytes, load, parse_dataset, save};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot draw {k} distinct configurations from 2^{n_ris}")]
    Infeasible { k: usize, n_ris: usize },
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("simulation failed for configuration {config}, object sample {sample}: {source}")]
    Simulation {
        config: usize,
        sample: usize,
        source: SimError,
    },
    #[error("scene error for configuration {config}, object sample {sample}: {source}")]
    Scene {
        config: usize,
        sample: usize,
        source: SceneError,
    },
    #[error("class index {index} out of range for {k} classes")]
    IndexOutOfRange { index: usize, k: usize },
    #[error("dataset with {0} records is too small to split (need at least 5)")]
    TooSmall(usize),
    #[error("feature width {got} does not match normalization width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("unsupported dataset version {0}")]
    Version(u32),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One sample: channels, object state, configuration label and UE position.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub h_ue: Vec<Complex64>,
    /// `S_RIS` rows of `F` values.
    pub h_sense: Vec<Vec<Complex64>>,
    pub p: SoState,
    pub k_index: usize,
    pub k_onehot: Vec<u8>,
    pub u: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format: String,
    pub version: u32,
    #[serde(rename = "F")]
    pub f: usize,
    #[serde(rename = "S_RIS")]
    pub s_ris: usize,
    #[serde(rename = "N_RIS")]
    pub n_ris: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub n_obj: usize,
    pub seed: u64,
    pub scene_hash: String,
    pub n_so_samples: usize,
    pub n_sites: usize,
    pub records: usize,
    pub snr_db: Option<f64>,
    /// Configuration bit words, indexed by `k_index`.
    pub configs: Vec<String>,
    /// Hash of the manifest of the run that produced the file, when known.
    #[serde(default)]
    pub producer: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn configs(&self) -> Vec<RisConfig> {
        self.meta
            .configs
            .iter()
            .map(|s| RisConfig::from_bitstring(s).expect("validated on load"))
            .collect()
    }

    pub fn feature_width(&self) -> usize {
        features::width(self.meta.s_ris, self.meta.n_obj)
    }

    pub fn subset(&self, idx: &[usize]) -> Vec<&DatasetRecord> {
        idx.iter().map(|&i| &self.records[i]).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct GenerateOptions {
    /// Per-record measurement SNR; `None` disables noise.
    pub snr_db: Option<f64>,
    pub scene_hash: String,
}

/// `k` distinct configurations drawn uniformly by rejection.
pub fn draw_configs(n_ris: usize, k: usize, seed: u64) -> Result<Vec<RisConfig>, DatasetError> {
    if k == 0 {
        return Err(DatasetError::Invalid(
            "need at least one configuration".into(),
        ));
    }
    if n_ris < 64 && (k as u128) > (1u128 << n_ris) {
        return Err(DatasetError::Infeasible { k, n_ris });
    }
    let mut rng = rng::stream(seed, Domain::Configs, 0);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let c = RisConfig::random(n_ris, &mut rng);
        if seen.insert(c.clone()) {
            out.push(c);
        }
    }
    Ok(out)
}

/// Indices of the sensing dipoles (in template sense order) within a realized scene.
pub(crate) fn sense_dipoles(tpl: &SceneTemplate, ris_elements: &[usize]) -> Vec<usize> {
    tpl.sense.iter().map(|&s| ris_elements[s]).collect()
}

/// Channels at every UE site for one (configuration, object state) pair.
pub fn simulate_sites(
    tpl: &SceneTemplate,
    config: &RisConfig,
    p: &SoState,
) -> Result<Vec<SweepResponse>, DatasetSimError> {
    let env = realize_environment(tpl, config, p).map_err(DatasetSimError::Scene)?;
    let observe = sense_dipoles(tpl, &env.ris_elements);
    let solver = SweepSolver::new(
        &env,
        0,
        &observe,
        &[],
        &tpl.ue_sites(),
        DipoleProperties::TRANSCEIVER,
        &tpl.grid,
    )
    .map_err(DatasetSimError::Sim)?;
    solver.responses(None).map_err(DatasetSimError::Sim)
}

/// Either half of a failed simulation.
#[derive(Debug)]
pub enum DatasetSimError {
    Scene(SceneError),
    Sim(SimError),
}

pub fn record_from_response(
    resp: &SweepResponse,
    n_sense: usize,
    p: &SoState,
    k_index: usize,
    k: usize,
    u: Point,
) -> DatasetRecord {
    let nf = resp.h_probe.len();
    DatasetRecord {
        h_ue: resp.h_probe.clone(),
        h_sense: (0..n_sense)
            .map(|s| resp.h_obs[s * nf..(s + 1) * nf].to_vec())
            .collect(),
        p: p.clone(),
        k_index,
        k_onehot: one_hot(k_index, k).expect("index drawn below k"),
        u,
    }
}

/// Records ordered by configuration, then object sample, then UE site.
pub fn generate(
    tpl: &SceneTemplate,
    n_configs: usize,
    n_so_samples: usize,
    seed: u64,
    opts: &GenerateOptions,
) -> Result<Dataset, DatasetError> {
    tpl.validate()
        .map_err(|e| DatasetError::Invalid(e.to_string()))?;
    if n_so_samples == 0 {
        return Err(DatasetError::Invalid(
            "need at least one object sample per configuration".into(),
        ));
    }
    if let Some(s) = opts.snr_db {
        if !s.is_finite() {
            return Err(DatasetError::Invalid(format!(
                "snr_db = {s} must be finite"
            )));
        }
    }
    let configs = draw_configs(tpl.n_ris(), n_configs, seed)?;
    let sites = tpl.ue_sites();
    let pairs: Vec<(usize, usize)> = (0..n_configs)
        .flat_map(|c| (0..n_so_samples).map(move |s| (c, s)))
        .collect();

    let blocks: Vec<Vec<DatasetRecord>> = pairs
        .par_iter()
        .map(|&(ci, si)| {
            let pair_index = (ci * n_so_samples + si) as u64;
            let p = sample_so_state(&mut rng::stream(seed, Domain::SoState, pair_index), tpl);
            let resp = simulate_sites(tpl, &configs[ci], &p).map_err(|e| match e {
                DatasetSimError::Scene(source) => DatasetError::Scene {
                    config: ci,
                    sample: si,
                    source,
                },
                DatasetSimError::Sim(source) => DatasetError::Simulation {
                    config: ci,
                    sample: si,
                    source,
                },
            })?;
            Ok(resp
                .iter()
                .zip(&sites)
                .enumerate()
                .map(|(site, (r, &u))| {
                    let rec = record_from_response(r, tpl.n_sense(), &p, ci, n_configs, u);
                    match opts.snr_db {
                        None => rec,
                        Some(snr) => {
                            let idx = pair_index * sites.len() as u64 + site as u64;
                            add_noise(&rec, snr, &mut rng::stream(seed, Domain::Noise, idx))
                        }
                    }
                })
                .collect())
        })
        .collect::<Result<_, DatasetError>>()?;

    let records: Vec<DatasetRecord> = blocks.into_iter().flatten().collect();
    Ok(Dataset {
        meta: DatasetMeta {
            format: io::FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            f: tpl.grid.n_points,
            s_ris: tpl.n_sense(),
            n_ris: tpl.n_ris(),
            k: n_configs,
            n_obj: tpl.n_objects(),
            seed,
            scene_hash: opts.scene_hash.clone(),
            n_so_samples,
            n_sites: sites.len(),
            records: records.len(),
            snr_db: opts.snr_db,
            configs: configs.iter().map(RisConfig::to_bitstring).collect(),
            producer: None,
        },
        records,
    })
}

pub fn one_hot(k_index: usize, k: usize) -> Result<Vec<u8>, DatasetError> {
    if k_index >= k {
        return Err(DatasetError::IndexOutOfRange { index: k_index, k });
    }
    let mut v = vec![0u8; k];
    v[k_index] = 1;
    Ok(v)
}

/// Position of the single 1 in a one-hot vector.
pub fn arg_of(onehot: &[u8]) -> Option<usize> {
    let mut found = None;
    for (i, &v) in onehot.iter().enumerate() {
        match (v, found) {
            (0, _) => {}
            (1, None) => found = Some(i),
            _ => return None,
        }
    }
    found
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn share(n: usize) -> usize {
    // 20% rounded to nearest, halves up
    (n * 2 + 5) / 10
}

/// Seeded 80/20 split, then 80/20 of the remainder into train/val.
pub fn split(n_records: usize, seed: u64) -> Result<Split, DatasetError> {
    if n_records < 5 {
        return Err(DatasetError::TooSmall(n_records));
    }
    let mut idx: Vec<usize> = (0..n_records).collect();
    let mut rng = rng::stream(seed, Domain::Split, 0);
    // Fisher-Yates
    for i in (1..idx.len()).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let n_test = share(n_records);
    let rest = n_records - n_test;
    let n_val = share(rest);
    let test = idx[rest..].to_vec();
    let val = idx[rest - n_val..rest].to_vec();
    let train = idx[..rest - n_val].to_vec();
    Ok(Split { train, val, test })
}

fn mean_power(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>() / v.len().max(1) as f64
}

fn noisy<R: Rng + ?Sized>(v: &[Complex64], snr_db: f64, rng: &mut R) -> Vec<Complex64> {
    let sigma = (mean_power(v) / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
    v.iter()
        .map(|c| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            c + Complex64::new(sigma * re, sigma * im)
        })
        .collect()
}

/// Circular complex Gaussian noise on `h_ue` and every sensing row, each
/// scaled to its own sample power. `snr_db = +inf` returns the record as is.
pub fn add_noise<R: Rng + ?Sized>(rec: &DatasetRecord, snr_db: f64, rng: &mut R) -> DatasetRecord {
    if snr_db == f64::INFINITY {
        return rec.clone();
    }
    let mut out = rec.clone();
    out.h_ue = noisy(&rec.h_ue, snr_db, rng);
    let flat: Vec<Complex64> = rec.h_sense.iter().flatten().copied().collect();
    let nf = rec.h_ue.len();
    let noisy_sense = noisy(&flat, snr_db, rng);
    out.h_sense = noisy_sense.chunks(nf).map(|c| c.to_vec()).collect();
    out
}
