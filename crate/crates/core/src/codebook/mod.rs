//! Offline calibration of a configuration codebook over quantized object
//! states, and the closed runtime loop: sense, match fingerprint, apply the
//! stored configuration, localize.
//!
//! Sensing always happens under a fixed probe configuration (all elements in
//! state 0). Fingerprints are stored for every (bucket, UE site) pair because
//! the UE dipole itself perturbs what the sensing elements see; the matcher
//! therefore recovers the bucket and, as a by-product, the nearest site.

mod file;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{raw_features, sense_dipoles, NormStats};
use crate::neural::{BiLstmNet, Checkpoint, NeuralError};
use crate::scene::{realize_environment, RisConfig, SceneError, SceneTemplate, SoState};
use crate::wavesim::{DipoleProperties, Point, SimError, SweepResponse, SweepSolver};

pub use file::{codebook_bytes, load_codebook, parse_codebook, save_codebook};

pub const DEFAULT_RESOLUTION: usize = 8;

pub type BucketKey = Vec<usize>;

#[derive(Debug, thiserror::Error)]
pub enum CodebookError {
    #[error("resolution must be at least 1")]
    Resolution,
    #[error("no candidate configurations")]
    NoCandidates,
    #[error("no evaluation UE sites")]
    NoSites,
    #[error("UE site {index} out of range ({count} sites)")]
    SiteIndex { index: usize, count: usize },
    #[error("candidate configuration has {got} bits, scene has {expected} RIS elements")]
    ConfigLength { expected: usize, got: usize },
    #[error("calibration left {} bucket(s) without an entry, first {:?}: {}", .0.len(), .0[0].0, .0[0].1)]
    Gaps(Vec<(BucketKey, String)>),
    #[error("sensed response is {got_rows}x{got_cols}, fingerprints are {rows}x{cols}")]
    Shape {
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("codebook has no fingerprints")]
    NoFingerprints,
    #[error("codebook has no entry for bucket {0:?}")]
    MissingEntry(BucketKey),
    #[error("model: {0}")]
    Model(#[from] NeuralError),
    #[error("scene: {0}")]
    Scene(#[from] SceneError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("codebook file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-object bucket `floor(t * resolution)`.
pub fn quantize_so(p: &SoState, resolution: usize) -> Result<BucketKey, CodebookError> {
    if resolution == 0 {
        return Err(CodebookError::Resolution);
    }
    Ok(p.t
        .iter()
        .map(|&t| ((t.rem_euclid(1.0) * resolution as f64).floor() as usize).min(resolution - 1))
        .collect())
}

/// Object state at the center of a bucket cell.
pub fn bucket_center(key: &[usize], resolution: usize) -> SoState {
    SoState::new(
        key.iter()
            .map(|&b| (b as f64 + 0.5) / resolution as f64)
            .collect(),
    )
}

/// Every bucket key in lexicographic order.
pub fn all_buckets(n_obj: usize, resolution: usize) -> Vec<BucketKey> {
    let total = resolution.pow(n_obj as u32);
    (0..total)
        .map(|mut i| {
            let mut key = vec![0; n_obj];
            for slot in key.iter_mut().rev() {
                *slot = i % resolution;
                i /= resolution;
            }
            key
        })
        .collect()
}

/// Sensing responses flattened as `[Re, Im]` pairs, element-major.
pub fn fingerprint_features(h_sense: &[Vec<Complex64>]) -> Vec<f64> {
    h_sense
        .iter()
        .flatten()
        .flat_map(|c| [c.re, c.im])
        .collect()
}

/// Trained recurrent model with its feature standardization.
#[derive(Debug, Clone)]
pub struct Localizer {
    pub net: BiLstmNet,
    pub theta: Vec<f64>,
    pub norm: NormStats,
}

impl Localizer {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CodebookError> {
        let dims = ck.model_dims()?;
        if ck.theta.len() != dims.n_params() || ck.header.norm.width() != dims.input {
            return Err(
                NeuralError::Checkpoint("checkpoint dimensions are inconsistent".into()).into(),
            );
        }
        Ok(Self {
            net: BiLstmNet::new(dims),
            theta: ck.theta.clone(),
            norm: ck.header.norm.clone(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.net.dims.n_classes
    }

    /// Coordinates for `(h_ue, h_sense, p, k)` inputs.
    pub fn locate(
        &self,
        inputs: &[(&[Complex64], &[Vec<Complex64>], &[f64], usize)],
    ) -> Result<Vec<[f64; 2]>, CodebookError> {
        let seqs = inputs
            .iter()
            .map(|(h, s, p, _)| self.norm.apply(&raw_features(h, s, p)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| NeuralError::Shape(e.to_string()))?;
        let refs: Vec<_> = seqs.iter().collect();
        let ks: Vec<usize> = inputs.iter().map(|i| i.3).collect();
        Ok(self
            .net
            .predict(&self.theta, &refs, &ks)?
            .into_iter()
            .map(|(u, _)| u)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookEntry {
    pub key: BucketKey,
    pub k_index: usize,
    pub config: String,
    pub expected_mse: f64,
    /// Expected MSE of every candidate, indexed by k.
    pub candidate_mse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub key: BucketKey,
    pub site: usize,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub format: String,
    pub resolution: usize,
    pub n_obj: usize,
    pub scene_hash: String,
    pub checkpoint_hash: String,
    pub seed: u64,
    /// Configuration active while sensing.
    pub probe_config: String,
    /// Candidate configurations, indexed by k.
    pub configs: Vec<String>,
    pub eval_sites: Vec<usize>,
    pub entries: Vec<CodebookEntry>,
    pub fingerprints: Vec<Fingerprint>,
    /// Shape of a sensing measurement, `S x F`.
    pub sense_shape: [usize; 2],
    /// Canonical text of the scene the codebook was calibrated on.
    pub scene: String,
    #[serde(default)]
    pub producer: Option<String>,
}

impl Codebook {
    pub fn entry(&self, key: &[usize]) -> Result<&CodebookEntry, CodebookError> {
        self.entries
            .binary_search_by(|e| e.key.as_slice().cmp(key))
            .map(|i| &self.entries[i])
            .map_err(|_| CodebookError::MissingEntry(key.to_vec()))
    }

    pub fn candidate(&self, k: usize) -> RisConfig {
        RisConfig::from_bitstring(&self.configs[k]).expect("validated on load")
    }

    pub fn probe(&self) -> RisConfig {
        RisConfig::from_bitstring(&self.probe_config).expect("validated on load")
    }
}

/// Solver for one object state with every RIS element switchable, the
/// sensing elements observed and receivers at `sites`.
pub fn state_solver(
    tpl: &SceneTemplate,
    p: &SoState,
    sites: &[Point],
) -> Result<SweepSolver, CodebookError> {
    let env = realize_environment(tpl, &RisConfig::zeros(tpl.n_ris()), p)?;
    let observe = sense_dipoles(tpl, &env.ris_elements);
    Ok(SweepSolver::new(
        &env,
        0,
        &observe,
        &env.ris_elements,
        sites,
        DipoleProperties::TRANSCEIVER,
        &tpl.grid,
    )?)
}

pub(crate) fn split_sense(r: &SweepResponse, n_sense: usize) -> Vec<Vec<Complex64>> {
    let nf = r.h_probe.len();
    (0..n_sense)
        .map(|s| r.h_obs[s * nf..(s + 1) * nf].to_vec())
        .collect()
}

/// Per-site squared errors of the model under configuration `k` at object
/// state `p`, given the solver for `p`.
pub fn site_errors(
    tpl: &SceneTemplate,
    solver: &SweepSolver,
    sites: &[Point],
    p: &SoState,
    config: &RisConfig,
    k: usize,
    model: &Localizer,
) -> Result<Vec<f64>, CodebookError> {
    let resp = solver.responses(Some(&config.element_props()))?;
    let senses: Vec<Vec<Vec<Complex64>>> =
        resp.iter().map(|r| split_sense(r, tpl.n_sense())).collect();
    let inputs: Vec<_> = resp
        .iter()
        .zip(&senses)
        .map(|(r, s)| (r.h_probe.as_slice(), s.as_slice(), p.t.as_slice(), k))
        .collect();
    let u_hat = model.locate(&inputs)?;
    Ok(u_hat
        .iter()
        .zip(sites)
        .map(|(u, s)| (u[0] - s.x).powi(2) + (u[1] - s.y).powi(2))
        .collect())
}

struct BucketResult {
    entry: CodebookEntry,
    fingerprints: Vec<Fingerprint>,
}

fn calibrate_bucket(
    tpl: &SceneTemplate,
    key: &BucketKey,
    resolution: usize,
    candidates: &[RisConfig],
    sites: &[Point],
    site_idx: &[usize],
    model: &Localizer,
) -> Result<BucketResult, CodebookError> {
    let p = bucket_center(key, resolution);
    let solver = state_solver(tpl, &p, sites)?;
    let probe = solver.responses(Some(&RisConfig::zeros(tpl.n_ris()).element_props()))?;
    let fingerprints = probe
        .iter()
        .zip(site_idx)
        .map(|(r, &site)| Fingerprint {
            key: key.clone(),
            site,
            features: fingerprint_features(&split_sense(r, tpl.n_sense())),
        })
        .collect();
    let mut candidate_mse = Vec::with_capacity(candidates.len());
    for (k, c) in candidates.iter().enumerate() {
        let se = site_errors(tpl, &solver, sites, &p, c, k, model)?;
        candidate_mse.push(se.iter().sum::<f64>() / se.len() as f64);
    }
    let mut best = 0;
    for (k, &m) in candidate_mse.iter().enumerate() {
        if m < candidate_mse[best] {
            best = k;
        }
    }
    Ok(BucketResult {
        entry: CodebookEntry {
            key: key.clone(),
            k_index: best,
            config: candidates[best].to_bitstring(),
            expected_mse: candidate_mse[best],
            candidate_mse,
        },
        fingerprints,
    })
}

/// Inputs to [`calibrate`] that identify its provenance.
#[derive(Debug, Clone, Default)]
pub struct CalibrationInfo {
    pub scene_text: String,
    pub scene_hash: String,
    pub checkpoint_hash: String,
    pub seed: u64,
}

/// For every bucket, simulates each candidate at the cell-center state over
/// the evaluation sites, scores it with the model and keeps the lowest
/// expected MSE (lowest index on ties). Buckets run in parallel and merge
/// in key order.
pub fn calibrate(
    model: &Localizer,
    tpl: &SceneTemplate,
    candidates: &[RisConfig],
    resolution: usize,
    eval_sites: &[usize],
    info: &CalibrationInfo,
) -> Result<Codebook, CodebookError> {
    if resolution == 0 {
        return Err(CodebookError::Resolution);
    }
    if candidates.is_empty() {
        return Err(CodebookError::NoCandidates);
    }
    if eval_sites.is_empty() {
        return Err(CodebookError::NoSites);
    }
    if let Some(c) = candidates.iter().find(|c| c.len() != tpl.n_ris()) {
        return Err(CodebookError::ConfigLength {
            expected: tpl.n_ris(),
            got: c.len(),
        });
    }
    if candidates.len() > model.n_classes() {
        return Err(NeuralError::Shape(format!(
            "{} candidates but the model knows {} configurations",
            candidates.len(),
            model.n_classes()
        ))
        .into());
    }
    let all = tpl.ue_sites();
    let sites = eval_sites
        .iter()
        .map(|&i| {
            all.get(i).copied().ok_or(CodebookError::SiteIndex {
                index: i,
                count: all.len(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let keys = all_buckets(tpl.n_objects(), resolution);
    let results: Vec<Result<BucketResult, CodebookError>> = keys
        .par_iter()
        .map(|key| calibrate_bucket(tpl, key, resolution, candidates, &sites, eval_sites, model))
        .collect();

    let mut entries = Vec::with_capacity(keys.len());
    let mut fingerprints = Vec::new();
    let mut gaps = Vec::new();
    for (key, r) in keys.iter().zip(results) {
        match r {
            Ok(b) => {
                entries.push(b.entry);
                fingerprints.extend(b.fingerprints);
            }
            Err(e @ (CodebookError::Sim(_) | CodebookError::Scene(_))) => {
                gaps.push((key.clone(), e.to_string()))
            }
            Err(e) => return Err(e),
        }
    }
    if !gaps.is_empty() {
        return Err(CodebookError::Gaps(gaps));
    }
    Ok(Codebook {
        format: file::FORMAT_TAG.into(),
        resolution,
        n_obj: tpl.n_objects(),
        scene_hash: info.scene_hash.clone(),
        checkpoint_hash: info.checkpoint_hash.clone(),
        seed: info.seed,
        probe_config: RisConfig::zeros(tpl.n_ris()).to_bitstring(),
        configs: candidates.iter().map(RisConfig::to_bitstring).collect(),
        eval_sites: eval_sites.to_vec(),
        entries,
        fingerprints,
        sense_shape: [tpl.n_sense(), tpl.grid.n_points],
        scene: info.scene_text.clone(),
        producer: None,
    })
}

/// Nearest stored fingerprint: `(bucket, site, distance)`. Ties go to the
/// earliest fingerprint, i.e. the lowest bucket key.
pub fn estimate_so(
    sensed: &[Vec<Complex64>],
    cb: &Codebook,
) -> Result<(BucketKey, usize, f64), CodebookError> {
    let [rows, cols] = cb.sense_shape;
    let got_cols = sensed.first().map_or(0, Vec::len);
    if sensed.len() != rows || sensed.iter().any(|r| r.len() != cols) {
        return Err(CodebookError::Shape {
            rows,
            cols,
            got_rows: sensed.len(),
            got_cols,
        });
    }
    let q = fingerprint_features(sensed);
    let mut best: Option<(&Fingerprint, f64)> = None;
    for fp in &cb.fingerprints {
        let d2: f64 = fp
            .features
            .iter()
            .zip(&q)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if best.is_none_or(|(_, b)| d2 < b) {
            best = Some((fp, d2));
        }
    }
    let (fp, d2) = best.ok_or(CodebookError::NoFingerprints)?;
    Ok((fp.key.clone(), fp.site, d2.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeOutcome {
    pub k_index: usize,
    pub config: String,
    pub u_hat: [f64; 2],
    pub bucket: BucketKey,
    pub matched_site: usize,
    pub distance: f64,
}

/// One closed-loop step with the object state `hidden` and the UE at
/// `ue_site`; both are used only to simulate measurements.
pub fn runtime_step(
    tpl: &SceneTemplate,
    hidden: &SoState,
    ue_site: usize,
    cb: &Codebook,
    model: &Localizer,
) -> Result<RuntimeOutcome, CodebookError> {
    let sites = tpl.ue_sites();
    let ue = *sites.get(ue_site).ok_or(CodebookError::SiteIndex {
        index: ue_site,
        count: sites.len(),
    })?;
    let solver = state_solver(tpl, hidden, &[ue])?;
    let sensed = solver.responses(Some(&cb.probe().element_props()))?;
    let (bucket, matched_site, distance) =
        estimate_so(&split_sense(&sensed[0], tpl.n_sense()), cb)?;
    let entry = cb.entry(&bucket)?;
    let config = cb.candidate(entry.k_index);
    let r = solver.responses(Some(&config.element_props()))?;
    let p_hat = bucket_center(&bucket, cb.resolution);
    let sense = split_sense(&r[0], tpl.n_sense());
    let u_hat = model.locate(&[(&r[0].h_probe, &sense, &p_hat.t, entry.k_index)])?[0];
    Ok(RuntimeOutcome {
        k_index: entry.k_index,
        config: entry.config.clone(),
        u_hat,
        bucket,
        matched_site,
        distance,
    })
}

/// Runs the loop over a schedule of hidden `(object state, UE site)` pairs.
pub fn run_episode(
    tpl: &SceneTemplate,
    schedule: &[(SoState, usize)],
    cb: &Codebook,
    model: &Localizer,
) -> Result<Vec<RuntimeOutcome>, CodebookError> {
    schedule
        .iter()
        .map(|(p, s)| runtime_step(tpl, p, *s, cb, model))
        .collect()
}
