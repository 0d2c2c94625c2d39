//! Coupled-dipole wave engine for two-dimensional enclosures.
//!
//! Every entity (transceiver, wall segment, RIS element, scattering object)
//! is a z-oriented point dipole in the plane. At each frequency the dipoles
//! obey `W p = e`, with the inverse polarizability on the diagonal of `W` and
//! `-k^2 G(r_i, r_j)` off the diagonal, where `G = (i/4) H0^(1)(k d)` is the
//! 2D free-space Green's function. Channels are blocks of `W^{-1}`.
//!
//! Units are normalized: propagation speed 1, center frequency 1, so the
//! center wavelength is 1 and `k = 2 pi f`.

pub mod bessel;
pub mod lu;
mod sweep;

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

pub use bessel::{bessel_j0_y0, j0, y0};
pub use lu::ComplexLu;
pub use sweep::{SweepResponse, SweepSolver};

/// Condition-number estimate above which a system is treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Minimum separation between two dipoles, in wavelengths.
pub const COLLISION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SimError {
    #[error("Y0 is undefined for x = {0} (requires x > 0)")]
    BesselDomain(f64),
    #[error("Green's function evaluated at coincident points ({x}, {y})")]
    CoincidentPoints { x: f64, y: f64 },
    #[error("dipoles {a} and {b} are closer than {COLLISION_TOLERANCE} wavelengths")]
    Collision { a: usize, b: usize },
    #[error("invalid dipole properties: {0}")]
    InvalidProperties(String),
    #[error("invalid frequency grid: {0}")]
    InvalidGrid(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("no dipole with role {0:?} in scene")]
    MissingRole(Role),
    #[error(
        "interaction matrix is singular at f = {frequency} (condition estimate {condition:e})"
    )]
    Singular { frequency: f64, condition: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Resonance frequency, coupling strength and absorptive damping of one dipole.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipoleProperties {
    pub f_res: f64,
    pub chi: f64,
    pub gamma_l: f64,
}

impl DipoleProperties {
    /// Base station and user equipment antennas.
    pub const TRANSCEIVER: Self = Self::new(1.0, 0.5, 0.0);
    /// Wall fences.
    pub const ENVIRONMENT: Self = Self::new(10.0, 50.0, 1e4);

    pub const fn new(f_res: f64, chi: f64, gamma_l: f64) -> Self {
        Self {
            f_res,
            chi,
            gamma_l,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.f_res > 0.0 && self.f_res.is_finite()) {
            return Err(SimError::InvalidProperties(format!(
                "f_res = {} must be > 0",
                self.f_res
            )));
        }
        if !(self.chi > 0.0 && self.chi.is_finite()) {
            return Err(SimError::InvalidProperties(format!(
                "chi = {} must be > 0",
                self.chi
            )));
        }
        if !(self.gamma_l >= 0.0 && self.gamma_l.is_finite()) {
            return Err(SimError::InvalidProperties(format!(
                "gamma_l = {} must be >= 0",
                self.gamma_l
            )));
        }
        Ok(())
    }
}

/// Equispaced frequencies over `f_center * [1 - half_band, 1 + half_band]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub f_center: f64,
    pub half_band: f64,
    pub n_points: usize,
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        Self {
            f_center: 1.0,
            half_band: 0.1,
            n_points: 64,
        }
    }
}

impl FrequencyGrid {
    pub fn new(f_center: f64, half_band: f64, n_points: usize) -> Result<Self, SimError> {
        let g = Self {
            f_center,
            half_band,
            n_points,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_points < 2 {
            return Err(SimError::InvalidGrid(format!(
                "n_points = {} < 2",
                self.n_points
            )));
        }
        if !(self.half_band > 0.0 && self.half_band < 1.0) {
            return Err(SimError::InvalidGrid(format!(
                "half_band = {} outside (0, 1)",
                self.half_band
            )));
        }
        if !(self.f_center > 0.0 && self.f_center.is_finite()) {
            return Err(SimError::InvalidGrid(format!(
                "f_center = {} must be > 0",
                self.f_center
            )));
        }
        Ok(())
    }

    pub fn frequency(&self, i: usize) -> f64 {
        let lo = 1.0 - self.half_band;
        let step = 2.0 * self.half_band / (self.n_points - 1) as f64;
        self.f_center * (lo + step * i as f64)
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.frequency(i)).collect()
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_band * self.f_center / (self.n_points - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Bs,
    Ue,
    Ris,
    /// RIS element dedicated to sensing.
    Sense,
    Wall,
    Object,
}

/// Flat dipole list handed to the solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneInstance {
    pub positions: Vec<Point>,
    pub props: Vec<DipoleProperties>,
    pub roles: Vec<Role>,
    /// Dipole indices of the RIS array, in configuration bit order.
    pub ris_elements: Vec<usize>,
}

impl SceneInstance {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn indices_of(&self, role: Role) -> Vec<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == role)
            .map(|(i, _)| i)
            .collect()
    }

    /// Checks everything except the presence of a UE dipole.
    pub fn validate_environment(&self) -> Result<(), SimError> {
        let n = self.positions.len();
        if self.props.len() != n || self.roles.len() != n {
            return Err(SimError::InvalidScene(format!(
                "{} positions, {} property sets, {} roles",
                n,
                self.props.len(),
                self.roles.len()
            )));
        }
        for p in &self.props {
            p.validate()?;
        }
        if !self.roles.contains(&Role::Bs) {
            return Err(SimError::MissingRole(Role::Bs));
        }
        for (i, r) in self.roles.iter().enumerate() {
            let in_array = self.ris_elements.contains(&i);
            if matches!(r, Role::Ris | Role::Sense) != in_array {
                return Err(SimError::InvalidScene(format!(
                    "dipole {i} with role {r:?} is {}in the RIS array",
                    if in_array { "" } else { "not " }
                )));
            }
        }
        find_collision(&self.positions)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.validate_environment()?;
        if !self.roles.contains(&Role::Ue) {
            return Err(SimError::MissingRole(Role::Ue));
        }
        Ok(())
    }
}

fn find_collision(positions: &[Point]) -> Result<(), SimError> {
    // Sort by x so only a thin band of neighbours needs checking.
    let mut order: Vec<usize> = (0..positions.len()).collect();
    order.sort_by(|&a, &b| positions[a].x.total_cmp(&positions[b].x));
    for (ii, &a) in order.iter().enumerate() {
        for &b in &order[ii + 1..] {
            if positions[b].x - positions[a].x >= COLLISION_TOLERANCE {
                break;
            }
            if positions[a].distance(&positions[b]) < COLLISION_TOLERANCE {
                return Err(SimError::Collision {
                    a: a.min(b),
                    b: a.max(b),
                });
            }
        }
    }
    Ok(())
}

pub fn wavenumber(f: f64) -> f64 {
    2.0 * PI * f
}

/// 2D free-space Green's function `(i/4) H0^(1)(k |r1 - r2|)`.
pub fn greens_2d(r1: Point, r2: Point, f: f64) -> Result<Complex64, SimError> {
    let d = r1.distance(&r2);
    if d == 0.0 {
        return Err(SimError::CoincidentPoints { x: r1.x, y: r1.y });
    }
    green_at_distance(d, f)
}

fn green_at_distance(d: f64, f: f64) -> Result<Complex64, SimError> {
    let (j, y) = bessel_j0_y0(wavenumber(f) * d)?;
    // (i/4)(J0 + i Y0)
    Ok(Complex64::new(-0.25 * y, 0.25 * j))
}

/// Lorentzian inverse polarizability `(f_res^2 - f^2)/chi - i (k^2/4 + gamma_l)`.
pub fn inv_polarizability(p: &DipoleProperties, f: f64) -> Complex64 {
    let k = wavenumber(f);
    Complex64::new(
        (p.f_res * p.f_res - f * f) / p.chi,
        -(0.25 * k * k + p.gamma_l),
    )
}

/// Interaction matrix `W` (row-major, symmetric by construction).
pub fn assemble_interaction(scene: &SceneInstance, f: f64) -> Result<Vec<Complex64>, SimError> {
    let n = scene.len();
    let k2 = wavenumber(f).powi(2);
    let mut w = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        w[i * n + i] = inv_polarizability(&scene.props[i], f);
        for j in i + 1..n {
            let d = scene.positions[i].distance(&scene.positions[j]);
            if d < COLLISION_TOLERANCE {
                return Err(SimError::Collision { a: i, b: j });
            }
            let v = -k2 * green_at_distance(d, f)?;
            w[i * n + j] = v;
            w[j * n + i] = v;
        }
    }
    Ok(w)
}

/// Factors `W` at `f` and rejects ill-conditioned systems.
pub(crate) fn factor_checked(w: Vec<Complex64>, n: usize, f: f64) -> Result<ComplexLu, SimError> {
    let lu = ComplexLu::factor(w, n).map_err(|_| SimError::Singular {
        frequency: f,
        condition: f64::INFINITY,
    })?;
    let condition = lu.condition_estimate();
    if !(condition < CONDITION_LIMIT) {
        return Err(SimError::Singular {
            frequency: f,
            condition,
        });
    }
    Ok(lu)
}

/// Complex transfer values indexed by (rx, tx, frequency).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelResponse {
    pub n_rx: usize,
    pub n_tx: usize,
    pub grid: FrequencyGrid,
    values: Vec<Complex64>,
}

impl ChannelResponse {
    pub fn from_values(
        n_rx: usize,
        n_tx: usize,
        grid: FrequencyGrid,
        values: Vec<Complex64>,
    ) -> Self {
        assert_eq!(values.len(), n_rx * n_tx * grid.n_points);
        Self {
            n_rx,
            n_tx,
            grid,
            values,
        }
    }

    pub fn get(&self, rx: usize, tx: usize, f: usize) -> Complex64 {
        self.values[(rx * self.n_tx + tx) * self.grid.n_points + f]
    }

    /// Frequency response of one (rx, tx) pair.
    pub fn pair(&self, rx: usize, tx: usize) -> &[Complex64] {
        let nf = self.grid.n_points;
        let start = (rx * self.n_tx + tx) * nf;
        &self.values[start..start + nf]
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Channel from every `tx_role` dipole to every `rx_role` dipole over `grid`.
pub fn channel(
    scene: &SceneInstance,
    tx_role: Role,
    rx_role: Role,
    grid: &FrequencyGrid,
) -> Result<ChannelResponse, SimError> {
    grid.validate()?;
    let tx = scene.indices_of(tx_role);
    let rx = scene.indices_of(rx_role);
    if tx.is_empty() {
        return Err(SimError::MissingRole(tx_role));
    }
    if rx.is_empty() {
        return Err(SimError::MissingRole(rx_role));
    }
    channel_between(scene, &tx, &rx, grid)
}

/// Channel between explicit dipole index sets.
pub fn channel_between(
    scene: &SceneInstance,
    tx: &[usize],
    rx: &[usize],
    grid: &FrequencyGrid,
) -> Result<ChannelResponse, SimError> {
    let n = scene.len();
    let nf = grid.n_points;
    let per_freq: Vec<Vec<Complex64>> = (0..nf)
        .into_par_iter()
        .map(|fi| {
            let f = grid.frequency(fi);
            let lu = factor_checked(assemble_interaction(scene, f)?, n, f)?;
            // out[rx][tx]
            let mut out = vec![Complex64::new(0.0, 0.0); rx.len() * tx.len()];
            let mut col = vec![Complex64::new(0.0, 0.0); n];
            for (t, &ti) in tx.iter().enumerate() {
                col.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                col[ti] = Complex64::new(1.0, 0.0);
                lu.solve_in_place(&mut col);
                for (r, &ri) in rx.iter().enumerate() {
                    out[r * tx.len() + t] = col[ri];
                }
            }
            Ok(out)
        })
        .collect::<Result<_, SimError>>()?;

    let mut values = vec![Complex64::new(0.0, 0.0); rx.len() * tx.len() * nf];
    for (fi, block) in per_freq.iter().enumerate() {
        for (pair, v) in block.iter().enumerate() {
            values[pair * nf + fi] = *v;
        }
    }
    Ok(ChannelResponse::from_values(
        rx.len(),
        tx.len(),
        *grid,
        values,
    ))
}

/// Frequency-domain taper applied before the inverse transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Taper {
    #[default]
    Rectangular,
    /// Hann window.
    RaisedCosine,
}

impl Taper {
    pub fn weights(&self, n: usize) -> Vec<f64> {
        match self {
            Taper::Rectangular => vec![1.0; n],
            Taper::RaisedCosine => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
                .collect(),
        }
    }
}

/// Inverse DFT of each (rx, tx) frequency response, `x[n] = (1/N) sum_k H[k] e^{+2 pi i k n / N}`.
///
/// Returned series are indexed like the response: `out[rx * n_tx + tx][delay_bin]`.
pub fn impulse_response(h: &ChannelResponse, taper: Taper) -> Vec<Vec<Complex64>> {
    let n = h.grid.n_points;
    let w = taper.weights(n);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let scale = 1.0 / n as f64;
    let mut out = Vec::with_capacity(h.n_rx * h.n_tx);
    for rx in 0..h.n_rx {
        for tx in 0..h.n_tx {
            let mut buf: Vec<Complex64> = h
                .pair(rx, tx)
                .iter()
                .zip(&w)
                .map(|(v, wi)| v * wi)
                .collect();
            ifft.process(&mut buf);
            buf.iter_mut().for_each(|v| *v *= scale);
            out.push(buf);
        }
    }
    out
}
