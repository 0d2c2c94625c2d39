//! Factor-once sweeps over RIS states and receiver sites.
//!
//! The environment (everything except the probed receiver) is factored once
//! per frequency. Changing the state of switchable dipoles only touches their
//! diagonal entries, which is a low-rank update handled with the Woodbury
//! identity; adding the receiver dipole at a candidate site borders the
//! matrix with one row and column, handled with a Schur complement. Results
//! equal a full `channel()` solve of the complete scene up to rounding.

use num_complex::Complex64;
use rayon::prelude::*;

use super::{
    assemble_interaction, factor_checked, green_at_distance, inv_polarizability, wavenumber,
    ComplexLu, DipoleProperties, FrequencyGrid, Point, SceneInstance, SimError,
    COLLISION_TOLERANCE,
};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone)]
struct SiteBlock {
    // Receiver diagonal entry.
    d: Complex64,
    // w^T a0, w^T Z, w^T A^-1 w
    s_a: Complex64,
    s_z: Vec<Complex64>,
    s_y: Complex64,
    // (A^-1 w) restricted to switchable / observed dipoles
    ey: Vec<Complex64>,
    y_obs: Vec<Complex64>,
}

#[derive(Debug, Clone)]
struct FreqBlock {
    f: f64,
    // E^T A^-1 E, row-major m x m
    g_ee: Vec<Complex64>,
    ea0: Vec<Complex64>,
    a0_obs: Vec<Complex64>,
    // A^-1 E restricted to observed rows, row-major S x m
    z_obs: Vec<Complex64>,
    sites: Vec<SiteBlock>,
}

/// Response of one receiver site under one switch state.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResponse {
    /// Transmitter to receiver, one value per frequency.
    pub h_probe: Vec<Complex64>,
    /// Transmitter to each observed dipole, `h_obs[obs * F + f]`.
    pub h_obs: Vec<Complex64>,
}

/// Pre-factored environment for repeated channel queries.
#[derive(Debug, Clone)]
pub struct SweepSolver {
    grid: FrequencyGrid,
    n_obs: usize,
    base_switch_props: Vec<DipoleProperties>,
    blocks: Vec<FreqBlock>,
}

impl SweepSolver {
    /// * `env` - every dipole except the receiver; need not contain a UE.
    /// * `tx` - transmitting dipole index in `env`.
    /// * `observe` - dipoles whose field is read (e.g. sensing elements).
    /// * `switchable` - dipoles whose properties may be overridden per query.
    /// * `sites` / `probe` - candidate receiver positions and its properties.
    pub fn new(
        env: &SceneInstance,
        tx: usize,
        observe: &[usize],
        switchable: &[usize],
        sites: &[Point],
        probe: DipoleProperties,
        grid: &FrequencyGrid,
    ) -> Result<Self, SimError> {
        grid.validate()?;
        probe.validate()?;
        let n = env.len();
        if tx >= n || observe.iter().chain(switchable).any(|&i| i >= n) {
            return Err(SimError::InvalidScene(
                "sweep index outside the scene".into(),
            ));
        }
        // Site distances are frequency independent; collisions surface here.
        let site_dist: Vec<Vec<f64>> = sites
            .iter()
            .map(|s| {
                env.positions
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let d = s.distance(p);
                        if d < COLLISION_TOLERANCE {
                            Err(SimError::Collision { a: i, b: n })
                        } else {
                            Ok(d)
                        }
                    })
                    .collect()
            })
            .collect::<Result<_, _>>()?;

        let m = switchable.len();
        let blocks = (0..grid.n_points)
            .into_par_iter()
            .map(|fi| {
                let f = grid.frequency(fi);
                let lu = factor_checked(assemble_interaction(env, f)?, n, f)?;
                let a0 = unit_solve(&lu, tx);
                let z: Vec<Vec<Complex64>> =
                    switchable.iter().map(|&j| unit_solve(&lu, j)).collect();
                let mut g_ee = vec![ZERO; m * m];
                for (c, zc) in z.iter().enumerate() {
                    for (r, &sr) in switchable.iter().enumerate() {
                        g_ee[r * m + c] = zc[sr];
                    }
                }
                let mut z_obs = vec![ZERO; observe.len() * m];
                for (r, &o) in observe.iter().enumerate() {
                    for (c, zc) in z.iter().enumerate() {
                        z_obs[r * m + c] = zc[o];
                    }
                }
                let k2 = wavenumber(f).powi(2);
                let sites = site_dist
                    .iter()
                    .map(|dists| {
                        let w: Vec<Complex64> = dists
                            .iter()
                            .map(|&d| green_at_distance(d, f).map(|g| -k2 * g))
                            .collect::<Result<_, _>>()?;
                        let y = lu.solve(&w);
                        Ok(SiteBlock {
                            d: inv_polarizability(&probe, f),
                            s_a: dot(&w, &a0),
                            s_z: z.iter().map(|zc| dot(&w, zc)).collect(),
                            s_y: dot(&w, &y),
                            ey: switchable.iter().map(|&j| y[j]).collect(),
                            y_obs: observe.iter().map(|&o| y[o]).collect(),
                        })
                    })
                    .collect::<Result<Vec<_>, SimError>>()?;
                Ok(FreqBlock {
                    f,
                    g_ee,
                    ea0: switchable.iter().map(|&j| a0[j]).collect(),
                    a0_obs: observe.iter().map(|&o| a0[o]).collect(),
                    z_obs,
                    sites,
                })
            })
            .collect::<Result<Vec<_>, SimError>>()?;

        Ok(Self {
            grid: *grid,
            n_obs: observe.len(),
            base_switch_props: switchable.iter().map(|&j| env.props[j]).collect(),
            blocks,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.sites.len())
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    /// Responses at every site with the switchable dipoles set to `states`
    /// (`None` keeps the properties the environment was built with).
    pub fn responses(
        &self,
        states: Option<&[DipoleProperties]>,
    ) -> Result<Vec<SweepResponse>, SimError> {
        let sites: Vec<usize> = (0..self.n_sites()).collect();
        self.responses_at(states, &sites)
    }

    pub fn responses_at(
        &self,
        states: Option<&[DipoleProperties]>,
        sites: &[usize],
    ) -> Result<Vec<SweepResponse>, SimError> {
        if let Some(s) = states {
            if s.len() != self.base_switch_props.len() {
                return Err(SimError::InvalidScene(format!(
                    "{} switch states for {} switchable dipoles",
                    s.len(),
                    self.base_switch_props.len()
                )));
            }
        }
        let nf = self.grid.n_points;
        let s_obs = self.n_obs;
        let mut out: Vec<SweepResponse> = sites
            .iter()
            .map(|_| SweepResponse {
                h_probe: vec![ZERO; nf],
                h_obs: vec![ZERO; s_obs * nf],
            })
            .collect();
        let m_full = self.base_switch_props.len();

        for (fi, blk) in self.blocks.iter().enumerate() {
            // Only dipoles whose state differs from the base contribute.
            let active: Vec<(usize, Complex64)> = match states {
                None => Vec::new(),
                Some(s) => s
                    .iter()
                    .zip(&self.base_switch_props)
                    .enumerate()
                    .filter(|(_, (a, b))| a != b)
                    .map(|(j, (a, b))| {
                        (
                            j,
                            inv_polarizability(a, blk.f) - inv_polarizability(b, blk.f),
                        )
                    })
                    .collect(),
            };
            let r = active.len();
            let cap = if r > 0 {
                let mut mat = vec![ZERO; r * r];
                for (ii, &(ji, delta)) in active.iter().enumerate() {
                    for (jj, &(jj_idx, _)) in active.iter().enumerate() {
                        mat[ii * r + jj] = delta * blk.g_ee[ji * m_full + jj_idx];
                    }
                    mat[ii * r + ii] += ONE;
                }
                Some(ComplexLu::factor(mat, r).map_err(|_| SimError::Singular {
                    frequency: blk.f,
                    condition: f64::INFINITY,
                })?)
            } else {
                None
            };
            // correction(v) = M^-1 (Delta * v_active)
            let correct = |vec: &[Complex64]| -> Vec<Complex64> {
                match &cap {
                    None => Vec::new(),
                    Some(lu) => {
                        let rhs: Vec<Complex64> =
                            active.iter().map(|&(j, delta)| delta * vec[j]).collect();
                        lu.solve(&rhs)
                    }
                }
            };
            let v = correct(&blk.ea0);
            let x_obs: Vec<Complex64> = (0..s_obs)
                .map(|o| {
                    let row = &blk.z_obs[o * m_full..(o + 1) * m_full];
                    blk.a0_obs[o]
                        - active
                            .iter()
                            .zip(&v)
                            .map(|(&(j, _), vj)| row[j] * vj)
                            .sum::<Complex64>()
                })
                .collect();

            for (slot, &si) in out.iter_mut().zip(sites) {
                let sb = &blk.sites[si];
                let wx = sb.s_a
                    - active
                        .iter()
                        .zip(&v)
                        .map(|(&(j, _), vj)| sb.s_z[j] * vj)
                        .sum::<Complex64>();
                let u = correct(&sb.ey);
                let waw = sb.s_y
                    - active
                        .iter()
                        .zip(&u)
                        .map(|(&(j, _), uj)| sb.s_z[j] * uj)
                        .sum::<Complex64>();
                let schur = sb.d - waw;
                if schur == ZERO {
                    return Err(SimError::Singular {
                        frequency: blk.f,
                        condition: f64::INFINITY,
                    });
                }
                let z = -wx / schur;
                slot.h_probe[fi] = z;
                for o in 0..s_obs {
                    let row = &blk.z_obs[o * m_full..(o + 1) * m_full];
                    let y_c = sb.y_obs[o]
                        - active
                            .iter()
                            .zip(&u)
                            .map(|(&(j, _), uj)| row[j] * uj)
                            .sum::<Complex64>();
                    slot.h_obs[o * nf + fi] = x_obs[o] - y_c * z;
                }
            }
        }
        Ok(out)
    }
}

fn unit_solve(lu: &ComplexLu, i: usize) -> Vec<Complex64> {
    let mut col = vec![ZERO; lu.dim()];
    col[i] = ONE;
    lu.solve_in_place(&mut col);
    col
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
