//! Enclosure templates and their realization into dipole lists.
//!
//! A [`SceneTemplate`] is the static description (walls, RIS array, UE grid,
//! scattering objects and their shared loop trajectory). [`realize`] turns it
//! plus a RIS configuration, an object state and a UE site into the flat
//! [`SceneInstance`] the wave engine consumes.

mod format;
mod layout;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::wavesim::{DipoleProperties, FrequencyGrid, Point, Role, SceneInstance, SimError};

pub use format::{parse_scene, write_scene};
pub use layout::{default_template, desk_template, EnclosureLayout};

/// Fence dipole spacing (a quarter wavelength).
pub const FENCE_SPACING: f64 = 0.25;

/// RIS element in state 0 (resonant in band).
pub const RIS_STATE_0: DipoleProperties = DipoleProperties::new(1.0, 0.2, 0.03);
/// RIS element in state 1 (detuned).
pub const RIS_STATE_1: DipoleProperties = DipoleProperties::new(5.0, 0.2, 0.03);

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing [{0}] section")]
    MissingSection(&'static str),
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("configuration has {got} bits, template has {expected} RIS elements")]
    ConfigLength { expected: usize, got: usize },
    #[error("object state has {got} entries, template has {expected} objects")]
    StateLength { expected: usize, got: usize },
    #[error("UE site {index} out of range ({count} sites)")]
    SiteIndex { index: usize, count: usize },
    #[error("placement error: {0}")]
    Placement(SimError),
}

/// Binary RIS configuration; bit `i` drives RIS element `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RisConfig {
    bits: Vec<bool>,
}

impl RisConfig {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            bits: vec![false; n],
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        Self {
            bits: (0..n).map(|_| rng.random::<bool>()).collect(),
        }
    }

    /// Dipole properties each element takes in this configuration.
    pub fn element_props(&self) -> Vec<DipoleProperties> {
        self.bits.iter().map(|&b| state_props(b)).collect()
    }

    pub fn to_bitstring(&self) -> String {
        self.bits
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect()
    }

    pub fn from_bitstring(s: &str) -> Option<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Some(false),
                '1' => Some(true),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(Self::new)
    }
}

pub fn state_props(bit: bool) -> DipoleProperties {
    if bit {
        RIS_STATE_1
    } else {
        RIS_STATE_0
    }
}

/// Path parameters of every scattering object, each in `[0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoState {
    pub t: Vec<f64>,
}

impl SoState {
    pub fn new(t: Vec<f64>) -> Self {
        Self { t }
    }

    pub fn zeros(n: usize) -> Self {
        Self { t: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UeGrid {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub nx: usize,
    pub ny: usize,
}

impl UeGrid {
    /// Sites in row-major order (x varies fastest).
    pub fn sites(&self) -> Vec<Point> {
        let axis = |a: f64, b: f64, n: usize, i: usize| {
            if n == 1 {
                a
            } else {
                a + (b - a) * i as f64 / (n - 1) as f64
            }
        };
        (0..self.ny)
            .flat_map(|iy| {
                (0..self.nx).map(move |ix| {
                    Point::new(
                        axis(self.x0, self.x1, self.nx, ix),
                        axis(self.y0, self.y1, self.ny, iy),
                    )
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub a: Point,
    pub b: Point,
}

/// Rigid dipole cluster moving along the template trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub props: DipoleProperties,
    pub offsets: Vec<Point>,
    /// Offset of this object's position along the loop, in `[0, 1)`;
    /// `None` spaces objects evenly (`j / n_objects`).
    pub phase: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTemplate {
    pub grid: FrequencyGrid,
    pub bs: Point,
    pub ue_grid: UeGrid,
    pub walls: Vec<Wall>,
    pub ris: Vec<Point>,
    pub sense: Vec<usize>,
    pub objects: Vec<ObjectSpec>,
    pub trajectory: Vec<Point>,
}

impl SceneTemplate {
    pub fn n_ris(&self) -> usize {
        self.ris.len()
    }

    pub fn n_sense(&self) -> usize {
        self.sense.len()
    }

    pub fn n_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn ue_sites(&self) -> Vec<Point> {
        self.ue_grid.sites()
    }

    pub fn object_phase(&self, j: usize) -> f64 {
        self.objects[j]
            .phase
            .unwrap_or(j as f64 / self.objects.len() as f64)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let invalid = |m: String| Err(SceneError::Invalid(m));
        self.grid
            .validate()
            .map_err(|e| SceneError::Invalid(e.to_string()))?;
        if self.ris.is_empty() {
            return invalid("RIS array is empty".into());
        }
        for (i, &s) in self.sense.iter().enumerate() {
            if s >= self.ris.len() {
                return invalid(format!("sense index {s} >= N_RIS = {}", self.ris.len()));
            }
            if self.sense[..i].contains(&s) {
                return invalid(format!("sense index {s} repeated"));
            }
        }
        if self.ue_grid.nx == 0 || self.ue_grid.ny == 0 {
            return invalid("UE grid has no sites".into());
        }
        if self.walls.is_empty() {
            return invalid("no walls".into());
        }
        for w in &self.walls {
            if w.a.distance(&w.b) == 0.0 {
                return invalid("zero-length wall".into());
            }
        }
        for o in &self.objects {
            o.props
                .validate()
                .map_err(|e| SceneError::Invalid(e.to_string()))?;
            if o.offsets.is_empty() {
                return invalid("object without dipoles".into());
            }
            if let Some(p) = o.phase {
                if !(0.0..1.0).contains(&p) {
                    return invalid(format!("object phase {p} outside [0, 1)"));
                }
            }
        }
        if !self.objects.is_empty() && trajectory_length(&self.trajectory) <= 0.0 {
            return invalid("objects need a trajectory with positive length".into());
        }
        // Walls enclose everything else (bounding box, boundary inclusive).
        let (lo, hi) = self.walls.iter().flat_map(|w| [w.a, w.b]).fold(
            (
                Point::new(f64::INFINITY, f64::INFINITY),
                Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
            ),
            |(lo, hi), p| {
                (
                    Point::new(lo.x.min(p.x), lo.y.min(p.y)),
                    Point::new(hi.x.max(p.x), hi.y.max(p.y)),
                )
            },
        );
        let eps = 1e-9;
        let inside = |p: &Point| {
            p.x >= lo.x - eps && p.x <= hi.x + eps && p.y >= lo.y - eps && p.y <= hi.y + eps
        };
        let reach = self
            .objects
            .iter()
            .flat_map(|o| o.offsets.iter())
            .map(|o| o.x.abs().max(o.y.abs()))
            .fold(0.0, f64::max);
        let others = std::iter::once(self.bs)
            .chain(self.ue_sites())
            .chain(self.ris.iter().copied());
        for p in others {
            if !inside(&p) {
                return invalid(format!("({}, {}) lies outside the walls", p.x, p.y));
            }
        }
        for p in &self.trajectory {
            let ok = [
                (-reach, -reach),
                (reach, reach),
                (-reach, reach),
                (reach, -reach),
            ]
            .iter()
            .all(|&(dx, dy)| inside(&Point::new(p.x + dx, p.y + dy)));
            if !ok {
                return invalid(format!(
                    "trajectory vertex ({}, {}) leaves the enclosure",
                    p.x, p.y
                ));
            }
        }
        Ok(())
    }

    /// Object centers for state `p`.
    pub fn object_centers(&self, p: &SoState) -> Vec<Point> {
        (0..self.objects.len())
            .map(|j| {
                point_on_loop(
                    &self.trajectory,
                    (p.t[j] + self.object_phase(j)).rem_euclid(1.0),
                )
            })
            .collect()
    }
}

/// Dipoles at `a`, every `spacing` along `ab`, and at `b`.
pub fn build_fence(
    a: Point,
    b: Point,
    spacing: f64,
    props: DipoleProperties,
) -> Vec<(Point, DipoleProperties)> {
    let len = a.distance(&b);
    assert!(
        len > 0.0 && spacing > 0.0,
        "fence needs distinct endpoints and positive spacing"
    );
    let (ux, uy) = ((b.x - a.x) / len, (b.y - a.y) / len);
    // Relative tolerance so lengths that are exact multiples are not double counted.
    let steps = (len / spacing + 1e-9).floor() as usize;
    let mut out: Vec<(Point, DipoleProperties)> = (0..=steps)
        .map(|i| {
            let s = spacing * i as f64;
            (Point::new(a.x + ux * s, a.y + uy * s), props)
        })
        .collect();
    let last = out.last().map(|(p, _)| *p).unwrap_or(a);
    if last.distance(&b) > 1e-9 * len.max(1.0) {
        out.push((b, props));
    } else if let Some(end) = out.last_mut() {
        end.0 = b;
    }
    out
}

fn trajectory_length(v: &[Point]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    (0..v.len())
        .map(|i| v[i].distance(&v[(i + 1) % v.len()]))
        .sum()
}

/// Point at arc-length fraction `s` along the closed polyline `v`.
pub fn point_on_loop(v: &[Point], s: f64) -> Point {
    let total = trajectory_length(v);
    let mut target = s.rem_euclid(1.0) * total;
    for i in 0..v.len() {
        let (a, b) = (v[i], v[(i + 1) % v.len()]);
        let seg = a.distance(&b);
        if target <= seg && seg > 0.0 {
            let f = target / seg;
            return Point::new(a.x + (b.x - a.x) * f, a.y + (b.y - a.y) * f);
        }
        target -= seg;
    }
    v[0]
}

fn check_lengths(tpl: &SceneTemplate, k: &RisConfig, p: &SoState) -> Result<(), SceneError> {
    if k.len() != tpl.n_ris() {
        return Err(SceneError::ConfigLength {
            expected: tpl.n_ris(),
            got: k.len(),
        });
    }
    if p.len() != tpl.n_objects() {
        return Err(SceneError::StateLength {
            expected: tpl.n_objects(),
            got: p.len(),
        });
    }
    Ok(())
}

fn push(scene: &mut SceneInstance, pos: Point, props: DipoleProperties, role: Role) {
    scene.positions.push(pos);
    scene.props.push(props);
    scene.roles.push(role);
}

fn build(tpl: &SceneTemplate, k: &RisConfig, p: &SoState, ue: Option<Point>) -> SceneInstance {
    let mut s = SceneInstance {
        positions: vec![],
        props: vec![],
        roles: vec![],
        ris_elements: vec![],
    };
    push(&mut s, tpl.bs, DipoleProperties::TRANSCEIVER, Role::Bs);
    if let Some(u) = ue {
        push(&mut s, u, DipoleProperties::TRANSCEIVER, Role::Ue);
    }
    for w in &tpl.walls {
        for (pos, props) in build_fence(w.a, w.b, FENCE_SPACING, DipoleProperties::ENVIRONMENT) {
            push(&mut s, pos, props, Role::Wall);
        }
    }
    for (i, (&pos, &bit)) in tpl.ris.iter().zip(k.bits()).enumerate() {
        s.ris_elements.push(s.positions.len());
        let role = if tpl.sense.contains(&i) {
            Role::Sense
        } else {
            Role::Ris
        };
        push(&mut s, pos, state_props(bit), role);
    }
    for (obj, c) in tpl.objects.iter().zip(tpl.object_centers(p)) {
        for o in &obj.offsets {
            push(
                &mut s,
                Point::new(c.x + o.x, c.y + o.y),
                obj.props,
                Role::Object,
            );
        }
    }
    s
}

/// Full dipole list: BS, UE, wall fences, RIS elements, object clusters.
pub fn realize(
    tpl: &SceneTemplate,
    k: &RisConfig,
    p: &SoState,
    ue_site: usize,
) -> Result<SceneInstance, SceneError> {
    check_lengths(tpl, k, p)?;
    let sites = tpl.ue_sites();
    let ue = *sites.get(ue_site).ok_or(SceneError::SiteIndex {
        index: ue_site,
        count: sites.len(),
    })?;
    let s = build(tpl, k, p, Some(ue));
    s.validate().map_err(SceneError::Placement)?;
    Ok(s)
}

/// Like [`realize`] but without the UE dipole (for site sweeps).
pub fn realize_environment(
    tpl: &SceneTemplate,
    k: &RisConfig,
    p: &SoState,
) -> Result<SceneInstance, SceneError> {
    check_lengths(tpl, k, p)?;
    let s = build(tpl, k, p, None);
    s.validate_environment().map_err(SceneError::Placement)?;
    Ok(s)
}

/// Independent uniform path parameters, one per object.
pub fn sample_so_state<R: Rng + ?Sized>(rng: &mut R, tpl: &SceneTemplate) -> SoState {
    SoState::new((0..tpl.n_objects()).map(|_| rng.random::<f64>()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fence_counts() {
        let p = DipoleProperties::ENVIRONMENT;
        assert_eq!(
            build_fence(Point::new(0.0, 0.0), Point::new(1.0, 0.0), 0.25, p).len(),
            5
        );
        assert_eq!(
            build_fence(Point::new(0.0, 0.0), Point::new(1.1, 0.0), 0.25, p).len(),
            6
        );
        assert_eq!(
            build_fence(Point::new(0.0, 0.0), Point::new(0.0, 0.3), 0.25, p).len(),
            3
        );
    }

    #[test]
    fn fence_is_collinear() {
        let (a, b) = (Point::new(-1.3, 0.2), Point::new(2.9, 4.1));
        let pts = build_fence(a, b, 0.25, DipoleProperties::ENVIRONMENT);
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let len = a.distance(&b);
        for (p, _) in &pts {
            let cross = (p.x - a.x) * dy - (p.y - a.y) * dx;
            assert!((cross / len).abs() < 1e-12);
        }
        assert_eq!(pts.last().unwrap().0, b);
    }

    #[test]
    fn all_zero_config_is_resonant() {
        let tpl = default_template();
        let s = realize(
            &tpl,
            &RisConfig::zeros(tpl.n_ris()),
            &SoState::zeros(tpl.n_objects()),
            0,
        )
        .unwrap();
        for &i in &s.ris_elements {
            assert_eq!(s.props[i].f_res, 1.0);
        }
        let s1 = realize(
            &tpl,
            &RisConfig::new(vec![true; tpl.n_ris()]),
            &SoState::zeros(tpl.n_objects()),
            0,
        )
        .unwrap();
        for &i in &s1.ris_elements {
            assert_eq!(s1.props[i].f_res, 5.0);
        }
    }

    #[test]
    fn zero_state_places_objects_at_phase_offsets() {
        let tpl = default_template();
        let centers = tpl.object_centers(&SoState::zeros(tpl.n_objects()));
        for (j, c) in centers.iter().enumerate() {
            let expect = point_on_loop(&tpl.trajectory, tpl.object_phase(j));
            assert_eq!(*c, expect);
        }
    }

    #[test]
    fn dipole_count_matches_parts() {
        let tpl = default_template();
        let s = realize(
            &tpl,
            &RisConfig::zeros(tpl.n_ris()),
            &SoState::zeros(tpl.n_objects()),
            3,
        )
        .unwrap();
        let fences: usize = tpl
            .walls
            .iter()
            .map(|w| build_fence(w.a, w.b, FENCE_SPACING, DipoleProperties::ENVIRONMENT).len())
            .sum();
        let clusters: usize = tpl.objects.iter().map(|o| o.offsets.len()).sum();
        assert_eq!(s.len(), 2 + fences + tpl.n_ris() + clusters);
        assert_eq!(s.indices_of(Role::Sense).len(), tpl.n_sense());
        assert_eq!(
            s.indices_of(Role::Ris).len() + s.indices_of(Role::Sense).len(),
            tpl.n_ris()
        );
    }

    #[test]
    fn config_only_changes_ris_resonances() {
        let tpl = default_template();
        let p = SoState::new(vec![0.1, 0.4, 0.6, 0.9]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = realize(&tpl, &RisConfig::random(tpl.n_ris(), &mut rng), &p, 2).unwrap();
        let b = realize(&tpl, &RisConfig::random(tpl.n_ris(), &mut rng), &p, 2).unwrap();
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.roles, b.roles);
        for i in 0..a.len() {
            if !a.ris_elements.contains(&i) {
                assert_eq!(a.props[i], b.props[i]);
            } else {
                assert_eq!(a.props[i].chi, b.props[i].chi);
            }
        }
    }

    #[test]
    fn placement_is_periodic() {
        let tpl = default_template();
        let k = RisConfig::zeros(tpl.n_ris());
        let a = realize(&tpl, &k, &SoState::new(vec![0.25, 0.5, 0.0, 0.75]), 0).unwrap();
        let b = realize(&tpl, &k, &SoState::new(vec![1.25, 1.5, 1.0, 1.75]), 0).unwrap();
        for (p, q) in a.positions.iter().zip(&b.positions) {
            assert!(p.distance(q) < 1e-12);
        }
    }

    #[test]
    fn length_mismatches_are_rejected() {
        let tpl = default_template();
        let p = SoState::zeros(tpl.n_objects());
        assert!(matches!(
            realize(&tpl, &RisConfig::zeros(3), &p, 0),
            Err(SceneError::ConfigLength { .. })
        ));
        let k = RisConfig::zeros(tpl.n_ris());
        assert!(matches!(
            realize(&tpl, &k, &SoState::zeros(1), 0),
            Err(SceneError::StateLength { .. })
        ));
        assert!(matches!(
            realize(&tpl, &k, &p, 999),
            Err(SceneError::SiteIndex { .. })
        ));
    }

    #[test]
    fn colliding_object_is_a_placement_error() {
        let mut tpl = default_template();
        // Move the first object's dipole exactly onto the BS.
        let c = tpl.object_centers(&SoState::zeros(tpl.n_objects()))[0];
        tpl.objects[0].offsets[0] = Point::new(tpl.bs.x - c.x, tpl.bs.y - c.y);
        let err = realize(
            &tpl,
            &RisConfig::zeros(tpl.n_ris()),
            &SoState::zeros(tpl.n_objects()),
            0,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            SceneError::Placement(SimError::Collision { .. })
        ));
    }

    #[test]
    fn so_sampling_is_deterministic_and_uniform() {
        let tpl = default_template();
        let a = sample_so_state(&mut ChaCha8Rng::seed_from_u64(9), &tpl);
        let b = sample_so_state(&mut ChaCha8Rng::seed_from_u64(9), &tpl);
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 10_000;
        let mut sums = vec![0.0; tpl.n_objects()];
        for _ in 0..n {
            let s = sample_so_state(&mut rng, &tpl);
            for (acc, t) in sums.iter_mut().zip(&s.t) {
                assert!((0.0..1.0).contains(t));
                *acc += t;
            }
        }
        for s in sums {
            assert!((s / n as f64 - 0.5).abs() < 0.02);
        }
    }

    #[test]
    fn bitstring_round_trip() {
        let k = RisConfig::new(vec![true, false, false, true]);
        assert_eq!(k.to_bitstring(), "1001");
        assert_eq!(RisConfig::from_bitstring("1001"), Some(k));
        assert_eq!(RisConfig::from_bitstring("10x1"), None);
    }

    #[test]
    fn sense_index_out_of_range_fails_validation() {
        let mut tpl = default_template();
        tpl.sense.push(tpl.n_ris());
        assert!(matches!(tpl.validate(), Err(SceneError::Invalid(_))));
    }
}
