//! Parametric square enclosures: four partially fenced walls, a distributed
//! RIS filling the wall openings, a BS near one corner, a UE grid in the
//! interior and scattering objects circling the UE area on a rectangular loop.

use crate::wavesim::{DipoleProperties, FrequencyGrid, Point};

use super::{ObjectSpec, SceneTemplate, UeGrid, Wall};

#[derive(Debug, Clone, PartialEq)]
pub struct EnclosureLayout {
    /// Side length of the square room.
    pub side: f64,
    pub n_ris: usize,
    pub n_sense: usize,
    /// Fraction of each wall covered by the fence; the rest holds RIS elements.
    pub fence_fraction: f64,
    pub ris_pitch: f64,
    /// UE grid is `ue_n x ue_n` over `[-ue_half, ue_half]^2`.
    pub ue_n: usize,
    pub ue_half: f64,
    /// Half side of the square object loop.
    pub loop_half: f64,
    pub object_props: DipoleProperties,
    pub object_phases: Vec<f64>,
    /// Side of the square 2x2 object cluster.
    pub cluster_side: f64,
    /// BS distance from the two walls meeting at its corner.
    pub bs_inset: f64,
    pub grid: FrequencyGrid,
}

impl EnclosureLayout {
    /// The 15 x 15 wavelength reference room with 20 RIS elements.
    pub fn reference() -> Self {
        Self {
            side: 15.0,
            n_ris: 20,
            n_sense: 8,
            fence_fraction: 0.8,
            ris_pitch: 0.5,
            ue_n: 5,
            ue_half: 3.0,
            loop_half: 4.0,
            object_props: DipoleProperties::new(10.0, 50.0, 5.0),
            object_phases: vec![0.0, 0.23, 0.47, 0.71],
            cluster_side: 0.25,
            bs_inset: 1.0,
            grid: FrequencyGrid::default(),
        }
    }

    /// Smaller room used for desk-scale experiments and the test fixtures.
    pub fn desk(n_ris: usize) -> Self {
        Self {
            side: 8.0,
            n_ris,
            n_sense: 8.min(n_ris),
            fence_fraction: 0.8,
            ris_pitch: 0.3,
            ue_n: 5,
            ue_half: 2.0,
            loop_half: 2.5,
            object_props: DipoleProperties::new(10.0, 50.0, 5.0),
            object_phases: vec![0.0, 0.23, 0.47, 0.71],
            cluster_side: 0.25,
            bs_inset: 0.75,
            grid: FrequencyGrid {
                f_center: 1.0,
                half_band: 0.1,
                n_points: 12,
            },
        }
    }

    pub fn template(&self) -> SceneTemplate {
        let h = 0.5 * self.side;
        let fence = self.fence_fraction * self.side;
        let opening = self.side - fence;
        // Walls run counter-clockwise; each fence starts at a corner and the
        // opening sits before the next corner.
        let corners = [
            Point::new(-h, -h),
            Point::new(h, -h),
            Point::new(h, h),
            Point::new(-h, h),
        ];
        let mut walls = Vec::new();
        let mut ris = Vec::new();
        for w in 0..4 {
            let a = corners[w];
            let b = corners[(w + 1) % 4];
            let (ux, uy) = ((b.x - a.x) / self.side, (b.y - a.y) / self.side);
            walls.push(Wall {
                a,
                b: Point::new(a.x + ux * fence, a.y + uy * fence),
            });
            let count = self.n_ris / 4 + usize::from(w < self.n_ris % 4);
            let mid = fence + 0.5 * opening;
            for e in 0..count {
                let s = mid + self.ris_pitch * (e as f64 - 0.5 * (count as f64 - 1.0));
                ris.push(Point::new(a.x + ux * s, a.y + uy * s));
            }
        }
        let sense = (0..self.n_sense)
            .map(|i| ((i as f64 + 0.5) * self.n_ris as f64 / self.n_sense as f64).floor() as usize)
            .collect();
        let c = 0.5 * self.cluster_side;
        let offsets = vec![
            Point::new(-c, -c),
            Point::new(c, -c),
            Point::new(-c, c),
            Point::new(c, c),
        ];
        let objects = self
            .object_phases
            .iter()
            .map(|&ph| ObjectSpec {
                props: self.object_props,
                offsets: offsets.clone(),
                phase: Some(ph),
            })
            .collect();
        let l = self.loop_half;
        SceneTemplate {
            grid: self.grid,
            bs: Point::new(-h + self.bs_inset, -h + self.bs_inset),
            ue_grid: UeGrid {
                x0: -self.ue_half,
                y0: -self.ue_half,
                x1: self.ue_half,
                y1: self.ue_half,
                nx: self.ue_n,
                ny: self.ue_n,
            },
            walls,
            ris,
            sense,
            objects,
            trajectory: vec![
                Point::new(-l, -l),
                Point::new(l, -l),
                Point::new(l, l),
                Point::new(-l, l),
            ],
        }
    }
}

/// Reference enclosure: 15 x 15, 20 RIS elements (8 sensing), 4 objects, 64 frequencies.
pub fn default_template() -> SceneTemplate {
    EnclosureLayout::reference().template()
}

/// Desk-scale enclosure with `n_ris` RIS elements.
pub fn desk_template(n_ris: usize) -> SceneTemplate {
    EnclosureLayout::desk(n_ris).template()
}
