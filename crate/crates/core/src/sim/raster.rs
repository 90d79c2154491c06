//! Hand-crafted BEV feature layers standing in for a learned perception stack.
//!
//! Channel layout (one row of `features` per cell, row-major cell order):
//!
//! | ch | content |
//! |----|---------|
//! | 0–3 | occupancy at t = 0, 1, 2, 3 s |
//! | 4, 5 | agent velocity vx/10, vy/10 on cells an agent covers at t = 0 |
//! | 6 | lane mask (cell centre within half a lane width of the route) |
//! | 7 | min(distance to route centreline, 8 m) / 8 |
//! | 8, 9 | route tangent (cos, sin) on lane cells |
//! | 10 | signed arc length along the route from the ego / 32, on lane cells |
//! | 11 | ego speed / 10 (constant plane) |
//! | 12, 13 | cell centre x/16, y/16 |
//! | 14 | 1 on the ego cell |
//! | 15 | (agent vx − ego speed)/10 on agent cells |

use dme_nn::Matrix;

use super::grid::{GridSpec, OccupancyGrid};
use super::scene::{Scene, OCCUPANCY_STEPS};

pub const FEATURE_CHANNELS: usize = 16;

/// Rasterized scene: `H·W × C` feature rows plus the occupancy snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid {
    pub spec: GridSpec,
    pub features: Matrix,
    pub occupancy: Vec<OccupancyGrid>,
}

impl BevGrid {
    pub fn channels(&self) -> usize {
        self.features.cols()
    }

    /// Feature vector of cell `(r, c)`.
    pub fn cell(&self, r: usize, c: usize) -> &[f64] {
        self.features.row(self.spec.index(r, c))
    }
}

pub fn rasterize_bev(scene: &Scene) -> BevGrid {
    let spec = scene.grid;
    let mut f = Matrix::zeros(spec.cells(), FEATURE_CHANNELS);
    let occ_times = [0, 2, 4, 6];
    for (ch, &k) in occ_times.iter().enumerate() {
        let g = &scene.occupancy[k];
        for r in 0..spec.rows {
            for c in 0..spec.cols {
                if g.get(r, c) {
                    f.set(spec.index(r, c), ch, 1.0);
                }
            }
        }
    }
    for a in &scene.agents {
        let [x, y] = a.position;
        let [hx, hy] = a.half_extents;
        if let Some(((r0, r1), (c0, c1))) = spec.cells_overlapping([x - hx, x + hx], [y - hy, y + hy]) {
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let i = spec.index(r, c);
                    f.set(i, 4, a.velocity[0] / 10.0);
                    f.set(i, 5, a.velocity[1] / 10.0);
                    f.set(i, 15, (a.velocity[0] - scene.ego.speed) / 10.0);
                }
            }
        }
    }
    let half_width = 0.5 * scene.lane.width;
    let ego_cell = spec.cell_of(0.0, 0.0);
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let i = spec.index(r, c);
            let (x, y) = spec.cell_center(r, c);
            let (d, tangent, s) = scene.lane.project(x, y);
            if d <= half_width {
                f.set(i, 6, 1.0);
                f.set(i, 8, tangent[0]);
                f.set(i, 9, tangent[1]);
                f.set(i, 10, s / 32.0);
            }
            f.set(i, 7, d.min(8.0) / 8.0);
            f.set(i, 11, scene.ego.speed / 10.0);
            f.set(i, 12, x / 16.0);
            f.set(i, 13, y / 16.0);
            if ego_cell == Some((r, c)) {
                f.set(i, 14, 1.0);
            }
        }
    }
    debug_assert_eq!(scene.occupancy.len(), OCCUPANCY_STEPS);
    BevGrid {
        spec,
        features: f,
        occupancy: scene.occupancy.clone(),
    }
}
