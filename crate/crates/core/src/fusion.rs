//! Depth-fusion baseline and a silhouette-carving oracle.
//!
//! Fusion keeps per-cell (empty, occupied) ray counts: cells a ray passes
//! through before its observed depth count as empty, the cell where it
//! terminates as occupied, and a background ray empties its whole path. The
//! soft occupancy of a cell is `occupied / (occupied + empty)`; cells no ray
//! touched are invalid.
//!
//! Noisy depths that fall short of the grid are clamped to the first traversed
//! cell and depths past the far side to the last one.

use crate::consistency::{CostParams, ObservationKind};
use crate::error::{Error, Result};
use crate::grid::{BinaryGrid, GridGeometry, OccupancyGrid};
use crate::renderer::{Observation, ObservationData};
use crate::traversal::trace;

#[derive(Clone, Debug, PartialEq)]
pub struct FusionGrid {
    pub geometry: GridGeometry,
    pub empty_count: Vec<u32>,
    pub occupied_count: Vec<u32>,
}

impl FusionGrid {
    pub fn new(geometry: GridGeometry) -> Self {
        let n = geometry.num_cells();
        FusionGrid {
            geometry,
            empty_count: vec![0; n],
            occupied_count: vec![0; n],
        }
    }

    pub fn is_valid(&self, index: usize) -> bool {
        self.empty_count[index] + self.occupied_count[index] > 0
    }

    /// Occupancy ratio, or `None` for never-touched cells.
    pub fn soft_occupancy(&self, index: usize) -> Option<f64> {
        let (e, o) = (self.empty_count[index], self.occupied_count[index]);
        (e + o > 0).then(|| f64::from(o) / f64::from(e + o))
    }

    /// Emptiness-convention field for evaluation and storage: `1 - soft`
    /// on valid cells, `1` (empty) on invalid ones.
    pub fn to_occupancy(&self) -> OccupancyGrid {
        let x = (0..self.geometry.num_cells())
            .map(|i| 1.0 - self.soft_occupancy(i).unwrap_or(0.0))
            .collect();
        OccupancyGrid::from_values(self.geometry, x).expect("ratios lie in [0, 1]")
    }
}

fn depth_channel<'a>(obs: &'a Observation, params: &CostParams) -> Result<(&'a [f64], f64)> {
    match obs.data() {
        ObservationData::Depth(d) => Ok((d, params.depth_escape)),
        ObservationData::DepthSemantics { depth, .. } => Ok((depth, params.disparity_escape_depth)),
        _ => Err(Error::KindMismatch(format!(
            "fusion needs depth observations, got {}",
            obs.kind()
        ))),
    }
}

pub fn fuse_depth(
    observations: &[Observation],
    geometry: &GridGeometry,
    params: &CostParams,
) -> Result<FusionGrid> {
    let mut fused = FusionGrid::new(*geometry);
    for obs in observations {
        let (depth, escape) = depth_channel(obs, params)?;
        let cam = obs.camera();
        for (p, &d) in depth.iter().enumerate() {
            let tr = trace(geometry, &cam.pixel_center_ray(p % cam.width(), p / cam.width()));
            let cells = tr.cells();
            if cells.is_empty() {
                continue;
            }
            if d >= escape {
                for c in cells {
                    fused.empty_count[c.index] += 1;
                }
                continue;
            }
            let hit = cells
                .iter()
                .position(|c| d < c.t_exit)
                .unwrap_or(cells.len() - 1);
            for c in &cells[..hit] {
                fused.empty_count[c.index] += 1;
            }
            fused.occupied_count[cells[hit].index] += 1;
        }
    }
    Ok(fused)
}

/// A cell stays occupied unless some background pixel's ray passes through it.
pub fn carve_masks(observations: &[Observation], geometry: &GridGeometry) -> Result<BinaryGrid> {
    let mut occ = vec![true; geometry.num_cells()];
    for obs in observations {
        let ObservationData::Mask(mask) = obs.data() else {
            return Err(Error::KindMismatch(format!(
                "carving needs {} observations, got {}",
                ObservationKind::Mask,
                obs.kind()
            )));
        };
        let cam = obs.camera();
        for (p, &m) in mask.iter().enumerate() {
            if m == 1 {
                continue;
            }
            let tr = trace(geometry, &cam.pixel_center_ray(p % cam.width(), p / cam.width()));
            for i in tr.indices() {
                occ[i] = false;
            }
        }
    }
    BinaryGrid::new(*geometry, occ)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Camera, Intrinsics, Projection};
    use crate::grid::{Aabb, Dims};
    use nalgebra::{Matrix3, Vector3};

    /// Orthographic 1x1 camera whose single ray runs along +x through the
    /// middle row of a 4x1x1 grid on [0,4]x[0,1]^2.
    fn line_setup() -> (GridGeometry, Camera) {
        let g = GridGeometry::uniform(Dims::new(4, 1, 1), Aabb::new([0.0; 3], [4.0, 1.0, 1.0]))
            .unwrap();
        // Camera z axis = world +x.
        let r = Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0);
        let center = Vector3::new(-1.0, 0.5, 0.5);
        let cam = Camera::new(
            Projection::Orthographic,
            Intrinsics {
                scale: [0.1, 0.1],
                principal: [0.5, 0.5],
            },
            r,
            -(r * center),
            1,
            1,
        )
        .unwrap();
        (g, cam)
    }

    #[test]
    fn single_ray_counts() {
        let (g, cam) = line_setup();
        // Ray enters at t = 1; cells span t in [1,2], [2,3], [3,4], [4,5].
        let obs = Observation::new(cam, ObservationData::Depth(vec![3.5])).unwrap();
        let f = fuse_depth(&[obs], &g, &CostParams::default()).unwrap();
        assert_eq!(f.soft_occupancy(0), Some(0.0));
        assert_eq!(f.soft_occupancy(1), Some(0.0));
        assert_eq!(f.soft_occupancy(2), Some(1.0));
        assert_eq!(f.soft_occupancy(3), None);
    }

    #[test]
    fn two_rays_split_a_cell() {
        let (g, cam) = line_setup();
        let stop = Observation::new(cam, ObservationData::Depth(vec![2.5])).unwrap();
        let pass = Observation::new(cam, ObservationData::Depth(vec![4.5])).unwrap();
        let f = fuse_depth(&[stop, pass], &g, &CostParams::default()).unwrap();
        assert_eq!(f.soft_occupancy(1), Some(0.5));
    }

    #[test]
    fn background_and_clamping() {
        let (g, cam) = line_setup();
        let p = CostParams::default();
        let bg = Observation::new(cam, ObservationData::Depth(vec![p.depth_escape])).unwrap();
        let f = fuse_depth(&[bg], &g, &p).unwrap();
        assert!((0..4).all(|i| f.soft_occupancy(i) == Some(0.0)));

        let far = Observation::new(cam, ObservationData::Depth(vec![7.0])).unwrap();
        let near = Observation::new(cam, ObservationData::Depth(vec![0.2])).unwrap();
        let f = fuse_depth(&[far, near], &g, &p).unwrap();
        assert_eq!(f.occupied_count, vec![1, 0, 0, 1]);
        assert_eq!(f.empty_count, vec![1, 1, 1, 0]);
    }

    #[test]
    fn no_observations() {
        let (g, _) = line_setup();
        let f = fuse_depth(&[], &g, &CostParams::default()).unwrap();
        assert!((0..4).all(|i| !f.is_valid(i)));
        assert!(f.to_occupancy().values().iter().all(|&x| x == 1.0));
        assert_eq!(carve_masks(&[], &g).unwrap().count_occupied(), 4);
    }

    #[test]
    fn carving() {
        let (g, cam) = line_setup();
        let bg = Observation::new(cam, ObservationData::Mask(vec![0])).unwrap();
        assert_eq!(carve_masks(&[bg], &g).unwrap().count_occupied(), 0);
        let fg = Observation::new(cam, ObservationData::Mask(vec![1])).unwrap();
        assert_eq!(carve_masks(&[fg], &g).unwrap().count_occupied(), 4);
        let d = Observation::new(cam, ObservationData::Depth(vec![2.0])).unwrap();
        assert!(carve_masks(&[d], &g).is_err());
        let m = Observation::new(cam, ObservationData::Mask(vec![1])).unwrap();
        assert!(fuse_depth(&[m], &g, &CostParams::default()).is_err());
    }
}
