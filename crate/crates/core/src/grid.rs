//! Voxel grid geometries and the fields stored on them.
//!
//! **Convention:** an [`OccupancyGrid`] stores, per cell, the probability that
//! the cell is *empty*. A value of `1.0` is free space and `0.0` is surely
//! occupied. This is the inverse of the usual occupancy convention and every
//! consumer in this crate (losses, renderer, IoU) relies on it.
//!
//! Cells are stored x-fastest: `index = (iz * ny + iy) * nx + ix`.

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    pub fn cube(n: usize) -> Self {
        Dims::new(n, n, n)
    }

    pub fn num_cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    fn validate(&self) -> Result<()> {
        for (name, n) in [("nx", self.nx), ("ny", self.ny), ("nz", self.nz)] {
            if n == 0 {
                return Err(Error::invalid("dims", format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Axis-aligned box in world coordinates (meters).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Aabb { min, max }
    }

    /// The cube `[-0.5, 0.5]^3`, the default object-scale volume.
    pub fn unit_centered() -> Self {
        Aabb::new([-0.5; 3], [0.5; 3])
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }
}

/// Parameters of the exponential-depth frustum grid. A grid coordinate
/// `(x, y, z)` maps to `alpha1 * exp(alpha2 * z) * (f (x - nx/2), f (y - ny/2), 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrustumParams {
    pub alpha1: f64,
    pub alpha2: f64,
    pub f: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GeometryKind {
    Uniform(Aabb),
    Frustum(FrustumParams),
}

/// A plane `normal . p = offset`. Cell interiors satisfy `normal . p < offset`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    fn outward(normal: Vector3<f64>, offset: f64) -> Self {
        let n = normal.norm();
        Plane {
            normal: normal / n,
            offset: offset / n,
        }
    }

    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridGeometry {
    dims: Dims,
    kind: GeometryKind,
}

impl GridGeometry {
    pub fn uniform(dims: Dims, aabb: Aabb) -> Result<Self> {
        dims.validate()?;
        for (axis, e) in aabb.extent().iter().enumerate() {
            if !(e.is_finite() && *e > 0.0) {
                return Err(Error::invalid(
                    "aabb",
                    format!("extent along axis {axis} must be positive, got {e}"),
                ));
            }
        }
        Ok(GridGeometry {
            dims,
            kind: GeometryKind::Uniform(aabb),
        })
    }

    pub fn frustum(dims: Dims, params: FrustumParams) -> Result<Self> {
        dims.validate()?;
        for (name, v) in [
            ("alpha1", params.alpha1),
            ("alpha2", params.alpha2),
            ("f", params.f),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be positive, got {v}")));
            }
        }
        Ok(GridGeometry {
            dims,
            kind: GeometryKind::Frustum(params),
        })
    }

    /// Frustum grid spanning depths `[z_min, z_max]` with horizontal field of
    /// view `hfov_deg` across the `nx` columns.
    pub fn frustum_from_fov(dims: Dims, z_min: f64, z_max: f64, hfov_deg: f64) -> Result<Self> {
        dims.validate()?;
        if !(z_min > 0.0) {
            return Err(Error::invalid("z_min", format!("must be positive, got {z_min}")));
        }
        if !(z_max > z_min) {
            return Err(Error::invalid(
                "z_max",
                format!("must exceed z_min ({z_min}), got {z_max}"),
            ));
        }
        if !(hfov_deg > 0.0 && hfov_deg < 180.0) {
            return Err(Error::invalid(
                "hfov",
                format!("must lie in (0, 180) degrees, got {hfov_deg}"),
            ));
        }
        let params = FrustumParams {
            alpha1: z_min,
            alpha2: (z_max / z_min).ln() / dims.nz as f64,
            f: (0.5 * hfov_deg.to_radians()).tan() / (0.5 * dims.nx as f64),
        };
        GridGeometry::frustum(dims, params)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn kind(&self) -> &GeometryKind {
        &self.kind
    }

    pub fn num_cells(&self) -> usize {
        self.dims.num_cells()
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        debug_assert!(ix < self.dims.nx && iy < self.dims.ny && iz < self.dims.nz);
        (iz * self.dims.ny + iy) * self.dims.nx + ix
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims.nx;
        let ny = self.dims.ny;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.num_cells() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.num_cells(),
            });
        }
        Ok(())
    }

    /// Maps continuous grid coordinates (cell `i` spans `[i, i+1]`) to world space.
    pub fn grid_to_world(&self, g: [f64; 3]) -> Point3<f64> {
        match &self.kind {
            GeometryKind::Uniform(aabb) => {
                let e = aabb.extent();
                Point3::new(
                    aabb.min[0] + g[0] / self.dims.nx as f64 * e[0],
                    aabb.min[1] + g[1] / self.dims.ny as f64 * e[1],
                    aabb.min[2] + g[2] / self.dims.nz as f64 * e[2],
                )
            }
            GeometryKind::Frustum(p) => {
                let z = p.alpha1 * (p.alpha2 * g[2]).exp();
                Point3::new(
                    z * p.f * (g[0] - 0.5 * self.dims.nx as f64),
                    z * p.f * (g[1] - 0.5 * self.dims.ny as f64),
                    z,
                )
            }
        }
    }

    /// Inverse of [`grid_to_world`](Self::grid_to_world). `None` for frustum
    /// points at or behind the apex plane.
    pub fn world_to_grid(&self, p: &Point3<f64>) -> Option<[f64; 3]> {
        match &self.kind {
            GeometryKind::Uniform(aabb) => {
                let e = aabb.extent();
                Some([
                    (p.x - aabb.min[0]) / e[0] * self.dims.nx as f64,
                    (p.y - aabb.min[1]) / e[1] * self.dims.ny as f64,
                    (p.z - aabb.min[2]) / e[2] * self.dims.nz as f64,
                ])
            }
            GeometryKind::Frustum(fp) => {
                if p.z <= 0.0 {
                    return None;
                }
                Some([
                    p.x / (p.z * fp.f) + 0.5 * self.dims.nx as f64,
                    p.y / (p.z * fp.f) + 0.5 * self.dims.ny as f64,
                    (p.z / fp.alpha1).ln() / fp.alpha2,
                ])
            }
        }
    }

    /// The cell containing `p`, if any. Points on an internal boundary belong
    /// to the cell on the positive side.
    pub fn locate(&self, p: &Point3<f64>) -> Option<usize> {
        let g = self.world_to_grid(p)?;
        let n = self.dims.as_array();
        let mut c = [0usize; 3];
        for a in 0..3 {
            let v = g[a].floor();
            if !(v >= 0.0 && v < n[a] as f64) {
                return None;
            }
            c[a] = v as usize;
        }
        Some(self.index(c[0], c[1], c[2]))
    }

    pub fn cell_center(&self, index: usize) -> Result<Point3<f64>> {
        self.check_index(index)?;
        let [ix, iy, iz] = self.coords(index);
        Ok(self.grid_to_world([ix as f64 + 0.5, iy as f64 + 0.5, iz as f64 + 0.5]))
    }

    /// World-space coordinate of the `k`-th boundary plane of each family.
    /// Uniform: the axis coordinate. Frustum x/y: the slope `X/Z` (or `Y/Z`)
    /// of the plane through the origin; frustum z: the depth.
    pub fn boundary(&self, axis: usize, k: usize) -> f64 {
        let n = self.dims.as_array();
        match &self.kind {
            GeometryKind::Uniform(aabb) => {
                aabb.min[axis] + k as f64 / n[axis] as f64 * aabb.extent()[axis]
            }
            GeometryKind::Frustum(p) => {
                if axis == 2 {
                    p.alpha1 * (p.alpha2 * k as f64).exp()
                } else {
                    p.f * (k as f64 - 0.5 * n[axis] as f64)
                }
            }
        }
    }

    /// The plane at boundary `k` of family `axis`, oriented so that its
    /// normal points toward increasing grid coordinate.
    pub fn boundary_plane(&self, axis: usize, k: usize) -> Plane {
        let b = self.boundary(axis, k);
        let mut n = Vector3::zeros();
        match (&self.kind, axis) {
            (GeometryKind::Frustum(_), 0 | 1) => {
                n[axis] = 1.0;
                n[2] = -b;
                Plane::outward(n, 0.0)
            }
            _ => {
                n[axis] = 1.0;
                Plane::outward(n, b)
            }
        }
    }

    /// The six planes bounding a cell, outward-facing, ordered
    /// `[x-, x+, y-, y+, z-, z+]`.
    pub fn cell_bounds(&self, index: usize) -> Result<[Plane; 6]> {
        self.check_index(index)?;
        let c = self.coords(index);
        let mut planes = [Plane {
            normal: Vector3::zeros(),
            offset: 0.0,
        }; 6];
        for axis in 0..3 {
            let lo = self.boundary_plane(axis, c[axis]);
            let hi = self.boundary_plane(axis, c[axis] + 1);
            planes[2 * axis] = Plane {
                normal: -lo.normal,
                offset: -lo.offset,
            };
            planes[2 * axis + 1] = hi;
        }
        Ok(planes)
    }

    /// The six planes bounding the whole grid, outward-facing.
    pub fn hull_planes(&self) -> [Plane; 6] {
        let n = self.dims.as_array();
        let mut planes = [Plane {
            normal: Vector3::zeros(),
            offset: 0.0,
        }; 6];
        for axis in 0..3 {
            let lo = self.boundary_plane(axis, 0);
            let hi = self.boundary_plane(axis, n[axis]);
            planes[2 * axis] = Plane {
                normal: -lo.normal,
                offset: -lo.offset,
            };
            planes[2 * axis + 1] = hi;
        }
        planes
    }

    pub fn cell_volume(&self, index: usize) -> Result<f64> {
        self.check_index(index)?;
        Ok(match &self.kind {
            GeometryKind::Uniform(aabb) => {
                let e = aabb.extent();
                e[0] * e[1] * e[2] / self.num_cells() as f64
            }
            GeometryKind::Frustum(p) => {
                let iz = self.coords(index)[2];
                let z0 = self.boundary(2, iz);
                let z1 = self.boundary(2, iz + 1);
                p.f * p.f * (z1.powi(3) - z0.powi(3)) / 3.0
            }
        })
    }

    /// Smallest edge length of any cell, in meters.
    pub fn min_cell_extent(&self) -> f64 {
        match &self.kind {
            GeometryKind::Uniform(aabb) => {
                let e = aabb.extent();
                let n = self.dims.as_array();
                (0..3).map(|a| e[a] / n[a] as f64).fold(f64::INFINITY, f64::min)
            }
            GeometryKind::Frustum(p) => {
                let z0 = p.alpha1;
                let z1 = self.boundary(2, 1);
                (z0 * p.f).min(z1 - z0)
            }
        }
    }
}

fn check_unit_interval(values: &[f64], what: &str) -> Result<()> {
    if let Some((i, v)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::Domain(format!("{what}[{i}] = {v} is outside [0, 1]")));
    }
    Ok(())
}

/// Per-cell emptiness probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    geometry: GridGeometry,
    x: Vec<f64>,
}

impl OccupancyGrid {
    pub fn filled(geometry: GridGeometry, fill_x: f64) -> Result<Self> {
        check_unit_interval(&[fill_x], "fill_x")?;
        Ok(OccupancyGrid {
            x: vec![fill_x; geometry.num_cells()],
            geometry,
        })
    }

    /// A uniform grid over `aabb` with every cell at emptiness `fill_x`.
    pub fn uniform(dims: Dims, aabb: Aabb, fill_x: f64) -> Result<Self> {
        OccupancyGrid::filled(GridGeometry::uniform(dims, aabb)?, fill_x)
    }

    pub fn from_values(geometry: GridGeometry, x: Vec<f64>) -> Result<Self> {
        if x.len() != geometry.num_cells() {
            return Err(Error::LengthMismatch {
                expected: geometry.num_cells(),
                actual: x.len(),
            });
        }
        check_unit_interval(&x, "x")?;
        Ok(OccupancyGrid { geometry, x })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.x
    }

    /// Whole-field replacement; the only mutation path.
    pub fn replace_values(&mut self, x: Vec<f64>) -> Result<()> {
        *self = OccupancyGrid::from_values(self.geometry, x)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuxKind {
    Color,
    Semantics { classes: usize },
}

impl AuxKind {
    pub fn channels(&self) -> usize {
        match self {
            AuxKind::Color => 3,
            AuxKind::Semantics { classes } => *classes,
        }
    }
}

/// Per-cell auxiliary payload: RGB color or a class distribution, stored
/// cell-major (`channels` consecutive values per cell).
#[derive(Clone, Debug, PartialEq)]
pub struct AuxGrid {
    geometry: GridGeometry,
    kind: AuxKind,
    data: Vec<f64>,
}

pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

impl AuxGrid {
    pub fn new(geometry: GridGeometry, kind: AuxKind, data: Vec<f64>) -> Result<Self> {
        let channels = kind.channels();
        if channels == 0 {
            return Err(Error::invalid("classes", "must be at least 1"));
        }
        let expected = geometry.num_cells() * channels;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        match kind {
            AuxKind::Color => check_unit_interval(&data, "color")?,
            AuxKind::Semantics { .. } => {
                for (cell, p) in data.chunks_exact(channels).enumerate() {
                    check_simplex(p).map_err(|e| Error::Domain(format!("cell {cell}: {e}")))?;
                }
            }
        }
        Ok(AuxGrid {
            geometry,
            kind,
            data,
        })
    }

    pub fn filled(geometry: GridGeometry, kind: AuxKind, value: &[f64]) -> Result<Self> {
        let data = value
            .iter()
            .copied()
            .cycle()
            .take(geometry.num_cells() * value.len())
            .collect();
        if value.len() != kind.channels() {
            return Err(Error::LengthMismatch {
                expected: kind.channels(),
                actual: value.len(),
            });
        }
        AuxGrid::new(geometry, kind, data)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn kind(&self) -> AuxKind {
        self.kind
    }

    pub fn channels(&self) -> usize {
        self.kind.channels()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn cell(&self, index: usize) -> &[f64] {
        let c = self.channels();
        &self.data[index * c..(index + 1) * c]
    }
}

pub(crate) fn check_simplex(p: &[f64]) -> std::result::Result<(), String> {
    if let Some(v) = p.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(format!("negative or non-finite probability {v}"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(format!("probabilities sum to {s}, not 1"));
    }
    Ok(())
}

/// Ground-truth occupancy (`true` = occupied).
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryGrid {
    geometry: GridGeometry,
    occ: Vec<bool>,
}

impl BinaryGrid {
    pub fn new(geometry: GridGeometry, occ: Vec<bool>) -> Result<Self> {
        if occ.len() != geometry.num_cells() {
            return Err(Error::LengthMismatch {
                expected: geometry.num_cells(),
                actual: occ.len(),
            });
        }
        Ok(BinaryGrid { geometry, occ })
    }

    pub fn empty(geometry: GridGeometry) -> Self {
        BinaryGrid {
            occ: vec![false; geometry.num_cells()],
            geometry,
        }
    }

    pub fn full(geometry: GridGeometry) -> Self {
        BinaryGrid {
            occ: vec![true; geometry.num_cells()],
            geometry,
        }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn occupied(&self) -> &[bool] {
        &self.occ
    }

    pub fn is_occupied(&self, index: usize) -> bool {
        self.occ[index]
    }

    pub fn count_occupied(&self) -> usize {
        self.occ.iter().filter(|o| **o).count()
    }

    /// The same shape as emptiness probabilities (occupied → 0, empty → 1).
    pub fn to_occupancy(&self) -> OccupancyGrid {
        OccupancyGrid {
            geometry: self.geometry,
            x: self.occ.iter().map(|&o| if o { 0.0 } else { 1.0 }).collect(),
        }
    }
}
