//! Synthetic observations of binary ground-truth grids.
//!
//! Every pixel center is traced and resolved with [`first_hit`], so a rendered
//! depth is exactly the event depth the loss assigns to the hit cell, and
//! escaping pixels get the same induced values the loss uses for the escape
//! event (escape depth, white, background class `K - 1`).

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::{Camera, Intrinsics};
use crate::consistency::{CostParams, ObservationKind, RayTarget};
use crate::defaults;
use crate::error::{Error, Result};
use crate::grid::{Aabb, AuxGrid, AuxKind, BinaryGrid, Dims, GridGeometry};
use crate::traversal::{first_hit, trace, Hit};

/// Per-pixel channels, row-major (`row * width + col`).
#[derive(Clone, Debug, PartialEq)]
pub enum ObservationData {
    /// 1 = object, 0 = background.
    Mask(Vec<u8>),
    /// Ray distance in meters; background pixels hold the escape depth.
    Depth(Vec<f64>),
    DepthSemantics {
        depth: Vec<f64>,
        labels: Vec<u8>,
        classes: usize,
    },
    Color(Vec<[f64; 3]>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    camera: Camera,
    data: ObservationData,
}

impl Observation {
    pub fn new(camera: Camera, data: ObservationData) -> Result<Self> {
        let n = camera.num_pixels();
        let len = match &data {
            ObservationData::Mask(m) => {
                if m.iter().any(|&v| v > 1) {
                    return Err(Error::Domain("mask pixels must be 0 or 1".into()));
                }
                m.len()
            }
            ObservationData::Depth(d) => {
                check_depths(d)?;
                d.len()
            }
            ObservationData::DepthSemantics {
                depth,
                labels,
                classes,
            } => {
                check_depths(depth)?;
                if labels.len() != depth.len() {
                    return Err(Error::LengthMismatch {
                        expected: depth.len(),
                        actual: labels.len(),
                    });
                }
                if *classes == 0 || *classes > 256 {
                    return Err(Error::invalid("classes", "must lie in 1..=256"));
                }
                if let Some(l) = labels.iter().find(|&&l| l as usize >= *classes) {
                    return Err(Error::Domain(format!("label {l} >= {classes} classes")));
                }
                depth.len()
            }
            ObservationData::Color(c) => {
                if c.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::Domain("colors must lie in [0, 1]".into()));
                }
                c.len()
            }
        };
        if len != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: len,
            });
        }
        Ok(Observation { camera, data })
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn data(&self) -> &ObservationData {
        &self.data
    }

    pub fn kind(&self) -> ObservationKind {
        match self.data {
            ObservationData::Mask(_) => ObservationKind::Mask,
            ObservationData::Depth(_) => ObservationKind::Depth,
            ObservationData::DepthSemantics { .. } => ObservationKind::DepthSemantics,
            ObservationData::Color(_) => ObservationKind::Color,
        }
    }

    /// The loss target of pixel `index`.
    pub fn target(&self, index: usize) -> RayTarget {
        match &self.data {
            ObservationData::Mask(m) => RayTarget::Mask { s: 1 - m[index] },
            ObservationData::Depth(d) => RayTarget::Depth { d: d[index] },
            ObservationData::DepthSemantics { depth, labels, .. } => RayTarget::DepthSemantics {
                d: depth[index],
                class: labels[index] as usize,
            },
            ObservationData::Color(c) => RayTarget::Color { rgb: c[index] },
        }
    }

    /// Whether pixel `index` sees the object. Color images carry no
    /// foreground information; every pixel counts as foreground there.
    pub fn is_foreground(&self, index: usize, params: &CostParams) -> bool {
        match &self.data {
            ObservationData::Mask(m) => m[index] == 1,
            ObservationData::Depth(d) => d[index] < params.depth_escape,
            ObservationData::DepthSemantics { depth, .. } => {
                depth[index] < params.disparity_escape_depth
            }
            ObservationData::Color(_) => true,
        }
    }
}

fn check_depths(d: &[f64]) -> Result<()> {
    if let Some(v) = d.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Domain(format!("depth {v} is not positive")));
    }
    Ok(())
}

/// Renders `grid` from `camera`. `aux` must be a color grid for
/// [`ObservationKind::Color`] and a semantic grid for depth+semantics.
pub fn render(
    grid: &BinaryGrid,
    aux: Option<&AuxGrid>,
    camera: &Camera,
    kind: ObservationKind,
    params: &CostParams,
) -> Result<Observation> {
    let aux = match (kind, aux) {
        (ObservationKind::Color, Some(a)) if a.kind() == AuxKind::Color => Some(a),
        (ObservationKind::DepthSemantics, Some(a))
            if matches!(a.kind(), AuxKind::Semantics { .. }) =>
        {
            Some(a)
        }
        (ObservationKind::Color | ObservationKind::DepthSemantics, _) => {
            return Err(Error::KindMismatch(format!(
                "rendering {kind} needs a matching aux grid"
            )))
        }
        _ => None,
    };
    if let Some(a) = aux {
        if a.geometry() != grid.geometry() {
            return Err(Error::GeometryMismatch);
        }
    }
    let width = camera.width();
    let hits: Vec<Hit> = (0..camera.num_pixels())
        .into_par_iter()
        .map(|p| {
            let ray = camera.pixel_center_ray(p % width, p / width);
            first_hit(grid, &trace(grid.geometry(), &ray))
        })
        .collect::<Result<_>>()?;

    let data = match kind {
        ObservationKind::Mask => ObservationData::Mask(
            hits.iter()
                .map(|h| matches!(h, Hit::Cell { .. }) as u8)
                .collect(),
        ),
        ObservationKind::Depth => {
            ObservationData::Depth(hits.iter().map(|h| hit_depth(h, params.depth_escape)).collect())
        }
        ObservationKind::DepthSemantics => {
            let aux = aux.expect("checked above");
            let classes = aux.channels();
            ObservationData::DepthSemantics {
                depth: hits
                    .iter()
                    .map(|h| hit_depth(h, params.disparity_escape_depth))
                    .collect(),
                labels: hits
                    .iter()
                    .map(|h| match h {
                        Hit::Cell { index, .. } => argmax(aux.cell(*index)) as u8,
                        Hit::Escape => (classes - 1) as u8,
                    })
                    .collect(),
                classes,
            }
        }
        ObservationKind::Color => {
            let aux = aux.expect("checked above");
            ObservationData::Color(
                hits.iter()
                    .map(|h| match h {
                        Hit::Cell { index, .. } => {
                            let c = aux.cell(*index);
                            [c[0], c[1], c[2]]
                        }
                        Hit::Escape => [1.0; 3],
                    })
                    .collect(),
            )
        }
    };
    Observation::new(*camera, data)
}

fn hit_depth(h: &Hit, escape: f64) -> f64 {
    match h {
        Hit::Cell { depth, .. } => *depth,
        Hit::Escape => escape,
    }
}

/// Index of the largest entry; ties go to the lowest index.
fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Smallest depth a noisy sample is clamped to.
const MIN_DEPTH: f64 = 1e-6;

/// Perturbs every foreground depth by an independent uniform sample in
/// `[-max_noise, max_noise]`. Pixel `p` draws from ChaCha stream `p` of
/// `seed`, so the result does not depend on evaluation order.
pub fn add_depth_noise(
    obs: &Observation,
    max_noise: f64,
    seed: u64,
    params: &CostParams,
) -> Result<Observation> {
    if !(max_noise >= 0.0 && max_noise.is_finite()) {
        return Err(Error::invalid("max_noise", format!("must be >= 0, got {max_noise}")));
    }
    let perturb = |depth: &[f64], escape: f64| -> Vec<f64> {
        depth
            .par_iter()
            .enumerate()
            .map(|(p, &d)| {
                if d >= escape || max_noise == 0.0 {
                    return d;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(p as u64);
                (d + rng.gen_range(-max_noise..=max_noise)).max(MIN_DEPTH)
            })
            .collect()
    };
    let data = match obs.data() {
        ObservationData::Depth(d) => ObservationData::Depth(perturb(d, params.depth_escape)),
        ObservationData::DepthSemantics {
            depth,
            labels,
            classes,
        } => ObservationData::DepthSemantics {
            depth: perturb(depth, params.disparity_escape_depth),
            labels: labels.clone(),
            classes: *classes,
        },
        _ => {
            return Err(Error::KindMismatch(format!(
                "depth noise needs a depth observation, got {}",
                obs.kind()
            )))
        }
    };
    Observation::new(*obs.camera(), data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeName {
    Sphere,
    Cuboid,
    ChairLike,
}

impl std::str::FromStr for ShapeName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(ShapeName::Sphere),
            "cuboid" => Ok(ShapeName::Cuboid),
            "chair_like" | "chair" => Ok(ShapeName::ChairLike),
            other => Err(Error::invalid("shape name", format!("unknown shape `{other}`"))),
        }
    }
}

impl std::fmt::Display for ShapeName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ShapeName::Sphere => "sphere",
            ShapeName::Cuboid => "cuboid",
            ShapeName::ChairLike => "chair_like",
        })
    }
}

/// A procedural ground-truth shape in the unit cube `[-0.5, 0.5]^3`.
#[derive(Clone, Debug)]
pub struct TestShape {
    pub grid: BinaryGrid,
    /// Two-tone color payload; empty cells are white.
    pub color: AuxGrid,
    /// One-hot part labels over [`defaults::SEMANTIC_CLASSES`] classes; empty
    /// cells carry the background class.
    pub semantics: AuxGrid,
    /// Empty cells enclosed by the shape (the chair seat's cavity).
    pub cavity: Vec<usize>,
}

pub const SPHERE_RADIUS: f64 = 0.4;
const TONE_A: [f64; 3] = [0.9, 0.15, 0.1];
const TONE_B: [f64; 3] = [0.1, 0.25, 0.85];

/// Part of a voxelized test shape.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Part {
    Empty,
    A,
    B,
}

// Chair layout (y is up, centered coordinates): a rounded seat block cut flat
// at SEAT_TOP with a shallow circular recess in its top (the cavity), and a
// backrest rising from the +z edge of the seat.
const CHAIR_RADIUS: f64 = 0.45;
const SEAT_TOP: f64 = 0.2;
const RECESS_RADIUS: f64 = 0.27;
const RECESS_DEPTH: f64 = 0.07;
const BACK_TOP: f64 = 0.45;
const BACK_FRONT: f64 = 0.33;

fn chair_part(c: &Point3<f64>) -> (Part, bool) {
    let rho = c.x.hypot(c.z);
    if c.coords.norm() <= CHAIR_RADIUS && c.y <= SEAT_TOP {
        if rho < RECESS_RADIUS && c.y > SEAT_TOP - RECESS_DEPTH {
            return (Part::Empty, true);
        }
        return (Part::A, false);
    }
    let seat_edge = (CHAIR_RADIUS * CHAIR_RADIUS - SEAT_TOP * SEAT_TOP).sqrt();
    if c.y > SEAT_TOP && c.y <= BACK_TOP && rho <= seat_edge && c.z > BACK_FRONT {
        return (Part::B, false);
    }
    (Part::Empty, false)
}

pub fn make_test_shape(name: ShapeName, dims: Dims) -> Result<TestShape> {
    if dims.nx < 8 || dims.ny < 8 || dims.nz < 8 {
        return Err(Error::invalid("dims", "test shapes need at least 8 cells per axis"));
    }
    let geometry = GridGeometry::uniform(dims, Aabb::unit_centered())?;
    let n = geometry.num_cells();
    let mut occ = Vec::with_capacity(n);
    let mut color = Vec::with_capacity(3 * n);
    let k = defaults::SEMANTIC_CLASSES;
    let mut sem = Vec::with_capacity(k * n);
    let mut cavity = Vec::new();
    for i in 0..n {
        let c = geometry.cell_center(i)?;
        let part = match name {
            ShapeName::Sphere => {
                if c.coords.norm() <= SPHERE_RADIUS {
                    if c.y >= 0.0 {
                        Part::A
                    } else {
                        Part::B
                    }
                } else {
                    Part::Empty
                }
            }
            ShapeName::Cuboid => {
                if c.x.abs() <= 0.3 && c.y.abs() <= 0.2 && c.z.abs() <= 0.25 {
                    if c.x >= 0.0 {
                        Part::A
                    } else {
                        Part::B
                    }
                } else {
                    Part::Empty
                }
            }
            ShapeName::ChairLike => {
                let (part, in_cavity) = chair_part(&c);
                if in_cavity {
                    cavity.push(i);
                }
                part
            }
        };
        occ.push(part != Part::Empty);
        color.extend_from_slice(match part {
            Part::Empty => &[1.0; 3],
            Part::A => &TONE_A,
            Part::B => &TONE_B,
        });
        let label = match part {
            Part::A => 0,
            Part::B => 1,
            Part::Empty => k - 1,
        };
        sem.extend((0..k).map(|j| if j == label { 1.0 } else { 0.0 }));
    }
    Ok(TestShape {
        grid: BinaryGrid::new(geometry, occ)?,
        color: AuxGrid::new(geometry, AuxKind::Color, color)?,
        semantics: AuxGrid::new(geometry, AuxKind::Semantics { classes: k }, sem)?,
        cavity,
    })
}

/// Image size and field of view for ring cameras.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageSpec {
    pub width: usize,
    pub height: usize,
    /// Half of the horizontal field of view, degrees.
    pub half_fov_deg: f64,
}

impl Default for ImageSpec {
    fn default() -> Self {
        ImageSpec {
            width: defaults::IMAGE_SIZE,
            height: defaults::IMAGE_SIZE,
            half_fov_deg: defaults::HALF_FOV_DEG,
        }
    }
}

impl ImageSpec {
    pub fn intrinsics(&self) -> Intrinsics {
        let focal = 0.5 * self.width as f64 / self.half_fov_deg.to_radians().tan();
        Intrinsics {
            scale: [focal, focal],
            principal: [0.5 * self.width as f64, 0.5 * self.height as f64],
        }
    }
}

/// Perspective cameras on a sphere around `center`, looking at it with
/// world +y up. Azimuth 0 / elevation 0 puts the camera on the +z axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewRing {
    pub views: usize,
    pub elevation_deg: (f64, f64),
    pub radius: f64,
    pub center: [f64; 3],
    pub image: ImageSpec,
    /// Overrides the random azimuth for every view.
    pub fixed_azimuth_deg: Option<f64>,
}

impl Default for ViewRing {
    fn default() -> Self {
        ViewRing {
            views: defaults::NUM_VIEWS,
            elevation_deg: defaults::ELEVATION_DEG,
            radius: defaults::VIEW_RADIUS,
            center: [0.0; 3],
            image: ImageSpec::default(),
            fixed_azimuth_deg: None,
        }
    }
}

pub fn ring_camera(ring: &ViewRing, azimuth_deg: f64, elevation_deg: f64) -> Result<Camera> {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    let c = Point3::from(ring.center);
    let eye = c + ring.radius * Vector3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos());
    Camera::look_at(
        eye,
        c,
        Vector3::y(),
        ring.image.intrinsics(),
        ring.image.width,
        ring.image.height,
    )
}

pub fn sample_view_ring(ring: &ViewRing, seed: u64) -> Result<Vec<Camera>> {
    if ring.views == 0 {
        return Err(Error::invalid("views", "must be at least 1"));
    }
    let (lo, hi) = ring.elevation_deg;
    if !(lo <= hi && lo > -90.0 && hi < 90.0) {
        return Err(Error::invalid("elevation", format!("bad range [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..ring.views)
        .map(|_| {
            let az: f64 = rng.gen_range(0.0..360.0);
            let el: f64 = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
            ring_camera(ring, ring.fixed_azimuth_deg.unwrap_or(az), el)
        })
        .collect()
}
