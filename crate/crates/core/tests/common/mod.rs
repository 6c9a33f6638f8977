//! Test helpers shared by the integration targets: a dense-sampling traversal
//! oracle and random ray generators.
#![allow(dead_code)]

use drc::{Aabb, Dims, GridGeometry, Ray};
use nalgebra::{Point3, Vector3};
use rand::Rng;

/// Cell sequence and hull chord found by sampling the ray densely.
#[derive(Debug)]
pub struct OracleTrace {
    pub cells: Vec<usize>,
    pub t_in: f64,
    pub t_out: f64,
}

fn inside(g: &GridGeometry, ray: &Ray, t: f64) -> bool {
    g.locate(&ray.at(t)).is_some()
}

/// Boundary of the inside interval between `t_a` (inside iff `a_inside`) and `t_b`.
fn bisect_hull(g: &GridGeometry, ray: &Ray, mut t_a: f64, mut t_b: f64, a_inside: bool) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (t_a + t_b);
        if m == t_a || m == t_b {
            break;
        }
        if inside(g, ray, m) == a_inside {
            t_a = m;
        } else {
            t_b = m;
        }
    }
    0.5 * (t_a + t_b)
}

/// Pushes every cell met strictly after `(t_a, c_a)` up to and including `c_b`.
fn refine(g: &GridGeometry, ray: &Ray, t_a: f64, c_a: usize, t_b: f64, c_b: usize, out: &mut Vec<usize>) {
    if c_a == c_b {
        return;
    }
    let m = 0.5 * (t_a + t_b);
    if m <= t_a || m >= t_b || t_b - t_a < 1e-14 {
        out.push(c_b);
        return;
    }
    let c_m = g.locate(&ray.at(m)).expect("hull is convex");
    refine(g, ray, t_a, c_a, m, c_m, out);
    refine(g, ray, m, c_m, t_b, c_b, out);
}

/// Oracle trace of a ray known to pass through the hull at `t_known`.
///
/// The hull (convex for both geometry kinds) is located by bisecting outward
/// from `t_known`. Inside it the ray is sampled every `1e-4 × min cell
/// extent`; whenever two consecutive samples disagree the gap is bisected
/// so cells thinner than the sampling step are not lost.
pub fn oracle_trace(g: &GridGeometry, ray: &Ray, t_known: f64, t_far: f64) -> OracleTrace {
    assert!(inside(g, ray, t_known));
    assert!(!inside(g, ray, t_far));
    let t_in = if inside(g, ray, 0.0) {
        0.0
    } else {
        bisect_hull(g, ray, t_known, 0.0, true)
    };
    let t_out = bisect_hull(g, ray, t_known, t_far, true);

    let step = 1e-4 * g.min_cell_extent();
    let n = ((t_out - t_in) / step).ceil().max(1.0) as usize;
    let h = (t_out - t_in) / n as f64;
    let mut cells = Vec::new();
    let mut prev: Option<(f64, usize)> = None;
    for k in 0..n {
        let t = t_in + (k as f64 + 0.5) * h;
        let Some(c) = g.locate(&ray.at(t)) else {
            continue;
        };
        match prev {
            None => cells.push(c),
            Some((tp, cp)) => refine(g, ray, tp, cp, t, c, &mut cells),
        }
        prev = Some((t, c));
    }
    // Cells clipped within half a step of either end of the chord.
    let edge = |t_edge: f64, t_sample: f64, c_sample: usize| -> Vec<usize> {
        let mut extra = Vec::new();
        let mut t_a = t_sample;
        let mut c_a = c_sample;
        for i in 1..=60 {
            let t = t_sample + (t_edge - t_sample) * (1.0 - 0.5f64.powi(i));
            if let Some(c) = g.locate(&ray.at(t)) {
                if c != c_a {
                    let mut seg = Vec::new();
                    refine(g, ray, t_a, c_a, t, c, &mut seg);
                    extra.extend(seg);
                }
                t_a = t;
                c_a = c;
            }
        }
        extra
    };
    if let (Some(&first), Some((t_last, c_last))) = (cells.first(), prev) {
        let t_first = t_in + 0.5 * h;
        let mut head = edge(t_in, t_first, first);
        head.reverse();
        let tail = edge(t_out, t_last, c_last);
        let mut all = head;
        all.extend(cells);
        all.extend(tail);
        cells = all;
    }
    OracleTrace { cells, t_in, t_out }
}

pub fn random_uniform_geometry(rng: &mut impl Rng) -> GridGeometry {
    let dims = Dims::new(rng.gen_range(1..=8), rng.gen_range(1..=8), rng.gen_range(1..=8));
    let min: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..0.0));
    let max: [f64; 3] = std::array::from_fn(|a| min[a] + rng.gen_range(0.3..2.0));
    GridGeometry::uniform(dims, Aabb::new(min, max)).unwrap()
}

pub fn test_frustum() -> GridGeometry {
    GridGeometry::frustum_from_fov(Dims::new(6, 5, 4), 1.0, 4.0, 60.0).unwrap()
}

/// A random world point inside the grid, with continuous grid coordinates
/// kept away from the hull by `margin` cells.
pub fn random_inside(g: &GridGeometry, rng: &mut impl Rng, margin: f64) -> Point3<f64> {
    let n = g.dims().as_array();
    let c: [f64; 3] = std::array::from_fn(|a| rng.gen_range(margin..n[a] as f64 - margin));
    g.grid_to_world(c)
}

/// A ray through a random interior point, with its parameter there and a
/// parameter known to lie beyond the hull.
///
/// Origins are outside the grid, inside it, or (frustum) at the apex;
/// some directions are snapped onto a coordinate axis.
pub fn random_ray(g: &GridGeometry, rng: &mut impl Rng) -> (Ray, f64, f64) {
    let target = random_inside(g, rng, 1e-3);
    let frustum = matches!(g.kind(), drc::grid::GeometryKind::Frustum(_));
    let roll: f64 = rng.gen();
    let origin = if roll < 0.25 {
        random_inside(g, rng, 1e-3)
    } else if frustum && roll < 0.4 {
        Point3::origin()
    } else {
        let dir = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        target + dir.normalize() * rng.gen_range(3.0..8.0)
    };
    let mut d = target - origin;
    if rng.gen::<f64>() < 0.1 {
        let a = rng.gen_range(0..3);
        let s = if d[a] >= 0.0 { 1.0 } else { -1.0 };
        d = Vector3::zeros();
        d[a] = s;
        let origin = target - d * rng.gen_range(0.0..6.0);
        let ray = Ray::new(origin, d);
        let t_known = (target - origin).norm();
        return (ray, t_known, t_known + 40.0);
    }
    if d.norm() < 1e-9 {
        d = Vector3::new(0.3, -0.2, 1.0);
    }
    let ray = Ray::new(origin, d);
    let t_known = (target - origin).norm();
    (ray, t_known, t_known + 40.0)
}
