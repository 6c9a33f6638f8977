//! Exact ordered ray–grid intersection.
//!
//! Uniform grids are walked with incremental axis stepping (Amanatides & Woo).
//! Frustum grids intersect the ray with every boundary plane (two families
//! through the apex, one family of constant depth), sort the crossings and
//! assign each interval to the cell containing its midpoint.
//!
//! A cell's event depth is the midpoint of its entry and exit parameters.

use crate::camera::Ray;
use crate::error::{Error, Result};
use crate::grid::{BinaryGrid, GeometryKind, GridGeometry};

/// Offset applied past a crossing before deciding which cell a point is in.
const CROSSING_NUDGE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceCell {
    pub index: usize,
    pub t_enter: f64,
    pub t_exit: f64,
}

impl TraceCell {
    /// Distance the ray travels before terminating in this cell.
    pub fn depth(&self) -> f64 {
        0.5 * (self.t_enter + self.t_exit)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayTrace {
    geometry: GridGeometry,
    cells: Vec<TraceCell>,
}

impl RayTrace {
    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn cells(&self) -> &[TraceCell] {
        &self.cells
    }

    /// Number of traversed cells (`N_r`).
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells.iter().map(|c| c.index)
    }

    pub fn depths(&self) -> Vec<f64> {
        self.cells.iter().map(TraceCell::depth).collect()
    }

    /// Sum of per-cell path lengths.
    pub fn chord_length(&self) -> f64 {
        self.cells.iter().map(|c| c.t_exit - c.t_enter).sum()
    }
}

/// Parametric interval `[t_in, t_out]` (with `t_in >= 0`) where the ray is
/// inside the grid hull, or `None` on a miss.
pub fn hull_interval(geometry: &GridGeometry, ray: &Ray) -> Option<(f64, f64)> {
    let mut t_in = 0.0f64;
    let mut t_out = f64::INFINITY;
    for plane in geometry.hull_planes() {
        let denom = plane.normal.dot(&ray.direction);
        let dist = plane.offset - plane.normal.dot(&ray.origin.coords);
        if denom.abs() < 1e-300 {
            if dist < 0.0 {
                return None;
            }
            continue;
        }
        let t = dist / denom;
        if denom > 0.0 {
            t_out = t_out.min(t);
        } else {
            t_in = t_in.max(t);
        }
    }
    (t_in < t_out).then_some((t_in, t_out))
}

pub fn trace(geometry: &GridGeometry, ray: &Ray) -> RayTrace {
    let cells = match hull_interval(geometry, ray) {
        None => Vec::new(),
        Some((t_in, t_out)) => match geometry.kind() {
            GeometryKind::Uniform(_) => trace_uniform(geometry, ray, t_in, t_out),
            GeometryKind::Frustum(_) => trace_frustum(geometry, ray, t_in, t_out),
        },
    };
    RayTrace {
        geometry: *geometry,
        cells,
    }
}

fn clamped_cell(geometry: &GridGeometry, g: [f64; 3]) -> [usize; 3] {
    let n = geometry.dims().as_array();
    let mut c = [0usize; 3];
    for a in 0..3 {
        let v = g[a].floor();
        c[a] = if v <= 0.0 {
            0
        } else {
            (v as usize).min(n[a] - 1)
        };
    }
    c
}

fn trace_uniform(geometry: &GridGeometry, ray: &Ray, t_in: f64, t_out: f64) -> Vec<TraceCell> {
    let n = geometry.dims().as_array();
    let o = ray.origin.coords;
    let d = ray.direction;
    let start = ray.at(t_in + CROSSING_NUDGE);
    let g = geometry
        .world_to_grid(&start)
        .expect("uniform grids map every point");
    let mut c = clamped_cell(geometry, g);

    let next_crossing = |axis: usize, cell: usize| -> f64 {
        if d[axis] > 0.0 {
            (geometry.boundary(axis, cell + 1) - o[axis]) / d[axis]
        } else if d[axis] < 0.0 {
            (geometry.boundary(axis, cell) - o[axis]) / d[axis]
        } else {
            f64::INFINITY
        }
    };
    let mut next_t = [
        next_crossing(0, c[0]),
        next_crossing(1, c[1]),
        next_crossing(2, c[2]),
    ];

    let cap = n[0] + n[1] + n[2] + 3;
    let mut cells = Vec::with_capacity(cap);
    let mut t = t_in;
    let mut steps = 0;
    loop {
        steps += 1;
        assert!(steps <= cap, "uniform trace exceeded {cap} steps");
        let axis = (0..3)
            .min_by(|&a, &b| next_t[a].total_cmp(&next_t[b]))
            .unwrap();
        let t_next = next_t[axis].min(t_out).max(t);
        if t_next > t {
            cells.push(TraceCell {
                index: geometry.index(c[0], c[1], c[2]),
                t_enter: t,
                t_exit: t_next,
            });
        }
        if next_t[axis] >= t_out {
            break;
        }
        t = t_next;
        if d[axis] > 0.0 {
            c[axis] += 1;
            if c[axis] >= n[axis] {
                break;
            }
        } else {
            if c[axis] == 0 {
                break;
            }
            c[axis] -= 1;
        }
        next_t[axis] = next_crossing(axis, c[axis]);
    }
    if let Some(last) = cells.last_mut() {
        // The hull exit is authoritative for the final cell.
        last.t_exit = t_out;
    }
    cells
}

fn trace_frustum(geometry: &GridGeometry, ray: &Ray, t_in: f64, t_out: f64) -> Vec<TraceCell> {
    let n = geometry.dims().as_array();
    let mut ts = Vec::with_capacity(n[0] + n[1] + n[2] + 5);
    ts.push(t_in);
    for (axis, &count) in n.iter().enumerate() {
        for k in 0..=count {
            let plane = geometry.boundary_plane(axis, k);
            let denom = plane.normal.dot(&ray.direction);
            if denom == 0.0 {
                continue;
            }
            let t = (plane.offset - plane.normal.dot(&ray.origin.coords)) / denom;
            if t > t_in && t < t_out {
                ts.push(t);
            }
        }
    }
    ts.push(t_out);
    ts.sort_by(f64::total_cmp);
    let cap = ts.len();

    let mut cells: Vec<TraceCell> = Vec::with_capacity(cap);
    for w in ts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let mid = ray.at(0.5 * (a + b));
        let Some(g) = geometry.world_to_grid(&mid) else {
            continue;
        };
        let c = clamped_cell(geometry, g);
        let index = geometry.index(c[0], c[1], c[2]);
        match cells.last_mut() {
            Some(last) if last.index == index => last.t_exit = b,
            _ => cells.push(TraceCell {
                index,
                t_enter: a,
                t_exit: b,
            }),
        }
    }
    assert!(cells.len() <= cap);
    cells
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Hit {
    Cell { index: usize, depth: f64 },
    Escape,
}

/// First occupied cell along `trace`.
pub fn first_hit(grid: &BinaryGrid, trace: &RayTrace) -> Result<Hit> {
    if grid.geometry() != trace.geometry() {
        return Err(Error::GeometryMismatch);
    }
    Ok(trace
        .cells()
        .iter()
        .find(|c| grid.is_occupied(c.index))
        .map_or(Hit::Escape, |c| Hit::Cell {
            index: c.index,
            depth: c.depth(),
        }))
}
