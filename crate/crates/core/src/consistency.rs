//! Ray consistency: termination-event probabilities, event costs, the expected
//! cost per ray and its analytic gradients.
//!
//! Along a ray through cells `1..=N` with emptiness probabilities `x_1..x_N`,
//! the ray terminates in cell `i` with probability `(1 - x_i) * prod_{j<i} x_j`
//! and escapes with probability `prod_j x_j`. Each event `i` carries a cost
//! `psi(i)` (index `N` in the cost vector is the escape event). The ray loss is
//! the expected cost, evaluated in the telescoped form
//! `psi(1) + sum_i (psi(i+1) - psi(i)) prod_{j<=i} x_j`.

use rayon::prelude::*;

use crate::camera::Ray;
use crate::error::{Error, Result};
use crate::grid::{check_simplex, AuxGrid, AuxKind, OccupancyGrid};
use crate::traversal::{trace, RayTrace};

/// Escape-event conventions and numeric guards for the event costs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostParams {
    /// Depth induced by the escape event for depth supervision (meters).
    pub depth_escape: f64,
    /// Depth whose inverse is the escape disparity for depth+semantics.
    pub disparity_escape_depth: f64,
    /// Lower clamp on class probabilities inside the log.
    pub prob_floor: f64,
    /// Multiplier on the class negative log-likelihood relative to disparity.
    pub nll_weight: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            depth_escape: crate::defaults::DEPTH_ESCAPE,
            disparity_escape_depth: crate::defaults::DISPARITY_ESCAPE_DEPTH,
            prob_floor: crate::defaults::PROB_FLOOR,
            nll_weight: 1.0,
        }
    }
}

/// Derivative of each non-escape event cost with respect to that event's
/// auxiliary payload.
#[derive(Clone, Debug, PartialEq)]
pub enum AuxDerivative {
    Color(Vec<[f64; 3]>),
    /// Only component `class` of the distribution enters the cost.
    Class { class: usize, values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventCosts {
    /// `N + 1` costs; the last one is the escape event.
    pub psi: Vec<f64>,
    pub dpsi_dp: Option<AuxDerivative>,
}

impl EventCosts {
    fn plain(psi: Vec<f64>) -> Self {
        EventCosts { psi, dpsi_dp: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObservationKind {
    Mask,
    Depth,
    DepthSemantics,
    Color,
}

impl ObservationKind {
    pub fn name(&self) -> &'static str {
        match self {
            ObservationKind::Mask => "mask",
            ObservationKind::Depth => "depth",
            ObservationKind::DepthSemantics => "depth_semantics",
            ObservationKind::Color => "color",
        }
    }

    pub fn needs_aux(&self) -> bool {
        matches!(self, ObservationKind::DepthSemantics | ObservationKind::Color)
    }
}

impl std::str::FromStr for ObservationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mask" => ObservationKind::Mask,
            "depth" => ObservationKind::Depth,
            "depth_semantics" | "semantics" => ObservationKind::DepthSemantics,
            "color" => ObservationKind::Color,
            other => return Err(Error::Format(format!("unknown observation kind `{other}`"))),
        })
    }
}

impl std::fmt::Display for ObservationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// What one pixel says about its ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RayTarget {
    /// `s = 0`: the ray hits the object; `s = 1`: background.
    Mask { s: u8 },
    Depth { d: f64 },
    DepthSemantics { d: f64, class: usize },
    Color { rgb: [f64; 3] },
}

impl RayTarget {
    pub fn kind(&self) -> ObservationKind {
        match self {
            RayTarget::Mask { .. } => ObservationKind::Mask,
            RayTarget::Depth { .. } => ObservationKind::Depth,
            RayTarget::DepthSemantics { .. } => ObservationKind::DepthSemantics,
            RayTarget::Color { .. } => ObservationKind::Color,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayObservation {
    pub target: RayTarget,
    pub weight: f64,
}

/// A ray together with its observation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaySample {
    pub ray: Ray,
    pub obs: RayObservation,
}

fn check_probabilities(x: &[f64]) -> Result<()> {
    if let Some((i, v)) = x.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("x[{i}] = {v} is outside [0, 1]")));
    }
    Ok(())
}

fn check_lengths(x: &[f64], psi: &[f64]) -> Result<()> {
    if psi.len() != x.len() + 1 {
        return Err(Error::LengthMismatch {
            expected: x.len() + 1,
            actual: psi.len(),
        });
    }
    Ok(())
}

/// Termination distribution over the `N` traversed cells plus escape.
pub fn event_probabilities(x: &[f64]) -> Result<Vec<f64>> {
    check_probabilities(x)?;
    let mut out = Vec::with_capacity(x.len() + 1);
    let mut reach = 1.0;
    for &xi in x {
        out.push((1.0 - xi) * reach);
        reach *= xi;
    }
    out.push(reach);
    Ok(out)
}

pub fn cost_depth(depths: &[f64], d_r: f64, escape_depth: f64) -> EventCosts {
    let mut psi: Vec<f64> = depths.iter().map(|d| (d - d_r).abs()).collect();
    psi.push((escape_depth - d_r).abs());
    EventCosts::plain(psi)
}

pub fn cost_mask(n: usize, s_r: u8) -> EventCosts {
    debug_assert!(s_r <= 1);
    let s = f64::from(s_r);
    let mut psi = vec![s; n + 1];
    psi[n] = 1.0 - s;
    EventCosts::plain(psi)
}

/// Disparity discrepancy plus class negative log-likelihood. The escape
/// event uses disparity `1 / disparity_escape_depth` and a uniform class
/// distribution.
pub fn cost_semantic(
    depths: &[f64],
    p_r: &[&[f64]],
    d_r: f64,
    class: usize,
    classes: usize,
    params: &CostParams,
) -> Result<EventCosts> {
    if p_r.len() != depths.len() {
        return Err(Error::LengthMismatch {
            expected: depths.len(),
            actual: p_r.len(),
        });
    }
    let k = classes;
    if class >= k {
        return Err(Error::Domain(format!("class {class} out of range for {k} classes")));
    }
    for (i, p) in p_r.iter().enumerate() {
        if p.len() != k {
            return Err(Error::LengthMismatch {
                expected: k,
                actual: p.len(),
            });
        }
        check_simplex(p).map_err(|e| Error::Domain(format!("event {i}: {e}")))?;
    }
    let disp = 1.0 / d_r;
    let lambda = params.nll_weight;
    let mut psi = Vec::with_capacity(depths.len() + 1);
    let mut dpsi = Vec::with_capacity(depths.len());
    for (d, p) in depths.iter().zip(p_r) {
        let pc = p[class];
        let clamped = pc.max(params.prob_floor);
        psi.push((1.0 / d - disp).abs() - lambda * clamped.ln());
        dpsi.push(if pc > params.prob_floor { -lambda / pc } else { 0.0 });
    }
    psi.push((1.0 / params.disparity_escape_depth - disp).abs() + lambda * (k as f64).ln());
    Ok(EventCosts {
        psi,
        dpsi_dp: Some(AuxDerivative::Class {
            class,
            values: dpsi,
        }),
    })
}

/// Half squared RGB error; escaping rays see white.
pub fn cost_color(p_r: &[[f64; 3]], c_r: [f64; 3]) -> EventCosts {
    let half_sq = |p: &[f64; 3]| 0.5 * (0..3).map(|a| (p[a] - c_r[a]).powi(2)).sum::<f64>();
    let mut psi: Vec<f64> = p_r.iter().map(half_sq).collect();
    psi.push(half_sq(&[1.0; 3]));
    let dpsi = p_r
        .iter()
        .map(|p| [p[0] - c_r[0], p[1] - c_r[1], p[2] - c_r[2]])
        .collect();
    EventCosts {
        psi,
        dpsi_dp: Some(AuxDerivative::Color(dpsi)),
    }
}

/// Expected event cost, telescoped form.
pub fn ray_loss(x: &[f64], psi: &[f64]) -> Result<f64> {
    check_lengths(x, psi)?;
    let mut loss = psi[0];
    let mut prefix = 1.0;
    for i in 0..x.len() {
        prefix *= x[i];
        loss += (psi[i + 1] - psi[i]) * prefix;
    }
    Ok(loss)
}

/// Expected event cost as the plain sum `sum_i psi(i) p(z = i)`.
pub fn ray_loss_direct(x: &[f64], psi: &[f64]) -> Result<f64> {
    check_lengths(x, psi)?;
    let probs = event_probabilities(x)?;
    Ok(probs.iter().zip(psi).map(|(p, c)| p * c).sum())
}

/// `dL/dx_k = P_{k-1} * S_k` where `P` is the prefix product of `x` and
/// `S_k = delta_k + x_{k+1} S_{k+1}` with `delta_i = psi(i+1) - psi(i)`.
/// Linear time, no division.
pub fn ray_loss_grad_x(x: &[f64], psi: &[f64]) -> Result<Vec<f64>> {
    check_lengths(x, psi)?;
    let n = x.len();
    let mut grad = vec![0.0; n];
    let mut suffix = 0.0;
    for k in (0..n).rev() {
        let delta = psi[k + 1] - psi[k];
        suffix = delta + if k + 1 < n { x[k + 1] * suffix } else { 0.0 };
        grad[k] = suffix;
    }
    let mut prefix = 1.0;
    for k in 0..n {
        grad[k] *= prefix;
        prefix *= x[k];
    }
    Ok(grad)
}

/// Quadratic-time reference for [`ray_loss_grad_x`].
pub fn ray_loss_grad_x_naive(x: &[f64], psi: &[f64]) -> Result<Vec<f64>> {
    check_lengths(x, psi)?;
    let n = x.len();
    Ok((0..n)
        .map(|k| {
            (k..n)
                .map(|i| {
                    let prod: f64 = (0..=i).filter(|&j| j != k).map(|j| x[j]).product();
                    (psi[i + 1] - psi[i]) * prod
                })
                .sum()
        })
        .collect())
}

/// Gradient with respect to each traversed cell's auxiliary payload.
#[derive(Clone, Debug, PartialEq)]
pub enum AuxGradient {
    Color(Vec<[f64; 3]>),
    Class { class: usize, values: Vec<f64> },
}

pub fn ray_loss_grad_p(x: &[f64], costs: &EventCosts) -> Result<AuxGradient> {
    check_lengths(x, &costs.psi)?;
    let probs = event_probabilities(x)?;
    let missing = || Error::KindMismatch("event costs carry no auxiliary derivative".into());
    match costs.dpsi_dp.as_ref().ok_or_else(missing)? {
        AuxDerivative::Color(d) => {
            check_aux_len(d.len(), x.len())?;
            Ok(AuxGradient::Color(
                d.iter()
                    .zip(&probs)
                    .map(|(g, p)| [p * g[0], p * g[1], p * g[2]])
                    .collect(),
            ))
        }
        AuxDerivative::Class { class, values } => {
            check_aux_len(values.len(), x.len())?;
            Ok(AuxGradient::Class {
                class: *class,
                values: values.iter().zip(&probs).map(|(g, p)| p * g).collect(),
            })
        }
    }
}

fn check_aux_len(actual: usize, expected: usize) -> Result<()> {
    if actual != expected {
        return Err(Error::LengthMismatch { expected, actual });
    }
    Ok(())
}

/// `|prod x - s_r|`, equal to the expected mask cost.
pub fn mask_loss_closed_form(x: &[f64], s_r: u8) -> f64 {
    (x.iter().product::<f64>() - f64::from(s_r)).abs()
}

/// Event costs for one traced ray.
pub fn event_costs(
    trace: &RayTrace,
    target: &RayTarget,
    aux: Option<&AuxGrid>,
    params: &CostParams,
) -> Result<EventCosts> {
    match *target {
        RayTarget::Mask { s } => Ok(cost_mask(trace.len(), s)),
        RayTarget::Depth { d } => Ok(cost_depth(&trace.depths(), d, params.depth_escape)),
        RayTarget::DepthSemantics { d, class } => {
            let aux = match aux {
                Some(a) if matches!(a.kind(), AuxKind::Semantics { .. }) => a,
                _ => {
                    return Err(Error::KindMismatch(
                        "depth_semantics rays need a semantic aux grid".into(),
                    ))
                }
            };
            let p: Vec<&[f64]> = trace.indices().map(|i| aux.cell(i)).collect();
            cost_semantic(&trace.depths(), &p, d, class, aux.channels(), params)
        }
        RayTarget::Color { rgb } => {
            let aux = match aux {
                Some(a) if a.kind() == AuxKind::Color => a,
                _ => return Err(Error::KindMismatch("color rays need a color aux grid".into())),
            };
            let p: Vec<[f64; 3]> = trace
                .indices()
                .map(|i| {
                    let c = aux.cell(i);
                    [c[0], c[1], c[2]]
                })
                .collect();
            Ok(cost_color(&p, rgb))
        }
    }
}

/// How [`view_loss`] reduces over rays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ExecMode {
    /// Fixed ray order, sequential accumulation; bitwise reproducible.
    #[default]
    Deterministic,
    Parallel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewLoss {
    /// Weighted sum of ray losses.
    pub loss: f64,
    pub grad_x: Vec<f64>,
    pub grad_aux: Option<Vec<f64>>,
    pub rays: usize,
}

impl ViewLoss {
    fn zeros(cells: usize, aux_len: Option<usize>) -> Self {
        ViewLoss {
            loss: 0.0,
            grad_x: vec![0.0; cells],
            grad_aux: aux_len.map(|n| vec![0.0; n]),
            rays: 0,
        }
    }

    fn merge(mut self, other: ViewLoss) -> Self {
        self.loss += other.loss;
        self.rays += other.rays;
        for (a, b) in self.grad_x.iter_mut().zip(&other.grad_x) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (self.grad_aux.as_mut(), other.grad_aux.as_ref()) {
            for (a, b) in a.iter_mut().zip(b) {
                *a += b;
            }
        }
        self
    }

    pub fn mean_ray_loss(&self) -> f64 {
        if self.rays == 0 {
            0.0
        } else {
            self.loss / self.rays as f64
        }
    }
}

fn accumulate_ray(
    acc: &mut ViewLoss,
    occ: &OccupancyGrid,
    aux: Option<&AuxGrid>,
    sample: &RaySample,
    params: &CostParams,
) -> Result<()> {
    let tr = trace(occ.geometry(), &sample.ray);
    let xs: Vec<f64> = tr.indices().map(|i| occ.values()[i]).collect();
    let costs = event_costs(&tr, &sample.obs.target, aux, params)?;
    let w = sample.obs.weight;
    acc.loss += w * ray_loss(&xs, &costs.psi)?;
    acc.rays += 1;
    for (cell, g) in tr.cells().iter().zip(ray_loss_grad_x(&xs, &costs.psi)?) {
        acc.grad_x[cell.index] += w * g;
    }
    if let (Some(buf), Some(_)) = (acc.grad_aux.as_mut(), costs.dpsi_dp.as_ref()) {
        let ch = aux.map_or(0, AuxGrid::channels);
        match ray_loss_grad_p(&xs, &costs)? {
            AuxGradient::Color(g) => {
                for (cell, g) in tr.cells().iter().zip(g) {
                    for a in 0..3 {
                        buf[cell.index * ch + a] += w * g[a];
                    }
                }
            }
            AuxGradient::Class { class, values } => {
                for (cell, g) in tr.cells().iter().zip(values) {
                    buf[cell.index * ch + class] += w * g;
                }
            }
        }
    }
    Ok(())
}

/// Weighted sum of ray losses over `samples`, with gradients scattered into
/// grid-shaped buffers (`grad_aux` is cell-major like [`AuxGrid`]).
pub fn view_loss(
    occ: &OccupancyGrid,
    aux: Option<&AuxGrid>,
    samples: &[RaySample],
    params: &CostParams,
    mode: ExecMode,
) -> Result<ViewLoss> {
    if samples.is_empty() {
        return Err(Error::invalid("ray set", "must not be empty"));
    }
    if let Some(a) = aux {
        if a.geometry() != occ.geometry() {
            return Err(Error::GeometryMismatch);
        }
    }
    let cells = occ.geometry().num_cells();
    let aux_len = aux.map(|a| a.values().len());
    match mode {
        ExecMode::Deterministic => {
            let mut acc = ViewLoss::zeros(cells, aux_len);
            for s in samples {
                accumulate_ray(&mut acc, occ, aux, s, params)?;
            }
            Ok(acc)
        }
        ExecMode::Parallel => samples
            .par_chunks(256)
            .try_fold(
                || ViewLoss::zeros(cells, aux_len),
                |mut acc, chunk| {
                    for s in chunk {
                        accumulate_ray(&mut acc, occ, aux, s, params)?;
                    }
                    Ok(acc)
                },
            )
            .try_reduce(|| ViewLoss::zeros(cells, aux_len), |a, b| Ok(a.merge(b))),
    }
}
