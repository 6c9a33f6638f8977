//! Per-instance reconstruction by gradient descent on the ray consistency
//! loss.
//!
//! Occupancies are held as logits and squashed through the sigmoid, so every
//! emptiness probability stays strictly inside (0, 1). Color payloads use a
//! per-channel sigmoid and class payloads a per-cell softmax. Updates use Adam.

use std::time::{Duration, Instant};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::consistency::{view_loss, CostParams, ExecMode, ObservationKind, RayObservation, RaySample};
use crate::defaults;
use crate::error::{Error, Result};
use crate::grid::{AuxGrid, AuxKind, GridGeometry, OccupancyGrid};
use crate::renderer::{Observation, ObservationData};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RaySampling {
    /// `rays_per_iter` pixels drawn uniformly with replacement, split across views.
    Random,
    /// Every pixel of every selected view.
    FullImage,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            step_size: defaults::STEP_SIZE,
            beta1: defaults::BETA1,
            beta2: defaults::BETA2,
            eps: defaults::ADAM_EPS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    pub iterations: usize,
    pub rays_per_iter: usize,
    /// `None`: all views when there are at most [`defaults::MAX_ALL_VIEWS`],
    /// otherwise [`defaults::VIEWS_PER_ITER`] random views per iteration.
    pub views_per_iter: Option<usize>,
    pub foreground_weight: f64,
    /// Starting occupancy logit for every cell (emptiness `sigmoid(v)`).
    /// `None`: [`defaults::start_logit`] for the observation kind.
    pub start_logit: Option<f64>,
    pub seed: u64,
    pub sampling: RaySampling,
    pub adam: AdamConfig,
    pub cost: CostParams,
    pub mode: ExecMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iterations: defaults::ITERATIONS,
            rays_per_iter: defaults::RAYS_PER_ITER,
            views_per_iter: None,
            foreground_weight: defaults::FOREGROUND_WEIGHT,
            start_logit: None,
            seed: 0,
            sampling: RaySampling::Random,
            adam: AdamConfig::default(),
            cost: CostParams::default(),
            mode: ExecMode::Deterministic,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if self.rays_per_iter == 0 {
            return Err(Error::invalid("rays_per_iter", "must be at least 1"));
        }
        if self.views_per_iter == Some(0) {
            return Err(Error::invalid("views_per_iter", "must be at least 1"));
        }
        if !(self.adam.step_size > 0.0) {
            return Err(Error::invalid("step_size", "must be positive"));
        }
        if self.start_logit.is_some_and(|v| !v.is_finite()) {
            return Err(Error::invalid("start_logit", "must be finite"));
        }
        if !(self.foreground_weight > 0.0) {
            return Err(Error::invalid("foreground_weight", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    /// Weighted loss of the rays sampled at each iteration.
    pub losses: Vec<f64>,
    pub mean_ray_losses: Vec<f64>,
    pub wall_time: Duration,
}

impl FitReport {
    /// Tab-separated loss log with a header line.
    pub fn to_tsv(&self, kind: ObservationKind) -> String {
        let mut s = format!("iteration\tloss\tmean_ray_loss\t{kind}_loss\n");
        for (i, (l, m)) in self.losses.iter().zip(&self.mean_ray_losses).enumerate() {
            s.push_str(&format!("{i}\t{l:.17e}\t{m:.17e}\t{l:.17e}\n"));
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub occupancy: OccupancyGrid,
    pub aux: Option<AuxGrid>,
    pub report: FitReport,
}

/// Samples `n` pixels of `obs` uniformly with replacement. Foreground pixels
/// get weight `foreground_weight`, the rest weight 1. The draw is a function
/// of `(seed, iteration, view)` only.
pub fn sample_rays(
    obs: &Observation,
    n: usize,
    foreground_weight: f64,
    seed: u64,
    iteration: usize,
    view: usize,
    params: &CostParams,
) -> Vec<RaySample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((iteration as u64) << 24) | view as u64);
    let pixels = obs.camera().num_pixels();
    (0..n)
        .map(|_| pixel_sample(obs, rng.gen_range(0..pixels), foreground_weight, params))
        .collect()
}

/// One sample per pixel, in row-major order.
pub fn all_pixel_samples(obs: &Observation, foreground_weight: f64, params: &CostParams) -> Vec<RaySample> {
    (0..obs.camera().num_pixels())
        .map(|p| pixel_sample(obs, p, foreground_weight, params))
        .collect()
}

fn pixel_sample(obs: &Observation, pixel: usize, fg: f64, params: &CostParams) -> RaySample {
    let width = obs.camera().width();
    let weight = if obs.is_foreground(pixel, params) { fg } else { 1.0 };
    RaySample {
        ray: obs.camera().pixel_center_ray(pixel % width, pixel / width),
        obs: RayObservation {
            target: obs.target(pixel),
            weight,
        },
    }
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Unconstrained parameters of a fit.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits {
    pub geometry: GridGeometry,
    pub occupancy: Vec<f64>,
    pub aux: Option<(AuxKind, Vec<f64>)>,
}

impl Logits {
    pub fn zeros(geometry: GridGeometry, aux: Option<AuxKind>) -> Self {
        let n = geometry.num_cells();
        Logits {
            geometry,
            occupancy: vec![0.0; n],
            aux: aux.map(|k| (k, vec![0.0; n * k.channels()])),
        }
    }

    pub fn occupancy_grid(&self) -> Result<OccupancyGrid> {
        OccupancyGrid::from_values(self.geometry, self.occupancy.iter().map(|&t| sigmoid(t)).collect())
    }

    pub fn aux_grid(&self) -> Result<Option<AuxGrid>> {
        let Some((kind, logits)) = &self.aux else {
            return Ok(None);
        };
        let values = match kind {
            AuxKind::Color => logits.iter().map(|&t| sigmoid(t)).collect(),
            AuxKind::Semantics { classes } => {
                let mut out = vec![0.0; logits.len()];
                for (l, o) in logits.chunks_exact(*classes).zip(out.chunks_exact_mut(*classes)) {
                    softmax_into(l, o);
                }
                out
            }
        };
        AuxGrid::new(self.geometry, *kind, values).map(Some)
    }
}

/// Loss and gradients with respect to the logits.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitGradient {
    pub loss: f64,
    pub rays: usize,
    pub occupancy: Vec<f64>,
    pub aux: Option<Vec<f64>>,
}

/// Evaluates the summed loss over `samples` at `logits` and chain-rules the
/// grid gradients through the squashing maps.
pub fn logit_objective(
    logits: &Logits,
    samples: &[RaySample],
    params: &CostParams,
    mode: ExecMode,
) -> Result<LogitGradient> {
    let occ = logits.occupancy_grid()?;
    let aux = logits.aux_grid()?;
    let v = view_loss(&occ, aux.as_ref(), samples, params, mode)?;
    let occupancy = v
        .grad_x
        .iter()
        .zip(occ.values())
        .map(|(g, x)| g * x * (1.0 - x))
        .collect();
    let aux_grad = match (&aux, v.grad_aux) {
        (Some(a), Some(g)) => Some(match a.kind() {
            AuxKind::Color => g
                .iter()
                .zip(a.values())
                .map(|(g, p)| g * p * (1.0 - p))
                .collect(),
            AuxKind::Semantics { classes } => {
                let mut out = vec![0.0; g.len()];
                for ((gc, pc), oc) in g
                    .chunks_exact(classes)
                    .zip(a.values().chunks_exact(classes))
                    .zip(out.chunks_exact_mut(classes))
                {
                    let dot: f64 = gc.iter().zip(pc).map(|(g, p)| g * p).sum();
                    for j in 0..classes {
                        oc[j] = pc[j] * (gc[j] - dot);
                    }
                }
                out
            }
        }),
        _ => None,
    };
    Ok(LogitGradient {
        loss: v.loss,
        rays: v.rays,
        occupancy,
        aux: aux_grad,
    })
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Adam {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let AdamConfig {
            step_size,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= step_size * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

fn aux_kind_for(kind: ObservationKind, observations: &[Observation]) -> Option<AuxKind> {
    match kind {
        ObservationKind::Color => Some(AuxKind::Color),
        ObservationKind::DepthSemantics => observations.iter().find_map(|o| match o.data() {
            ObservationData::DepthSemantics { classes, .. } => Some(AuxKind::Semantics {
                classes: *classes,
            }),
            _ => None,
        }),
        _ => None,
    }
}

fn selected_views(n: usize, config: &FitConfig, iteration: usize) -> Vec<usize> {
    let k = match config.views_per_iter {
        Some(k) => k.min(n),
        None if n <= defaults::MAX_ALL_VIEWS => n,
        None => defaults::VIEWS_PER_ITER,
    };
    if k == n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(iteration as u64);
    let mut v = sample_indices(&mut rng, n, k).into_vec();
    v.sort_unstable();
    v
}

/// The rays used at one iteration.
pub fn iteration_samples(
    observations: &[Observation],
    config: &FitConfig,
    iteration: usize,
) -> Vec<RaySample> {
    let views = selected_views(observations.len(), config, iteration);
    let per_view = (config.rays_per_iter / views.len()).max(1);
    views
        .iter()
        .flat_map(|&v| match config.sampling {
            RaySampling::Random => sample_rays(
                &observations[v],
                per_view,
                config.foreground_weight,
                config.seed,
                iteration,
                v,
                &config.cost,
            ),
            RaySampling::FullImage => {
                all_pixel_samples(&observations[v], config.foreground_weight, &config.cost)
            }
        })
        .collect()
}

pub fn fit(
    observations: &[Observation],
    geometry: &GridGeometry,
    kind: ObservationKind,
    config: &FitConfig,
) -> Result<FitResult> {
    if observations.is_empty() {
        return Err(Error::invalid("observations", "need at least one"));
    }
    if let Some(o) = observations.iter().find(|o| o.kind() != kind) {
        return Err(Error::KindMismatch(format!(
            "fitting {kind} but got a {} observation",
            o.kind()
        )));
    }
    if let Some(classes) = observations.iter().find_map(|o| match o.data() {
        ObservationData::DepthSemantics { classes, .. } => Some(*classes),
        _ => None,
    }) {
        let consistent = observations.iter().all(|o| {
            matches!(o.data(), ObservationData::DepthSemantics { classes: c, .. } if *c == classes)
        });
        if !consistent {
            return Err(Error::KindMismatch("observations disagree on class count".into()));
        }
    }
    config.validate()?;

    let start = Instant::now();
    let mut logits = Logits::zeros(*geometry, aux_kind_for(kind, observations));
    let start_logit = config.start_logit.unwrap_or_else(|| defaults::start_logit(kind));
    logits.occupancy.fill(start_logit);
    let mut adam_x = Adam::new(config.adam, logits.occupancy.len());
    let mut adam_aux = logits
        .aux
        .as_ref()
        .map(|(_, l)| Adam::new(config.adam, l.len()));
    let mut losses = Vec::with_capacity(config.iterations);
    let mut means = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let samples = iteration_samples(observations, config, it);
        let g = logit_objective(&logits, &samples, &config.cost, config.mode)?;
        losses.push(g.loss);
        means.push(g.loss / g.rays.max(1) as f64);
        adam_x.step(&mut logits.occupancy, &g.occupancy);
        if let (Some(adam), Some((_, l)), Some(ga)) = (adam_aux.as_mut(), logits.aux.as_mut(), g.aux) {
            adam.step(l, &ga);
        }
    }

    Ok(FitResult {
        occupancy: logits.occupancy_grid()?,
        aux: logits.aux_grid()?,
        report: FitReport {
            losses,
            mean_ray_losses: means,
            wall_time: start.elapsed(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Camera, Intrinsics};
    use crate::grid::{Aabb, Dims};
    use crate::renderer::{render, sample_view_ring, ImageSpec, ViewRing};
    use nalgebra::{Point3, Vector3};

    fn cam() -> Camera {
        Camera::look_at(
            Point3::new(0.0, 0.0, 2.5),
            Point3::origin(),
            Vector3::y(),
            Intrinsics {
                scale: [20.0, 20.0],
                principal: [8.0, 8.0],
            },
            16,
            16,
        )
        .unwrap()
    }

    #[test]
    fn background_only_weights() {
        let obs = Observation::new(cam(), ObservationData::Mask(vec![0; 256])).unwrap();
        let s = sample_rays(&obs, 100, 5.0, 1, 0, 0, &CostParams::default());
        assert_eq!(s.len(), 100);
        assert!(s.iter().all(|s| s.obs.weight == 1.0));
    }

    #[test]
    fn foreground_weighting() {
        let mut m = vec![0; 256];
        m[..128].fill(1);
        let obs = Observation::new(cam(), ObservationData::Mask(m)).unwrap();
        let p = CostParams::default();
        let s = sample_rays(&obs, 500, 5.0, 1, 3, 0, &p);
        assert!(s.iter().any(|s| s.obs.weight == 5.0));
        for s in &s {
            let fg = s.obs.target == crate::consistency::RayTarget::Mask { s: 0 };
            assert_eq!(s.obs.weight, if fg { 5.0 } else { 1.0 });
        }
        let s = sample_rays(&obs, 500, 1.0, 1, 3, 0, &p);
        assert!(s.iter().all(|s| s.obs.weight == 1.0));
        assert_eq!(sample_rays(&obs, 50, 5.0, 1, 3, 0, &p), sample_rays(&obs, 50, 5.0, 1, 3, 0, &p));
        assert_ne!(sample_rays(&obs, 50, 5.0, 1, 3, 0, &p), sample_rays(&obs, 50, 5.0, 1, 4, 0, &p));
    }

    #[test]
    fn ray_budget_split_across_views() {
        let obs: Vec<_> = (0..3)
            .map(|_| Observation::new(cam(), ObservationData::Mask(vec![0; 256])).unwrap())
            .collect();
        let s = iteration_samples(&obs, &FitConfig::default(), 0);
        assert_eq!(s.len(), 3000);

        let obs: Vec<_> = (0..8)
            .map(|_| Observation::new(cam(), ObservationData::Mask(vec![0; 256])).unwrap())
            .collect();
        assert_eq!(selected_views(8, &FitConfig::default(), 2).len(), 3);
        assert_eq!(iteration_samples(&obs, &FitConfig::default(), 0).len(), 3000);
    }

    #[test]
    fn zero_iterations_returns_init() {
        let g = GridGeometry::uniform(Dims::cube(4), Aabb::unit_centered()).unwrap();
        let obs = Observation::new(cam(), ObservationData::Mask(vec![0; 256])).unwrap();
        let cfg = FitConfig {
            iterations: 0,
            ..FitConfig::default()
        };
        let r = fit(&[obs], &g, ObservationKind::Mask, &cfg).unwrap();
        assert!(r.occupancy.values().iter().all(|&x| x == 0.5));
        assert!(r.report.losses.is_empty());

        let color = Observation::new(cam(), ObservationData::Color(vec![[1.0; 3]; 256])).unwrap();
        let r = fit(std::slice::from_ref(&color), &g, ObservationKind::Color, &cfg).unwrap();
        assert!(r.occupancy.values().iter().all(|&x| x == sigmoid(defaults::COLOR_START_LOGIT)));
        assert!(r.aux.unwrap().values().iter().all(|&c| c == 0.5));
        let cfg = FitConfig { start_logit: Some(-1.0), ..cfg };
        let r = fit(&[color], &g, ObservationKind::Color, &cfg).unwrap();
        assert!(r.occupancy.values().iter().all(|&x| x == sigmoid(-1.0)));
    }

    #[test]
    fn fit_errors() {
        let g = GridGeometry::uniform(Dims::cube(4), Aabb::unit_centered()).unwrap();
        assert!(fit(&[], &g, ObservationKind::Mask, &FitConfig::default()).is_err());
        let obs = Observation::new(cam(), ObservationData::Mask(vec![0; 256])).unwrap();
        assert!(matches!(
            fit(&[obs], &g, ObservationKind::Depth, &FitConfig::default()),
            Err(Error::KindMismatch(_))
        ));
    }

    /// A centered blob on a 4^3 grid with a two-tone payload.
    fn small_scene(kind: ObservationKind) -> (Vec<Observation>, GridGeometry) {
        let g = GridGeometry::uniform(Dims::cube(4), Aabb::unit_centered()).unwrap();
        let n = g.num_cells();
        let mut occ = Vec::new();
        let mut color = Vec::new();
        let mut sem = Vec::new();
        for i in 0..n {
            let c = g.cell_center(i).unwrap();
            let inside = c.coords.norm() <= 0.35;
            occ.push(inside);
            let (rgb, label) = match (inside, c.y > 0.0) {
                (false, _) => ([1.0; 3], 2),
                (true, true) => ([0.9, 0.1, 0.1], 0),
                (true, false) => ([0.1, 0.2, 0.9], 1),
            };
            color.extend_from_slice(&rgb);
            sem.extend((0..3).map(|j| if j == label { 1.0 } else { 0.0 }));
        }
        let grid = crate::grid::BinaryGrid::new(g, occ).unwrap();
        let aux = match kind {
            ObservationKind::Color => Some(AuxGrid::new(g, AuxKind::Color, color).unwrap()),
            ObservationKind::DepthSemantics => {
                Some(AuxGrid::new(g, AuxKind::Semantics { classes: 3 }, sem).unwrap())
            }
            _ => None,
        };
        let ring = ViewRing {
            views: 2,
            image: ImageSpec {
                width: 12,
                height: 12,
                half_fov_deg: 22.0,
            },
            ..ViewRing::default()
        };
        let obs = sample_view_ring(&ring, 4)
            .unwrap()
            .iter()
            .map(|c| render(&grid, aux.as_ref(), c, kind, &CostParams::default()).unwrap())
            .collect();
        (obs, g)
    }

    #[test]
    fn seeded_determinism() {
        let (obs, g) = small_scene(ObservationKind::Depth);
        let cfg = FitConfig {
            iterations: 5,
            rays_per_iter: 200,
            seed: 11,
            ..FitConfig::default()
        };
        let a = fit(&obs, &g, ObservationKind::Depth, &cfg).unwrap();
        let b = fit(&obs, &g, ObservationKind::Depth, &cfg).unwrap();
        assert_eq!(a.report.losses, b.report.losses);
        assert_eq!(a.occupancy, b.occupancy);
    }

    #[test]
    fn full_image_first_step_descends() {
        let (obs, g) = small_scene(ObservationKind::Depth);
        let cfg = FitConfig {
            iterations: 2,
            sampling: RaySampling::FullImage,
            adam: AdamConfig {
                step_size: 1e-3,
                ..AdamConfig::default()
            },
            ..FitConfig::default()
        };
        let r = fit(&obs, &g, ObservationKind::Depth, &cfg).unwrap();
        assert!(r.report.losses[1] <= r.report.losses[0]);
    }

    fn check_logit_gradient(kind: ObservationKind) {
        let (obs, g) = small_scene(kind);
        let cfg = FitConfig {
            sampling: RaySampling::FullImage,
            ..FitConfig::default()
        };
        let samples = iteration_samples(&obs, &cfg, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let aux_kind = aux_kind_for(kind, &obs);
        let mut logits = Logits::zeros(g, aux_kind);
        logits.occupancy.iter_mut().for_each(|t| *t = rng.gen_range(-2.0..2.0));
        if let Some((_, l)) = logits.aux.as_mut() {
            l.iter_mut().for_each(|t| *t = rng.gen_range(-2.0..2.0));
        }
        let p = CostParams::default();
        let analytic = logit_objective(&logits, &samples, &p, ExecMode::Deterministic).unwrap();
        let h = 1e-5;
        let f = |l: &Logits| logit_objective(l, &samples, &p, ExecMode::Deterministic).unwrap().loss;
        let check = |a: f64, n: f64| {
            let err = (a - n).abs();
            assert!(err <= 1e-4 * a.abs().max(n.abs()) || err < 1e-7, "{a} vs {n}");
        };
        for i in 0..g.num_cells() {
            let mut up = logits.clone();
            up.occupancy[i] += h;
            let mut dn = logits.clone();
            dn.occupancy[i] -= h;
            check(analytic.occupancy[i], (f(&up) - f(&dn)) / (2.0 * h));
        }
        if let Some(ga) = &analytic.aux {
            for (i, &g) in ga.iter().enumerate() {
                let mut up = logits.clone();
                up.aux.as_mut().unwrap().1[i] += h;
                let mut dn = logits.clone();
                dn.aux.as_mut().unwrap().1[i] -= h;
                check(g, (f(&up) - f(&dn)) / (2.0 * h));
            }
        }
    }

    #[test]
    fn chain_rule_depth() {
        check_logit_gradient(ObservationKind::Depth);
    }

    #[test]
    fn chain_rule_color() {
        check_logit_gradient(ObservationKind::Color);
    }

    #[test]
    fn chain_rule_semantics() {
        check_logit_gradient(ObservationKind::DepthSemantics);
    }
}
