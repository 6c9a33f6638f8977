//! Finite-difference verification of the analytic ray-loss gradients.
//!
//! Each trial draws a random trace (length, emptiness values, event depths,
//! auxiliary payloads, observation) for one cost kind and compares
//! [`ray_loss_grad_x`] and [`ray_loss_grad_p`] against central differences of
//! [`ray_loss`]. A coordinate passes when
//! `|a - n| / max(|a|, |n|, ABS_TOLERANCE / REL_TOLERANCE) < REL_TOLERANCE`,
//! which is the same as "absolute error below `ABS_TOLERANCE` or relative
//! error below `REL_TOLERANCE`".

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::consistency::{
    cost_color, cost_depth, cost_mask, cost_semantic, ray_loss, ray_loss_grad_p, ray_loss_grad_x,
    AuxGradient, CostParams, EventCosts, ObservationKind,
};
use crate::error::{Error, Result};

pub const STEP: f64 = 1e-6;
pub const REL_TOLERANCE: f64 = 1e-5;
pub const ABS_TOLERANCE: f64 = 1e-8;
pub const MAX_TRACE_LEN: usize = 24;
const SEMANTIC_CLASSES: usize = 4;
/// Sampled probabilities stay this far from 0 and 1.
const MARGIN: f64 = 0.01;

/// Deliberate corruption of the analytic gradients, used to confirm that the
/// harness actually fails when the gradient is wrong.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Multiplies every analytic derivative by `1 + eps`.
    Scale(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub kind: ObservationKind,
    pub trials: usize,
    /// Number of scalar derivatives compared.
    pub checked: usize,
    pub failures: usize,
    pub max_error_x: f64,
    /// Zero for kinds without auxiliary payloads.
    pub max_error_aux: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn max_error(&self) -> f64 {
        self.max_error_x.max(self.max_error_aux)
    }

    pub fn summary(&self) -> String {
        format!(
            "{}\t{}\ttrials={}\tchecked={}\tfailures={}\tmax_rel_err_x={:.3e}\tmax_rel_err_aux={:.3e}",
            self.kind,
            if self.passed() { "PASS" } else { "FAIL" },
            self.trials,
            self.checked,
            self.failures,
            self.max_error_x,
            self.max_error_aux
        )
    }
}

pub fn scaled_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic
        .abs()
        .max(numeric.abs())
        .max(ABS_TOLERANCE / REL_TOLERANCE);
    (analytic - numeric).abs() / scale
}

/// One random ray of a given kind, with its event costs recomputable from
/// perturbed payloads.
#[derive(Clone, Debug)]
enum Instance {
    Mask { s: u8 },
    Depth { depths: Vec<f64>, d_r: f64 },
    Semantic { depths: Vec<f64>, p: Vec<Vec<f64>>, d_r: f64, class: usize },
    Color { p: Vec<[f64; 3]>, c: [f64; 3] },
}

impl Instance {
    fn random(kind: ObservationKind, n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut depths = Vec::with_capacity(n);
        let mut t = rng.gen_range(0.5..2.0);
        for _ in 0..n {
            t += rng.gen_range(0.01..0.2);
            depths.push(t);
        }
        let d_r = rng.gen_range(0.5..6.0);
        match kind {
            ObservationKind::Mask => Instance::Mask { s: rng.gen_range(0..=1) },
            ObservationKind::Depth => Instance::Depth { depths, d_r },
            ObservationKind::DepthSemantics => {
                let p = (0..n)
                    .map(|_| {
                        let w: Vec<f64> = (0..SEMANTIC_CLASSES).map(|_| rng.gen_range(0.0..1.0)).collect();
                        let sum: f64 = w.iter().sum();
                        // Keeps every component at or above MARGIN.
                        let k = SEMANTIC_CLASSES as f64;
                        w.iter().map(|v| MARGIN + (1.0 - k * MARGIN) * v / sum).collect()
                    })
                    .collect();
                Instance::Semantic {
                    depths,
                    p,
                    d_r,
                    class: rng.gen_range(0..SEMANTIC_CLASSES),
                }
            }
            ObservationKind::Color => Instance::Color {
                p: (0..n)
                    .map(|_| [rng.gen(), rng.gen(), rng.gen()])
                    .collect(),
                c: [rng.gen(), rng.gen(), rng.gen()],
            },
        }
    }

    fn costs(&self, n: usize, params: &CostParams) -> Result<EventCosts> {
        match self {
            Instance::Mask { s } => Ok(cost_mask(n, *s)),
            Instance::Depth { depths, d_r } => Ok(cost_depth(depths, *d_r, params.depth_escape)),
            Instance::Semantic { depths, p, d_r, class } => {
                let rows: Vec<&[f64]> = p.iter().map(Vec::as_slice).collect();
                cost_semantic(depths, &rows, *d_r, *class, SEMANTIC_CLASSES, params)
            }
            Instance::Color { p, c } => Ok(cost_color(p, *c)),
        }
    }
}

struct Tally {
    checked: usize,
    failures: usize,
    max: f64,
}

impl Tally {
    fn new() -> Self {
        Tally {
            checked: 0,
            failures: 0,
            max: 0.0,
        }
    }

    fn add(&mut self, analytic: f64, numeric: f64) {
        let e = scaled_error(analytic, numeric);
        self.checked += 1;
        if !(e < REL_TOLERANCE) {
            self.failures += 1;
        }
        self.max = self.max.max(e);
    }
}

fn corrupt(v: f64, fault: Fault) -> f64 {
    match fault {
        Fault::None => v,
        Fault::Scale(eps) => v * (1.0 + eps),
    }
}

pub fn gradcheck(
    kind: ObservationKind,
    trials: usize,
    seed: u64,
    fault: Fault,
) -> Result<GradcheckReport> {
    if trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    let params = CostParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tx = Tally::new();
    let mut tp = Tally::new();
    for _ in 0..trials {
        let n = rng.gen_range(1..=MAX_TRACE_LEN);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(MARGIN..1.0 - MARGIN)).collect();
        let inst = Instance::random(kind, n, &mut rng);
        let costs = inst.costs(n, &params)?;

        let grad = ray_loss_grad_x(&x, &costs.psi)?;
        for k in 0..n {
            let mut xp = x.clone();
            xp[k] += STEP;
            let mut xm = x.clone();
            xm[k] -= STEP;
            let numeric =
                (ray_loss(&xp, &costs.psi)? - ray_loss(&xm, &costs.psi)?) / (2.0 * STEP);
            tx.add(corrupt(grad[k], fault), numeric);
        }

        let loss_with = |inst: &Instance| -> Result<f64> {
            ray_loss(&x, &inst.costs(n, &params)?.psi)
        };
        match (&inst, kind.needs_aux()) {
            (_, false) => {}
            (Instance::Color { p, c }, true) => {
                let AuxGradient::Color(g) = ray_loss_grad_p(&x, &costs)? else {
                    unreachable!("color costs yield color gradients")
                };
                for i in 0..n {
                    for a in 0..3 {
                        let mut pp = p.clone();
                        pp[i][a] += STEP;
                        let mut pm = p.clone();
                        pm[i][a] -= STEP;
                        let numeric = (loss_with(&Instance::Color { p: pp, c: *c })?
                            - loss_with(&Instance::Color { p: pm, c: *c })?)
                            / (2.0 * STEP);
                        tp.add(corrupt(g[i][a], fault), numeric);
                    }
                }
            }
            (Instance::Semantic { depths, p, d_r, class }, true) => {
                let AuxGradient::Class { values, .. } = ray_loss_grad_p(&x, &costs)? else {
                    unreachable!("semantic costs yield class gradients")
                };
                // Moving mass between the observed class and another one stays
                // on the simplex; only the observed class enters the cost.
                let other = (class + 1) % SEMANTIC_CLASSES;
                for i in 0..n {
                    let shifted = |h: f64| {
                        let mut q = p.clone();
                        q[i][*class] += h;
                        q[i][other] -= h;
                        Instance::Semantic {
                            depths: depths.clone(),
                            p: q,
                            d_r: *d_r,
                            class: *class,
                        }
                    };
                    let numeric =
                        (loss_with(&shifted(STEP))? - loss_with(&shifted(-STEP))?) / (2.0 * STEP);
                    tp.add(corrupt(values[i], fault), numeric);
                }
            }
            _ => unreachable!("instance matches kind"),
        }
    }
    Ok(GradcheckReport {
        kind,
        trials,
        checked: tx.checked + tp.checked,
        failures: tx.failures + tp.failures,
        max_error_x: tx.max,
        max_error_aux: tp.max,
    })
}

pub const ALL_KINDS: [ObservationKind; 4] = [
    ObservationKind::Mask,
    ObservationKind::Depth,
    ObservationKind::DepthSemantics,
    ObservationKind::Color,
];
