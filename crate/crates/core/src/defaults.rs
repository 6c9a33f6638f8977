//! Every numeric default used by the library and CLI, in one place.
//!
//! | constant | value | used by |
//! |---|---|---|
//! | `DEPTH_ESCAPE` | 10 m | depth cost, renderer (object scale) |
//! | `DISPARITY_ESCAPE_DEPTH` | 1000 m | depth+semantics cost, renderer |
//! | `PROB_FLOOR` | 1e-8 | class NLL clamp |
//! | `GRID_DIM` | 32 | object grids |
//! | `RAYS_PER_ITER` | 3000 | fitter, split evenly across views |
//! | `FOREGROUND_WEIGHT` | 5 | fitter ray weights |
//! | `STEP_SIZE` | 0.05 | Adam learning rate (logit space) |
//! | `BETA1`, `BETA2`, `ADAM_EPS` | 0.9, 0.999, 1e-8 | Adam |
//! | `ITERATIONS` | 500 | fitter |
//! | `START_LOGIT`, `COLOR_START_LOGIT` | 0, 3 | initial occupancy logits (x = 0.5, x ≈ 0.95) |
//! | `MAX_ALL_VIEWS` | 5 | use every view per iteration up to this many |
//! | `VIEWS_PER_ITER` | 3 | views sampled per iteration above that |
//! | `NUM_VIEWS` | 5 | renderer |
//! | `VIEW_RADIUS` | 2.5 m | camera distance from the grid center |
//! | `ELEVATION_DEG` | [-20, 30] | view sampling |
//! | `IMAGE_SIZE` | 256 px | rendered images |
//! | `HALF_FOV_DEG` | 22° | rendered images (covers the unit cube at 2.5 m) |
//! | `NOISE_MAX` | 0.2 m | noisy depth experiments |
//! | `THRESHOLD_STEP` | 0.01 | IoU sweep |
//! | `SEMANTIC_CLASSES` | 3 | synthetic semantic payloads (last = background) |

pub const DEPTH_ESCAPE: f64 = 10.0;
pub const DISPARITY_ESCAPE_DEPTH: f64 = 1000.0;
pub const PROB_FLOOR: f64 = 1e-8;

pub const GRID_DIM: usize = 32;

pub const RAYS_PER_ITER: usize = 3000;
pub const FOREGROUND_WEIGHT: f64 = 5.0;
pub const STEP_SIZE: f64 = 0.05;
pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const ITERATIONS: usize = 500;
pub const START_LOGIT: f64 = 0.0;
/// Color fits start mostly empty. From x = 0.5 the outermost cells whiten
/// first and then lock into an opaque white shell that explains the
/// background, and the object never gets carved out.
pub const COLOR_START_LOGIT: f64 = 3.0;
pub const MAX_ALL_VIEWS: usize = 5;
pub const VIEWS_PER_ITER: usize = 3;

pub const NUM_VIEWS: usize = 5;
pub const VIEW_RADIUS: f64 = 2.5;
pub const ELEVATION_DEG: (f64, f64) = (-20.0, 30.0);
pub const IMAGE_SIZE: usize = 256;
pub const HALF_FOV_DEG: f64 = 22.0;
pub const NOISE_MAX: f64 = 0.2;

pub fn start_logit(kind: crate::consistency::ObservationKind) -> f64 {
    match kind {
        crate::consistency::ObservationKind::Color => COLOR_START_LOGIT,
        _ => START_LOGIT,
    }
}

pub const THRESHOLD_STEP: f64 = 0.01;
pub const SEMANTIC_CLASSES: usize = 3;
