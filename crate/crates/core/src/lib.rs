//! Differentiable ray consistency between probabilistic voxel grids and 2D
//! observations (masks, depth, depth + semantics, color).
//!
//! Occupancy fields hold the probability that a cell is **empty**; see
//! [`grid`] for the convention.

// `!(v > 0.0)` style checks are deliberate: NaN has to fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod consistency;
pub mod defaults;
pub mod error;
pub mod eval;
pub mod fitter;
pub mod fusion;
pub mod gradcheck;
pub mod grid;
pub mod io;
pub mod pipeline;
pub mod renderer;
pub mod traversal;

pub use camera::{Camera, Intrinsics, Projection, Ray};
pub use consistency::{
    CostParams, EventCosts, ExecMode, ObservationKind, RayObservation, RaySample, RayTarget,
    ViewLoss,
};
pub use error::{Error, Result};
pub use grid::{Aabb, AuxGrid, AuxKind, BinaryGrid, Dims, GridGeometry, OccupancyGrid};
pub use renderer::{Observation, ObservationData};
pub use traversal::{trace, RayTrace};
