//! Reconstruction metrics.
//!
//! Predictions are emptiness fields: a cell counts as occupied at threshold
//! `tau` when `1 - x >= tau`. Cells never observed are scored like any other.

use crate::defaults;
use crate::error::{Error, Result};
use crate::grid::{BinaryGrid, OccupancyGrid};

#[derive(Clone, Debug, PartialEq)]
pub struct IoUResult {
    pub best_iou: f64,
    pub best_threshold: f64,
    pub curve: Vec<(f64, f64)>,
}

impl IoUResult {
    /// `threshold\tiou` lines with a header.
    pub fn curve_tsv(&self) -> String {
        let mut s = String::from("threshold\tiou\n");
        for (t, v) in &self.curve {
            s.push_str(&format!("{t:.2}\t{v:.6}\n"));
        }
        s
    }
}

pub fn iou_at(pred: &OccupancyGrid, gt: &BinaryGrid, threshold: f64) -> Result<f64> {
    if pred.geometry() != gt.geometry() {
        return Err(Error::GeometryMismatch);
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Domain(format!("threshold {threshold} outside [0, 1]")));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &g) in pred.values().iter().zip(gt.occupied()) {
        let p = 1.0 - x >= threshold;
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Sweeps thresholds `0.00, 0.01, ..., 1.00`; ties keep the lower threshold.
pub fn best_threshold(pred: &OccupancyGrid, gt: &BinaryGrid) -> Result<IoUResult> {
    let steps = (1.0 / defaults::THRESHOLD_STEP).round() as usize;
    let curve = (0..=steps)
        .map(|i| {
            let t = i as f64 / steps as f64;
            iou_at(pred, gt, t).map(|v| (t, v))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = curve[0];
    for &(t, v) in &curve[1..] {
        if v > best.1 {
            best = (t, v);
        }
    }
    Ok(IoUResult {
        best_iou: best.1,
        best_threshold: best.0,
        curve,
    })
}

/// Largest trace length [`brute_force_ray_loss`] accepts.
pub const BRUTE_FORCE_MAX_CELLS: usize = 20;

/// Expected event cost by enumerating all `2^N` joint emptiness patterns.
/// Bit `j` set means cell `j` is empty; the first non-empty cell decides the
/// event, all-empty is escape.
pub fn brute_force_ray_loss(x: &[f64], psi: &[f64]) -> Result<f64> {
    let n = x.len();
    if n > BRUTE_FORCE_MAX_CELLS {
        return Err(Error::invalid(
            "trace length",
            format!("{n} cells exceeds the enumeration limit {BRUTE_FORCE_MAX_CELLS}"),
        ));
    }
    if psi.len() != n + 1 {
        return Err(Error::LengthMismatch {
            expected: n + 1,
            actual: psi.len(),
        });
    }
    let mut total = 0.0;
    for pattern in 0u32..(1u32 << n) {
        let mut weight = 1.0;
        for (j, &xj) in x.iter().enumerate() {
            weight *= if pattern >> j & 1 == 1 { xj } else { 1.0 - xj };
        }
        let event = (0..n).find(|&j| pattern >> j & 1 == 0).unwrap_or(n);
        total += weight * psi[event];
    }
    Ok(total)
}
