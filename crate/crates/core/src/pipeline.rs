//! End-to-end experiment plumbing: rendering view sets, run manifests and the
//! `repro` pipeline (shape, render, fit or fuse, evaluate) for mask, depth
//! and noisy-depth supervision.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::consistency::{CostParams, ExecMode, ObservationKind};
use crate::defaults;
use crate::error::{Error, Result};
use crate::eval::best_threshold;
use crate::fitter::{fit, FitConfig};
use crate::fusion::fuse_depth;
use crate::grid::{AuxGrid, BinaryGrid, Dims};
use crate::io::{write_binary_grid, write_grid, FUSED_XFORM};
use crate::renderer::{
    add_depth_noise, make_test_shape, render, sample_view_ring, ImageSpec, Observation,
    ShapeName, ViewRing,
};

pub const MANIFEST_FILE: &str = "manifest.toml";

/// Everything needed to re-run a command and get the same outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// Arguments after the program name, with every default filled in.
    pub args: Vec<String>,
    pub deterministic: bool,
    pub seeds: BTreeMap<String, u64>,
    pub params: BTreeMap<String, String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            args: Vec::new(),
            deterministic: true,
            seeds: BTreeMap::new(),
            params: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.params.insert(key.into(), value.to_string());
        self
    }

    /// Fails for seeds above `i64::MAX`, which TOML integers cannot hold.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("manifest: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_toml()?)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }
}

/// Renders one observation per camera.
pub fn render_views(
    grid: &BinaryGrid,
    aux: Option<&AuxGrid>,
    cameras: &[Camera],
    kind: ObservationKind,
    params: &CostParams,
) -> Result<Vec<Observation>> {
    cameras
        .iter()
        .map(|c| render(grid, aux, c, kind, params))
        .collect()
}

/// Per-view noise seed, so adding or dropping views leaves the others alone.
pub fn noise_seed(seed: u64, view: usize) -> u64 {
    seed.wrapping_mul(0x2545_f491_4f6c_dd1d).wrapping_add(view as u64)
}

pub fn add_noise_to_views(
    views: &[Observation],
    max_noise: f64,
    seed: u64,
    params: &CostParams,
) -> Result<Vec<Observation>> {
    views
        .iter()
        .enumerate()
        .map(|(i, o)| add_depth_noise(o, max_noise, noise_seed(seed, i), params))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReproConfig {
    pub shapes: Vec<ShapeName>,
    pub dims: usize,
    pub views: usize,
    pub image_size: usize,
    pub noise: f64,
    /// Drives view sampling, depth noise and ray sampling.
    pub seed: u64,
    pub iterations: usize,
    pub mode: ExecMode,
}

impl Default for ReproConfig {
    fn default() -> Self {
        ReproConfig {
            shapes: vec![ShapeName::Sphere, ShapeName::ChairLike],
            dims: defaults::GRID_DIM,
            views: defaults::NUM_VIEWS,
            image_size: defaults::IMAGE_SIZE,
            noise: defaults::NOISE_MAX,
            seed: 1,
            iterations: defaults::ITERATIONS,
            mode: ExecMode::Deterministic,
        }
    }
}

/// Best-threshold IoU per supervision setting for one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ReproRow {
    pub shape: ShapeName,
    pub mask_drc: f64,
    pub depth_fusion: f64,
    pub depth_drc: f64,
    pub noisy_fusion: f64,
    pub noisy_drc: f64,
}

pub fn repro_table(rows: &[ReproRow]) -> String {
    let mut s = String::from("shape\tmask_drc\tdepth_fusion\tdepth_drc\tnoisy_depth_fusion\tnoisy_depth_drc\n");
    for r in rows {
        s.push_str(&format!(
            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\n",
            r.shape, r.mask_drc, r.depth_fusion, r.depth_drc, r.noisy_fusion, r.noisy_drc
        ));
    }
    s
}

#[derive(Clone, Debug)]
pub struct ReproOutput {
    pub rows: Vec<ReproRow>,
    /// Every file written, in write order.
    pub files: Vec<PathBuf>,
    /// Wall time of each fit, labelled `<shape>/<setting>`.
    pub fit_times: Vec<(String, Duration)>,
}

/// Runs the pipeline; with `out` set, writes ground truth, fitted and fused
/// grids, loss logs and `table.tsv` under it.
pub fn run_repro(config: &ReproConfig, out: Option<&Path>) -> Result<ReproOutput> {
    let params = CostParams::default();
    let ring = ViewRing {
        views: config.views,
        image: ImageSpec {
            width: config.image_size,
            height: config.image_size,
            ..ImageSpec::default()
        },
        ..ViewRing::default()
    };
    let fit_config = FitConfig {
        iterations: config.iterations,
        seed: config.seed,
        mode: config.mode,
        ..FitConfig::default()
    };
    let mut written = Vec::new();
    let mut rows = Vec::new();
    let mut fit_times = Vec::new();
    for &shape_name in &config.shapes {
        let shape = make_test_shape(shape_name, Dims::cube(config.dims))?;
        let geometry = *shape.grid.geometry();
        let cameras = sample_view_ring(&ring, config.seed)?;
        let masks = render_views(&shape.grid, None, &cameras, ObservationKind::Mask, &params)?;
        let depths = render_views(&shape.grid, None, &cameras, ObservationKind::Depth, &params)?;
        let noisy = add_noise_to_views(&depths, config.noise, config.seed, &params)?;

        let dir = out.map(|o| o.join(shape_name.to_string()));
        if let Some(d) = &dir {
            fs::create_dir_all(d)?;
            let p = d.join("gt.grid");
            write_binary_grid(&p, &shape.grid)?;
            written.push(p);
        }
        let mut fitted = |label: &str, obs: &[Observation], kind: ObservationKind| -> Result<f64> {
            let r = fit(obs, &geometry, kind, &fit_config)?;
            fit_times.push((format!("{shape_name}/{label}"), r.report.wall_time));
            if let Some(d) = &dir {
                let p = d.join(format!("{label}_drc.grid"));
                write_grid(&p, &r.occupancy, r.aux.as_ref(), &[])?;
                written.push(p);
                let p = d.join(format!("{label}_drc.loss.tsv"));
                fs::write(&p, r.report.to_tsv(kind))?;
                written.push(p);
            }
            Ok(best_threshold(&r.occupancy, &shape.grid)?.best_iou)
        };
        let mask_drc = fitted("mask", &masks, ObservationKind::Mask)?;
        let depth_drc = fitted("depth", &depths, ObservationKind::Depth)?;
        let noisy_drc = fitted("noisy_depth", &noisy, ObservationKind::Depth)?;

        let mut fused = |label: &str, obs: &[Observation]| -> Result<f64> {
            let occ = fuse_depth(obs, &geometry, &params)?.to_occupancy();
            if let Some(d) = &dir {
                let p = d.join(format!("{label}_fusion.grid"));
                let attr = (FUSED_XFORM.0.to_string(), FUSED_XFORM.1.to_string());
                write_grid(&p, &occ, None, &[attr])?;
                written.push(p);
            }
            Ok(best_threshold(&occ, &shape.grid)?.best_iou)
        };
        let depth_fusion = fused("depth", &depths)?;
        let noisy_fusion = fused("noisy_depth", &noisy)?;
        rows.push(ReproRow {
            shape: shape_name,
            mask_drc,
            depth_fusion,
            depth_drc,
            noisy_fusion,
            noisy_drc,
        });
    }
    if let Some(o) = out {
        let p = o.join("table.tsv");
        fs::write(&p, repro_table(&rows))?;
        written.push(p);
    }
    Ok(ReproOutput {
        rows,
        files: written,
        fit_times,
    })
}
