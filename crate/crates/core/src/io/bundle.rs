//! Observation bundles: one directory per view holding `camera.toml`, a
//! one-line `kind` manifest and the image files for that kind:
//!
//! | kind                | files                               |
//! |---------------------|-------------------------------------|
//! | `mask`              | `mask.pgm` (maxval 1)               |
//! | `depth`             | `depth.pfm`                         |
//! | `depth_semantics K` | `depth.pfm`, `labels.pgm` (maxval 255) |
//! | `color`             | `color.ppm`                         |
//!
//! Depth is stored as f32 and color as 8-bit, so a bundle round trip
//! quantizes those channels.

use std::fs;
use std::path::{Path, PathBuf};

use super::camera_file::{read_camera, write_camera};
use super::image::{
    color_from_bytes, color_to_bytes, read_pfm, read_pgm, read_ppm, write_pfm, write_pgm,
    write_ppm, Image,
};
use crate::consistency::ObservationKind;
use crate::error::{Error, Result};
use crate::renderer::{Observation, ObservationData};

pub const BUNDLE_CAMERA: &str = "camera.toml";
pub const BUNDLE_KIND: &str = "kind";

pub fn write_bundle(dir: &Path, obs: &Observation) -> Result<()> {
    fs::create_dir_all(dir)?;
    let cam = obs.camera();
    let (w, h) = (cam.width(), cam.height());
    write_camera(&dir.join(BUNDLE_CAMERA), cam)?;
    let depth_img = |d: &[f64]| Image {
        width: w,
        height: h,
        data: d.iter().map(|&v| v as f32).collect(),
    };
    let kind_line = match obs.data() {
        ObservationData::Mask(m) => {
            write_pgm(&dir.join("mask.pgm"), &Image { width: w, height: h, data: m.clone() }, 1)?;
            "mask".to_string()
        }
        ObservationData::Depth(d) => {
            write_pfm(&dir.join("depth.pfm"), &depth_img(d))?;
            "depth".to_string()
        }
        ObservationData::DepthSemantics {
            depth,
            labels,
            classes,
        } => {
            write_pfm(&dir.join("depth.pfm"), &depth_img(depth))?;
            let img = Image {
                width: w,
                height: h,
                data: labels.clone(),
            };
            write_pgm(&dir.join("labels.pgm"), &img, 255)?;
            format!("depth_semantics {classes}")
        }
        ObservationData::Color(c) => {
            let img = Image {
                width: w,
                height: h,
                data: c.iter().map(|&v| color_to_bytes(v)).collect(),
            };
            write_ppm(&dir.join("color.ppm"), &img)?;
            "color".to_string()
        }
    };
    fs::write(dir.join(BUNDLE_KIND), format!("{kind_line}\n"))?;
    Ok(())
}

fn check_size<T>(path: &Path, img: &Image<T>, w: usize, h: usize) -> Result<()> {
    if img.width != w || img.height != h {
        return Err(Error::Format(format!(
            "{}: image is {}x{}, camera expects {w}x{h}",
            path.display(),
            img.width,
            img.height
        )));
    }
    Ok(())
}

pub fn read_bundle(dir: &Path) -> Result<Observation> {
    let manifest = fs::read_to_string(dir.join(BUNDLE_KIND))?;
    let mut tok = manifest.split_whitespace();
    let kind: ObservationKind = tok
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty kind manifest", dir.display())))?
        .parse()?;
    let cam = read_camera(&dir.join(BUNDLE_CAMERA))?;
    let (w, h) = (cam.width(), cam.height());
    let read_depth = || -> Result<Vec<f64>> {
        let p = dir.join("depth.pfm");
        let img = read_pfm(&p)?;
        check_size(&p, &img, w, h)?;
        Ok(img.data.iter().map(|&v| f64::from(v)).collect())
    };
    let data = match kind {
        ObservationKind::Mask => {
            let p = dir.join("mask.pgm");
            let (img, maxval) = read_pgm(&p)?;
            check_size(&p, &img, w, h)?;
            if maxval != 1 {
                return Err(Error::Format(format!("{}: masks need maxval 1", p.display())));
            }
            ObservationData::Mask(img.data)
        }
        ObservationKind::Depth => ObservationData::Depth(read_depth()?),
        ObservationKind::DepthSemantics => {
            let classes = tok
                .next()
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| Error::Format(format!("{}: missing class count", dir.display())))?;
            let p = dir.join("labels.pgm");
            let (img, _) = read_pgm(&p)?;
            check_size(&p, &img, w, h)?;
            ObservationData::DepthSemantics {
                depth: read_depth()?,
                labels: img.data,
                classes,
            }
        }
        ObservationKind::Color => {
            let p = dir.join("color.ppm");
            let img = read_ppm(&p)?;
            check_size(&p, &img, w, h)?;
            ObservationData::Color(img.data.into_iter().map(color_from_bytes).collect())
        }
    };
    Observation::new(cam, data)
}

/// `dir` itself if it is a bundle, otherwise every bundle directly inside it
/// in name order.
pub fn read_bundles(dir: &Path) -> Result<Vec<Observation>> {
    if dir.join(BUNDLE_KIND).is_file() {
        return Ok(vec![read_bundle(dir)?]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(BUNDLE_KIND).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Format(format!(
            "{}: no observation bundles found",
            dir.display()
        )));
    }
    dirs.iter().map(|d| read_bundle(d)).collect()
}
