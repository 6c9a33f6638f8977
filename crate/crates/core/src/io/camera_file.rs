//! Camera files (TOML):
//!
//! ```toml
//! model = "perspective"      # or "orthographic"
//! width = 128
//! height = 128
//! intrinsics = [fu, fv, u0, v0]   # orthographic: [su, sv, u0, v0], meters per pixel
//! rotation = [r00, r01, r02, r10, r11, r12, r20, r21, r22]   # world -> camera, row-major
//! translation = [tx, ty, tz]
//! ```

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Intrinsics, Projection};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub model: String,
    pub width: usize,
    pub height: usize,
    pub intrinsics: [f64; 4],
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl CameraFile {
    pub fn from_camera(cam: &Camera) -> Self {
        let r = cam.rotation();
        let i = cam.intrinsics();
        CameraFile {
            model: match cam.projection() {
                Projection::Perspective => "perspective",
                Projection::Orthographic => "orthographic",
            }
            .into(),
            width: cam.width(),
            height: cam.height(),
            intrinsics: [i.scale[0], i.scale[1], i.principal[0], i.principal[1]],
            rotation: std::array::from_fn(|k| r[(k / 3, k % 3)]),
            translation: [cam.translation().x, cam.translation().y, cam.translation().z],
        }
    }

    pub fn to_camera(&self) -> Result<Camera> {
        let projection = match self.model.as_str() {
            "perspective" => Projection::Perspective,
            "orthographic" => Projection::Orthographic,
            other => return Err(Error::Format(format!("unknown camera model `{other}`"))),
        };
        let i = self.intrinsics;
        Camera::new(
            projection,
            Intrinsics {
                scale: [i[0], i[1]],
                principal: [i[2], i[3]],
            },
            Matrix3::from_row_slice(&self.rotation),
            Vector3::from_column_slice(&self.translation),
            self.width,
            self.height,
        )
    }
}

pub fn camera_to_toml(cam: &Camera) -> String {
    toml::to_string(&CameraFile::from_camera(cam)).expect("camera fields serialize")
}

pub fn camera_from_toml(text: &str) -> Result<Camera> {
    let file: CameraFile =
        toml::from_str(text).map_err(|e| Error::Format(format!("camera file: {e}")))?;
    file.to_camera()
}

pub fn write_camera(path: &Path, cam: &Camera) -> Result<()> {
    Ok(fs::write(path, camera_to_toml(cam))?)
}

pub fn read_camera(path: &Path) -> Result<Camera> {
    camera_from_toml(&fs::read_to_string(path)?)
}
