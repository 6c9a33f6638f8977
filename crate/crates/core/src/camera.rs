//! Calibrated cameras and per-pixel world-space rays.
//!
//! Extrinsics are stored world→camera (`p_cam = R p_world + t`). The camera
//! looks down its +z axis, image u grows along camera +x and v along camera +y.
//! When rasterizing a full image, pixel `(i, j)` is sampled at its center
//! `(i + 0.5, j + 0.5)`.

use nalgebra::{Matrix3, Point3, Vector3};

use crate::error::{Error, Result};

const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Projection {
    Perspective,
    Orthographic,
}

/// For perspective cameras `scale` is the focal length `(f_u, f_v)` in pixels;
/// for orthographic cameras it is the pixel size `(s_u, s_v)` in meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub scale: [f64; 2],
    pub principal: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    projection: Projection,
    intrinsics: Intrinsics,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    width: usize,
    height: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray {
    /// Builds a ray, normalizing `direction`.
    pub fn new(origin: Point3<f64>, direction: Vector3<f64>) -> Self {
        Ray {
            origin,
            direction: direction.normalize(),
        }
    }

    pub fn at(&self, t: f64) -> Point3<f64> {
        self.origin + self.direction * t
    }
}

impl Camera {
    pub fn new(
        projection: Projection,
        intrinsics: Intrinsics,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if !intrinsics.scale.iter().all(|s| s.is_finite() && *s > 0.0) {
            let field = match projection {
                Projection::Perspective => "focal length",
                Projection::Orthographic => "pixel scale",
            };
            return Err(Error::invalid(
                "intrinsics",
                format!("{field} must be positive, got {:?}", intrinsics.scale),
            ));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("image size", "width and height must be positive"));
        }
        let should_be_identity = rotation.transpose() * rotation;
        let ortho_err = (should_be_identity - Matrix3::identity()).abs().max();
        if !(ortho_err <= ROTATION_TOLERANCE) {
            return Err(Error::invalid(
                "rotation",
                format!("not orthonormal (max deviation {ortho_err:e})"),
            ));
        }
        if (rotation.determinant() - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::invalid("rotation", "determinant must be +1"));
        }
        Ok(Camera {
            projection,
            intrinsics,
            rotation,
            translation,
            width,
            height,
        })
    }

    /// Perspective camera at `eye` looking at `target`, with world `up`
    /// mapping to image -v.
    pub fn look_at(
        eye: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
        intrinsics: Intrinsics,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-12 {
            return Err(Error::invalid("up", "parallel to the viewing direction"));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            forward.transpose(),
        ]);
        let translation = -(rotation * eye.coords);
        Camera::new(
            Projection::Perspective,
            intrinsics,
            rotation,
            translation,
            width,
            height,
        )
    }

    pub fn projection(&self) -> Projection {
        self.projection
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    pub fn pixel_to_ray(&self, u: f64, v: f64) -> Ray {
        let Intrinsics { scale, principal } = self.intrinsics;
        let r_inv = self.rotation.transpose();
        match self.projection {
            Projection::Perspective => {
                let d_cam = Vector3::new((u - principal[0]) / scale[0], (v - principal[1]) / scale[1], 1.0);
                Ray::new(self.center(), r_inv * d_cam)
            }
            Projection::Orthographic => {
                let offset = Vector3::new(scale[0] * (u - principal[0]), scale[1] * (v - principal[1]), 0.0);
                Ray {
                    origin: self.center() + r_inv * offset,
                    direction: r_inv * Vector3::z(),
                }
            }
        }
    }

    /// Ray through the center of pixel `(col, row)`.
    pub fn pixel_center_ray(&self, col: usize, row: usize) -> Ray {
        self.pixel_to_ray(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// Projects a world point to `(u, v)`. `None` when a perspective camera
    /// sees the point at or behind its center plane.
    pub fn project(&self, p: &Point3<f64>) -> Option<[f64; 2]> {
        let Intrinsics { scale, principal } = self.intrinsics;
        let pc = self.rotation * p.coords + self.translation;
        match self.projection {
            Projection::Perspective => {
                if pc.z <= 0.0 {
                    return None;
                }
                Some([
                    scale[0] * pc.x / pc.z + principal[0],
                    scale[1] * pc.y / pc.z + principal[1],
                ])
            }
            Projection::Orthographic => Some([
                pc.x / scale[0] + principal[0],
                pc.y / scale[1] + principal[1],
            ]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_cam(projection: Projection, scale: f64) -> Camera {
        Camera::new(
            projection,
            Intrinsics {
                scale: [scale, scale],
                principal: [32.0, 24.0],
            },
            Matrix3::identity(),
            Vector3::zeros(),
            64,
            48,
        )
        .unwrap()
    }

    #[test]
    fn principal_ray() {
        let cam = identity_cam(Projection::Perspective, 100.0);
        let r = cam.pixel_to_ray(32.0, 24.0);
        assert_eq!(r.origin, Point3::origin());
        assert_eq!(r.direction, Vector3::z());
    }

    #[test]
    fn unit_focal_offset_ray() {
        let cam = identity_cam(Projection::Perspective, 1.0);
        let r = cam.pixel_to_ray(33.0, 24.0);
        let expect = Vector3::new(1.0, 0.0, 1.0) / 2f64.sqrt();
        assert!((r.direction - expect).norm() < 1e-15);
    }

    #[test]
    fn orthographic_offset() {
        let cam = identity_cam(Projection::Orthographic, 0.1);
        let r = cam.pixel_to_ray(34.0, 24.0);
        assert!((r.origin - Point3::new(0.2, 0.0, 0.0)).norm() < 1e-15);
        assert_eq!(r.direction, Vector3::z());
    }

    #[test]
    fn rejects_bad_rotation_and_intrinsics() {
        let bad = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        let intr = Intrinsics {
            scale: [1.0, 1.0],
            principal: [0.0, 0.0],
        };
        assert!(Camera::new(Projection::Perspective, intr, bad, Vector3::zeros(), 4, 4).is_err());
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Camera::new(Projection::Perspective, intr, reflect, Vector3::zeros(), 4, 4).is_err());
        let intr = Intrinsics {
            scale: [0.0, 1.0],
            principal: [0.0, 0.0],
        };
        assert!(
            Camera::new(Projection::Perspective, intr, Matrix3::identity(), Vector3::zeros(), 4, 4)
                .is_err()
        );
    }

    #[test]
    fn look_at_axes() {
        let intr = Intrinsics {
            scale: [50.0, 50.0],
            principal: [16.0, 16.0],
        };
        let cam = Camera::look_at(
            Point3::new(0.0, 0.0, 3.0),
            Point3::origin(),
            Vector3::y(),
            intr,
            32,
            32,
        )
        .unwrap();
        assert!((cam.center() - Point3::new(0.0, 0.0, 3.0)).norm() < 1e-12);
        let r = cam.pixel_to_ray(16.0, 16.0);
        assert!((r.direction + Vector3::z()).norm() < 1e-12);
        // World up projects above the principal point.
        let [_, v] = cam.project(&Point3::new(0.0, 0.5, 0.0)).unwrap();
        assert!(v < 16.0);
    }

    #[test]
    fn ray_points_project_back() {
        let intr = Intrinsics {
            scale: [80.0, 70.0],
            principal: [20.0, 15.0],
        };
        let cam = Camera::look_at(
            Point3::new(1.0, 2.0, -3.0),
            Point3::new(0.1, -0.2, 0.3),
            Vector3::y(),
            intr,
            40,
            30,
        )
        .unwrap();
        for (u, v) in [(0.5, 0.5), (39.5, 29.5), (12.25, 7.75), (-5.0, 50.0)] {
            let r = cam.pixel_to_ray(u, v);
            for t in [0.5, 2.0, 10.0] {
                let [pu, pv] = cam.project(&r.at(t)).unwrap();
                assert!((pu - u).abs() < 1e-6 && (pv - v).abs() < 1e-6);
            }
        }
    }
}
