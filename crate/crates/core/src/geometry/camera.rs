use nalgebra::{Unit, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeometryError, Pose};

/// Depth at or below which a point counts as behind the camera.
pub const BEHIND_EPSILON: f64 = 1e-9;

/// Pinhole intrinsics without distortion. Pixel coordinates are assumed to be
/// already undistorted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(width: u32, height: u32, fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        let intr = Self {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx.is_finite()
            && self.fy.is_finite()
            && self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidIntrinsics(*self))
        }
    }

    /// Projects a point given in camera coordinates. `None` when behind the camera.
    pub fn project_camera(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p.z <= BEHIND_EPSILON {
            return None;
        }
        Some(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Normalized image coordinates `K^-1 [u v 1]` (first two components).
    pub fn normalize(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy)
    }

    /// Unit ray through a pixel, in camera coordinates.
    pub fn bearing(&self, pixel: &Vector2<f64>) -> Unit<Vector3<f64>> {
        let n = self.normalize(pixel);
        Unit::new_normalize(Vector3::new(n.x, n.y, 1.0))
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x <= self.width as f64 && pixel.y <= self.height as f64
    }
}

/// Pinhole projection of a world point. Points outside the image are still
/// returned; `None` means the point is behind the camera.
pub fn project(point: &Vector3<f64>, pose: &Pose, intrinsics: &CameraIntrinsics) -> Option<Vector2<f64>> {
    intrinsics.project_camera(&pose.world_to_camera(point))
}

/// World-frame ray direction through a pixel.
pub fn back_project(pixel: &Vector2<f64>, pose: &Pose, intrinsics: &CameraIntrinsics) -> Unit<Vector3<f64>> {
    let local = intrinsics.bearing(pixel);
    Unit::new_normalize(pose.orientation().inverse() * local.into_inner())
}
