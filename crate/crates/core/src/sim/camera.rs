//! Pinhole projection between the observer frame and image coordinates.
//!
//! Observer frame: x forward (optical axis), y left, z up. Image u grows
//! rightward, v downward, so both image axes flip sign against y and z.

use crate::codec::IMAGE_SIZE;
use crate::error::{Error, Result};

/// Points closer than this to the image plane are rejected as behind or
/// degenerate.
pub const MIN_DEPTH_M: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Camera {
    pub focal_px: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for Camera {
    fn default() -> Self {
        // 160 px across a 65 degree horizontal FOV: 80 / tan(32.5 deg).
        Camera { focal_px: 126.0, cx: 80.0, cy: 80.0 }
    }
}

impl Camera {
    /// Projects an observer-frame point to (u, v, d) with d the forward
    /// distance.
    pub fn project(&self, rel: [f64; 3]) -> Result<(f64, f64, f64)> {
        let [x, y, z] = rel;
        if !(x > MIN_DEPTH_M) {
            return Err(Error::Camera(format!("point at x = {x} m is behind the camera (min {MIN_DEPTH_M} m)")));
        }
        let u = self.cx + self.focal_px * (-y) / x;
        let v = self.cy + self.focal_px * (-z) / x;
        Ok((u, v, x))
    }

    /// Inverse of [`Camera::project`].
    pub fn back_project(&self, u: f64, v: f64, d: f64) -> [f64; 3] {
        let y = -(u - self.cx) * d / self.focal_px;
        let z = -(v - self.cy) * d / self.focal_px;
        [d, y, z]
    }

    /// True when (u, v) lies inside the image.
    pub fn in_frame(&self, u: f64, v: f64) -> bool {
        let size = IMAGE_SIZE as f64;
        (0.0..size).contains(&u) && (0.0..size).contains(&v)
    }
}
