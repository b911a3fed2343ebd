//! Pinhole cameras and the default 17-view rig.
//!
//! The scene is Y-up. Pixel `(x, y)` has its centre at `(x + 0.5, y + 0.5)`
//! with `y` growing downwards in the image.

use glam::{DVec2, DVec3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Circumsphere radius of the normalized unit box.
pub const UNIT_BOX_RADIUS: f64 = 0.866_025_403_784_438_6;

pub const EQUATORIAL_VIEWS: usize = 8;
pub const ELEVATED_VIEWS: usize = 8;
pub const ELEVATION_DEG: f64 = 45.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewCamera {
    pub position: DVec3,
    pub look_at: DVec3,
    pub up: DVec3,
    /// Vertical field of view.
    pub fov_deg: f64,
    pub resolution: (u32, u32),
    pub near: f64,
    pub far: f64,
}

/// Orthonormal camera frame derived from a [`ViewCamera`], with the
/// projection constants the ray generator and rasterizer share.
#[derive(Clone, Copy, Debug)]
pub struct CameraFrame {
    pub origin: DVec3,
    pub forward: DVec3,
    pub right: DVec3,
    pub up: DVec3,
    tan_half_y: f64,
    tan_half_x: f64,
    width: f64,
    height: f64,
}

impl ViewCamera {
    pub fn frame(&self) -> CameraFrame {
        let forward = (self.look_at - self.position).normalize();
        let right = forward.cross(self.up).normalize();
        let up = right.cross(forward);
        let (w, h) = self.resolution;
        let tan_half_y = (self.fov_deg.to_radians() * 0.5).tan();
        CameraFrame {
            origin: self.position,
            forward,
            right,
            up,
            tan_half_y,
            tan_half_x: tan_half_y * w as f64 / h as f64,
            width: w as f64,
            height: h as f64,
        }
    }

    pub fn width(&self) -> u32 {
        self.resolution.0
    }

    pub fn height(&self) -> u32 {
        self.resolution.1
    }

    pub fn pixel_count(&self) -> usize {
        self.resolution.0 as usize * self.resolution.1 as usize
    }

    pub fn with_resolution(&self, width: u32, height: u32) -> ViewCamera {
        ViewCamera {
            resolution: (width, height),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.resolution;
        if w == 0 || h == 0 {
            return Err(Error::Validation("camera resolution must be positive".into()));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::Validation(format!(
                "camera near/far invalid: {} / {}",
                self.near, self.far
            )));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::Validation(format!("fov {} out of range", self.fov_deg)));
        }
        if self.position.length() <= UNIT_BOX_RADIUS {
            return Err(Error::CameraInsideBounds {
                distance: self.position.length(),
                radius: UNIT_BOX_RADIUS,
            });
        }
        Ok(())
    }
}

impl CameraFrame {
    /// Unit direction of the primary ray through the centre of pixel `(x, y)`.
    pub fn pixel_ray(&self, x: u32, y: u32) -> DVec3 {
        self.ray_through(DVec2::new(x as f64 + 0.5, y as f64 + 0.5))
    }

    /// Unit direction through a continuous image position.
    pub fn ray_through(&self, pixel: DVec2) -> DVec3 {
        let sx = (2.0 * pixel.x / self.width - 1.0) * self.tan_half_x;
        let sy = (1.0 - 2.0 * pixel.y / self.height) * self.tan_half_y;
        (self.forward + self.right * sx + self.up * sy).normalize()
    }

    /// Continuous image position of a world point and its distance along the
    /// forward axis. `None` for points at or behind the camera plane.
    pub fn project(&self, p: DVec3) -> Option<(DVec2, f64)> {
        let rel = p - self.origin;
        let z = rel.dot(self.forward);
        if z <= 1e-9 {
            return None;
        }
        let sx = rel.dot(self.right) / (z * self.tan_half_x);
        let sy = rel.dot(self.up) / (z * self.tan_half_y);
        Some((
            DVec2::new((sx + 1.0) * 0.5 * self.width, (1.0 - sy) * 0.5 * self.height),
            z,
        ))
    }
}

/// Ordered list of views; index order is the canonical reduction order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub views: Vec<ViewCamera>,
}

impl CameraRig {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn with_resolution(&self, width: u32, height: u32) -> CameraRig {
        CameraRig {
            views: self
                .views
                .iter()
                .map(|v| v.with_resolution(width, height))
                .collect(),
        }
    }

    /// Keeps only the listed views, in the given order.
    pub fn subset(&self, indices: &[usize]) -> CameraRig {
        CameraRig {
            views: indices.iter().map(|&i| self.views[i].clone()).collect(),
        }
    }
}

/// Builds the 17-view rig: 8 equatorial views at 45° azimuth spacing, 8 at
/// 45° elevation, then one top view. All views look at the origin from
/// `distance`.
pub fn build_camera_rig(distance: f64, fov_deg: f64, resolution: u32) -> Result<CameraRig> {
    if !(distance > UNIT_BOX_RADIUS) {
        return Err(Error::CameraInsideBounds {
            distance,
            radius: UNIT_BOX_RADIUS,
        });
    }
    if resolution == 0 {
        return Err(Error::Validation("rig resolution must be positive".into()));
    }
    let near = distance - UNIT_BOX_RADIUS;
    let far = distance + UNIT_BOX_RADIUS;
    let camera = |position: DVec3, up: DVec3| ViewCamera {
        position,
        look_at: DVec3::ZERO,
        up,
        fov_deg,
        resolution: (resolution, resolution),
        near,
        far,
    };

    let mut views = Vec::with_capacity(EQUATORIAL_VIEWS + ELEVATED_VIEWS + 1);
    for (count, elevation) in [(EQUATORIAL_VIEWS, 0.0f64), (ELEVATED_VIEWS, ELEVATION_DEG)] {
        let el = elevation.to_radians();
        for i in 0..count {
            let az = (i as f64 * 360.0 / count as f64).to_radians();
            let dir = DVec3::new(el.cos() * az.cos(), el.sin(), el.cos() * az.sin());
            views.push(camera(dir * distance, DVec3::Y));
        }
    }
    views.push(camera(DVec3::Y * distance, DVec3::NEG_Z));
    let rig = CameraRig { views };
    for v in &rig.views {
        v.validate()?;
    }
    Ok(rig)
}
