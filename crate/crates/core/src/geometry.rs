//! Polar representation of object locations.
//!
//! A location is stored as the angle difference between a reference camera
//! ray and the ray through the object center: heading in `[-π, π)` and
//! elevation in `[-π/2, π/2]`, up positive.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    if (-PI..PI).contains(&a) {
        return a;
    }
    let w = (a + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarPoint {
    pub heading: f64,
    pub elevation: f64,
}

impl PolarPoint {
    pub fn new(heading: f64, elevation: f64) -> Self {
        Self {
            heading: wrap_angle(heading),
            elevation: elevation.clamp(-PI / 2.0, PI / 2.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarExtent {
    pub center: PolarPoint,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub x: f64,
    pub y: f64,
}

impl PixelPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Pinhole camera looking along (`heading`, `elevation`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: f64,
    pub height: f64,
    pub fov_h: f64,
    pub fov_v: f64,
    pub heading: f64,
    pub elevation: f64,
}

impl Camera {
    pub fn new(width: f64, height: f64, fov_h: f64, fov_v: f64) -> Self {
        Self {
            width,
            height,
            fov_h,
            fov_v,
            heading: 0.0,
            elevation: 0.0,
        }
    }

    pub fn looking(mut self, heading: f64, elevation: f64) -> Self {
        self.heading = heading;
        self.elevation = elevation;
        self
    }

    /// Inverse of [`pixel_to_polar`] for angle offsets relative to this camera.
    pub fn project(&self, d_heading: f64, d_elevation: f64) -> PixelPoint {
        let hw = self.width / 2.0;
        let hh = self.height / 2.0;
        PixelPoint {
            x: hw + hw * d_heading.tan() / (self.fov_h / 2.0).tan(),
            y: hh - hh * d_elevation.tan() / (self.fov_v / 2.0).tan(),
        }
    }
}

/// Mean of the four box vertices.
pub fn bbox_center(p1: PixelPoint, p2: PixelPoint, p3: PixelPoint, p4: PixelPoint) -> PixelPoint {
    PixelPoint {
        x: (p1.x + p2.x + p3.x + p4.x) / 4.0,
        y: (p1.y + p2.y + p3.y + p4.y) / 4.0,
    }
}

/// Angle difference between the camera's optical axis and the ray through `p`.
///
/// The returned point is relative to the camera ray; add the camera's own
/// heading/elevation for an absolute direction (see [`pixel_to_direction`]).
pub fn pixel_to_polar(p: PixelPoint, camera: &Camera) -> Result<PolarPoint> {
    if !(0.0..=camera.width).contains(&p.x) || !(0.0..=camera.height).contains(&p.y) {
        return Err(Error::Config(format!(
            "pixel ({}, {}) outside {}x{} image",
            p.x, p.y, camera.width, camera.height
        )));
    }
    let hw = camera.width / 2.0;
    let hh = camera.height / 2.0;
    let d_heading = (((p.x - hw) / hw) * (camera.fov_h / 2.0).tan()).atan();
    // image y grows downwards; elevation grows upwards
    let d_elevation = (((hh - p.y) / hh) * (camera.fov_v / 2.0).tan()).atan();
    Ok(PolarPoint::new(d_heading, d_elevation))
}

/// Absolute direction of pixel `p` for a camera with a non-zero pose.
pub fn pixel_to_direction(p: PixelPoint, camera: &Camera) -> Result<PolarPoint> {
    let rel = pixel_to_polar(p, camera)?;
    Ok(PolarPoint::new(
        camera.heading + rel.heading,
        camera.elevation + rel.elevation,
    ))
}

/// Inclusive box test with heading wraparound.
pub fn localization_hit(pred: PolarPoint, extent: &PolarExtent) -> bool {
    let dh = wrap_angle(pred.heading - extent.center.heading).abs();
    let de = (pred.elevation - extent.center.elevation).abs();
    dh <= extent.width / 2.0 && de <= extent.height / 2.0
}
