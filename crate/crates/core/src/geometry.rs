//! Oriented 3D boxes and planar ego poses.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Centroid, dimensions and heading of an object, in meters and radians.
///
/// `yaw` is measured about the vertical axis from the lateral `x` axis, so a
/// vehicle driving straight ahead (along `y`) has `yaw = π/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
}

impl BoundingBox3D {
    pub fn new(center: [f64; 3], dims: [f64; 3], yaw: f64) -> Self {
        Self { cx: center[0], cy: center[1], cz: center[2], l: dims[0], w: dims[1], h: dims[2], yaw: normalize_angle(yaw) }
    }

    pub fn center(&self) -> [f64; 3] {
        [self.cx, self.cy, self.cz]
    }

    pub fn params(&self) -> [f64; 7] {
        [self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw]
    }

    pub fn is_valid(&self) -> bool {
        self.params().iter().all(|v| v.is_finite()) && self.l > 0.0 && self.w > 0.0 && self.h > 0.0
    }

    pub fn distance(&self, other: &Self) -> f64 {
        let d = [self.cx - other.cx, self.cy - other.cy, self.cz - other.cz];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }
}

/// Planar vehicle pose in a fixed world frame plus a height offset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EgoPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl EgoPose {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self { x, y, z, yaw }
    }

    /// Maps a point from this pose's local frame to the world frame.
    pub fn to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1], self.z + p[2]]
    }

    /// Maps a world point into this pose's local frame.
    pub fn to_local(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (p[0] - self.x, p[1] - self.y);
        [c * dx + s * dy, -s * dx + c * dy, p[2] - self.z]
    }

    /// Rotates a direction (no translation) from this frame into `to`.
    pub fn rotate_into(&self, to: &EgoPose, v: [f64; 3]) -> [f64; 3] {
        let (s, c) = (self.yaw - to.yaw).sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
    }
}

/// Re-expresses a box observed in `from`'s frame in `to`'s frame.
pub fn ego_compensate(b: &BoundingBox3D, from: &EgoPose, to: &EgoPose) -> BoundingBox3D {
    let p = to.to_local(from.to_world(b.center()));
    BoundingBox3D { cx: p[0], cy: p[1], cz: p[2], yaw: normalize_angle(b.yaw + from.yaw - to.yaw), ..*b }
}

/// Birds-eye-view IoU of the axis-aligned footprints (`l` along `x`,
/// `w` along `y`); heading is ignored.
pub fn iou_bev(a: &BoundingBox3D, b: &BoundingBox3D) -> f64 {
    let ix = overlap(a.cx, a.l, b.cx, b.l);
    let iy = overlap(a.cy, a.w, b.cy, b.w);
    let inter = ix * iy;
    let union = a.l * a.w + b.l * b.w - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

fn overlap(c1: f64, e1: f64, c2: f64, e2: f64) -> f64 {
    let lo = (c1 - e1 / 2.0).max(c2 - e2 / 2.0);
    let hi = (c1 + e1 / 2.0).min(c2 + e2 / 2.0);
    (hi - lo).max(0.0)
}
