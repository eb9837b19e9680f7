//! Pinhole cameras in the OpenCV convention (x right, y down, z forward).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Aabb, Point3};
use crate::render::Ray;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Square pixels with the principal point at the image center.
    pub fn from_fov(width: usize, height: usize, fov_x_deg: f64) -> Self {
        let f = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Intrinsics {
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Camera-to-world rigid transform, row-major.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose(pub [[f64; 4]; 4]);

impl Pose {
    /// Camera at `eye` looking at `target`; `up` is the world up hint.
    pub fn look_at(eye: Point3, target: Point3, up: Point3) -> Result<Self> {
        let z = normalize(sub(target, eye)).ok_or_else(|| Error::InvalidInput("eye equals target".into()))?;
        // Image y points down, so camera y is the negated up direction.
        let x = normalize(cross(z, up)).ok_or_else(|| Error::InvalidInput("view direction parallel to up".into()))?;
        let y = cross(z, x);
        Ok(Pose([
            [x[0], y[0], z[0], eye[0]],
            [x[1], y[1], z[1], eye[1]],
            [x[2], y[2], z[2], eye[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]))
    }

    pub fn position(&self) -> Point3 {
        [self.0[0][3], self.0[1][3], self.0[2][3]]
    }

    pub fn rotate(&self, v: Point3) -> Point3 {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    /// Forward (optical) axis in world coordinates.
    pub fn forward(&self) -> Point3 {
        self.rotate([0.0, 0.0, 1.0])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl Camera {
    /// World-space unit direction through the center of pixel `(u, v)`.
    pub fn direction(&self, u: usize, v: usize) -> Point3 {
        let k = &self.intrinsics;
        let d = [(u as f64 + 0.5 - k.cx) / k.fx, (v as f64 + 0.5 - k.cy) / k.fy, 1.0];
        normalize(self.pose.rotate(d)).expect("nonzero direction")
    }

    /// Ray through pixel `(u, v)`, clipped to `bounds`. Cameras are expected
    /// to sit inside the bounds.
    pub fn ray(&self, u: usize, v: usize, bounds: &Aabb) -> Result<Ray> {
        let origin = self.pose.position();
        let dir = self.direction(u, v);
        let (t0, t1) = bounds
            .ray_interval(origin, dir)
            .ok_or_else(|| Error::InvalidInput(format!("pixel ({u}, {v}) ray misses the scene bounds")))?;
        Ray::new(origin, dir, t0.max(0.0), t1)
    }

    /// Ray for a flat pixel index `v * width + u`.
    pub fn ray_for_pixel(&self, pixel: usize, bounds: &Aabb) -> Result<Ray> {
        let w = self.intrinsics.width;
        self.ray(pixel % w, pixel / w, bounds)
    }
}

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn normalize(a: Point3) -> Option<Point3> {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    (n > 1e-12).then(|| [a[0] / n, a[1] / n, a[2] / n])
}
