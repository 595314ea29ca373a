//! Per-pixel warp evaluation shared by the solvers and the losses.

use nalgebra::{Matrix3, Vector3, Vector6};

use crate::geometry::{rodrigues_with_derivatives, CameraIntrinsics, NormalizedPoint, Pose6D, EPSILON_Z};

/// A pose with its rotation matrix and rotation derivatives evaluated once.
#[derive(Clone, Debug)]
pub(crate) struct PoseFrame {
    pub r: Matrix3<f64>,
    pub dr: [Matrix3<f64>; 3],
    pub t: Vector3<f64>,
}

impl PoseFrame {
    pub fn new(p: &Pose6D) -> Self {
        let (r, dr) = rodrigues_with_derivatives(&p.omega);
        PoseFrame { r, dr, t: p.t }
    }

    /// Scaled source-frame point `R·x̃ + d·t`.
    #[inline]
    pub fn point(&self, x: NormalizedPoint, d: f64) -> Vector3<f64> {
        self.r * x.homogeneous() + d * self.t
    }

    /// Warped pixel coordinates, or `None` behind the camera.
    #[inline]
    pub fn pixel(&self, k: &CameraIntrinsics, x: NormalizedPoint, d: f64) -> Option<(f64, f64, Vector3<f64>)> {
        let p = self.point(x, d);
        if p.z <= EPSILON_Z {
            return None;
        }
        let (u, v) = k.to_pixel(NormalizedPoint::new(p.x / p.z, p.y / p.z));
        Some((u, v, p))
    }

    /// Pulls a gradient on the warped pixel coordinate back to the inverse
    /// depth and the pose parameters `(t, ω)`.
    #[inline]
    pub fn backprop(
        &self,
        k: &CameraIntrinsics,
        x: NormalizedPoint,
        d: f64,
        p: &Vector3<f64>,
        grad_pixel: [f64; 2],
    ) -> (f64, Vector6<f64>) {
        let gx = grad_pixel[0] * k.fx;
        let gy = grad_pixel[1] * k.fy;
        let iz = 1.0 / p.z;
        let gp = Vector3::new(gx * iz, gy * iz, -(gx * p.x + gy * p.y) * iz * iz);
        let xh = x.homogeneous();
        let gd = gp.dot(&self.t);
        let gt = gp * d;
        let mut out = Vector6::zeros();
        out[0] = gt.x;
        out[1] = gt.y;
        out[2] = gt.z;
        for j in 0..3 {
            out[3 + j] = gp.dot(&(self.dr[j] * xh));
        }
        (gd, out)
    }
}

/// Normalized coordinates of every pixel center, row-major.
pub(crate) fn pixel_rays(k: &CameraIntrinsics, width: usize, height: usize) -> Vec<NormalizedPoint> {
    let mut out = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            out.push(k.normalize(col as f64, row as f64));
        }
    }
    out
}
