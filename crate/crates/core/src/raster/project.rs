use nalgebra::{Matrix2x3, Matrix3, Quaternion, UnitQuaternion, Vector3};

use super::{ALPHA_MAX, ALPHA_MIN, EXTENT_SIGMAS, LOW_PASS, NEAR_PLANE};
use crate::scene::{Camera, GaussianPrimitive};

/// A primitive projected into one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatFragment {
    pub index: usize,
    /// Pixel-space mean.
    pub mean: [f64; 2],
    /// Symmetric 2x2 covariance `[a, b, c]` = `[[a, b], [b, c]]`, low-pass included.
    pub cov: [f64; 3],
    /// Inverse of `cov` in the same packing.
    pub conic: [f64; 3],
    pub depth: f64,
    /// `sigmoid(opacity_logit)`.
    pub opacity: f64,
    /// Inclusive pixel bounds `[x0, x1, y0, y1]` clipped to the image.
    pub bounds: [usize; 4],
}

/// Alpha of a fragment at one pixel, with what the backward pass needs.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PixelAlpha {
    pub alpha: f64,
    pub gauss: f64,
    pub clamped: bool,
}

impl SplatFragment {
    /// Gaussian falloff at pixel center `(x + 0.5, y + 0.5)`.
    pub fn falloff(&self, x: usize, y: usize) -> f64 {
        let dx = x as f64 + 0.5 - self.mean[0];
        let dy = y as f64 + 0.5 - self.mean[1];
        let [a, b, c] = self.conic;
        let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
        power.min(0.0).exp()
    }

    /// Clamped alpha at a pixel, or `None` when below [`ALPHA_MIN`].
    pub fn alpha_at(&self, x: usize, y: usize) -> Option<f64> {
        self.pixel_alpha(x, y).map(|p| p.alpha)
    }

    pub(crate) fn pixel_alpha(&self, x: usize, y: usize) -> Option<PixelAlpha> {
        let gauss = self.falloff(x, y);
        let raw = self.opacity * gauss;
        if raw < ALPHA_MIN {
            return None;
        }
        let clamped = raw > ALPHA_MAX;
        Some(PixelAlpha { alpha: raw.min(ALPHA_MAX), gauss, clamped })
    }
}

pub(crate) fn rotation_matrix(q: &[f32; 4]) -> Matrix3<f64> {
    let q = Quaternion::new(q[0] as f64, q[1] as f64, q[2] as f64, q[3] as f64);
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

/// EWA projection of one primitive.
///
/// Returns `None` when the centroid is at or behind the near plane, when the
/// opacity can never reach [`ALPHA_MIN`], or when the footprint misses the image.
pub fn project(prim: &GaussianPrimitive, index: usize, camera: &Camera) -> Option<SplatFragment> {
    let opacity = prim.opacity();
    if opacity < ALPHA_MIN {
        return None;
    }
    let world = prim.centroid.map(|c| c as f64);
    let [x, y, z] = camera.to_camera(world);
    if z <= NEAR_PLANE {
        return None;
    }

    let m = &camera.world_to_camera;
    let view_rot = Matrix3::new(m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]);
    let rot = rotation_matrix(&prim.rotation);
    let s = prim.scale();
    let scale = Matrix3::from_diagonal(&Vector3::new(s[0], s[1], s[2]));
    let rs = rot * scale;
    let cov3 = rs * rs.transpose();

    let jac =
        Matrix2x3::new(camera.fx / z, 0.0, -camera.fx * x / (z * z), 0.0, camera.fy / z, -camera.fy * y / (z * z));
    let t = jac * view_rot;
    let cov2 = t * cov3 * t.transpose();
    let a = cov2[(0, 0)] + LOW_PASS;
    let b = 0.5 * (cov2[(0, 1)] + cov2[(1, 0)]);
    let c = cov2[(1, 1)] + LOW_PASS;
    let det = a * c - b * b;
    if det <= 0.0 || !det.is_finite() {
        return None;
    }
    let conic = [c / det, -b / det, a / det];

    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = (EXTENT_SIGMAS * lambda_max.sqrt()).ceil();

    let mean = [camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy];
    // pixel x covers center x + 0.5
    let x0 = (mean[0] - radius - 0.5).ceil();
    let x1 = (mean[0] + radius - 0.5).floor();
    let y0 = (mean[1] - radius - 0.5).ceil();
    let y1 = (mean[1] + radius - 0.5).floor();
    let (w, h) = (camera.width as f64, camera.height as f64);
    if x1 < 0.0 || y1 < 0.0 || x0 > w - 1.0 || y0 > h - 1.0 || !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    let bounds = [x0.max(0.0) as usize, x1.min(w - 1.0) as usize, y0.max(0.0) as usize, y1.min(h - 1.0) as usize];

    Some(SplatFragment { index, mean, cov: [a, b, c], conic, depth: z, opacity, bounds })
}
