//! Calibration geometry: lens distortion, RGB-to-event plane transfer and
//! chrome-ball light recovery.
//!
//! Pixel coordinates are `(x, y)` with `x` along image columns. Camera frames
//! follow the pinhole convention: the optical axis is `+z`, pointing into the
//! scene.

use nalgebra::{Matrix3, Matrix3x4, Vector2, Vector3, Vector4};

use crate::imaging::{Image, Mask};
use crate::{Error, Result};

/// Default saturation level for highlight detection, as a fraction of full scale.
pub const SATURATION_THRESHOLD: f32 = 0.98;

const INVERSION_MAX_ITERS: usize = 50;
const INVERSION_TOL_PX: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Dimensionless skew coefficient.
    pub alpha: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, alpha: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || ![cx, cy, alpha].iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateIntrinsics);
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            alpha,
        })
    }

    /// The 3x3 intrinsic matrix. The skew entry is `alpha * fx` so that
    /// [`CameraIntrinsics::normalize`] is its exact inverse.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx,
            self.alpha * self.fx,
            self.cx,
            0.0,
            self.fy,
            self.cy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Pixel to normalized image coordinates.
    pub fn normalize(&self, pixel: Vector2<f64>) -> Vector2<f64> {
        let yn = (pixel.y - self.cy) / self.fy;
        let xn = (pixel.x - self.cx) / self.fx - self.alpha * yn;
        Vector2::new(xn, yn)
    }

    /// Normalized image coordinates to pixels.
    pub fn project(&self, n: Vector2<f64>) -> Vector2<f64> {
        Vector2::new(
            self.fx * (n.x + self.alpha * n.y) + self.cx,
            self.fy * n.y + self.cy,
        )
    }

    /// Unit viewing ray through a pixel.
    pub fn back_project(&self, pixel: Vector2<f64>) -> Vector3<f64> {
        let n = self.normalize(pixel);
        Vector3::new(n.x, n.y, 1.0).normalize()
    }
}

/// Radial (`k1..k3`) and tangential (`p1, p2`) lens coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DistortionCoeffs {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub p1: f64,
    pub p2: f64,
}

impl DistortionCoeffs {
    pub fn radial(k1: f64) -> Self {
        Self {
            k1,
            ..Self::default()
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }

    fn apply(&self, n: Vector2<f64>) -> Vector2<f64> {
        let (xn, yn) = (n.x, n.y);
        let r2 = xn * xn + yn * yn;
        let rd = 1.0 + self.k1 * r2 + self.k2 * r2 * r2 + self.k3 * r2 * r2 * r2;
        let tx = 2.0 * self.p1 * xn * yn + self.p2 * (r2 + 2.0 * xn * xn);
        let ty = 2.0 * self.p2 * xn * yn + self.p1 * (r2 + 2.0 * yn * yn);
        Vector2::new(rd * xn + tx, rd * yn + ty)
    }
}

/// Applies the radial/tangential polynomial to a pixel: normalize through the
/// intrinsics, scale by `1 + k1 r^2 + k2 r^4 + k3 r^6`, add the tangential
/// terms and re-project.
pub fn undistort_point(
    pixel: Vector2<f64>,
    intr: &CameraIntrinsics,
    dist: &DistortionCoeffs,
) -> Result<Vector2<f64>> {
    if !(pixel.x.is_finite() && pixel.y.is_finite()) {
        return Err(Error::invalid("pixel must be finite"));
    }
    if dist.is_zero() {
        return Ok(pixel);
    }
    let out = intr.project(dist.apply(intr.normalize(pixel)));
    if out.x.is_finite() && out.y.is_finite() {
        Ok(out)
    } else {
        Err(Error::DegenerateIntrinsics)
    }
}

/// Finds `q` with `undistort_point(q) ≈ pixel` by fixed-point iteration in
/// normalized coordinates.
pub fn invert_distortion(
    pixel: Vector2<f64>,
    intr: &CameraIntrinsics,
    dist: &DistortionCoeffs,
) -> Result<Vector2<f64>> {
    if dist.is_zero() && pixel.x.is_finite() && pixel.y.is_finite() {
        return Ok(pixel);
    }
    let target = intr.normalize(pixel);
    if !(target.x.is_finite() && target.y.is_finite()) {
        return Err(Error::DegenerateIntrinsics);
    }
    let mut q = target;
    for _ in 0..INVERSION_MAX_ITERS {
        let (xn, yn) = (q.x, q.y);
        let r2 = xn * xn + yn * yn;
        let rd = 1.0 + dist.k1 * r2 + dist.k2 * r2 * r2 + dist.k3 * r2 * r2 * r2;
        let tx = 2.0 * dist.p1 * xn * yn + dist.p2 * (r2 + 2.0 * xn * xn);
        let ty = 2.0 * dist.p2 * xn * yn + dist.p1 * (r2 + 2.0 * yn * yn);
        let next = Vector2::new((target.x - tx) / rd, (target.y - ty) / rd);
        if !(next.x.is_finite() && next.y.is_finite()) {
            return Err(Error::DistortionDiverged);
        }
        let step = (next - q).norm();
        q = next;
        if step < 1e-14 {
            break;
        }
    }
    let out = intr.project(q);
    let residual = (undistort_point(out, intr, dist)? - pixel).norm();
    if residual <= INVERSION_TOL_PX {
        Ok(out)
    } else {
        Err(Error::DistortionDiverged)
    }
}

/// A 3x4 camera projection `P = I * E`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMatrix(Matrix3x4<f64>);

impl ProjectionMatrix {
    pub fn new(m: Matrix3x4<f64>) -> Result<Self> {
        let det = m.fixed_view::<3, 3>(0, 0).determinant();
        if det.abs() < 1e-12 || !det.is_finite() {
            return Err(Error::invalid("projection matrix has singular 3x3 block"));
        }
        Ok(Self(m))
    }

    pub fn from_row_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 12 {
            return Err(Error::invalid(format!(
                "projection matrix needs 12 entries, got {}",
                v.len()
            )));
        }
        Self::new(Matrix3x4::from_row_slice(v))
    }

    /// `intrinsics * [rotation | translation]`.
    pub fn compose(intrinsics: &Matrix3<f64>, extrinsics: &Matrix3x4<f64>) -> Result<Self> {
        Self::new(intrinsics * extrinsics)
    }

    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.0
    }
}

/// Maps an RGB pixel to the event camera through the world plane `z = 0`.
///
/// Solves `[P1 P2 -p] (X, Y, w)^T = -P4` for the plane point `(X, Y)` seen at
/// RGB pixel `p = (x, y, 1)`, then projects `(X, Y, 0, 1)` with the event
/// camera and divides by the homogeneous coordinate.
pub fn transfer_rgb_to_event(
    pixel_rgb: Vector2<f64>,
    p_rgb: &ProjectionMatrix,
    p_e: &ProjectionMatrix,
) -> Result<Vector2<f64>> {
    let p = p_rgb.matrix();
    let system = Matrix3::from_columns(&[
        p.column(0).into_owned(),
        p.column(1).into_owned(),
        Vector3::new(-pixel_rgb.x, -pixel_rgb.y, -1.0),
    ]);
    let scale = system.abs().max().max(1.0);
    if system.determinant().abs() <= 1e-12 * scale.powi(3) {
        return Err(Error::RayParallelToPlane);
    }
    let inv = system.try_inverse().ok_or(Error::RayParallelToPlane)?;
    let plane = -(inv * p.column(3));
    let world = Vector4::new(plane.x, plane.y, 0.0, 1.0);
    let projected = p_e.matrix() * world;
    let phi = projected.z;
    let mag = projected.x.abs().max(projected.y.abs()).max(1.0);
    if phi.abs() <= 1e-12 * mag {
        return Err(Error::PointAtInfinity);
    }
    Ok(Vector2::new(projected.x / phi, projected.y / phi))
}

/// Distances along the viewing ray through a chrome-ball highlight (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HighlightGeometry {
    /// Camera to ball center.
    pub d_s: f64,
    /// Ball center to the highlight ray.
    pub d_1: f64,
    /// Camera to the foot of the perpendicular from the center.
    pub d_2: f64,
    /// Half chord of the ray inside the ball.
    pub d_3: f64,
    /// Camera to highlight.
    pub d_h: f64,
}

/// `beta` is the half-angle the ball subtends at the camera, `gamma` the
/// angle between the center ray and the highlight ray.
pub fn highlight_depth(beta: f64, gamma: f64, r_s: f64) -> Result<HighlightGeometry> {
    if !(r_s > 0.0) || !beta.is_finite() || !gamma.is_finite() {
        return Err(Error::invalid("chrome ball radius and angles must be positive and finite"));
    }
    let sin_beta = beta.sin();
    if sin_beta <= 0.0 {
        return Err(Error::DegenerateBearing);
    }
    let d_s = r_s / sin_beta;
    let d_1 = d_s * gamma.sin();
    let d_2 = d_s * gamma.cos();
    // allow rounding at exact tangency
    let slack = 1e-12 * r_s;
    if d_1 > r_s + slack {
        return Err(Error::RayMissesSphere);
    }
    let d_3 = (r_s * r_s - d_1 * d_1).max(0.0).sqrt();
    Ok(HighlightGeometry {
        d_s,
        d_1,
        d_2,
        d_3,
        d_h: d_2 - d_3,
    })
}

/// Mirror reflection at the highlight: with `R = (h - O) / d_h` and
/// `N = unit(h - s)`, returns `L = 2 (N . R) N - R`.
pub fn light_direction(
    h: Vector3<f64>,
    s: Vector3<f64>,
    camera_origin: Vector3<f64>,
    d_h: f64,
) -> Result<Vector3<f64>> {
    if !(d_h > 0.0) {
        return Err(Error::invalid("highlight distance must be positive"));
    }
    let hs = h - s;
    let len = hs.norm();
    if !(len > 0.0) {
        return Err(Error::HighlightAtBallCenter);
    }
    let r = (h - camera_origin) / d_h;
    let n = hs / len;
    Ok(2.0 * n.dot(&r) * n - r)
}

/// Centroid of the pixels at or above `threshold` inside `ball_mask`.
pub fn detect_highlight(frame: &Image, ball_mask: &Mask, threshold: f32) -> Result<Vector2<f64>> {
    if frame.width != ball_mask.width || frame.height != ball_mask.height {
        return Err(Error::ShapeMismatch {
            op: "detect_highlight",
            expected: vec![ball_mask.height, ball_mask.width],
            actual: vec![frame.height, frame.width],
        });
    }
    let (mut sx, mut sy, mut count) = (0.0f64, 0.0f64, 0usize);
    for y in 0..frame.height {
        for x in 0..frame.width {
            if !ball_mask.get(x, y) {
                continue;
            }
            let v = frame.pixel(x, y).iter().sum::<f32>() / frame.channels as f32;
            if v >= threshold {
                sx += x as f64;
                sy += y as f64;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::NoHighlightFound);
    }
    Ok(Vector2::new(sx / count as f64, sy / count as f64))
}

/// A chrome ball seen by a calibrated camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChromeBallObservation {
    /// Ball center in camera coordinates (mm).
    pub center: Vector3<f64>,
    pub radius: f64,
    pub highlight_px: Vector2<f64>,
    pub camera_origin: Vector3<f64>,
    pub beta: f64,
    pub gamma: f64,
}

impl ChromeBallObservation {
    /// Derives the bearing angles by back-projecting the highlight pixel.
    pub fn from_highlight(
        highlight_px: Vector2<f64>,
        intr: &CameraIntrinsics,
        center: Vector3<f64>,
        radius: f64,
    ) -> Result<Self> {
        let camera_origin = Vector3::zeros();
        let to_center = center - camera_origin;
        let dist = to_center.norm();
        if !(radius > 0.0) || dist <= radius {
            return Err(Error::DegenerateBearing);
        }
        let ray = intr.back_project(highlight_px);
        let cos_gamma = ray.dot(&(to_center / dist)).clamp(-1.0, 1.0);
        Ok(Self {
            center,
            radius,
            highlight_px,
            camera_origin,
            beta: (radius / dist).asin(),
            gamma: cos_gamma.acos(),
        })
    }

    /// Highlight position in camera coordinates and the recovered light.
    pub fn recover_light(&self, intr: &CameraIntrinsics) -> Result<(Vector3<f64>, Vector3<f64>)> {
        let geo = highlight_depth(self.beta, self.gamma, self.radius)?;
        let h = self.camera_origin + geo.d_h * intr.back_project(self.highlight_px);
        let l = light_direction(h, self.center, self.camera_origin, geo.d_h)?;
        Ok((h, l))
    }
}
