//! Synthetic labeled captures: Lambertian scenes under a moving point light,
//! with events from log-intensity thresholding.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eventrep::{EventRecord, EventStream, Polarity};
use crate::imaging::{Image, Mask};
use crate::{par, Error, Result};

/// Default RGB frame period, 90 frames per second.
pub const DEFAULT_FRAME_PERIOD: f64 = 1.0 / 90.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    Sphere,
    Blob,
    Ramp,
}

impl FromStr for SceneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(SceneKind::Sphere),
            "blob" => Ok(SceneKind::Blob),
            "ramp" => Ok(SceneKind::Ramp),
            other => Err(Error::invalid(format!("unknown scene `{other}` (sphere, blob, ramp)"))),
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SceneKind::Sphere => "sphere",
            SceneKind::Blob => "blob",
            SceneKind::Ramp => "ramp",
        })
    }
}

/// Spiral over the hemisphere: polar angle from `polar_start` to
/// `polar_end`, azimuth from 0 to `turns * 2 pi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trajectory {
    pub polar_start: f64,
    pub polar_end: f64,
    pub turns: f64,
}

impl Default for Trajectory {
    fn default() -> Self {
        Self {
            polar_start: 15f64.to_radians(),
            polar_end: 60f64.to_radians(),
            turns: 2.0,
        }
    }
}

impl Trajectory {
    /// Direction at curve parameter `s` in `[0, 1]`.
    pub fn at(&self, s: f64) -> Vector3<f64> {
        let polar = self.polar_start + (self.polar_end - self.polar_start) * s;
        let azimuth = 2.0 * PI * self.turns * s;
        Vector3::new(polar.sin() * azimuth.cos(), polar.sin() * azimuth.sin(), polar.cos())
    }

    /// `frames` evenly spaced directions from start to end.
    pub fn sample(&self, frames: usize) -> Vec<Vector3<f64>> {
        (0..frames)
            .map(|f| self.at(if frames > 1 { f as f64 / (frames - 1) as f64 } else { 0.0 }))
            .collect()
    }
}

/// Surface geometry, albedo and lighting of a synthetic scene. Normals use
/// image axes: `x` right, `y` down, `z` toward the camera.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub width: usize,
    pub height: usize,
    pub normals: Vec<Vector3<f64>>,
    pub mask: Mask,
    pub albedo: Vec<[f64; 3]>,
    pub ambient: f64,
    pub trajectory: Trajectory,
}

fn smooth_albedo(width: usize, height: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.55..0.85));
    let (fx, fy, phase) = (rng.gen_range(1.0..3.0), rng.gen_range(1.0..3.0), rng.gen_range(0.0..PI));
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let u = x as f64 / width as f64;
            let v = y as f64 / height as f64;
            let wave = 0.1 * (2.0 * PI * (fx * u + fy * v) + phase).sin();
            out.push(base.map(|b| (b + wave).clamp(0.0, 1.0)));
        }
    }
    out
}

impl SceneSpec {
    /// Builds a scene of `kind`; the seed drives blob placement and albedo.
    pub fn new(kind: SceneKind, width: usize, height: usize, ambient: f64, seed: u64) -> Result<Self> {
        if width == 0 || height == 0 || width > u16::MAX as usize || height > u16::MAX as usize {
            return Err(Error::invalid(format!("unsupported image size {width}x{height}")));
        }
        if !(0.0..1.0).contains(&ambient) {
            return Err(Error::invalid(format!("ambient must be in [0, 1), got {ambient}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (normals, mask) = match kind {
            SceneKind::Sphere => sphere_normals(width, height),
            SceneKind::Blob => blob_normals(width, height, &mut rng),
            SceneKind::Ramp => ramp_normals(width, height),
        };
        let albedo = smooth_albedo(width, height, &mut rng);
        Ok(Self {
            kind,
            width,
            height,
            normals,
            mask,
            albedo,
            ambient,
            trajectory: Trajectory::default(),
        })
    }

    pub fn with_uniform_albedo(mut self, rgb: [f64; 3]) -> Self {
        self.albedo = vec![rgb; self.width * self.height];
        self
    }

    pub fn normal(&self, x: usize, y: usize) -> Vector3<f64> {
        self.normals[y * self.width + x]
    }
}

fn sphere_normals(width: usize, height: usize) -> (Vec<Vector3<f64>>, Mask) {
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let r = 0.45 * width.min(height) as f64;
    let mut normals = vec![Vector3::z(); width * height];
    let mut mask = Mask::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let u = (x as f64 + 0.5 - cx) / r;
            let v = (y as f64 + 0.5 - cy) / r;
            let q = u * u + v * v;
            if q < 1.0 {
                normals[y * width + x] = Vector3::new(u, v, (1.0 - q).sqrt()).normalize();
                mask.set(x, y, true);
            }
        }
    }
    (normals, mask)
}

/// Height field `sum_k a_k exp(-|p - c_k|^2 / (2 s_k^2))` in pixel units; the
/// mask keeps pixels above a tenth of the peak height.
fn blob_normals(width: usize, height: usize, rng: &mut ChaCha8Rng) -> (Vec<Vector3<f64>>, Mask) {
    let size = width.min(height) as f64;
    let bumps: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let s = rng.gen_range(0.12..0.22) * size;
            (
                rng.gen_range(0.3..0.7) * width as f64,
                rng.gen_range(0.3..0.7) * height as f64,
                s,
                rng.gen_range(0.8..1.6) * s,
            )
        })
        .collect();
    let mut heights = vec![0.0; width * height];
    let mut normals = vec![Vector3::z(); width * height];
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let (mut h, mut gx, mut gy) = (0.0, 0.0, 0.0);
            for &(cx, cy, s, a) in &bumps {
                let (dx, dy) = (px - cx, py - cy);
                let g = a * (-(dx * dx + dy * dy) / (2.0 * s * s)).exp();
                h += g;
                gx -= g * dx / (s * s);
                gy -= g * dy / (s * s);
            }
            heights[y * width + x] = h;
            normals[y * width + x] = Vector3::new(-gx, -gy, 1.0).normalize();
        }
    }
    let peak = heights.iter().cloned().fold(0.0, f64::max);
    let mut mask = Mask::new(width, height);
    for (i, &h) in heights.iter().enumerate() {
        mask.data[i] = h > 0.1 * peak;
    }
    (normals, mask)
}

/// A roof of two planes meeting along the vertical center line.
fn ramp_normals(width: usize, height: usize) -> (Vec<Vector3<f64>>, Mask) {
    let slope = 0.6;
    let mut normals = Vec::with_capacity(width * height);
    for _y in 0..height {
        for x in 0..width {
            let s = if (x as f64 + 0.5) < width as f64 / 2.0 { slope } else { -slope };
            normals.push(Vector3::new(-s, 0.0, 1.0).normalize());
        }
    }
    let margin = width.min(height) / 8;
    let mut mask = Mask::new(width, height);
    for y in margin..height - margin {
        for x in margin..width - margin {
            mask.set(x, y, true);
        }
    }
    (normals, mask)
}

/// `clamp(albedo_c max(0, n.l) + a, 0, 1)` on masked pixels, black elsewhere.
pub fn render_frame(scene: &SceneSpec, l: &Vector3<f64>) -> Image {
    let mut img = Image::new(scene.width, scene.height, 3);
    for y in 0..scene.height {
        for x in 0..scene.width {
            if !scene.mask.get(x, y) {
                continue;
            }
            let i = y * scene.width + x;
            let shade = scene.normals[i].dot(l).max(0.0);
            for c in 0..3 {
                img.set(x, y, c, (scene.albedo[i][c] * shade + scene.ambient).clamp(0.0, 1.0) as f32);
            }
        }
    }
    img
}

/// Unclamped gray irradiance `mean_c(albedo_c) max(0, n.l) + a` per pixel.
pub fn irradiance(scene: &SceneSpec, l: &Vector3<f64>) -> Vec<f64> {
    (0..scene.width * scene.height)
        .map(|i| {
            if !scene.mask.data[i] {
                return 0.0;
            }
            let a = scene.albedo[i];
            (a[0] + a[1] + a[2]) / 3.0 * scene.normals[i].dot(l).max(0.0) + scene.ambient
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventSimConfig {
    /// Contrast threshold in log-intensity units.
    pub contrast: f64,
    /// Offset inside the logarithm.
    pub log_eps: f64,
    /// Irradiance samples per frame interval.
    pub substeps: usize,
}

impl Default for EventSimConfig {
    fn default() -> Self {
        Self {
            contrast: 0.15,
            log_eps: 1e-3,
            substeps: 8,
        }
    }
}

impl EventSimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.contrast > 0.0 && self.contrast.is_finite() && self.log_eps > 0.0 && self.log_eps.is_finite()) {
            return Err(Error::invalid("contrast and log offset must be finite and positive"));
        }
        if self.substeps == 0 {
            return Err(Error::invalid("need at least one sub-step per frame"));
        }
        Ok(())
    }
}

/// Per-pixel irradiance sampled at increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct IrradianceSequence {
    pub width: usize,
    pub height: usize,
    pub times: Vec<f64>,
    /// One `width * height` buffer per time.
    pub values: Vec<Vec<f64>>,
}

/// Log-intensity thresholding. Each pixel keeps a reference level; whenever
/// `log(v + eps)` moves `k` thresholds away from it, `k` events fire with
/// timestamps interpolated linearly inside the sampling interval. Output is
/// sorted by `(t, y, x, p)`.
pub fn simulate_events(seq: &IrradianceSequence, cfg: &EventSimConfig) -> Result<Vec<EventRecord>> {
    cfg.validate()?;
    if seq.times.len() < 2 || seq.values.len() != seq.times.len() {
        return Err(Error::invalid("need at least two irradiance samples with matching times"));
    }
    let n = seq.width * seq.height;
    if seq.values.iter().any(|v| v.len() != n) {
        return Err(Error::invalid("irradiance buffers must match the image size"));
    }
    let c = cfg.contrast;
    let per_pixel = par::map_range(n, |i| {
        let (x, y) = ((i % seq.width) as u16, (i / seq.width) as u16);
        let mut out = Vec::new();
        let mut prev = (seq.values[0][i] + cfg.log_eps).ln();
        let mut reference = prev;
        for k in 1..seq.times.len() {
            let cur = (seq.values[k][i] + cfg.log_eps).ln();
            let diff = cur - reference;
            let count = (diff.abs() / c).floor() as usize;
            if count > 0 {
                let sign = diff.signum();
                let (t0, t1) = (seq.times[k - 1], seq.times[k]);
                let p = if sign > 0.0 { Polarity::Positive } else { Polarity::Negative };
                for j in 1..=count {
                    let level = reference + sign * c * j as f64;
                    let frac = ((level - prev) / (cur - prev)).clamp(0.0, 1.0);
                    out.push(EventRecord::new(x, y, t0 + frac * (t1 - t0), p));
                }
                reference += sign * c * count as f64;
            }
            prev = cur;
        }
        out
    });
    let mut events: Vec<EventRecord> = per_pixel.into_iter().flatten().collect();
    events.sort_by(|a, b| {
        a.t.total_cmp(&b.t)
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
            .then(a.p.sign().cmp(&b.p.sign()))
    });
    Ok(events)
}

/// A rendered capture with ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticCapture {
    pub frames: Vec<Image>,
    pub lights: Vec<Vector3<f64>>,
    pub events: EventStream,
    pub frame_period: f64,
    pub mask: Mask,
    /// Ground-truth normals of every pixel; only masked ones are meaningful.
    pub normals: Vec<Vector3<f64>>,
}

impl SyntheticCapture {
    /// Masked pixels in row-major order with their normals.
    pub fn labeled_pixels(&self) -> (Vec<(usize, usize)>, Vec<Vector3<f64>>) {
        let pixels = self.mask.pixels();
        let normals = pixels.iter().map(|&(x, y)| self.normals[y * self.mask.width + x]).collect();
        (pixels, normals)
    }
}

/// Renders `frames` images along the scene trajectory and simulates events
/// over the `frames - 1` intervals between them.
pub fn generate_dataset(
    scene: &SceneSpec,
    frames: usize,
    frame_period: f64,
    cfg: &EventSimConfig,
) -> Result<SyntheticCapture> {
    if frames < 2 {
        return Err(Error::invalid("need at least 2 frames"));
    }
    if !(frame_period > 0.0) {
        return Err(Error::invalid("frame period must be positive"));
    }
    cfg.validate()?;
    let lights = scene.trajectory.sample(frames);
    let rendered = par::map_slice(&lights, |l| render_frame(scene, l));
    let steps = (frames - 1) * cfg.substeps;
    let times: Vec<f64> = (0..=steps)
        .map(|k| k as f64 / cfg.substeps as f64 * frame_period)
        .collect();
    let values = par::map_range(steps + 1, |k| {
        irradiance(scene, &scene.trajectory.at(k as f64 / steps as f64))
    });
    let seq = IrradianceSequence {
        width: scene.width,
        height: scene.height,
        times,
        values,
    };
    let events = simulate_events(&seq, cfg)?;
    Ok(SyntheticCapture {
        frames: rendered,
        lights,
        events: EventStream {
            width: scene.width,
            height: scene.height,
            events,
        },
        frame_period,
        mask: scene.mask.clone(),
        normals: scene.normals.clone(),
    })
}
