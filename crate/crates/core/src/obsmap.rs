//! Per-pixel observation maps: light directions on the unit hemisphere are
//! projected onto an `m x m` grid that records the observed intensity.

use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector3;

use crate::eventrep::EventObservationMap;
use crate::imaging::Image;
use crate::{par, Error, Result};

const UNIT_TOL: f64 = 1e-6;

/// A light direction together with the frame it was captured at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LightSample {
    pub direction: Vector3<f64>,
    pub frame_index: usize,
    /// `[start, end)` in seconds.
    pub window: (f64, f64),
}

impl LightSample {
    pub fn new(direction: Vector3<f64>, frame_index: usize, window: (f64, f64)) -> Result<Self> {
        check_unit(&direction)?;
        if direction.z <= 0.0 {
            return Err(Error::invalid("light must lie on the camera-facing hemisphere"));
        }
        Ok(Self {
            direction,
            frame_index,
            window,
        })
    }
}

fn check_unit(l: &Vector3<f64>) -> Result<()> {
    let norm = l.norm();
    if (norm - 1.0).abs() > UNIT_TOL || !norm.is_finite() {
        return Err(Error::LightNotNormalized { norm });
    }
    Ok(())
}

/// Grid cell of a unit light direction: `(floor(m (lx + 1) / 2), floor(m (ly + 1) / 2))`,
/// clamped to `[0, m - 1]`.
pub fn obs_index(l: &Vector3<f64>, m: usize) -> Result<(usize, usize)> {
    check_unit(l)?;
    Ok((axis_index(l.x, m), axis_index(l.y, m)))
}

#[inline]
fn axis_index(v: f64, m: usize) -> usize {
    let i = (m as f64 * (v + 1.0) / 2.0).floor();
    if i <= 0.0 {
        0
    } else {
        (i as usize).min(m - 1)
    }
}

/// One `m x m` observation map, stored row-major with rows along `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsMap {
    pub m: usize,
    pub data: Vec<f64>,
}

impl ObsMap {
    pub fn zeros(m: usize) -> Self {
        Self {
            m,
            data: vec![0.0; m * m],
        }
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.data[iy * self.m + ix]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, v: f64) {
        self.data[iy * self.m + ix] = v;
    }

    /// Writes `v` unless the cell already holds something larger.
    #[inline]
    pub fn deposit(&mut self, ix: usize, iy: usize, v: f64) {
        let cell = &mut self.data[iy * self.m + ix];
        if v > *cell {
            *cell = v;
        }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }
}

/// Deposits intensity `i` at the cell of light `l`, keeping the maximum.
pub fn project_intensity(l: &Vector3<f64>, i: f64, map: &mut ObsMap) -> Result<()> {
    if !(0.0..=1.0).contains(&i) {
        return Err(Error::IntensityOutOfRange(i));
    }
    let (ix, iy) = obs_index(l, map.m)?;
    map.deposit(ix, iy, i);
    Ok(())
}

/// Red, green and blue observation maps of one pixel across all frames.
pub fn build_rgb_obsmaps(
    frames: &[Image],
    lights: &[LightSample],
    pixel: (usize, usize),
    m: usize,
) -> Result<[ObsMap; 3]> {
    if frames.len() != lights.len() {
        return Err(Error::invalid(format!(
            "{} frames but {} lights",
            frames.len(),
            lights.len()
        )));
    }
    let mut maps = [ObsMap::zeros(m), ObsMap::zeros(m), ObsMap::zeros(m)];
    let (x, y) = pixel;
    for (frame, light) in frames.iter().zip(lights) {
        if frame.channels != 3 {
            return Err(Error::invalid("RGB observation maps need 3-channel frames"));
        }
        if x >= frame.width || y >= frame.height {
            return Err(Error::invalid(format!("pixel ({x}, {y}) outside frame")));
        }
        let px = frame.pixel(x, y);
        for (map, &v) in maps.iter_mut().zip(px) {
            project_intensity(&light.direction, v as f64, map)?;
        }
    }
    Ok(maps)
}

/// `(O_r + O_g + O_b) / max(O_r + O_g + O_b)`.
pub fn normalize_obsmap(r: &ObsMap, g: &ObsMap, b: &ObsMap) -> Result<ObsMap> {
    let m = r.m;
    if g.m != m || b.m != m {
        return Err(Error::ShapeMismatch {
            op: "normalize_obsmap",
            expected: vec![m, m],
            actual: vec![g.m, b.m],
        });
    }
    let mut sum = ObsMap::zeros(m);
    for (i, s) in sum.data.iter_mut().enumerate() {
        *s = r.data[i] + g.data[i] + b.data[i];
    }
    let peak = sum.max();
    if !(peak > 0.0) {
        return Err(Error::EmptyObservationMap);
    }
    for s in sum.data.iter_mut() {
        *s /= peak;
    }
    Ok(sum)
}

/// Everything known about one object pixel: its RGB, normalized and event
/// observation maps and, for labeled data, the ground-truth normal.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMapSet {
    pub pixel: (usize, usize),
    pub rgb: [ObsMap; 3],
    pub normalized: ObsMap,
    pub events: EventObservationMap,
    pub normal: Option<Vector3<f64>>,
}

impl ObservationMapSet {
    pub fn m(&self) -> usize {
        self.normalized.m
    }

    /// Maps in storage order `r, g, b, n, e+, e-`.
    pub fn channels(&self) -> [&ObsMap; 6] {
        [
            &self.rgb[0],
            &self.rgb[1],
            &self.rgb[2],
            &self.normalized,
            &self.events.positive,
            &self.events.negative,
        ]
    }

    fn channels_mut(&mut self) -> [&mut ObsMap; 6] {
        let [r, g, b] = &mut self.rgb;
        [
            r,
            g,
            b,
            &mut self.normalized,
            &mut self.events.positive,
            &mut self.events.negative,
        ]
    }
}

/// Builds the observation-map sets of `pixels`. A pixel that is black in
/// every frame keeps an all-zero normalized map.
pub fn build_samples(
    frames: &[Image],
    lights: &[LightSample],
    events: &[EventObservationMap],
    pixels: &[(usize, usize)],
    normals: Option<&[Vector3<f64>]>,
    m: usize,
) -> Result<Vec<ObservationMapSet>> {
    if events.len() != pixels.len() || normals.is_some_and(|n| n.len() != pixels.len()) {
        return Err(Error::invalid("per-pixel inputs must match the pixel list"));
    }
    par::map_range(pixels.len(), |k| {
        let rgb = build_rgb_obsmaps(frames, lights, pixels[k], m)?;
        let normalized = match normalize_obsmap(&rgb[0], &rgb[1], &rgb[2]) {
            Ok(n) => n,
            Err(Error::EmptyObservationMap) => ObsMap::zeros(m),
            Err(e) => return Err(e),
        };
        Ok(ObservationMapSet {
            pixel: pixels[k],
            rgb,
            normalized,
            events: events[k].clone(),
            normal: normals.map(|n| n[k]),
        })
    })
    .into_iter()
    .collect()
}

/// Rotates a map about its center. Multiples of 90 degrees permute cells
/// exactly. Other angles move every nonzero cell to the cell holding its
/// rotated center; when that cell is taken, the nearest free neighbor is used
/// instead, so repeated rotations do not merge cells. Sources land in order
/// of how close their rotated centers fall to a cell center, which depends
/// only on the support, so maps sharing a support are moved identically.
pub fn rotate_map(map: &ObsMap, angle: f64) -> ObsMap {
    let m = map.m;
    let quarters = angle / FRAC_PI_2;
    if (quarters - quarters.round()).abs() < 1e-9 {
        let q = (quarters.round() as i64).rem_euclid(4);
        let mut out = ObsMap::zeros(m);
        for iy in 0..m {
            for ix in 0..m {
                let (tx, ty) = match q {
                    0 => (ix, iy),
                    1 => (m - 1 - iy, ix),
                    2 => (m - 1 - ix, m - 1 - iy),
                    _ => (iy, m - 1 - ix),
                };
                out.set(tx, ty, map.get(ix, iy));
            }
        }
        return out;
    }
    let (s, c) = angle.sin_cos();
    let half = m as f64 / 2.0;
    // (distance to the landing cell's center, source index, continuous target)
    let mut moves: Vec<(f64, usize, f64, f64)> = Vec::new();
    for iy in 0..m {
        for ix in 0..m {
            if map.get(ix, iy) == 0.0 {
                continue;
            }
            let (u, w) = (ix as f64 + 0.5 - half, iy as f64 + 0.5 - half);
            let (fx, fy) = (c * u - s * w + half, s * u + c * w + half);
            let (cx, cy) = (clamp_cell(fx, m), clamp_cell(fy, m));
            let d = (fx - cx as f64 - 0.5).hypot(fy - cy as f64 - 0.5);
            moves.push((d, iy * m + ix, fx, fy));
        }
    }
    moves.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out = ObsMap::zeros(m);
    let mut taken = vec![false; m * m];
    for &(_, src, fx, fy) in &moves {
        let v = map.data[src];
        let (cx, cy) = (clamp_cell(fx, m), clamp_cell(fy, m));
        let mut best: Option<(f64, usize)> = None;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (tx, ty) = (cx as i64 + dx, cy as i64 + dy);
                if tx < 0 || ty < 0 || tx >= m as i64 || ty >= m as i64 {
                    continue;
                }
                let t = ty as usize * m + tx as usize;
                if taken[t] {
                    continue;
                }
                let d = (fx - tx as f64 - 0.5).hypot(fy - ty as f64 - 0.5);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, t));
                }
            }
        }
        match best {
            Some((_, t)) => {
                taken[t] = true;
                out.data[t] = v;
            }
            None => out.deposit(cx, cy, v),
        }
    }
    out
}

#[inline]
fn clamp_cell(f: f64, m: usize) -> usize {
    if f <= 0.0 {
        0
    } else {
        (f.floor() as usize).min(m - 1)
    }
}

/// Rotates `(x, y)` of a vector about the `z` axis.
pub fn rotate_normal(n: &Vector3<f64>, angle: f64) -> Vector3<f64> {
    let quarters = angle / FRAC_PI_2;
    if (quarters - quarters.round()).abs() < 1e-9 {
        return match (quarters.round() as i64).rem_euclid(4) {
            0 => *n,
            1 => Vector3::new(-n.y, n.x, n.z),
            2 => Vector3::new(-n.x, -n.y, n.z),
            _ => Vector3::new(n.y, -n.x, n.z),
        };
    }
    let (s, c) = angle.sin_cos();
    Vector3::new(c * n.x - s * n.y, s * n.x + c * n.y, n.z)
}

/// Rotational augmentation: all maps and the normal turn by `angle`.
pub fn rotate_sample(sample: &ObservationMapSet, angle: f64) -> ObservationMapSet {
    let mut out = sample.clone();
    for (dst, src) in out.channels_mut().into_iter().zip(sample.channels()) {
        *dst = rotate_map(src, angle);
    }
    out.normal = sample.normal.map(|n| rotate_normal(&n, angle));
    out
}

/// The `k`-th of `K` augmentation angles, `2 pi k / K`.
pub fn augmentation_angle(k: usize, count: usize) -> f64 {
    std::f64::consts::TAU * k as f64 / count as f64
}
