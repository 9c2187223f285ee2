//! Event streams to polarity-separated voxel grids and sparse event
//! observation maps.

use crate::obsmap::{obs_index, LightSample, ObsMap};
use crate::{par, Error, Result};

/// Default polarity divisor.
pub const DEFAULT_LAMBDA: f64 = 5.0;
/// Default number of time bins per inter-frame window.
pub const DEFAULT_BINS: usize = 5;

/// Largest `f64` below one; `tanh` of any finite count is strictly below it
/// mathematically, and the clamp keeps that bound representable.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn from_sign(p: i8) -> Result<Self> {
        match p {
            1 => Ok(Polarity::Positive),
            -1 => Ok(Polarity::Negative),
            other => Err(Error::invalid(format!("polarity must be +1 or -1, got {other}"))),
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    /// Voxel channel: 0 for positive, 1 for negative.
    pub fn channel(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub x: u16,
    pub y: u16,
    /// Seconds.
    pub t: f64,
    pub p: Polarity,
}

impl EventRecord {
    pub fn new(x: u16, y: u16, t: f64, p: Polarity) -> Self {
        Self { x, y, t, p }
    }
}

/// Time-binned event accumulation of shape `(height, width, bins, 2)`.
///
/// An accumulated grid holds `count / lambda` per cell; a normalized grid
/// holds `tanh` of that.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub width: usize,
    pub height: usize,
    pub bins: usize,
    /// Window length in seconds.
    pub period: f64,
    pub lambda: f64,
    pub normalized: bool,
    pub values: Vec<f64>,
}

impl VoxelGrid {
    pub fn zeros(width: usize, height: usize, bins: usize, period: f64, lambda: f64) -> Self {
        Self {
            width,
            height,
            bins,
            period,
            lambda,
            normalized: false,
            values: vec![0.0; width * height * bins * 2],
        }
    }

    /// Bin width `period / bins`.
    pub fn bin_width(&self) -> f64 {
        self.period / self.bins as f64
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, bin: usize, channel: usize) -> usize {
        ((y * self.width + x) * self.bins + bin) * 2 + channel
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, bin: usize, channel: usize) -> f64 {
        self.values[self.index(x, y, bin, channel)]
    }

    /// Merges all time bins at a pixel: pre-tanh values are summed and `tanh`
    /// is applied once. Returns `[positive, negative]`.
    pub fn merged_at(&self, x: usize, y: usize) -> [f64; 2] {
        let base = self.index(x, y, 0, 0);
        let cells = &self.values[base..base + self.bins * 2];
        let mut sums = [0.0f64; 2];
        for bin in cells.chunks_exact(2) {
            for c in 0..2 {
                sums[c] += if self.normalized {
                    bin[c].atanh()
                } else {
                    bin[c]
                };
            }
        }
        sums.map(saturating_tanh)
    }
}

fn saturating_tanh(v: f64) -> f64 {
    v.tanh().min(BELOW_ONE)
}

/// Counts events per pixel, bin and polarity, each contributing `1 / lambda`.
/// Timestamps are relative to the window start.
pub fn accumulate_voxel_grid(
    events: &[EventRecord],
    width: usize,
    height: usize,
    period: f64,
    bins: usize,
    lambda: f64,
) -> Result<VoxelGrid> {
    if !(lambda > 0.0) {
        return Err(Error::invalid("lambda must be positive"));
    }
    if bins == 0 {
        return Err(Error::invalid("need at least one time bin"));
    }
    if !(period > 0.0) {
        return Err(Error::invalid("period must be positive"));
    }
    let mut grid = VoxelGrid::zeros(width, height, bins, period, lambda);
    let k = grid.bin_width();
    let step = 1.0 / lambda;
    for e in events {
        if !(e.t >= 0.0 && e.t < period) {
            return Err(Error::EventOutsidePeriod { t: e.t, period });
        }
        let (x, y) = (e.x as usize, e.y as usize);
        if x >= width || y >= height {
            return Err(Error::invalid(format!(
                "event at ({x}, {y}) outside {width}x{height} sensor"
            )));
        }
        let bin = ((e.t / k).floor() as usize).min(bins - 1);
        let i = grid.index(x, y, bin, e.p.channel());
        grid.values[i] += step;
    }
    Ok(grid)
}

/// Elementwise hyperbolic tangent of an accumulated grid.
pub fn normalize_voxel_grid(grid: &VoxelGrid) -> VoxelGrid {
    if grid.normalized {
        return grid.clone();
    }
    VoxelGrid {
        normalized: true,
        values: grid.values.iter().map(|&v| saturating_tanh(v)).collect(),
        ..grid.clone()
    }
}

/// Splits a time-sorted stream into consecutive windows of `period` seconds
/// starting at `t = 0`, shifting timestamps to each window's start. Events
/// past the last window are dropped.
pub fn split_windows(events: &[EventRecord], period: f64, windows: usize) -> Vec<Vec<EventRecord>> {
    let mut out = vec![Vec::new(); windows];
    for e in events {
        let mut j = (e.t / period).floor();
        // an event exactly at the end of the last window still belongs to it
        if j == windows as f64 && e.t <= windows as f64 * period {
            j -= 1.0;
        }
        if j < 0.0 || j as usize >= windows {
            continue;
        }
        let j = j as usize;
        let mut local = *e;
        local.t = (e.t - j as f64 * period).clamp(0.0, period * (1.0 - f64::EPSILON));
        out[j].push(local);
    }
    out
}

/// An event stream with its sensor size.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub width: usize,
    pub height: usize,
    pub events: Vec<EventRecord>,
}

/// Two-channel sparse event observation map of one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct EventObservationMap {
    pub positive: ObsMap,
    pub negative: ObsMap,
}

impl EventObservationMap {
    pub fn zeros(m: usize) -> Self {
        Self {
            positive: ObsMap::zeros(m),
            negative: ObsMap::zeros(m),
        }
    }

    pub fn m(&self) -> usize {
        self.positive.m
    }

    /// `(positive + negative) / 2`, the single-channel form.
    pub fn collapsed(&self) -> ObsMap {
        let mut out = ObsMap::zeros(self.m());
        for ((o, p), n) in out
            .data
            .iter_mut()
            .zip(&self.positive.data)
            .zip(&self.negative.data)
        {
            *o = (p + n) / 2.0;
        }
        out
    }
}

/// Builds the event observation map of `pixel`: window `j`'s merged polarity
/// values are deposited at the cell of `lights[j]`, keeping the maximum on
/// collisions.
pub fn event_obsmap(
    grids: &[VoxelGrid],
    pixel: (usize, usize),
    lights: &[LightSample],
    m: usize,
) -> Result<EventObservationMap> {
    if grids.len() != lights.len() {
        return Err(Error::invalid(format!(
            "{} voxel grids but {} light windows",
            grids.len(),
            lights.len()
        )));
    }
    let mut out = EventObservationMap::zeros(m);
    for (grid, light) in grids.iter().zip(lights) {
        let (ix, iy) = obs_index(&light.direction, m)?;
        let (x, y) = pixel;
        if x >= grid.width || y >= grid.height {
            return Err(Error::invalid(format!("pixel ({x}, {y}) outside voxel grid")));
        }
        let [pos, neg] = grid.merged_at(x, y);
        out.positive.deposit(ix, iy, pos);
        out.negative.deposit(ix, iy, neg);
    }
    Ok(out)
}

/// [`event_obsmap`] for many pixels at once, in parallel.
pub fn event_obsmaps(
    grids: &[VoxelGrid],
    pixels: &[(usize, usize)],
    lights: &[LightSample],
    m: usize,
) -> Result<Vec<EventObservationMap>> {
    par::map_slice(pixels, |&p| event_obsmap(grids, p, lights, m))
        .into_iter()
        .collect()
}
