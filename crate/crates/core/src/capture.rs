//! From a capture (frames, per-frame lights, event stream) to per-pixel
//! observation-map sets.

use nalgebra::Vector3;

use crate::eventrep::{accumulate_voxel_grid, split_windows, EventObservationMap, EventStream};
use crate::imaging::Image;
use crate::obsmap::{build_samples, obs_index, LightSample, ObservationMapSet};
use crate::{Error, Result};

/// Settings for turning a capture into observation maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsSettings {
    pub m: usize,
    pub lambda: f64,
    pub bins: usize,
}

/// Per-frame light samples; frame `f` spans `[f T, (f + 1) T)`.
pub fn frame_lights(lights: &[Vector3<f64>], frame_period: f64) -> Result<Vec<LightSample>> {
    lights
        .iter()
        .enumerate()
        .map(|(f, l)| LightSample::new(*l, f, (f as f64 * frame_period, (f + 1) as f64 * frame_period)))
        .collect()
}

/// The light of event window `j` (between frames `j` and `j + 1`) is the one
/// recorded with frame `j + 1`, where the change the window saw has ended.
pub fn window_lights(lights: &[Vector3<f64>], frame_period: f64) -> Result<Vec<LightSample>> {
    lights
        .iter()
        .enumerate()
        .skip(1)
        .map(|(f, l)| LightSample::new(*l, f, ((f - 1) as f64 * frame_period, f as f64 * frame_period)))
        .collect()
}

/// Event observation maps of `pixels`, one voxel grid per window at a time.
pub fn event_maps(
    events: &EventStream,
    lights: &[Vector3<f64>],
    frame_period: f64,
    pixels: &[(usize, usize)],
    settings: &ObsSettings,
) -> Result<Vec<EventObservationMap>> {
    let windows = window_lights(lights, frame_period)?;
    let split = split_windows(&events.events, frame_period, windows.len());
    let mut maps = vec![EventObservationMap::zeros(settings.m); pixels.len()];
    for (light, window_events) in windows.iter().zip(&split) {
        let grid = accumulate_voxel_grid(
            window_events,
            events.width,
            events.height,
            frame_period,
            settings.bins,
            settings.lambda,
        )?;
        let (ix, iy) = obs_index(&light.direction, settings.m)?;
        for (map, &(x, y)) in maps.iter_mut().zip(pixels) {
            if x >= events.width || y >= events.height {
                return Err(Error::invalid(format!("pixel ({x}, {y}) outside the event sensor")));
            }
            let [pos, neg] = grid.merged_at(x, y);
            map.positive.deposit(ix, iy, pos);
            map.negative.deposit(ix, iy, neg);
        }
    }
    Ok(maps)
}

/// Full observation-map sets for `pixels`, labeled when `normals` is given.
pub fn build_observations(
    frames: &[Image],
    lights: &[Vector3<f64>],
    events: &EventStream,
    frame_period: f64,
    pixels: &[(usize, usize)],
    normals: Option<&[Vector3<f64>]>,
    settings: &ObsSettings,
) -> Result<Vec<ObservationMapSet>> {
    if frames.len() != lights.len() {
        return Err(Error::invalid(format!("{} frames but {} lights", frames.len(), lights.len())));
    }
    if frames.len() < 2 {
        return Err(Error::invalid("need at least 2 frames"));
    }
    if pixels.is_empty() {
        return Err(Error::EmptyMask);
    }
    let ev = event_maps(events, lights, frame_period, pixels, settings)?;
    let samples = frame_lights(lights, frame_period)?;
    build_samples(frames, &samples, &ev, pixels, normals, settings.m)
}
