//! Normal-map and angular-error images.

use anyhow::{bail, Result};
use efps_core::io::NormalMap;
use nalgebra::Vector3;

/// Errors at or above this many degrees saturate to red.
pub const ERROR_CLIP_DEG: f64 = 60.0;

/// `(n + 1) / 2 * 255` per component.
pub fn normal_rgb(n: &Vector3<f64>) -> [u8; 3] {
    let c = |v: f64| (((v + 1.0) / 2.0).clamp(0.0, 1.0) * 255.0).round() as u8;
    [c(n.x), c(n.y), c(n.z)]
}

/// Linear blue-to-red ramp over `[0, 60]` degrees.
pub fn error_rgb(deg: f64) -> [u8; 3] {
    let t = if deg.is_nan() { 1.0 } else { (deg / ERROR_CLIP_DEG).clamp(0.0, 1.0) };
    [(255.0 * t).round() as u8, 0, (255.0 * (1.0 - t)).round() as u8]
}

/// RGB bytes of `map` on a black background.
pub fn normal_image(map: &NormalMap) -> Vec<u8> {
    let mut bytes = vec![0u8; map.width * map.height * 3];
    for (&(x, y), n) in map.pixels.iter().zip(&map.normals) {
        let i = 3 * (y * map.width + x);
        bytes[i..i + 3].copy_from_slice(&normal_rgb(n));
    }
    bytes
}

/// Error-map bytes over the pixels present in both maps, and their mean
/// error in degrees.
pub fn error_image(pred: &NormalMap, truth: &NormalMap) -> Result<(Vec<u8>, f64)> {
    if (pred.width, pred.height) != (truth.width, truth.height) {
        bail!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.width,
            pred.height,
            truth.width,
            truth.height
        );
    }
    let mut lookup = vec![None; truth.width * truth.height];
    for (&(x, y), n) in truth.pixels.iter().zip(&truth.normals) {
        lookup[y * truth.width + x] = Some(*n);
    }
    let mut bytes = vec![0u8; pred.width * pred.height * 3];
    let (mut sum, mut count) = (0.0, 0usize);
    for (&(x, y), p) in pred.pixels.iter().zip(&pred.normals) {
        let Some(t) = lookup[y * pred.width + x] else { continue };
        let cos = p.normalize().dot(&t.normalize()).clamp(-1.0, 1.0);
        let deg = cos.acos().to_degrees();
        sum += deg;
        count += 1;
        let i = 3 * (y * pred.width + x);
        bytes[i..i + 3].copy_from_slice(&error_rgb(deg));
    }
    if count == 0 {
        bail!("prediction and ground truth share no pixels");
    }
    Ok((bytes, sum / count as f64))
}
