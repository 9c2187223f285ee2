//! File formats: `EVT1` events, `OBS1` observation maps, `NRM1` normals,
//! `IMG1` frames, light CSV, calibration text and 8-bit PNG.

use std::fs;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;

use crate::eventrep::{EventObservationMap, EventRecord, EventStream, Polarity};
use crate::geometry::{CameraIntrinsics, DistortionCoeffs, ProjectionMatrix};
use crate::imaging::{Image, Mask};
use crate::obsmap::{ObsMap, ObservationMapSet};
use crate::{Error, Result};

/// Writes `bytes` to a temporary sibling and renames it over `path`, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

fn expect_magic(r: &mut impl Read, magic: &[u8; 4], what: &str) -> Result<()> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    if &buf != magic {
        return Err(Error::format(format!("not an {what} file")));
    }
    Ok(())
}

/// Formats like C's `%.{digits}g`.
pub fn format_sig(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let sci = format!("{:.*e}", digits - 1, v);
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        let mant = trim_zeros(mant);
        return format!("{mant}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

// ---- events ----

pub fn write_evt1(w: &mut impl Write, stream: &EventStream) -> Result<()> {
    w.write_all(b"EVT1")?;
    w.write_u32::<LE>(stream.width as u32)?;
    w.write_u32::<LE>(stream.height as u32)?;
    w.write_u64::<LE>(stream.events.len() as u64)?;
    for e in &stream.events {
        w.write_u16::<LE>(e.x)?;
        w.write_u16::<LE>(e.y)?;
        w.write_f64::<LE>(e.t)?;
        w.write_i8(e.p.sign())?;
    }
    Ok(())
}

pub fn read_evt1(r: &mut impl Read) -> Result<EventStream> {
    expect_magic(r, b"EVT1", "EVT1")?;
    let width = r.read_u32::<LE>()? as usize;
    let height = r.read_u32::<LE>()? as usize;
    let count = r.read_u64::<LE>()? as usize;
    let mut events = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        let x = r.read_u16::<LE>()?;
        let y = r.read_u16::<LE>()?;
        let t = r.read_f64::<LE>()?;
        let p = Polarity::from_sign(r.read_i8()?)?;
        events.push(EventRecord::new(x, y, t, p));
    }
    Ok(EventStream { width, height, events })
}

/// Parses `x,y,t,p` lines (an optional header line is skipped). The sensor
/// size is the bounding box of the events.
pub fn read_events_csv(r: impl BufRead) -> Result<EventStream> {
    let mut events = Vec::new();
    for (no, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (no == 0 && line.starts_with(|c: char| c.is_ascii_alphabetic())) {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::format(format!("events line {}: expected x,y,t,p", no + 1));
        if f.len() != 4 {
            return Err(bad());
        }
        let x = f[0].parse().map_err(|_| bad())?;
        let y = f[1].parse().map_err(|_| bad())?;
        let t = f[2].parse().map_err(|_| bad())?;
        let p: i8 = f[3].parse().map_err(|_| bad())?;
        events.push(EventRecord::new(x, y, t, Polarity::from_sign(p)?));
    }
    let width = events.iter().map(|e| e.x as usize + 1).max().unwrap_or(0);
    let height = events.iter().map(|e| e.y as usize + 1).max().unwrap_or(0);
    Ok(EventStream { width, height, events })
}

/// Reads either format, chosen by the file's first bytes.
pub fn read_events_file(path: &Path) -> Result<EventStream> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"EVT1") {
        read_evt1(&mut bytes.as_slice())
    } else {
        read_events_csv(bytes.as_slice())
    }
}

// ---- observation maps ----

pub const OBS_CHANNELS: usize = 6;

/// `OBS1`: pixel count, `m`, channel count, then f32 maps ordered by pixel,
/// channel (`r, g, b, n, e+, e-`), row.
pub fn write_obs1(w: &mut impl Write, samples: &[ObservationMapSet], m: usize) -> Result<()> {
    w.write_all(b"OBS1")?;
    w.write_u32::<LE>(samples.len() as u32)?;
    w.write_u32::<LE>(m as u32)?;
    w.write_u32::<LE>(OBS_CHANNELS as u32)?;
    for s in samples {
        if s.m() != m {
            return Err(Error::invalid("samples disagree on m"));
        }
        for map in s.channels() {
            for &v in &map.data {
                w.write_f32::<LE>(v as f32)?;
            }
        }
    }
    Ok(())
}

/// Reads `OBS1`; pixels are numbered `(index, 0)` and unlabeled until paired
/// with an `NRM1` file by [`attach_normals`].
pub fn read_obs1(r: &mut impl Read) -> Result<(usize, Vec<ObservationMapSet>)> {
    expect_magic(r, b"OBS1", "OBS1")?;
    let count = r.read_u32::<LE>()? as usize;
    let m = r.read_u32::<LE>()? as usize;
    let channels = r.read_u32::<LE>()? as usize;
    if channels != OBS_CHANNELS {
        return Err(Error::format(format!("OBS1 has {channels} channels, expected {OBS_CHANNELS}")));
    }
    if m == 0 {
        return Err(Error::format("OBS1 with m = 0"));
    }
    let mut buf = vec![0f32; m * m];
    let mut read_map = |r: &mut dyn Read| -> Result<ObsMap> {
        let mut bytes = vec![0u8; 4 * m * m];
        r.read_exact(&mut bytes)?;
        (&bytes[..]).read_f32_into::<LE>(&mut buf)?;
        Ok(ObsMap {
            m,
            data: buf.iter().map(|&v| v as f64).collect(),
        })
    };
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let rr = read_map(r)?;
        let gg = read_map(r)?;
        let bb = read_map(r)?;
        let normalized = read_map(r)?;
        let positive = read_map(r)?;
        let negative = read_map(r)?;
        out.push(ObservationMapSet {
            pixel: (k, 0),
            rgb: [rr, gg, bb],
            normalized,
            events: EventObservationMap { positive, negative },
            normal: None,
        });
    }
    Ok((m, out))
}

/// `NRM1`: unit normals at listed pixels of a `width x height` image.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<(usize, usize)>,
    pub normals: Vec<Vector3<f64>>,
}

impl NormalMap {
    pub fn mask(&self) -> Mask {
        let mut mask = Mask::new(self.width, self.height);
        for &(x, y) in &self.pixels {
            mask.set(x, y, true);
        }
        mask
    }
}

pub fn write_nrm1(w: &mut impl Write, map: &NormalMap) -> Result<()> {
    if map.pixels.len() != map.normals.len() {
        return Err(Error::invalid("pixel and normal counts differ"));
    }
    w.write_all(b"NRM1")?;
    w.write_u32::<LE>(map.width as u32)?;
    w.write_u32::<LE>(map.height as u32)?;
    w.write_u32::<LE>(map.pixels.len() as u32)?;
    for &(x, y) in &map.pixels {
        w.write_u32::<LE>((y * map.width + x) as u32)?;
    }
    for n in &map.normals {
        for k in 0..3 {
            w.write_f32::<LE>(n[k] as f32)?;
        }
    }
    Ok(())
}

pub fn read_nrm1(r: &mut impl Read) -> Result<NormalMap> {
    expect_magic(r, b"NRM1", "NRM1")?;
    let width = r.read_u32::<LE>()? as usize;
    let height = r.read_u32::<LE>()? as usize;
    let count = r.read_u32::<LE>()? as usize;
    let mut pixels = Vec::with_capacity(count);
    for _ in 0..count {
        let i = r.read_u32::<LE>()? as usize;
        if i >= width * height {
            return Err(Error::format(format!("NRM1 pixel index {i} outside {width}x{height}")));
        }
        pixels.push((i % width, i / width));
    }
    let mut normals = Vec::with_capacity(count);
    for _ in 0..count {
        let v = Vector3::new(r.read_f32::<LE>()?, r.read_f32::<LE>()?, r.read_f32::<LE>()?);
        normals.push(v.cast::<f64>());
    }
    Ok(NormalMap {
        width,
        height,
        pixels,
        normals,
    })
}

/// Gives `samples` the pixel positions and (renormalized) normals of `map`,
/// which must list the same pixels in the same order.
pub fn attach_normals(samples: &mut [ObservationMapSet], map: &NormalMap) -> Result<()> {
    if samples.len() != map.pixels.len() {
        return Err(Error::format(format!(
            "{} observation maps but {} normals",
            samples.len(),
            map.pixels.len()
        )));
    }
    for (s, (&p, n)) in samples.iter_mut().zip(map.pixels.iter().zip(&map.normals)) {
        s.pixel = p;
        s.normal = Some(n.normalize());
    }
    Ok(())
}

// ---- frames ----

/// `IMG1`: width, height, channels, frame count, then f32 pixels.
pub fn write_img1(w: &mut impl Write, frames: &[Image]) -> Result<()> {
    let (width, height, channels) = frames.first().map_or((0, 0, 0), |f| (f.width, f.height, f.channels));
    w.write_all(b"IMG1")?;
    w.write_u32::<LE>(width as u32)?;
    w.write_u32::<LE>(height as u32)?;
    w.write_u32::<LE>(channels as u32)?;
    w.write_u32::<LE>(frames.len() as u32)?;
    for f in frames {
        if (f.width, f.height, f.channels) != (width, height, channels) {
            return Err(Error::invalid("frames differ in size"));
        }
        for &v in &f.data {
            w.write_f32::<LE>(v)?;
        }
    }
    Ok(())
}

pub fn read_img1(r: &mut impl Read) -> Result<Vec<Image>> {
    expect_magic(r, b"IMG1", "IMG1")?;
    let width = r.read_u32::<LE>()? as usize;
    let height = r.read_u32::<LE>()? as usize;
    let channels = r.read_u32::<LE>()? as usize;
    let count = r.read_u32::<LE>()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut data = vec![0f32; width * height * channels];
        r.read_f32_into::<LE>(&mut data)?;
        out.push(Image::from_data(width, height, channels, data)?);
    }
    Ok(out)
}

// ---- lights ----

/// `frame_index,lx,ly,lz` with 9 significant digits.
pub fn write_lights_csv(w: &mut impl Write, lights: &[Vector3<f64>]) -> Result<()> {
    writeln!(w, "frame_index,lx,ly,lz")?;
    for (i, l) in lights.iter().enumerate() {
        writeln!(w, "{i},{},{},{}", format_sig(l.x, 9), format_sig(l.y, 9), format_sig(l.z, 9))?;
    }
    Ok(())
}

/// Reads light directions ordered by frame index.
pub fn read_lights_csv(r: impl BufRead) -> Result<Vec<Vector3<f64>>> {
    let mut rows = Vec::new();
    for (no, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with("frame_index") {
            continue;
        }
        let bad = || Error::format(format!("lights line {}: expected frame_index,lx,ly,lz", no + 1));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let idx: usize = f[0].parse().map_err(|_| bad())?;
        let v: Vec<f64> = f[1..].iter().map(|s| s.parse().map_err(|_| bad())).collect::<Result<_>>()?;
        rows.push((idx, Vector3::new(v[0], v[1], v[2])));
    }
    rows.sort_by_key(|r| r.0);
    for (expect, (idx, _)) in rows.iter().enumerate() {
        if *idx != expect {
            return Err(Error::format(format!("lights CSV missing frame {expect}")));
        }
    }
    Ok(rows.into_iter().map(|r| r.1).collect())
}

// ---- calibration ----

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub intrinsics: CameraIntrinsics,
    pub distortion: DistortionCoeffs,
    pub p_rgb: Option<ProjectionMatrix>,
    pub p_e: Option<ProjectionMatrix>,
}

/// Parses `key = value` calibration text. `p_rgb` and `p_e` take 12
/// row-major numbers separated by commas or spaces.
pub fn parse_calibration(text: &str) -> Result<Calibration> {
    let mut scalars = std::collections::HashMap::new();
    let mut p_rgb = None;
    let mut p_e = None;
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(format!("calibration line {}: expected `key = value`", no + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        let nums = v
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| Error::format(format!("bad number `{s}` for `{k}`"))))
            .collect::<Result<Vec<f64>>>()?;
        match k {
            "p_rgb" => p_rgb = Some(ProjectionMatrix::from_row_slice(&nums)?),
            "p_e" => p_e = Some(ProjectionMatrix::from_row_slice(&nums)?),
            "fx" | "fy" | "cx" | "cy" | "alpha" | "k1" | "k2" | "k3" | "p1" | "p2" => {
                if nums.len() != 1 {
                    return Err(Error::format(format!("`{k}` takes one number")));
                }
                scalars.insert(k.to_string(), nums[0]);
            }
            other => return Err(Error::format(format!("unknown calibration key `{other}`"))),
        }
    }
    let get = |k: &str, default: Option<f64>| {
        scalars
            .get(k)
            .copied()
            .or(default)
            .ok_or_else(|| Error::format(format!("calibration is missing `{k}`")))
    };
    Ok(Calibration {
        intrinsics: CameraIntrinsics::new(
            get("fx", None)?,
            get("fy", None)?,
            get("cx", None)?,
            get("cy", None)?,
            get("alpha", Some(0.0))?,
        )?,
        distortion: DistortionCoeffs {
            k1: get("k1", Some(0.0))?,
            k2: get("k2", Some(0.0))?,
            k3: get("k3", Some(0.0))?,
            p1: get("p1", Some(0.0))?,
            p2: get("p2", Some(0.0))?,
        },
        p_rgb,
        p_e,
    })
}

// ---- PNG ----

/// Writes 8-bit gray (1 channel) or RGB (3 channel) PNG bytes.
pub fn encode_png(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Vec<u8>> {
    let color = match channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        4 => png::ColorType::Rgba,
        c => return Err(Error::invalid(format!("cannot write {c}-channel PNG"))),
    };
    if bytes.len() != width * height * channels {
        return Err(Error::invalid("PNG buffer size does not match dimensions"));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::format(e.to_string()))?;
        writer.write_image_data(bytes).map_err(|e| Error::format(e.to_string()))?;
    }
    Ok(out)
}

pub fn save_png(path: &Path, image: &Image) -> Result<()> {
    write_atomic(path, &encode_png(image.width, image.height, image.channels, &image.to_u8())?)
}

/// Decodes an 8-bit PNG into `[0, 1]` values.
pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let mut dec = png::Decoder::new(bytes);
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| Error::format(e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(e.to_string()))?;
    let channels = info.color_type.samples();
    buf.truncate(info.buffer_size());
    Image::from_u8(info.width as usize, info.height as usize, channels, &buf)
}

pub fn load_png(path: &Path) -> Result<Image> {
    decode_png(&fs::read(path)?)
}

pub fn save_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let bytes: Vec<u8> = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_atomic(path, &encode_png(mask.width, mask.height, 1, &bytes)?)
}

/// Any channel above one half marks the pixel.
pub fn load_mask_png(path: &Path) -> Result<Mask> {
    let img = load_png(path)?;
    let mut mask = Mask::new(img.width, img.height);
    for y in 0..img.height {
        for x in 0..img.width {
            mask.set(x, y, img.pixel(x, y).iter().any(|&v| v > 0.5));
        }
    }
    Ok(mask)
}
