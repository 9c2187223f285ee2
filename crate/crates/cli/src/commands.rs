use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use efps_core::capture::{build_observations, ObsSettings};
use efps_core::geometry::{invert_distortion, transfer_rgb_to_event, undistort_point, detect_highlight, ChromeBallObservation};
use efps_core::imaging::Image;
use efps_core::io::{
    attach_normals, encode_png, format_sig, load_mask_png, load_png, parse_calibration, read_evt1, read_img1,
    read_lights_csv, read_nrm1, read_obs1, save_mask_png, save_png, write_atomic, write_evt1, write_img1,
    write_lights_csv, write_nrm1, write_obs1, NormalMap,
};
use efps_core::networks::{
    load_checkpoint, mean_angular_error_deg, predict, save_checkpoint, train_network, EfpsNet, LabeledObject,
    NetConfig, StepRecord,
};
use efps_core::obsmap::ObservationMapSet;
use efps_core::synthgen::{generate_dataset, EventSimConfig, SceneSpec, DEFAULT_FRAME_PERIOD};
use nalgebra::{Vector2, Vector3};

use crate::manifest::{manifest_for, read_values, RunManifest, MANIFEST_FILE};
use crate::render::{error_image, normal_image};
use crate::{CalibCommand, EvalArgs, GenDataArgs, ObsmapArgs, RenderArgs, TrainArgs};

fn write_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> efps_core::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf).with_context(|| format!("encoding {}", path.display()))?;
    write_atomic(path, &buf).with_context(|| format!("writing {}", path.display()))
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    Ok(BufReader::new(
        fs::File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

/// Fills a scratch directory next to `out`, then swaps it into place. An
/// existing `out` is only replaced if it is empty or holds a manifest.
fn write_dir(out: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let name = out
        .file_name()
        .ok_or_else(|| anyhow!("{} is not a directory path", out.display()))?
        .to_string_lossy()
        .into_owned();
    let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    let staging = parent.join(format!(".{name}.tmp{}", std::process::id()));
    let _ = fs::remove_dir_all(&staging);
    fs::create_dir(&staging).with_context(|| format!("creating {}", staging.display()))?;
    if let Err(e) = fill(&staging) {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    if out.exists() {
        let empty = fs::read_dir(out)?.next().is_none();
        if !empty && !out.join(MANIFEST_FILE).exists() {
            let _ = fs::remove_dir_all(&staging);
            bail!("{} exists and is not a dataset directory", out.display());
        }
        let old = parent.join(format!(".{name}.old{}", std::process::id()));
        fs::rename(out, &old)?;
        fs::rename(&staging, out)?;
        fs::remove_dir_all(&old)?;
    } else {
        fs::rename(&staging, out)?;
    }
    Ok(())
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let mut manifest = RunManifest::start("gen-data");
    manifest.seed = Some(a.seed);
    let period = a.frame_period.unwrap_or(DEFAULT_FRAME_PERIOD);
    let scene = SceneSpec::new(a.scene, a.width, a.height, a.ambient, a.seed)?;
    let cfg = EventSimConfig {
        contrast: a.contrast,
        substeps: a.substeps,
        ..EventSimConfig::default()
    };
    let cap = generate_dataset(&scene, a.frames as usize, period, &cfg)?;
    manifest.mark("generate");
    let (pixels, normals) = cap.labeled_pixels();
    write_dir(&a.out, |dir| {
        fs::create_dir(dir.join("frames"))?;
        for (i, frame) in cap.frames.iter().enumerate() {
            save_png(&dir.join("frames").join(format!("frame_{i:04}.png")), frame)?;
        }
        write_with(&dir.join("frames.img1"), |w| write_img1(w, &cap.frames))?;
        write_with(&dir.join("events.evt1"), |w| write_evt1(w, &cap.events))?;
        write_with(&dir.join("lights.csv"), |w| write_lights_csv(w, &cap.lights))?;
        let map = NormalMap {
            width: a.width,
            height: a.height,
            pixels,
            normals,
        };
        write_with(&dir.join("normals.nrm1"), |w| write_nrm1(w, &map))?;
        save_mask_png(&dir.join("mask.png"), &cap.mask)?;
        manifest.mark("write");
        manifest.outputs.push(a.out.clone());
        manifest.value("scene", a.scene);
        manifest.value("width", a.width);
        manifest.value("height", a.height);
        manifest.value("frames", a.frames);
        manifest.value("frame_period", period);
        manifest.value("ambient", a.ambient);
        manifest.value("contrast", a.contrast);
        manifest.value("substeps", a.substeps);
        manifest.value("events", cap.events.events.len());
        manifest.value("mask_pixels", cap.mask.count());
        manifest.write(&dir.join(MANIFEST_FILE))
    })?;
    println!(
        "{}: {} frames, {} events, {} masked pixels",
        a.out.display(),
        cap.frames.len(),
        cap.events.events.len(),
        cap.mask.count()
    );
    Ok(())
}

fn load_frames(data: &Path) -> Result<Vec<Image>> {
    let img1 = data.join("frames.img1");
    if img1.exists() {
        return Ok(read_img1(&mut open(&img1)?)?);
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(data.join("frames"))
        .with_context(|| format!("{} has neither frames.img1 nor frames/", data.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| load_png(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

pub fn obsmap(a: &ObsmapArgs) -> Result<()> {
    let mut manifest = RunManifest::start("obsmap");
    let values = read_values(&a.data.join(MANIFEST_FILE))?;
    let period: f64 = values
        .get("frame_period")
        .ok_or_else(|| anyhow!("{} does not record frame_period", a.data.join(MANIFEST_FILE).display()))?
        .parse()
        .context("frame_period")?;
    let frames = load_frames(&a.data)?;
    let lights = read_lights_csv(open(&a.data.join("lights.csv"))?)?;
    let events = read_evt1(&mut open(&a.data.join("events.evt1"))?)?;
    let mask = load_mask_png(&a.data.join("mask.png")).context("reading mask.png")?;
    let pixels = mask.pixels();
    ensure!(!pixels.is_empty(), "mask of {} is empty", a.data.display());
    manifest.inputs.push(a.data.clone());
    manifest.mark("load");
    let settings = ObsSettings {
        m: a.m,
        lambda: a.lambda,
        bins: a.bins,
    };
    let samples = build_observations(&frames, &lights, &events, period, &pixels, None, &settings)?;
    manifest.mark("build");
    write_with(&a.out, |w| write_obs1(w, &samples, a.m))?;
    manifest.outputs.push(a.out.clone());
    let nrm = a.data.join("normals.nrm1");
    if nrm.exists() {
        let truth = read_nrm1(&mut open(&nrm)?)?;
        let paired = pair_with_pixels(&truth, &pixels)?;
        let out = a.out.with_extension("nrm1");
        write_with(&out, |w| write_nrm1(w, &paired))?;
        manifest.outputs.push(out);
    }
    manifest.value("m", a.m);
    manifest.value("lambda", a.lambda);
    manifest.value("bins", a.bins);
    manifest.value("pixels", samples.len());
    manifest.mark("write");
    manifest.write(&manifest_for(&a.out))?;
    println!("{}: {} pixels at m = {}", a.out.display(), samples.len(), a.m);
    Ok(())
}

/// Reorders `truth` to list exactly `pixels`.
fn pair_with_pixels(truth: &NormalMap, pixels: &[(usize, usize)]) -> Result<NormalMap> {
    let mut lookup = vec![None; truth.width * truth.height];
    for (&(x, y), n) in truth.pixels.iter().zip(&truth.normals) {
        lookup[y * truth.width + x] = Some(*n);
    }
    let normals = pixels
        .iter()
        .map(|&(x, y)| {
            (x < truth.width && y < truth.height)
                .then(|| lookup[y * truth.width + x])
                .flatten()
                .ok_or_else(|| anyhow!("masked pixel ({x}, {y}) has no ground-truth normal"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NormalMap {
        width: truth.width,
        height: truth.height,
        pixels: pixels.to_vec(),
        normals,
    })
}

struct LoadedObs {
    name: String,
    m: usize,
    samples: Vec<ObservationMapSet>,
    truth: Option<NormalMap>,
}

fn load_obs(path: &Path) -> Result<LoadedObs> {
    let (m, mut samples) = read_obs1(&mut open(path)?).with_context(|| format!("reading {}", path.display()))?;
    let nrm = path.with_extension("nrm1");
    let truth = if nrm.exists() {
        let map = read_nrm1(&mut open(&nrm)?).with_context(|| format!("reading {}", nrm.display()))?;
        attach_normals(&mut samples, &map).with_context(|| format!("pairing {}", nrm.display()))?;
        Some(map)
    } else {
        None
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    Ok(LoadedObs { name, m, samples, truth })
}

fn check_resolution(expected: usize, obs: &LoadedObs, what: &str) -> Result<()> {
    ensure!(
        obs.m == expected,
        "{what} expects m = {expected} but `{}` holds m = {} maps",
        obs.name,
        obs.m
    );
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut manifest = RunManifest::start("train");
    let mut config = match &a.config {
        Some(p) => {
            manifest.config = Some(p.clone());
            NetConfig::parse(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?
        }
        None => NetConfig::desk(),
    };
    for o in &a.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| anyhow!("override `{o}` is not key=value"))?;
        config.set(k.trim(), v.trim())?;
    }
    if let Some(ab) = a.ablation {
        config.ablation = ab;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    config.validate()?;
    manifest.seed = Some(config.seed);
    let mut objects = Vec::new();
    for p in &a.obs {
        let obs = load_obs(p)?;
        check_resolution(config.m, &obs, "config")?;
        ensure!(obs.truth.is_some(), "{} has no {} beside it", p.display(), p.with_extension("nrm1").display());
        manifest.inputs.push(p.clone());
        objects.push(LabeledObject {
            name: obs.name,
            samples: obs.samples,
        });
    }
    manifest.mark("load");
    let mut net: EfpsNet<f32> = EfpsNet::new(&config)?;
    let mut log = String::from("epoch,step,lr,l_e,l_n,total\n");
    let mut observer = |r: &StepRecord| {
        log.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch,
            r.step,
            format_sig(r.lr, 9),
            format_sig(r.loss.l_e, 9),
            format_sig(r.loss.l_n, 9),
            format_sig(r.loss.total, 9)
        ));
    };
    let history = train_network(&mut net, &objects, &mut observer)?;
    manifest.mark("train");
    save_checkpoint(&mut net, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let loss_path = a.loss_csv.clone().unwrap_or_else(|| a.out.with_extension("loss.csv"));
    write_atomic(&loss_path, log.as_bytes())?;
    manifest.outputs.extend([a.out.clone(), loss_path]);
    manifest.value("steps", history.steps.len());
    manifest.value("samples_per_epoch", history.samples_per_epoch);
    let last = history.epoch_means().last().copied().unwrap_or(f64::NAN);
    manifest.value("final_epoch_loss", format_sig(last, 9));
    manifest.write(&manifest_for(&a.out))?;
    println!(
        "{}: {} steps, final epoch loss {}",
        a.out.display(),
        history.steps.len(),
        format_sig(last, 6)
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let mut manifest = RunManifest::start("eval");
    let mut net: EfpsNet<f32> = load_checkpoint(&a.ckpt).with_context(|| format!("reading {}", a.ckpt.display()))?;
    manifest.inputs.push(a.ckpt.clone());
    let mut rows = Vec::new();
    if let Some(dir) = &a.pred_dir {
        fs::create_dir_all(dir)?;
    }
    for p in &a.obs {
        let obs = load_obs(p)?;
        check_resolution(net.config.m, &obs, "checkpoint")?;
        manifest.inputs.push(p.clone());
        let pred = predict(&mut net, &obs.samples)?;
        if let Some(dir) = &a.pred_dir {
            let out = dir.join(format!("{}.pred.nrm1", obs.name));
            let map = match &obs.truth {
                Some(t) => NormalMap {
                    width: t.width,
                    height: t.height,
                    pixels: t.pixels.clone(),
                    normals: pred.clone(),
                },
                None => NormalMap {
                    width: pred.len(),
                    height: 1,
                    pixels: (0..pred.len()).map(|k| (k, 0)).collect(),
                    normals: pred.clone(),
                },
            };
            write_with(&out, |w| write_nrm1(w, &map))?;
            manifest.outputs.push(out);
        }
        if let Some(t) = &obs.truth {
            let truth: Vec<Vector3<f64>> = t.normals.iter().map(|n| n.normalize()).collect();
            rows.push((obs.name, pred.len(), mean_angular_error_deg(&truth, &pred)?));
        }
    }
    manifest.mark("predict");
    if rows.is_empty() {
        ensure!(a.report.is_none(), "no ground truth beside the observation files; cannot score");
    } else {
        let average = rows.iter().map(|r| r.2).sum::<f64>() / rows.len() as f64;
        let total: usize = rows.iter().map(|r| r.1).sum();
        let mut csv = String::from("object,pixels,mae_deg\n");
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(7);
        let mut text = format!("{:<width$}  {:>8}  {:>8}\n", "object", "pixels", "MAE(deg)");
        for (name, px, mae) in &rows {
            csv.push_str(&format!("{name},{px},{mae:.4}\n"));
            text.push_str(&format!("{name:<width$}  {px:>8}  {mae:>8.2}\n"));
        }
        csv.push_str(&format!("average,{total},{average:.4}\n"));
        text.push_str(&format!("{:<width$}  {total:>8}  {average:>8.2}\n", "average"));
        print!("{text}");
        if let Some(report) = &a.report {
            write_atomic(report, csv.as_bytes())?;
            write_atomic(&report.with_extension("txt"), text.as_bytes())?;
            manifest.outputs.extend([report.clone(), report.with_extension("txt")]);
        }
    }
    if let Some(report) = &a.report {
        manifest.write(&manifest_for(report))?;
    }
    Ok(())
}

pub fn render_normals(a: &RenderArgs) -> Result<()> {
    let pred = read_nrm1(&mut open(&a.pred)?).with_context(|| format!("reading {}", a.pred.display()))?;
    let png = encode_png(pred.width, pred.height, 3, &normal_image(&pred))?;
    write_atomic(&a.out_png, &png)?;
    if let Some(gt) = &a.gt {
        let truth = read_nrm1(&mut open(gt)?).with_context(|| format!("reading {}", gt.display()))?;
        let (bytes, mean) = error_image(&pred, &truth)?;
        let path = a.error_png.clone().unwrap_or_else(|| {
            let stem = a.out_png.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            a.out_png.with_file_name(format!("{stem}_error.png"))
        });
        write_atomic(&path, &encode_png(truth.width, truth.height, 3, &bytes)?)?;
        println!("mean angular error {mean:.2} deg");
    }
    Ok(())
}

fn read_points(path: &Path) -> Result<Vec<Vector2<f64>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(no, l)| {
            let v: Vec<f64> = l
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| anyhow!("{}:{}: expected `u,v`", path.display(), no + 1))?;
            ensure!(v.len() == 2, "{}:{}: expected `u,v`", path.display(), no + 1);
            Ok(Vector2::new(v[0], v[1]))
        })
        .collect()
}

fn print_point(p: Vector2<f64>) {
    println!("{},{}", format_sig(p.x, 9), format_sig(p.y, 9));
}

pub fn calib(c: &CalibCommand) -> Result<()> {
    let load = |p: &Path| -> Result<_> {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        parse_calibration(&text).with_context(|| format!("parsing {}", p.display()))
    };
    match c {
        CalibCommand::Undistort { calib, points, invert } => {
            let cal = load(calib)?;
            for p in read_points(points)? {
                let q = if *invert {
                    invert_distortion(p, &cal.intrinsics, &cal.distortion)?
                } else {
                    undistort_point(p, &cal.intrinsics, &cal.distortion)?
                };
                print_point(q);
            }
        }
        CalibCommand::Transfer { calib, points } => {
            let cal = load(calib)?;
            let (Some(p_rgb), Some(p_e)) = (&cal.p_rgb, &cal.p_e) else {
                bail!("{} needs both p_rgb and p_e", calib.display());
            };
            for p in read_points(points)? {
                print_point(transfer_rgb_to_event(p, p_rgb, p_e)?);
            }
        }
        CalibCommand::Light {
            calib,
            frame,
            ball_mask,
            center,
            radius,
            threshold,
        } => {
            let cal = load(calib)?;
            let img = load_png(frame).with_context(|| format!("reading {}", frame.display()))?;
            let mask = load_mask_png(ball_mask).with_context(|| format!("reading {}", ball_mask.display()))?;
            let px = detect_highlight(&img, &mask, *threshold)?;
            let center = Vector3::new(center[0], center[1], center[2]);
            let ball = ChromeBallObservation::from_highlight(px, &cal.intrinsics, center, *radius)?;
            let (_, l) = ball.recover_light(&cal.intrinsics)?;
            println!("{},{},{}", format_sig(l.x, 9), format_sig(l.y, 9), format_sig(l.z, 9));
        }
    }
    Ok(())
}
