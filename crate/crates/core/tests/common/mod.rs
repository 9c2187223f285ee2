//! Helpers shared by the integration test targets: finite-difference
//! gradient checks and the desk-scale synthetic dataset.

#![allow(dead_code)]

use efps_core::capture::{build_observations, ObsSettings};
use efps_core::diffcore::{
    Act, Activation, AvgPool2, BatchNorm2d, Conv2d, Flatten, GlobalAvgPool, Layer, Linear, Mode, Param, Tensor,
    Upsample2x, LEAKY_SLOPE,
};
use efps_core::networks::{
    batch_mae_loss, batch_scale_invariant_loss, forward_losses, loss_and_backward, transition_block, Batch,
    DenseBlock, EfpsNet, FusionGate, LabeledObject, NetConfig, ResidualBlock, UnitNormalize,
};
use efps_core::synthgen::{generate_dataset, EventSimConfig, SceneKind, SceneSpec, DEFAULT_FRAME_PERIOD};
use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Relative error bound for single layers and losses.
pub const LAYER_TOL: f64 = 1e-4;
/// Relative error bound for the whole network.
pub const NETWORK_TOL: f64 = 1e-3;
/// Gradients smaller than this are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-5;
/// Random shapes per layer.
pub const SHAPES_PER_LAYER: usize = 20;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values in `[-1, -margin] U [margin, 1]`, away from activation kinks.
pub fn kink_free_tensor(shape: &[usize], margin: f64, rng: &mut impl Rng) -> Tensor<f64> {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            let v = rng.gen_range(margin..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
}

fn indices(len: usize, cap: usize, rng: &mut impl Rng) -> Vec<usize> {
    if len <= cap {
        (0..len).collect()
    } else {
        sample(rng, len, cap).into_vec()
    }
}

/// Checks input and parameter gradients of `layer` at `x` against central
/// differences of `sum(r * layer(x))` for a random projection `r`. Returns
/// the largest relative error over the sampled entries.
pub fn check_layer(layer: &mut dyn Layer<f64>, x: &Tensor<f64>, mode: Mode, rng: &mut impl Rng) -> f64 {
    let y = layer.forward(x, mode).unwrap();
    let r = random_tensor(y.shape(), -1.0, 1.0, rng);
    {
        let mut params = Vec::new();
        layer.collect_params("", &mut params);
        params.iter_mut().for_each(|(_, p)| p.zero_grad());
    }
    let dx = layer.backward(&r).unwrap();
    let mut worst: f64 = 0.0;

    let mut xp = x.clone();
    for i in indices(x.len(), 24, rng) {
        let orig = xp.data[i];
        xp.data[i] = orig + FD_STEP;
        let up = dot(&layer.forward(&xp, mode).unwrap(), &r);
        xp.data[i] = orig - FD_STEP;
        let down = dot(&layer.forward(&xp, mode).unwrap(), &r);
        xp.data[i] = orig;
        worst = worst.max(rel_err(dx.data[i], (up - down) / (2.0 * FD_STEP)));
    }

    let grads: Vec<(bool, Tensor<f64>)> = {
        let mut params = Vec::new();
        layer.collect_params("", &mut params);
        params.iter().map(|(_, p)| (p.trainable, p.grad.clone())).collect()
    };
    for (pi, (trainable, grad)) in grads.iter().enumerate() {
        if !trainable {
            continue;
        }
        for i in indices(grad.len(), 12, rng) {
            let mut eval_at = |delta: f64| {
                {
                    let mut params = Vec::new();
                    layer.collect_params("", &mut params);
                    params[pi].1.value.data[i] += delta;
                }
                let out = dot(&layer.forward(x, mode).unwrap(), &r);
                let mut params = Vec::new();
                layer.collect_params("", &mut params);
                params[pi].1.value.data[i] -= delta;
                out
            };
            let up = eval_at(FD_STEP);
            let down = eval_at(-FD_STEP);
            worst = worst.max(rel_err(grad.data[i], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

/// Outcome of checking one layer kind over many shapes.
#[derive(Debug, Clone)]
pub struct LayerCheck {
    pub name: &'static str,
    pub shapes: usize,
    pub max_rel: f64,
}

type Case = (Box<dyn Layer<f64>>, Tensor<f64>);

fn run(name: &'static str, seed: u64, mode: Mode, mut make: impl FnMut(&mut ChaCha8Rng) -> Case) -> LayerCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel: f64 = 0.0;
    for _ in 0..SHAPES_PER_LAYER {
        let (mut layer, x) = make(&mut rng);
        max_rel = max_rel.max(check_layer(layer.as_mut(), &x, mode, &mut rng));
    }
    LayerCheck {
        name,
        shapes: SHAPES_PER_LAYER,
        max_rel,
    }
}

fn dim(rng: &mut impl Rng, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

/// Gradient checks for every layer type, each on [`SHAPES_PER_LAYER`]
/// random shapes.
pub fn layer_suite(seed: u64) -> Vec<LayerCheck> {
    let mut out = Vec::new();
    out.push(run("conv2d", seed, Mode::Train, |rng| {
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let stride = dim(rng, 1, 2);
        let pad = dim(rng, 0, k / 2);
        let (n, cin, cout) = (dim(rng, 1, 2), dim(rng, 1, 4), dim(rng, 1, 4));
        let h = dim(rng, k.max(2), 9);
        let w = dim(rng, k.max(2), 9);
        let conv = Conv2d::new(cin, cout, k, stride, pad, rng);
        let x = random_tensor(&[n, cin, h, w], -1.0, 1.0, rng);
        (Box::new(conv), x)
    }));
    out.push(run("batch_norm", seed + 1, Mode::Train, |rng| {
        let (n, c, h, w) = (dim(rng, 2, 4), dim(rng, 1, 4), dim(rng, 1, 5), dim(rng, 1, 5));
        let mut bn = BatchNorm2d::new(c);
        bn.gamma.value = random_tensor(&[c], 0.5, 1.5, rng);
        bn.beta.value = random_tensor(&[c], -0.5, 0.5, rng);
        (Box::new(bn), random_tensor(&[n, c, h, w], -2.0, 2.0, rng))
    }));
    let acts: [(&'static str, Activation); 4] = [
        ("relu", Activation::Relu),
        ("leaky_relu", Activation::LeakyRelu(LEAKY_SLOPE)),
        ("sigmoid", Activation::Sigmoid),
        ("tanh", Activation::Tanh),
    ];
    for (i, (name, kind)) in acts.into_iter().enumerate() {
        out.push(run(name, seed + 2 + i as u64, Mode::Train, move |rng| {
            let shape = [dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 6), dim(rng, 1, 6)];
            (Box::new(Act::new(kind)), kink_free_tensor(&shape, 0.01, rng))
        }));
    }
    out.push(run("linear", seed + 6, Mode::Train, |rng| {
        let (n, i, o) = (dim(rng, 1, 5), dim(rng, 1, 12), dim(rng, 1, 6));
        let mut lin = Linear::new(i, o, rng);
        lin.bias.value = random_tensor(&[o], -0.5, 0.5, rng);
        (Box::new(lin), random_tensor(&[n, i], -1.0, 1.0, rng))
    }));
    out.push(run("upsample2x", seed + 7, Mode::Train, |rng| {
        let shape = [dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 5), dim(rng, 1, 5)];
        (Box::new(Upsample2x::new()), random_tensor(&shape, -1.0, 1.0, rng))
    }));
    out.push(run("avg_pool2", seed + 8, Mode::Train, |rng| {
        let shape = [dim(rng, 1, 3), dim(rng, 1, 3), 2 * dim(rng, 1, 4), 2 * dim(rng, 1, 4)];
        (Box::new(AvgPool2::new()), random_tensor(&shape, -1.0, 1.0, rng))
    }));
    out.push(run("global_avg_pool", seed + 9, Mode::Train, |rng| {
        let shape = [dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 6), dim(rng, 1, 6)];
        (Box::new(GlobalAvgPool::new()), random_tensor(&shape, -1.0, 1.0, rng))
    }));
    out.push(run("flatten", seed + 10, Mode::Train, |rng| {
        let shape = [dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 4)];
        (Box::new(Flatten::new()), random_tensor(&shape, -1.0, 1.0, rng))
    }));
    out.push(run("residual_block", seed + 11, Mode::Train, |rng| {
        let (n, c, h) = (dim(rng, 2, 3), dim(rng, 1, 4), dim(rng, 2, 5));
        let block = ResidualBlock::new(c, rng);
        (Box::new(block), random_tensor(&[n, c, h, h], -1.0, 1.0, rng))
    }));
    out.push(run("dense_block", seed + 12, Mode::Train, |rng| {
        let (n, c, h) = (dim(rng, 1, 2), dim(rng, 1, 4), dim(rng, 2, 5));
        let block = DenseBlock::new(c, dim(rng, 1, 3), dim(rng, 1, 3), rng);
        (Box::new(block), random_tensor(&[n, c, h, h], -1.0, 1.0, rng))
    }));
    out.push(run("transition_block", seed + 13, Mode::Train, |rng| {
        let (n, c, o, h) = (dim(rng, 2, 3), dim(rng, 1, 5), dim(rng, 1, 4), 2 * dim(rng, 1, 3));
        let block = transition_block(c, o, rng);
        (Box::new(block), random_tensor(&[n, c, h, h], -1.0, 1.0, rng))
    }));
    out.push(run("fusion_gate", seed + 14, Mode::Train, |rng| {
        let (n, c, h) = (dim(rng, 1, 3), dim(rng, 1, 6), dim(rng, 1, 5));
        (Box::new(FusionGate::new(c, rng)), random_tensor(&[n, c, h, h], 0.0, 1.0, rng))
    }));
    out.push(run("unit_normalize", seed + 15, Mode::Train, |rng| {
        let n = dim(rng, 1, 6);
        (Box::new(UnitNormalize::new()), kink_free_tensor(&[n, 3], 0.2, rng))
    }));
    out
}

/// Gradient checks of both batch losses with respect to their predictions.
pub fn loss_suite(seed: u64) -> Vec<LayerCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut si, mut mae): (f64, f64) = (0.0, 0.0);
    for _ in 0..SHAPES_PER_LAYER {
        let shape = [dim(&mut rng, 1, 4), 1, dim(&mut rng, 1, 6), dim(&mut rng, 1, 6)];
        let pred = random_tensor(&shape, 0.0, 1.0, &mut rng);
        let target = random_tensor(&shape, 0.0, 1.0, &mut rng);
        si = si.max(check_loss(&pred, |p| batch_scale_invariant_loss(p, &target).unwrap(), &mut rng));

        let n = dim(&mut rng, 1, 8);
        let pred = unit_rows(n, &mut rng);
        let truth = unit_rows(n, &mut rng);
        mae = mae.max(check_loss(&pred, |p| batch_mae_loss(p, &truth).unwrap(), &mut rng));
    }
    vec![
        LayerCheck {
            name: "scale_invariant_loss",
            shapes: SHAPES_PER_LAYER,
            max_rel: si,
        },
        LayerCheck {
            name: "mae_loss",
            shapes: SHAPES_PER_LAYER,
            max_rel: mae,
        },
    ]
}

pub fn unit_rows(n: usize, rng: &mut impl Rng) -> Tensor<f64> {
    let mut data = Vec::with_capacity(3 * n);
    for _ in 0..n {
        let v = random_unit(rng);
        data.extend([v.x, v.y, v.z]);
    }
    Tensor::from_vec(&[n, 3], data).unwrap()
}

pub fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn check_loss(
    pred: &Tensor<f64>,
    f: impl Fn(&Tensor<f64>) -> (f64, Tensor<f64>),
    rng: &mut impl Rng,
) -> f64 {
    let (_, grad) = f(pred);
    let mut p = pred.clone();
    let mut worst: f64 = 0.0;
    for i in indices(p.len(), 24, rng) {
        let orig = p.data[i];
        p.data[i] = orig + FD_STEP;
        let up = f(&p).0;
        p.data[i] = orig - FD_STEP;
        let down = f(&p).0;
        p.data[i] = orig;
        worst = worst.max(rel_err(grad.data[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

/// A random labeled batch at resolution `m`.
pub fn random_batch(n: usize, m: usize, rng: &mut impl Rng) -> Batch<f64> {
    Batch {
        rgbn: random_tensor(&[n, 4, m, m], 0.0, 1.0, rng),
        events: random_tensor(&[n, 2, m, m], 0.0, 0.99, rng),
        normals: Some(unit_rows(n, rng)),
    }
}

/// Reverse-mode versus central-difference gradients of `L_total` for
/// `samples` randomly chosen trainable parameters of a full `m = 16` network
/// on a 2-sample batch. Returns the largest relative error.
pub fn network_check(seed: u64, samples: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = NetConfig {
        seed,
        ..NetConfig::desk()
    };
    let mut net: EfpsNet<f64> = EfpsNet::new(&config).unwrap();
    let batch = random_batch(2, config.m, &mut rng);
    net.zero_grad();
    loss_and_backward(&mut net, &batch).unwrap();

    let picks: Vec<(usize, usize, f64)> = {
        let params = net.params();
        let trainable: Vec<(usize, &Param<f64>)> =
            params.iter().enumerate().filter(|(_, (_, p))| p.trainable).map(|(i, (_, p))| (i, &**p)).collect();
        let total: usize = trainable.iter().map(|(_, p)| p.value.len()).sum();
        sample(&mut rng, total, samples)
            .into_iter()
            .map(|mut flat| {
                for (i, p) in &trainable {
                    if flat < p.value.len() {
                        return (*i, flat, p.grad.data[flat]);
                    }
                    flat -= p.value.len();
                }
                unreachable!()
            })
            .collect()
    };
    let mut worst: f64 = 0.0;
    for (pi, i, analytic) in picks {
        let mut total_at = |delta: f64| {
            net.params()[pi].1.value.data[i] += delta;
            let l = forward_losses(&mut net, &batch, Mode::Train).unwrap().0.total;
            net.params()[pi].1.value.data[i] -= delta;
            l
        };
        let numeric = (total_at(FD_STEP) - total_at(-FD_STEP)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic, numeric));
    }
    worst
}

/// Frames per synthetic capture in the desk dataset.
pub const DESK_FRAMES: usize = 64;
pub const DESK_SIZE: usize = 64;
pub const DESK_AMBIENT: f64 = 0.15;

/// The 64 x 64 sphere + blob dataset with 64 lights, as labeled objects.
pub fn desk_dataset(m: usize) -> Vec<LabeledObject> {
    [(SceneKind::Sphere, 1u64), (SceneKind::Blob, 2)]
        .into_iter()
        .map(|(kind, seed)| {
            let scene = SceneSpec::new(kind, DESK_SIZE, DESK_SIZE, DESK_AMBIENT, seed).unwrap();
            let cap = generate_dataset(&scene, DESK_FRAMES, DEFAULT_FRAME_PERIOD, &EventSimConfig::default()).unwrap();
            let (pixels, normals) = cap.labeled_pixels();
            let settings = ObsSettings {
                m,
                lambda: efps_core::eventrep::DEFAULT_LAMBDA,
                bins: efps_core::eventrep::DEFAULT_BINS,
            };
            let samples = build_observations(
                &cap.frames,
                &cap.lights,
                &cap.events,
                cap.frame_period,
                &pixels,
                Some(&normals),
                &settings,
            )
            .unwrap();
            LabeledObject {
                name: kind.to_string(),
                samples,
            }
        })
        .collect()
}

/// A planted chrome-ball configuration on a 512 x 512 image.
#[derive(Debug, Clone)]
pub struct ChromeBallCase {
    pub intrinsics: efps_core::geometry::CameraIntrinsics,
    pub center: Vector3<f64>,
    pub radius: f64,
    pub light: Vector3<f64>,
    pub highlight: Vector3<f64>,
    pub highlight_px: nalgebra::Vector2<f64>,
}

pub const BALL_IMAGE: f64 = 512.0;

/// Draws a ball 150-250 mm in front of the camera and a light with positive
/// `z`, then places the highlight where the mirror law sends the light to
/// the camera. `L = 2 (N.R) N - R` leaves `L + R` parallel to `N`, so the
/// visible normal is `-(L + R) / |L + R|`, found by fixed-point iteration
/// because `R` depends on where the highlight lands.
pub fn chrome_ball_case(rng: &mut impl Rng) -> ChromeBallCase {
    let intrinsics = efps_core::geometry::CameraIntrinsics::new(600.0, 600.0, 256.0, 256.0, 0.0).unwrap();
    let radius = 35.0;
    loop {
        let z = rng.gen_range(150.0..250.0);
        let center = Vector3::new(rng.gen_range(-0.15..0.15) * z, rng.gen_range(-0.15..0.15) * z, z);
        let light = random_unit(rng);
        if light.z <= 0.05 {
            continue;
        }
        let mut r = center.normalize();
        let mut n = -(light + r).normalize();
        for _ in 0..100 {
            r = (center + radius * n).normalize();
            n = -(light + r).normalize();
        }
        let highlight = center + radius * n;
        if n.dot(&highlight.normalize()) >= -1e-3 {
            continue;
        }
        let px = intrinsics.project(nalgebra::Vector2::new(highlight.x / highlight.z, highlight.y / highlight.z));
        if px.x < 0.0 || px.y < 0.0 || px.x >= BALL_IMAGE || px.y >= BALL_IMAGE {
            continue;
        }
        return ChromeBallCase {
            intrinsics,
            center,
            radius,
            light,
            highlight,
            highlight_px: px,
        };
    }
}

/// Angle between the planted light and the one recovered from `px`.
pub fn chrome_ball_error(case: &ChromeBallCase, px: nalgebra::Vector2<f64>) -> f64 {
    let obs = efps_core::geometry::ChromeBallObservation::from_highlight(
        px,
        &case.intrinsics,
        case.center,
        case.radius,
    )
    .unwrap();
    let (_, l) = obs.recover_light(&case.intrinsics).unwrap();
    l.normalize().dot(&case.light).clamp(-1.0, 1.0).acos()
}

/// Lambertian three-light photometric stereo on noiseless, ambient-free
/// renders of the sphere. Returns the mean angular error in degrees over
/// pixels lit by every light.
pub fn three_light_sphere_error(size: usize) -> f64 {
    use efps_core::synthgen::render_frame;
    let scene = SceneSpec::new(SceneKind::Sphere, size, size, 0.0, 0).unwrap();
    let lights = [
        Vector3::new(0.3, 0.1, 1.0).normalize(),
        Vector3::new(-0.25, 0.3, 1.0).normalize(),
        Vector3::new(0.05, -0.35, 1.0).normalize(),
    ];
    let frames: Vec<_> = lights.iter().map(|l| render_frame(&scene, l)).collect();
    let l_inv = nalgebra::Matrix3::from_rows(&[lights[0].transpose(), lights[1].transpose(), lights[2].transpose()])
        .try_inverse()
        .unwrap();
    let (mut sum, mut count) = (0.0, 0usize);
    for (x, y) in scene.mask.pixels() {
        let n = scene.normal(x, y);
        if lights.iter().any(|l| n.dot(l) <= 1e-3) {
            continue;
        }
        let i = Vector3::from_fn(|k, _| {
            let f = &frames[k];
            (0..3).map(|c| f.get(x, y, c) as f64).sum::<f64>() / 3.0
        });
        let g = l_inv * i;
        sum += g.normalize().dot(&n).clamp(-1.0, 1.0).acos().to_degrees();
        count += 1;
    }
    assert!(count > 0);
    sum / count as f64
}
