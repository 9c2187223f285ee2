use efps_core::diffcore::{
    adam_step, batch_norm_train, conv2d, conv2d_backward, Adam, Moments, Param, Tensor, BN_EPS,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

fn reference_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Vec<f64> {
    let [n, cin, h, wd] = <[usize; 4]>::try_from(x.shape()).unwrap();
    let [cout, _, k, _] = <[usize; 4]>::try_from(w.shape()).unwrap();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = Vec::with_capacity(n * cout * ho * wo);
    for s in 0..n {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.data[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xi = ((s * cin + ci) * h + iy as usize) * wd + ix as usize;
                                let wi = ((co * cin + ci) * k + ky) * k + kx;
                                acc += x.data[xi] * w.data[wi];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

prop_compose! {
    fn conv_case()(n in 1usize..=2, cin in 1usize..=4, cout in 1usize..=4, h in 1usize..=9, w in 1usize..=9,
                   k in prop::sample::select(vec![1usize, 3, 5]), stride in 1usize..=2, pad in 0usize..=2,
                   seed in any::<u64>())
        -> (usize, usize, usize, usize, usize, usize, usize, usize, u64) {
        (n, cin, cout, h, w, k, stride, pad, seed)
    }
}

proptest! {
    #[test]
    fn conv_matches_nested_loops((n, cin, cout, h, w, k, stride, pad, seed) in conv_case()) {
        prop_assume!(h + 2 * pad >= k && w + 2 * pad >= k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = tensor(&mut rng, &[n, cin, h, w], 1.0);
        let wt = tensor(&mut rng, &[cout, cin, k, k], 1.0);
        let b = tensor(&mut rng, &[cout], 1.0);
        let got = conv2d(&x, &wt, &b, stride, pad).unwrap();
        let want = reference_conv(&x, &wt, &b, stride, pad);
        prop_assert_eq!(got.data.len(), want.len());
        for (a, r) in got.data.iter().zip(&want) {
            prop_assert!((a - r).abs() < 1e-12, "{a} vs {r}");
        }
    }

    #[test]
    fn conv_input_gradient_is_the_adjoint((n, cin, cout, h, w, k, stride, pad, seed) in conv_case()) {
        prop_assume!(h + 2 * pad >= k && w + 2 * pad >= k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = tensor(&mut rng, &[n, cin, h, w], 1.0);
        let wt = tensor(&mut rng, &[cout, cin, k, k], 1.0);
        let zero = Tensor::zeros(&[cout]);
        let y = conv2d(&x, &wt, &zero, stride, pad).unwrap();
        let g = tensor(&mut rng, y.shape(), 1.0);
        let (dx, _, _) = conv2d_backward(&x, &wt, &g, stride, pad).unwrap();
        // <g, conv(x)> = <conv^T(g), x> because the map is linear in x
        let lhs: f64 = g.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = dx.data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn batch_norm_standardizes(seed in any::<u64>(), n in 2usize..6, c in 1usize..5, sp in 1usize..20,
                               scale in 5.0..50.0f64, shift in -100.0..100.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = tensor(&mut rng, &[n, c, sp, 1], scale);
        for v in x.data.iter_mut() {
            *v += shift;
        }
        let spread = (0..c).all(|ch| {
            let vals: Vec<f64> = (0..n).flat_map(|s| x.data[(s * c + ch) * sp..(s * c + ch + 1) * sp].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64 > 10.0
        });
        prop_assume!(spread);
        let (y, _) = batch_norm_train(&x, &Tensor::full(&[c], 1.0), &Tensor::zeros(&[c]), BN_EPS).unwrap();
        for ch in 0..c {
            let vals: Vec<f64> = (0..n).flat_map(|s| y.data[(s * c + ch) * sp..(s * c + ch + 1) * sp].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            prop_assert!(mean.abs() < 1e-9, "mean {mean}");
            prop_assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
    }

    #[test]
    fn adam_ignores_zero_gradients(seed in any::<u64>(), len in 1usize..64, steps in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = tensor(&mut rng, &[len], 3.0);
        let mut p = Param::new(start.clone());
        let mut opt = Adam::new();
        for _ in 0..steps {
            let mut list = vec![("p".to_string(), &mut p)];
            opt.update(&mut list, 0.1).unwrap();
        }
        prop_assert_eq!(&p.value, &start);

        let mut raw = start.data.clone();
        let mut state = Moments::zeros(len);
        adam_step(&mut raw, &vec![0.0; len], &mut state, 1, 0.1, 0.9, 0.999, 1e-8).unwrap();
        prop_assert_eq!(raw, start.data);
        prop_assert_eq!(state, Moments::zeros(len));
    }
}
