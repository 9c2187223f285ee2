mod common;

use common::{random_batch, random_tensor, random_unit};
use efps_core::diffcore::{Layer, Mode, Tensor};
use efps_core::networks::{mae_loss, scale_invariant_loss, Ablation, EfpsNet, FusionGate, NetConfig, ResidualBlock};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(seed: u64, ablation: Ablation) -> NetConfig {
    NetConfig {
        m: 16,
        base_channels: 4,
        sne_growth: 4,
        seed,
        ablation,
        ..NetConfig::desk()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interpolation_loss_ignores_offsets(seed in any::<u64>(), len in 2usize..300, c in -50.0..50.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
        let o: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
        let shifted: Vec<f64> = p.iter().map(|v| v + c).collect();
        let a = scale_invariant_loss(&p, &o).unwrap();
        let b = scale_invariant_loss(&shifted, &o).unwrap();
        prop_assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        prop_assert_eq!(scale_invariant_loss(&o, &o).unwrap(), 0.0);
    }

    #[test]
    fn angular_loss_is_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_unit(&mut rng), random_unit(&mut rng));
        prop_assert_eq!(mae_loss(&a, &b).unwrap(), mae_loss(&b, &a).unwrap());
        prop_assert!(mae_loss(&a, &a).unwrap() <= 1e-3);
    }

    #[test]
    fn fusion_never_amplifies(seed in any::<u64>(), n in 1usize..4, c in 1usize..6, m in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gate: FusionGate<f64> = FusionGate::new(c, &mut rng);
        for w in gate.conv.weight.value.data.iter_mut() {
            *w *= rng.gen_range(0.0..20.0);
        }
        let o = random_tensor(&[n, c, m, m], 0.0, 1.0, &mut rng);
        let fused = gate.forward(&o, Mode::Train).unwrap();
        for (f, x) in fused.data.iter().zip(&o.data) {
            prop_assert!(*f <= *x && *f >= 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn predictions_are_unit(seed in any::<u64>(), abl in prop::sample::select(vec![
        Ablation::Full, Ablation::NoEvent, Ablation::NoOfm, Ablation::NoEi,
    ])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net: EfpsNet<f64> = EfpsNet::new(&small_config(seed, abl)).unwrap();
        let batch = random_batch(3, 16, &mut rng);
        for mode in [Mode::Train, Mode::Eval] {
            let pred = net.forward(&batch, mode).unwrap();
            for row in pred.normals.data.chunks(3) {
                let norm = (row[0] * row[0] + row[1] * row[1] + row[2] * row[2]).sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn zeroed_prediction_conv_gives_half() {
    let mut net: EfpsNet<f64> = EfpsNet::new(&small_config(3, Ablation::Full)).unwrap();
    for (name, p) in net.params() {
        if name.starts_with("ei.pred.conv") {
            p.value.fill(0.0);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch = random_batch(2, 16, &mut rng);
    let e_hat = net.forward(&batch, Mode::Train).unwrap().interpolated.unwrap();
    assert!(e_hat.data.iter().all(|&v| v == 0.5));
}

#[test]
fn zeroed_residual_block_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut block: ResidualBlock<f64> = ResidualBlock::zeroed(3, &mut rng);
    let x = random_tensor(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
    for mode in [Mode::Train, Mode::Eval] {
        assert_eq!(block.forward(&x, mode).unwrap(), x);
    }
}

#[test]
fn zeroed_fusion_conv_halves_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut gate: FusionGate<f64> = FusionGate::new(5, &mut rng);
    gate.conv.weight.value.fill(0.0);
    gate.conv.bias.value.fill(0.0);
    let o = random_tensor(&[2, 5, 4, 4], 0.0, 1.0, &mut rng);
    let fused = gate.forward(&o, Mode::Train).unwrap();
    for (f, x) in fused.data.iter().zip(&o.data) {
        assert_eq!(*f, 0.5 * x);
    }
    let zero = Tensor::zeros(&[1, 5, 4, 4]);
    let mut gate: FusionGate<f64> = FusionGate::new(5, &mut rng);
    assert!(gate.forward(&zero, Mode::Train).unwrap().data.iter().all(|&v| v == 0.0));
}

#[test]
fn eval_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut net: EfpsNet<f64> = EfpsNet::new(&small_config(7, Ablation::Full)).unwrap();
    let batch = random_batch(4, 16, &mut rng);
    let a = net.forward(&batch, Mode::Eval).unwrap().normals;
    let b = net.forward(&batch, Mode::Eval).unwrap().normals;
    assert_eq!(a, b);
}
