mod common;

use common::{chrome_ball_case, chrome_ball_error, random_unit};
use efps_core::geometry::{
    invert_distortion, light_direction, transfer_rgb_to_event, undistort_point, CameraIntrinsics,
    DistortionCoeffs, ProjectionMatrix,
};
use nalgebra::{Matrix3x4, Rotation3, Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(600.0, 600.0, 256.0, 256.0, 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn light_is_unit(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = chrome_ball_case(&mut rng);
        let d_h = case.highlight.norm();
        let l = light_direction(case.highlight, case.center, Vector3::zeros(), d_h).unwrap();
        prop_assert!((l.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normal_bisects_light_and_view(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = chrome_ball_case(&mut rng);
        let h = case.highlight;
        let l = light_direction(h, case.center, Vector3::zeros(), h.norm()).unwrap();
        let n = (h - case.center).normalize();
        let r = h.normalize();
        let a = n.dot(&l).clamp(-1.0, 1.0).acos();
        let b = n.dot(&r).clamp(-1.0, 1.0).acos();
        prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn undistort_is_identity_without_coefficients(u in -100.0..600.0f64, v in -100.0..600.0f64) {
        let p = Vector2::new(u, v);
        let q = undistort_point(p, &intrinsics(), &DistortionCoeffs::default()).unwrap();
        prop_assert_eq!(q, p);
    }

    #[test]
    fn inversion_undoes_undistort(u in 0.0..512.0f64, v in 0.0..512.0f64, k1 in -0.1..0.1f64) {
        let intr = intrinsics();
        let dist = DistortionCoeffs::radial(k1);
        let p = Vector2::new(u, v);
        let q = invert_distortion(p, &intr, &dist).unwrap();
        let back = undistort_point(q, &intr, &dist).unwrap();
        prop_assert!((back - p).norm() < 1e-3);
    }

    #[test]
    fn transfer_with_shared_projection_is_identity(seed in any::<u64>(), u in 0.0..512.0f64, v in 0.0..512.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let axis = random_unit(&mut rng);
        let rot = Rotation3::new(axis * rng.gen_range(-0.4..0.4));
        let t = Vector3::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(300.0..800.0));
        let mut ext = Matrix3x4::zeros();
        ext.fixed_view_mut::<3, 3>(0, 0).copy_from(rot.matrix());
        ext.set_column(3, &t);
        let p = ProjectionMatrix::compose(&intrinsics().matrix(), &ext).unwrap();
        let px = Vector2::new(u, v);
        let out = transfer_rgb_to_event(px, &p, &p).unwrap();
        prop_assert!((out - px).norm() < 1e-9, "{px:?} -> {out:?}");
    }
}

#[test]
fn chrome_ball_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let worst = (0..10_000)
        .map(|_| {
            let case = chrome_ball_case(&mut rng);
            chrome_ball_error(&case, case.highlight_px)
        })
        .fold(0.0f64, f64::max);
    assert!(worst < 1e-6, "worst {worst} rad");
}

#[test]
fn chrome_ball_quantized_highlight() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let worst = (0..10_000)
        .map(|_| {
            let case = chrome_ball_case(&mut rng);
            let px = case.highlight_px.map(f64::round);
            chrome_ball_error(&case, px).to_degrees()
        })
        .fold(0.0f64, f64::max);
    assert!(worst < 2.0, "worst {worst} deg");
}
