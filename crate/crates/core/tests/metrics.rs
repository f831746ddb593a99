mod common;

use common::{brute_metrics, fast_metrics, random_cloud, seeded};
use meshrag_core::geometry::{sample_surface, AffineTransform, Transformable, Vector};
use meshrag_core::metrics::{chamfer, evaluate_all, fscore, hausdorff, MetricsParams};
use meshrag_core::synth;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn fast_metrics_match_brute_force() {
    let mut rng = seeded(3);
    for _ in 0..50 {
        let (na, nb) = (rng.gen_range(1..=200), rng.gen_range(1..=200));
        let a = random_cloud(na, &mut rng);
        let b = random_cloud(nb, &mut rng);
        let fast = fast_metrics(&a, &b, 0.05);
        let brute = brute_metrics(&a, &b, 0.05);
        for (f, s) in fast.iter().zip(&brute) {
            assert!((f - s).abs() <= 1e-12, "{fast:?} vs {brute:?}");
        }
    }
}

#[test]
fn evaluate_all_ignores_a_common_similarity() {
    let pred = synth::torus(0.6, 0.2, 32, 16);
    let gt = synth::translated(&synth::torus(0.6, 0.22, 32, 16), Vector::new(0.01, 0.0, 0.0));
    let params = MetricsParams {
        sample_count: 4000,
        ..Default::default()
    };
    let base = evaluate_all(&pred, &gt, &params).unwrap();
    let t = AffineTransform::translation(Vector::new(3.0, -1.0, 2.0)) * AffineTransform::uniform_scaling(2.5);
    let moved = evaluate_all(&pred.transformed(&t).unwrap(), &gt.transformed(&t).unwrap(), &params).unwrap();
    assert!((base.cd_l2 - moved.cd_l2).abs() < 1e-9);
    assert!((base.f1 - moved.f1).abs() < 1e-12);
}

#[test]
fn sampled_sphere_against_itself_is_perfect() {
    let sphere = synth::uv_sphere(1.0, 32, 16);
    let a = sample_surface(&sphere, 2000, 1).unwrap();
    let (l1, l2) = chamfer(&a, &a).unwrap();
    assert_eq!((l1, l2), (0.0, 0.0));
    assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
    assert_eq!(fscore(&a, &a, 1e-9).unwrap(), 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metric_invariants(seed in any::<u64>(), na in 1usize..120, nb in 1usize..120, tau in 0.01f64..0.5) {
        let mut rng = seeded(seed);
        let a = random_cloud(na, &mut rng);
        let b = random_cloud(nb, &mut rng);
        let [l1, l2, hd, nc, f1] = fast_metrics(&a, &b, tau);
        let [l1r, l2r, hdr, ncr, f1r] = fast_metrics(&b, &a, tau);
        prop_assert!((l1 - l1r).abs() < 1e-15 && (l2 - l2r).abs() < 1e-15);
        prop_assert_eq!(hd, hdr);
        prop_assert!((nc - ncr).abs() < 1e-15 && (f1 - f1r).abs() < 1e-15);
        prop_assert!(l2 >= l1 - 1e-15);
        prop_assert!(hd >= l2 - 1e-15);
        prop_assert!((0.0..=1.0).contains(&nc) && (0.0..=1.0).contains(&f1));
        let wider = fscore(&a, &b, tau * 2.0).unwrap();
        prop_assert!(wider >= f1);
    }
}
