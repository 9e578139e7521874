//! Property tests for the spec-level invariants.

use oodflow::flow::FlowModel;
use oodflow::manifold::{huber_fn, penalty, project, split, LatentSplit, PenaltySpec};
use oodflow::scoring::{auroc, classify};
use oodflow::{SeededRng, Tensor};
use proptest::prelude::*;

fn randomized_flow(dim: usize, seed: u64, amp: f64) -> FlowModel {
    let mut model = FlowModel::dense(dim, 2, &[8], seed).unwrap();
    let mut rng = SeededRng::new(seed ^ 0x5eed);
    let mut p = model.params_flat();
    for v in p.iter_mut() {
        *v += rng.uniform(-amp, amp);
    }
    model.set_params_flat(&p);
    model
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bijectivity_round_trip(seed in 0u64..1_000, xs in proptest::collection::vec(-3.0f64..3.0, 8)) {
        let model = randomized_flow(4, seed, 0.3);
        let x = Tensor::new(vec![2, 4], xs).unwrap();
        let (z, _) = model.forward(&x).unwrap();
        let back = model.inverse(&z).unwrap();
        let max = back
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        prop_assert!(max < 1e-7, "round trip error {max}");
    }

    #[test]
    fn split_concat_restores_latent(d in 1usize..5, tail in 0usize..4, vals in proptest::collection::vec(-10.0f64..10.0, 16)) {
        let dim = d + tail;
        prop_assume!(dim >= 1 && dim <= 8);
        let n = 16 / 8;
        let z = Tensor::new(vec![n, 8], vals).unwrap();
        let sp = LatentSplit::new(d.min(8), 8).unwrap();
        let (u, v) = split(&z, sp).unwrap();
        for r in 0..n {
            let mut cat = u.row(r).to_vec();
            cat.extend_from_slice(v.row(r));
            prop_assert_eq!(cat.as_slice(), z.row(r));
        }
        // Projection idempotence.
        let p1 = project(&z, sp).unwrap();
        let p2 = project(&p1, sp).unwrap();
        prop_assert_eq!(p1.data(), p2.data());
    }

    #[test]
    fn penalty_zero_iff_equal(vals in proptest::collection::vec(-5.0f64..5.0, 6), delta in 0.01f64..2.0) {
        let huber = PenaltySpec::huber(delta, 1.0).unwrap();
        let mse = PenaltySpec::mse(1.0).unwrap();
        prop_assert_eq!(penalty(&vals, &vals, &huber), 0.0);
        prop_assert_eq!(penalty(&vals, &vals, &mse), 0.0);
        let mut other = vals.clone();
        other[0] += 0.5;
        prop_assert!(penalty(&vals, &other, &huber) > 0.0);
        prop_assert!(penalty(&vals, &other, &mse) > 0.0);
    }

    #[test]
    fn huber_monotone_and_sign_invariant(e1 in 0.0f64..10.0, e2 in 0.0f64..10.0, delta in 0.01f64..3.0) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(huber_fn(lo, delta) <= huber_fn(hi, delta));
        // The penalty sees |residual| only.
        let x = [0.0, 0.0];
        let spec = PenaltySpec::huber(delta, 1.0).unwrap();
        let plus = penalty(&x, &[e1, e2], &spec);
        let minus = penalty(&x, &[-e1, -e2], &spec);
        prop_assert_eq!(plus, minus);
    }

    #[test]
    fn auroc_monotone_transform_invariance(
        id in proptest::collection::vec(-50.0f64..50.0, 1..30),
        ood in proptest::collection::vec(-50.0f64..50.0, 1..30),
        a in 0.1f64..4.0,
        b in -5.0f64..5.0,
    ) {
        let base = auroc(&id, &ood).unwrap();
        // Strictly increasing map: affine followed by a monotone curve.
        let f = |x: f64| (a * x + b) + (a * x + b).tanh();
        let idt: Vec<f64> = id.iter().map(|&x| f(x)).collect();
        let oodt: Vec<f64> = ood.iter().map(|&x| f(x)).collect();
        prop_assert_eq!(auroc(&idt, &oodt).unwrap(), base);
    }

    #[test]
    fn auroc_swap_complement_without_ties(
        id in proptest::collection::vec(-50.0f64..50.0, 1..30),
        ood in proptest::collection::vec(-50.0f64..50.0, 1..30),
    ) {
        // Continuous draws: ties have probability zero, and the property only
        // needs distinctness, which we enforce.
        let mut all: Vec<f64> = id.iter().chain(ood.iter()).cloned().collect();
        all.sort_by(|x, y| x.partial_cmp(y).unwrap());
        prop_assume!(all.windows(2).all(|w| w[0] != w[1]));
        let a = auroc(&id, &ood).unwrap();
        let b = auroc(&ood, &id).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn classification_invariant_under_joint_monotone_map(
        scores in proptest::collection::vec(-20.0f64..20.0, 1..40),
        thr in -20.0f64..20.0,
        a in 0.05f64..3.0,
    ) {
        let base = classify(&scores, thr);
        let f = |x: f64| a * x + x.exp().min(1e12) * 1e-3;
        let mapped: Vec<f64> = scores.iter().map(|&x| f(x)).collect();
        prop_assert_eq!(classify(&mapped, f(thr)), base);
    }
}
