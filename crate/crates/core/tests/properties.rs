//! Property tests over seeded random inputs.

use proptest::prelude::*;
use xgems_core::adversarial::{pgd_attack, AttackConfig};
use xgems_core::analytics::{param_histogram2d, reliability_from_predictions, LogisticFit};
use xgems_core::nn::{from_bytes, to_bytes, Activation, BlackBox, Classifier, Head, MlpSpec};
use xgems_core::{Graph, Tensor};

fn classifier(seed: u64) -> Classifier {
    Classifier::init(MlpSpec::new(2, &[8], Activation::Tanh, 3, Head::Softmax), seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(
        row in prop::collection::vec(-20.0f64..20.0, 2..8),
        shift in -50.0f64..50.0,
    ) {
        let n = row.len();
        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(1, n, row.clone()).unwrap());
        let b = g.constant(Tensor::matrix(1, n, row.iter().map(|v| v + shift).collect()).unwrap());
        let (sa, sb) = (g.softmax(a).unwrap(), g.softmax(b).unwrap());
        let (pa, pb) = (g.value(sa).data().to_vec(), g.value(sb).data().to_vec());
        prop_assert!((pa.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in pa.iter().zip(&pb) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn fan_out_accumulates_gradients(v in prop::collection::vec(-3.0f64..3.0, 1..6), uses in 1usize..5) {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(v.clone()).unwrap());
        let t = g.tanh(x).unwrap();
        let mut acc = t;
        for _ in 1..uses {
            acc = g.add(acc, t).unwrap();
        }
        let s = g.sum(acc).unwrap();
        let grads = g.backward(s).unwrap();
        for (gi, xi) in grads.wrt(x).data().iter().zip(&v) {
            let single = 1.0 - xi.tanh().powi(2);
            prop_assert!((gi - uses as f64 * single).abs() < 1e-12);
        }
    }

    #[test]
    fn pgd_stays_in_the_ball(
        seed in 0u64..1000,
        x in prop::collection::vec(-2.0f64..2.0, 2),
        epsilon in prop_oneof![Just(0.0), 0.001f64..1.0],
        fraction in 0.01f64..=1.0,
    ) {
        let clf = classifier(seed);
        let x = Tensor::vector(x).unwrap();
        let y = clf.predict(&x).unwrap();
        let step_size = if epsilon > 0.0 { epsilon * fraction } else { fraction };
        let cfg = AttackConfig { epsilon, steps: 10, step_size };
        let res = pgd_attack(&x, y, &clf, &cfg).unwrap();
        for s in &res.steps {
            let d = s.x.data().iter().zip(x.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(d <= epsilon, "linf {d} > {epsilon}");
        }
    }

    #[test]
    fn checkpoints_roundtrip_exactly(seed in 0u64..10_000) {
        let clf = classifier(seed);
        let back: Classifier = from_bytes(&to_bytes(&clf).unwrap()).unwrap();
        let probe = Tensor::vector(vec![0.3, -1.7]).unwrap();
        let (a, b) = (clf.predict_proba(&probe).unwrap(), back.predict_proba(&probe).unwrap());
        prop_assert_eq!(a.data(), b.data());
        prop_assert_eq!(to_bytes(&back).unwrap(), to_bytes(&clf).unwrap());
    }

    #[test]
    fn logit_scaling_keeps_the_decision(
        seed in 0u64..1000,
        x in prop::collection::vec(-3.0f64..3.0, 2),
        factor in 0.05f64..20.0,
    ) {
        let clf = classifier(seed);
        let x = Tensor::vector(x).unwrap();
        let p = clf.predict_proba(&x).unwrap();
        let (top, runner_up) = {
            let mut v = p.data().to_vec();
            v.sort_by(|a, b| b.total_cmp(a));
            (v[0], v[1])
        };
        prop_assume!(top - runner_up > 1e-9);
        prop_assert_eq!(clf.with_logit_scale(factor).unwrap().predict(&x).unwrap(), p.argmax());
    }

    #[test]
    fn reliability_bins_conserve_counts(
        pairs in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..300),
        bins in 2usize..20,
    ) {
        let (conf, correct): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
        let curve = reliability_from_predictions(&conf, &correct, bins).unwrap();
        prop_assert_eq!(curve.bins.len(), bins);
        prop_assert_eq!(curve.total(), conf.len());
    }

    #[test]
    fn parameter_histograms_conserve_counts(
        fits in prop::collection::vec((0usize..2, -5.0f64..5.0, -3.0f64..3.0, prop::bool::weighted(0.1)), 1..200),
        k_bins in 1usize..10,
        x0_bins in 1usize..10,
    ) {
        // Every stratum needs one regular fit.
        let mut items: Vec<_> = (0..2)
            .map(|y| ((y, None), LogisticFit { k: 1.0, x0: 0.0, residual: 0.0, degenerate: false }))
            .collect();
        items.extend(fits.iter().map(|&(y, k, x0, degenerate)| {
            ((y, None), LogisticFit { k, x0, residual: 0.0, degenerate })
        }));
        let h = param_histogram2d(&items, k_bins, x0_bins).unwrap();
        prop_assert_eq!(h.strata.iter().map(|s| s.total()).sum::<usize>(), items.len());
        let degenerate = items.iter().filter(|(_, f)| f.degenerate).count();
        prop_assert_eq!(h.strata.iter().map(|s| s.degenerate).sum::<usize>(), degenerate);
    }
}
