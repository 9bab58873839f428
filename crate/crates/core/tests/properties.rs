// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use bocpd::evaluation::margin_f_score;
use bocpd::predictive::{detect_by_threshold, AnomalyScore};
use bocpd::preprocess::{standardize_fit, Scaling};
use bocpd::{BocdEngine, ChangepointSet, EngineConfig, HazardSpec, ModelSpec, NiwParams, NormalGammaParams, Scheme};
use common::{max_matching, obs};
use proptest::prelude::*;

fn ng() -> impl Strategy<Value = NormalGammaParams> {
    (-3.0..3.0f64, 0.05..5.0f64, 0.05..5.0f64, 0.05..5.0f64)
        .prop_map(|(m, k, a, b)| NormalGammaParams::new(m, k, a, b).unwrap())
}

fn stream(d: usize, max_len: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-50.0..50.0f64, d), 1..max_len)
}

fn times() -> impl Strategy<Value = ChangepointSet> {
    prop::collection::vec(1..80i64, 0..10).prop_map(ChangepointSet::from_unsorted)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_is_a_distribution(
        prior in ng(),
        lambda in 1.0..500.0f64,
        truncation in 2usize..40,
        values in stream(3, 80),
        multivariate in any::<bool>(),
    ) {
        let model = if multivariate {
            NiwParams::from_slices(&[0.0; 3], 1.0, 4.0, &[1.0, 0.2, 0.0, 0.2, 1.0, 0.0, 0.0, 0.0, 1.0]).map(ModelSpec::Multivariate).unwrap()
        } else {
            ModelSpec::factorized(3, prior)
        };
        let cfg = EngineConfig::new(model, HazardSpec::new(lambda).unwrap(), truncation, Scheme::MapSet, 0).unwrap();
        let mut engine = BocdEngine::new(cfg).unwrap();
        for (i, v) in values.iter().enumerate() {
            engine.step(&obs(i as i64 + 1, v)).unwrap();
            let post = engine.posterior();
            prop_assert!(post.len() <= truncation + 1 && post.len() <= i + 2);
            prop_assert!(post.log_probs.iter().all(|p| p.is_finite() && *p <= 1e-12));
            prop_assert!(post.log_normalizer().abs() < 1e-9);
        }
    }

    #[test]
    fn detections_are_ordered_and_distinct(values in stream(2, 150), c in 0usize..4) {
        let prior = NormalGammaParams::new(0.0, 1.0, 1.0, 1.0).unwrap();
        let cfg = EngineConfig::new(ModelSpec::factorized(2, prior), HazardSpec::new(20.0).unwrap(), 100, Scheme::MapSet, c).unwrap();
        let mut engine = BocdEngine::new(cfg).unwrap();
        let stream: Vec<_> = values.iter().enumerate().map(|(i, v)| obs(i as i64 + 1, v)).collect();
        let found = engine.run(&stream).unwrap();
        prop_assert!(found.windows(2).all(|w| w[0].flagged_at < w[1].flagged_at));
        prop_assert!(found.iter().all(|d| d.located_at <= d.flagged_at));
    }

    #[test]
    fn updates_commute(prior in ng(), xs in prop::collection::vec(-20.0..20.0f64, 1..20)) {
        let forward = xs.iter().fold(prior, |p, &x| p.update(x).unwrap());
        let backward = xs.iter().rev().fold(prior, |p, &x| p.update(x).unwrap());
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
        prop_assert!(close(forward.mu(), backward.mu()));
        prop_assert!(close(forward.beta(), backward.beta()));
        prop_assert_eq!(forward.kappa(), backward.kappa());
        prop_assert_eq!(forward.alpha(), backward.alpha());
    }

    #[test]
    fn predictive_peaks_at_the_mean(prior in ng(), x in -20.0..20.0f64) {
        let at_mean = prior.predictive_logpdf(prior.mu()).unwrap().value();
        prop_assert!(prior.predictive_logpdf(x).unwrap().value() <= at_mean + 1e-12);
    }

    #[test]
    fn f_score_is_bounded_and_matches_oracle(truth in times(), detected in times(), margin in 0usize..6) {
        let r = margin_f_score(&truth, &detected, margin);
        prop_assert!((0.0..=1.0).contains(&r.f_score));
        prop_assert!(r.f_score <= r.precision.max(r.recall) + 1e-15);
        prop_assert_eq!(r.true_positives(), max_matching(truth.times(), detected.times(), margin as i64));
        // swapping roles swaps precision and recall
        let s = margin_f_score(&detected, &truth, margin);
        prop_assert_eq!((s.precision, s.recall), (r.recall, r.precision));
        // a wider margin never loses matches
        prop_assert!(margin_f_score(&truth, &detected, margin + 1).true_positives() >= r.true_positives());
    }

    #[test]
    fn raising_the_threshold_never_adds_flags(
        values in prop::collection::vec(0.0..5.0f64, 1..60),
        lo in 0.0..5.0f64,
        bump in 0.0..2.0f64,
        refractory in 0usize..6,
    ) {
        let scores: Vec<AnomalyScore> = values.iter().enumerate().map(|(i, v)| AnomalyScore { value: *v, at_t: i as i64 + 1 }).collect();
        let a = detect_by_threshold(&scores, lo, refractory);
        let b = detect_by_threshold(&scores, lo + bump, refractory);
        prop_assert!(b.len() <= a.len());
        if refractory == 0 {
            prop_assert!(b.times().iter().all(|t| a.times().contains(t)));
        }
    }

    #[test]
    fn standardization_inverts(values in stream(2, 30), probe in prop::collection::vec(-100.0..100.0f64, 2)) {
        let s: Vec<_> = values.iter().enumerate().map(|(i, v)| obs(i as i64 + 1, v)).collect();
        if let Ok(stats) = standardize_fit(&s) {
            for scaling in [Scaling::ZScore, Scaling::Literal] {
                let z = obs(1, &probe);
                let back = stats.invert(&stats.apply(&z, scaling).unwrap(), scaling).unwrap();
                for (a, b) in back.values.iter().zip(&probe) {
                    prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
                }
            }
        }
    }
}
