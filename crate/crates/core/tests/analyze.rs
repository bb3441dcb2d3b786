mod common;

use common::{gaussian, jacobi_eig, random_symmetric, rng};
use nalgebra::DMatrix;
use ofter::analyze::{
    d_min_direct, detect_outliers, detect_outliers_with, importance_from_projection, state_importance,
    DistanceStatistic, OutlierDetector,
};
use ofter::datagen::{generate, Model, SyntheticSpec};
use ofter::frame::{forecasting_pairs, StandardizationState};
use ofter::pipeline::{initialize, OfterConfig, Variant};
use ofter::regress::FeatureWeights;
use proptest::prelude::*;

fn labels(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("x{i}")).collect()
}

/// Squared weighted distance of the displacement `delta` in embedded-plus-augmented space.
fn d2(u: &DMatrix<f64>, v: &[f64], aug: &[usize], delta: &[f64]) -> f64 {
    let p = u.ncols();
    let mut s = 0.0;
    for k in 0..p {
        let z: f64 = (0..u.nrows()).map(|j| u[(j, k)] * delta[j]).sum();
        s += v[k] * z * z;
    }
    for (i, &j) in aug.iter().enumerate() {
        s += v[p + i] * delta[j] * delta[j];
    }
    s
}

#[test]
fn importance_matches_finite_differences() {
    let mut g = rng(61);
    let d = 8;
    let (_, q) = jacobi_eig(&random_symmetric(&mut g, d));
    let u = q.columns(0, 3).into_owned();
    let aug = [1usize, 6];
    let raw: Vec<f64> = (0..5).map(|_| gaussian(&mut g).abs()).collect();
    let w = FeatureWeights::normalized(&raw).unwrap();
    let r = importance_from_projection(&u, &w, &aug, labels(d)).unwrap();
    let ones = vec![1.0; d];
    let h = 1e-6;
    for j in 0..d {
        let mut up = ones.clone();
        let mut dn = ones.clone();
        up[j] += h;
        dn[j] -= h;
        let grad = (d2(&u, w.as_slice(), &aug, &up) - d2(&u, w.as_slice(), &aug, &dn)) / (2.0 * h);
        assert!((r.importance[j] - grad.abs()).abs() < 1e-7, "feature {j}");
    }
}

#[test]
fn single_component_importance_pattern() {
    let mut g = rng(62);
    let d = 6;
    let (_, q) = jacobi_eig(&random_symmetric(&mut g, d));
    let u = q.columns(0, 2).into_owned();
    let w = FeatureWeights::new(vec![1.0, 0.0]).unwrap();
    let r = importance_from_projection(&u, &w, &[], labels(d)).unwrap();
    let s: f64 = u.column(0).sum();
    for j in 0..d {
        assert!((r.importance[j] - 2.0 * (u[(j, 0)] * s).abs()).abs() < 1e-14);
    }
}

#[test]
fn shape_errors() {
    let u = DMatrix::<f64>::identity(3, 2);
    assert!(importance_from_projection(&u, &FeatureWeights::uniform(3), &[], labels(3)).is_err());
    assert!(importance_from_projection(&u, &FeatureWeights::uniform(3), &[5], labels(3)).is_err());
    assert!(importance_from_projection(&u, &FeatureWeights::uniform(2), &[], labels(4)).is_err());
}

#[test]
fn ft_run_gives_zero_importance_to_dropped_features() {
    let panel = generate(&SyntheticSpec::new(Model::M2, 1500, 3)).unwrap();
    let (x, y) = forecasting_pairs(&panel, "y1", 3).unwrap();
    let config = OfterConfig::for_variant(Variant::Ft);
    let (state, _) = initialize(&x, &y, &config).unwrap();
    let r = state_importance(&state).unwrap();
    let w = state.weights.as_slice();
    assert_eq!(r.importance.len(), w.len());
    assert!(w.iter().any(|v| *v == 0.0), "expected thresholded features");
    for (imp, v) in r.importance.iter().zip(w) {
        if *v == 0.0 {
            assert_eq!(*imp, 0.0);
        } else {
            assert!(*imp > 0.0);
        }
    }
}

#[test]
fn d_min_matches_brute_force() {
    let mut g = rng(63);
    let h = DMatrix::from_fn(300, 3, |_, _| gaussian(&mut g));
    let w = FeatureWeights::normalized(&[1.0, 2.0, 0.5]).unwrap();
    let r = detect_outliers(&h, &w, 40, 3.0).unwrap();
    assert!(r.d_min[0].is_nan());
    for t in 1..300 {
        assert!((r.d_min[t] - d_min_direct(&h, &w, t, 40).unwrap()).abs() < 1e-12);
    }
    assert!(r.threshold[..41].iter().all(|v| v.is_nan()));
    assert!(r.threshold[41..].iter().all(|v| v.is_finite()));
    assert_eq!(r.evaluated(), 300 - 41);
}

#[test]
fn streaming_and_offline_agree() {
    let mut g = rng(64);
    let h = DMatrix::from_fn(200, 2, |_, _| gaussian(&mut g));
    let w = FeatureWeights::uniform(2);
    let offline = detect_outliers_with(&h, &w, 30, 1.0, DistanceStatistic::Mean).unwrap();
    let mut det = OutlierDetector::new(w, 30, 1.0).unwrap().with_statistic(DistanceStatistic::Mean);
    for t in 0..200 {
        let row: Vec<f64> = h.row(t).iter().copied().collect();
        let s = det.push(&row).unwrap();
        assert_eq!(s.flag, offline.flags[t]);
    }
}

/// The M1 stream standardized on its first 70%; the identity embedding.
pub fn m1_stream(seed: u64, spike: Option<(usize, f64)>) -> DMatrix<f64> {
    let panel = generate(&SyntheticSpec::new(Model::M1, 3000, seed)).unwrap();
    let mut v = panel.values().clone();
    if let Some((t, k)) = spike {
        v[(t, 0)] += k * ofter::stats::sample_sd(&panel.column(0));
    }
    let st = StandardizationState::fit(&v, 0..2100, panel.columns()).unwrap();
    st.apply(&v)
}

#[test]
fn injected_spike_is_flagged_and_clean_streams_are_quiet() {
    let w = FeatureWeights::uniform(5);
    let (mut flagged, mut evaluated) = (0usize, 0usize);
    for seed in 0..20u64 {
        let r = detect_outliers(&m1_stream(seed, None), &w, 600, 5.0).unwrap();
        flagged += r.flags.iter().filter(|f| **f).count();
        evaluated += r.evaluated();
        let r = detect_outliers(&m1_stream(seed, Some((2000, 10.0))), &w, 600, 5.0).unwrap();
        assert!(r.flags[2000], "seed {seed}: spike not flagged");
    }
    let rate = flagged as f64 / evaluated as f64;
    assert!(rate < 0.02, "false-positive rate {rate}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn importance_ignores_column_signs(seed in any::<u64>(), flips in prop::collection::vec(any::<bool>(), 4)) {
        let mut g = rng(seed);
        let (_, q) = jacobi_eig(&random_symmetric(&mut g, 7));
        let u = q.columns(0, 4).into_owned();
        let mut f = u.clone();
        for (k, flip) in flips.iter().enumerate() {
            if *flip {
                f.column_mut(k).neg_mut();
            }
        }
        let raw: Vec<f64> = (0..5).map(|_| gaussian(&mut g).abs()).collect();
        let w = FeatureWeights::normalized(&raw).unwrap();
        let a = importance_from_projection(&u, &w, &[3], labels(7)).unwrap();
        let b = importance_from_projection(&f, &w, &[3], labels(7)).unwrap();
        for (x, y) in a.importance.iter().zip(&b.importance) {
            prop_assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn flags_shrink_as_kappa_grows(seed in any::<u64>(), k1 in 0.0f64..4.0, dk in 0.0f64..4.0) {
        let mut g = rng(seed);
        let h = DMatrix::from_fn(120, 2, |_, _| gaussian(&mut g));
        let w = FeatureWeights::uniform(2);
        let a = detect_outliers(&h, &w, 20, k1).unwrap();
        let b = detect_outliers(&h, &w, 20, k1 + dk).unwrap();
        for t in 0..120 {
            prop_assert!(!b.flags[t] || a.flags[t]);
        }
    }

    #[test]
    fn d_min_is_zero_only_for_duplicates(seed in any::<u64>()) {
        let mut g = rng(seed);
        let mut h = DMatrix::from_fn(40, 2, |_, _| gaussian(&mut g));
        let dup: Vec<f64> = h.row(30).iter().copied().collect();
        h.row_mut(35).copy_from_slice(&dup);
        let r = detect_outliers(&h, &FeatureWeights::uniform(2), 10, 5.0).unwrap();
        for t in 1..40 {
            prop_assert!(r.d_min[t] >= 0.0);
            prop_assert_eq!(r.d_min[t] == 0.0, t == 35);
        }
        prop_assert!(!r.flags[35]);
    }
}
