mod common;

use common::{gaussian, rng};
use nalgebra::{DMatrix, DVector};
use ofter::maxcorr::{bernstein_raw, osmc, osmc_fit, BernsteinBasis};
use ofter::stats::{mean, pearson, sample_variance};
use proptest::prelude::*;

/// Correlation of `v2` with its least-squares projection on the centered
/// polynomial space of degree `k - 1` in `v1`, built from monomials and solved by SVD.
fn projection_oracle(v1: &[f64], v2: &[f64], k: usize) -> f64 {
    let n = v1.len();
    let (lo, hi) = v1.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let u: Vec<f64> = v1.iter().map(|x| (x - lo) / (hi - lo) - 0.5).collect();
    let mut x = DMatrix::from_fn(n, k - 1, |i, j| u[i].powi(j as i32 + 1));
    for mut c in x.column_iter_mut() {
        let m = c.mean();
        c.add_scalar_mut(-m);
    }
    let m2 = mean(v2);
    let y = DVector::from_iterator(n, v2.iter().map(|v| v - m2));
    let beta = x.clone().svd(true, true).solve(&y, 1e-12).unwrap();
    let fit = &x * beta;
    (fit.norm() / y.norm()).min(1.0)
}

#[test]
fn quadratic_dependence_is_found() {
    let v1: Vec<f64> = (0..201).map(|i| i as f64 / 200.0).collect();
    let v2: Vec<f64> = v1.iter().map(|x| (x - 0.5) * (x - 0.5)).collect();
    let p = pearson(&v1, &v2).unwrap().abs();
    let o = osmc(&v1, &v2, 4).unwrap();
    assert!(p < 0.05, "pearson {p}");
    assert!(o > 0.99, "osmc {o}");
}

#[test]
fn bernstein_basis_is_a_partition_of_unity() {
    let b = BernsteinBasis::with_domain(5, -2.0, 3.0);
    for i in 0..=50 {
        let x = -2.0 + i as f64 * 0.1;
        let s: f64 = b.row(x).iter().sum();
        assert!((s - 1.0).abs() < 1e-14);
        assert!(b.row(x).iter().all(|v| *v >= 0.0));
    }
    let raw = bernstein_raw(&b, &[0.0, 1.0]);
    assert_eq!(raw.shape(), (2, 6));
}

#[test]
fn matches_projection_oracle() {
    let mut g = rng(21);
    for _ in 0..50 {
        let n = 60;
        let v1: Vec<f64> = (0..n).map(|_| gaussian(&mut g)).collect();
        let v2: Vec<f64> = v1.iter().map(|x| x.sin() + 0.3 * x * x + 0.5 * gaussian(&mut g)).collect();
        for k in [2, 3, 4, 6] {
            // Padding the domain does not change the spanned polynomial space.
            let got = osmc(&v1, &v2, k).unwrap();
            let want = projection_oracle(&v1, &v2, k);
            assert!((got - want).abs() < 1e-6, "k={k}: {got} vs {want}");
        }
    }
}

#[test]
fn independent_noise_scores_low() {
    let mut g = rng(22);
    let v1: Vec<f64> = (0..2000).map(|_| gaussian(&mut g)).collect();
    let v2: Vec<f64> = (0..2000).map(|_| gaussian(&mut g)).collect();
    assert!(osmc(&v1, &v2, 4).unwrap() < 0.1);
}

#[test]
fn degenerate_inputs() {
    assert!(osmc(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[1.0; 6], 4).is_err());
    assert!(osmc(&[1.0, 2.0, 3.0], &[1.0, 2.0], 4).is_err());
    assert!(osmc(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0], 4).is_err());
    assert!(osmc(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 4.0, 3.0], 1).is_err());
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (20usize..120).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(-5.0f64..5.0, n),
            -2.0f64..2.0,
        )
            .prop_map(|(a, noise, slope)| {
                let b = a.iter().zip(&noise).map(|(x, e)| slope * x + e).collect();
                (a, b)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dominates_pearson_and_meets_constraints((v1, v2) in pair()) {
        prop_assume!(sample_variance(&v1) > 1e-6 && sample_variance(&v2) > 1e-6);
        let r = osmc_fit(&v1, &v2, 4).unwrap();
        let p = pearson(&v1, &v2).unwrap().abs();
        prop_assert!(r.value >= p - 1e-8, "osmc {} < pearson {}", r.value, p);
        prop_assert!((0.0..=1.0).contains(&r.value));
        let t: Vec<f64> = v1.iter().map(|&x| r.transform(x)).collect();
        prop_assert!(mean(&t).abs() < 1e-8);
        prop_assert!((sample_variance(&t) - 1.0).abs() < 1e-8);
        let c = pearson(&t, &v2).unwrap();
        prop_assert!((c - r.value).abs() < 1e-8);
    }

    #[test]
    fn invariant_to_affine_maps_of_the_target((v1, v2) in pair(), a in 0.1f64..10.0, b in -10.0f64..10.0) {
        prop_assume!(sample_variance(&v1) > 1e-6 && sample_variance(&v2) > 1e-6);
        let w: Vec<f64> = v2.iter().map(|y| a * y + b).collect();
        let x = osmc(&v1, &v2, 4).unwrap();
        let y = osmc(&v1, &w, 4).unwrap();
        prop_assert!((x - y).abs() < 1e-7);
    }
}
