mod common;

use common::{gaussian, rng};
use nalgebra::DMatrix;
use ofter::regress::{grnn_forecast, knn_forecast, ols_fit, FeatureWeights};
use ofter::select::{candidate_forecasts, combine, combine_averaging, Candidate, Combination, LossKind, ModelLedger};
use proptest::prelude::*;

#[test]
fn candidates_match_individual_forecasters() {
    let mut g = rng(41);
    let (n, d) = (120, 3);
    let x = DMatrix::from_fn(n, d, |_, _| gaussian(&mut g));
    let y: Vec<f64> = (0..n).map(|_| gaussian(&mut g)).collect();
    let q: Vec<f64> = (0..d).map(|_| gaussian(&mut g)).collect();
    let w = FeatureWeights::normalized(&[1.0, 2.0, 3.0]).unwrap();
    let ols = ols_fit(&x, &y).unwrap();
    let ledger = ModelLedger::with_defaults(LossKind::Mse);
    let f = candidate_forecasts(&x, &y, &q, &ledger, &w, &ols, &q).unwrap();
    assert_eq!(f.len(), ledger.len());
    for (i, c) in ledger.candidates().iter().enumerate() {
        let want = match *c {
            Candidate::Grnn(s) => grnn_forecast(&x, &y, &q, s, &w).unwrap(),
            Candidate::Knn(k) => knn_forecast(&x, &y, &q, k, &w).unwrap(),
            Candidate::Ols => ols.predict(&q).unwrap(),
        };
        assert!((f[i] - want).abs() < 1e-12, "{c}");
    }
    assert_eq!(ledger.candidates()[0].to_string(), "grnn:0.001");
    assert_eq!(ledger.candidates().last().unwrap().to_string(), "ols");
}

#[test]
fn ledger_accumulates_losses() {
    let mut l = ModelLedger::new(vec![1.0], vec![2], LossKind::Mae).unwrap();
    l.update_losses(&[1.0, 2.0, 4.0], 2.0, None).unwrap();
    l.update_losses(&[3.0, 2.0, 1.0], 1.0, None).unwrap();
    assert_eq!(l.losses(), vec![3.0, 1.0, 2.0]);
    assert_eq!(l.combine(&[10.0, 20.0, 30.0]).unwrap().value, 20.0);

    let mut p = ModelLedger::new(vec![1.0], vec![1], LossKind::NegPnl).unwrap();
    assert!(p.update_losses(&[1.0, -1.0, 0.0], 0.0, None).is_err());
    p.update_losses(&[1.0, -1.0, 0.0], 0.0, Some(0.02)).unwrap();
    assert_eq!(p.losses(), vec![-0.02, 0.02, 0.0]);
}

#[test]
fn averaging_prefers_low_loss() {
    let c = combine_averaging(&[1.0, 2.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
    assert!((c.eta.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    assert!(c.eta[0] > c.eta[1] && c.eta[1] > c.eta[2]);
    let mut l = ModelLedger::new(vec![1.0], vec![1], LossKind::Mse).unwrap();
    l.combination = Combination::Averaging;
    // Equal losses: plain average.
    assert_eq!(l.combine(&[1.0, 2.0, 6.0]).unwrap().value, 3.0);
}

proptest! {
    #[test]
    fn winner_take_all_oracle(losses in prop::collection::vec(0u8..5, 1..12), seed in any::<u64>()) {
        let losses: Vec<f64> = losses.into_iter().map(f64::from).collect();
        let mut g = rng(seed);
        let f: Vec<f64> = losses.iter().map(|_| gaussian(&mut g)).collect();
        let c = combine(&losses, &f).unwrap();
        let best = losses.iter().copied().fold(f64::INFINITY, f64::min);
        let winners: Vec<usize> = (0..losses.len()).filter(|&i| losses[i] == best).collect();
        prop_assert_eq!(&c.winners, &winners);
        let want = winners.iter().map(|&i| f[i]).sum::<f64>() / winners.len() as f64;
        prop_assert!((c.value - want).abs() < 1e-12);
        prop_assert!((c.eta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn averaging_weights_are_a_distribution(losses in prop::collection::vec(0.0f64..10.0, 1..12)) {
        let f = vec![1.0; losses.len()];
        let c = combine_averaging(&losses, &f).unwrap();
        prop_assert!(c.eta.iter().all(|e| *e > 0.0));
        prop_assert!((c.eta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!((c.value - 1.0).abs() < 1e-12);
    }
}
