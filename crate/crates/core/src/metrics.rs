//! Forecast-quality measures, return transforms and sign-strategy backtests.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{OfterError, Result};
use crate::select::sign;
use crate::stats;

pub const TRADING_DAYS: f64 = 252.0;

fn check_positive(xs: &[f64], what: &str) -> Result<()> {
    if let Some(i) = xs.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(OfterError::invalid(format!(
            "{what} must be positive and finite (entry {i} is {})",
            xs[i]
        )));
    }
    Ok(())
}

/// Close-to-close returns `(P_{d+k} - P_d) / P_d`, length `n - k`.
pub fn returns(prices: &[f64], k: usize) -> Result<Vec<f64>> {
    check_positive(prices, "prices")?;
    if k == 0 || k >= prices.len() {
        return Err(OfterError::invalid(format!("horizon {k} invalid for {} prices", prices.len())));
    }
    Ok((0..prices.len() - k)
        .map(|d| (prices[d + k] - prices[d]) / prices[d])
        .collect())
}

/// Instrument return minus the benchmark return on the same day.
pub fn excess_returns(instrument: &[f64], benchmark: &[f64]) -> Result<Vec<f64>> {
    if instrument.len() != benchmark.len() {
        return Err(OfterError::DimensionMismatch {
            expected: instrument.len(),
            found: benchmark.len(),
        });
    }
    Ok(instrument.iter().zip(benchmark).map(|(a, b)| a - b).collect())
}

/// `(ln V_{t+k} - ln V_t) / ln V_t`.
pub fn log_volume_returns(volumes: &[f64], k: usize) -> Result<Vec<f64>> {
    check_positive(volumes, "volumes")?;
    if k == 0 || k >= volumes.len() {
        return Err(OfterError::invalid(format!("horizon {k} invalid for {} volumes", volumes.len())));
    }
    (0..volumes.len() - k)
        .map(|t| {
            let base = volumes[t].ln();
            if base == 0.0 {
                return Err(OfterError::degenerate(format!("unit volume at {t} gives a zero log base")));
            }
            Ok((volumes[t + k].ln() - base) / base)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastQuality {
    pub pearson: f64,
    pub mse: f64,
    pub mae: f64,
}

pub fn forecast_quality(y_hat: &[f64], y: &[f64]) -> Result<ForecastQuality> {
    if y_hat.len() != y.len() {
        return Err(OfterError::DimensionMismatch {
            expected: y.len(),
            found: y_hat.len(),
        });
    }
    if y.len() < 2 {
        return Err(OfterError::TooShort { needed: 2, got: y.len() });
    }
    let pearson = stats::pearson(y_hat, y)
        .ok_or_else(|| OfterError::degenerate("correlation undefined for a constant series"))?;
    let n = y.len() as f64;
    let mse = y_hat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    let mae = y_hat.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    Ok(ForecastQuality { pearson, mse, mae })
}

/// Nested magnitude portfolios: Q1 holds every name, Q5 the top fifth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quantile {
    Q1,
    Q2,
    Q3,
    Q4,
    Q5,
}

impl Quantile {
    pub const ALL: [Quantile; 5] = [
        Quantile::Q1,
        Quantile::Q2,
        Quantile::Q3,
        Quantile::Q4,
        Quantile::Q5,
    ];

    pub fn rank(self) -> usize {
        self as usize + 1
    }

    /// `ceil((1 - 0.2 (k - 1)) n)`, computed in integers.
    pub fn size(self, n: usize) -> usize {
        ((6 - self.rank()) * n).div_ceil(5)
    }
}

impl std::fmt::Display for Quantile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Q{}", self.rank())
    }
}

/// Indices of the names held on one day: the largest `|signal|` among the
/// finite entries, ties broken by lower index.
pub fn quantile_members(signals: &[f64], q: Quantile) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..signals.len()).filter(|&i| signals[i].is_finite()).collect();
    let n = idx.len();
    idx.sort_by(|&a, &b| {
        signals[b]
            .abs()
            .total_cmp(&signals[a].abs())
            .then(a.cmp(&b))
    });
    idx.truncate(q.size(n));
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub quantile: Quantile,
    pub pnl: Vec<f64>,
    /// Annualized Sharpe ratio; `None` when the P&L has zero spread.
    pub sr: Option<f64>,
    pub ppd: f64,
    /// One-tailed probabilistic-Sharpe p-value (skewness and kurtosis
    /// adjusted); an approximation of the published test.
    pub p_value: Option<f64>,
    /// Days with no finite signal, booked at zero P&L.
    pub empty_days: Vec<usize>,
}

/// Backtest of `sign(signal)` positions. Rows are days, columns instruments;
/// non-finite signals mark names without a forecast that day.
pub fn evaluate_strategy(
    signals: &DMatrix<f64>,
    returns: &DMatrix<f64>,
    quantile: Quantile,
) -> Result<StrategyResult> {
    if signals.shape() != returns.shape() {
        return Err(OfterError::invalid(format!(
            "signals {:?} and returns {:?} are not aligned",
            signals.shape(),
            returns.shape()
        )));
    }
    let mut pnl = Vec::with_capacity(signals.nrows());
    let mut empty_days = Vec::new();
    for t in 0..signals.nrows() {
        let s: Vec<f64> = signals.row(t).iter().copied().collect();
        let members = quantile_members(&s, quantile);
        if members.is_empty() {
            empty_days.push(t);
            pnl.push(0.0);
            continue;
        }
        let mut total = 0.0;
        for &i in &members {
            let r = returns[(t, i)];
            if !r.is_finite() {
                return Err(OfterError::NonFinite("return of a held instrument"));
            }
            total += sign(s[i]) * r;
        }
        pnl.push(total / members.len() as f64);
    }
    let (sr, p_value) = sharpe(&pnl);
    Ok(StrategyResult {
        quantile,
        ppd: stats::mean(&pnl),
        pnl,
        sr,
        p_value,
        empty_days,
    })
}

/// Annualized Sharpe ratio and its one-tailed significance.
pub fn sharpe(pnl: &[f64]) -> (Option<f64>, Option<f64>) {
    if pnl.len() < 2 {
        return (None, None);
    }
    let sd = stats::sample_sd(pnl);
    let scale = pnl.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(sd > 1e-12 * scale) {
        return (None, None);
    }
    let daily = stats::mean(pnl) / sd;
    (Some(daily * TRADING_DAYS.sqrt()), sharpe_p_value(pnl, daily))
}

/// `1 - Phi(z)` with `z = SR sqrt(n - 1) / sqrt(1 - g3 SR + (g4 - 1) / 4 SR^2)`,
/// where `SR` is the per-period ratio and `g3`, `g4` the sample skewness and kurtosis.
fn sharpe_p_value(pnl: &[f64], sr: f64) -> Option<f64> {
    let n = pnl.len() as f64;
    let m = stats::mean(pnl);
    let m2 = pnl.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = pnl.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    let m4 = pnl.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    let g3 = m3 / m2.powf(1.5);
    let g4 = m4 / (m2 * m2);
    let var = 1.0 - g3 * sr + (g4 - 1.0) / 4.0 * sr * sr;
    if !(var > 0.0) {
        return None;
    }
    let z = sr * (n - 1.0).sqrt() / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Some(1.0 - normal.cdf(z))
}
