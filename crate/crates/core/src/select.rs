//! Cumulative-loss ledger and winner-take-all combination of candidate forecasters.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{OfterError, Result};
use crate::regress::{self, FeatureWeights, OlsModel};

pub const DEFAULT_S_SET: [f64; 11] = [
    0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 10.0, 50.0, 100.0,
];
pub const DEFAULT_K_SET: [usize; 9] = [1, 2, 3, 5, 10, 15, 20, 30, 50];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    #[default]
    Mse,
    Mae,
    NegPnl,
}

impl std::str::FromStr for LossKind {
    type Err = OfterError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "mse" => Ok(LossKind::Mse),
            "mae" => Ok(LossKind::Mae),
            "neg-pnl" => Ok(LossKind::NegPnl),
            other => Err(OfterError::invalid(format!("unknown loss kind '{other}'"))),
        }
    }
}

/// How candidate forecasts are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Combination {
    /// Equal weight on every candidate that attains the minimum loss.
    #[default]
    WinnerTakeAll,
    /// Weights decreasing in excess loss over the best candidate.
    Averaging,
}

/// Candidate identifier in ledger order: GRNN scales, then kNN sizes, then OLS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Candidate {
    Grnn(f64),
    Knn(usize),
    Ols,
}

impl std::fmt::Display for Candidate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Candidate::Grnn(s) => write!(f, "grnn:{s}"),
            Candidate::Knn(k) => write!(f, "knn:{k}"),
            Candidate::Ols => write!(f, "ols"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelLedger {
    pub s_set: Vec<f64>,
    pub k_set: Vec<usize>,
    pub grnn_losses: Vec<f64>,
    pub knn_losses: Vec<f64>,
    pub ols_loss: f64,
    pub loss_kind: LossKind,
    #[serde(default)]
    pub combination: Combination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedForecast {
    pub value: f64,
    pub eta: Vec<f64>,
    pub winners: Vec<usize>,
}

impl ModelLedger {
    pub fn new(s_set: Vec<f64>, k_set: Vec<usize>, loss_kind: LossKind) -> Result<Self> {
        if s_set.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(OfterError::invalid("GRNN scales must be positive"));
        }
        if k_set.contains(&0) {
            return Err(OfterError::invalid("kNN sizes must be at least 1"));
        }
        Ok(ModelLedger {
            grnn_losses: vec![0.0; s_set.len()],
            knn_losses: vec![0.0; k_set.len()],
            s_set,
            k_set,
            ols_loss: 0.0,
            loss_kind,
            combination: Combination::WinnerTakeAll,
        })
    }

    pub fn with_defaults(loss_kind: LossKind) -> Self {
        Self::new(DEFAULT_S_SET.to_vec(), DEFAULT_K_SET.to_vec(), loss_kind)
            .expect("default grids are valid")
    }

    pub fn len(&self) -> usize {
        self.s_set.len() + self.k_set.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn candidates(&self) -> Vec<Candidate> {
        self.s_set
            .iter()
            .map(|&s| Candidate::Grnn(s))
            .chain(self.k_set.iter().map(|&k| Candidate::Knn(k)))
            .chain(std::iter::once(Candidate::Ols))
            .collect()
    }

    /// Cumulative losses in candidate order.
    pub fn losses(&self) -> Vec<f64> {
        self.grnn_losses
            .iter()
            .chain(&self.knn_losses)
            .copied()
            .chain(std::iter::once(self.ols_loss))
            .collect()
    }

    pub fn max_k(&self) -> usize {
        self.k_set.iter().copied().max().unwrap_or(0)
    }

    /// Add each candidate's loss for one realized observation.
    pub fn update_losses(
        &mut self,
        forecasts: &[f64],
        y_true: f64,
        actual_return: Option<f64>,
    ) -> Result<()> {
        if forecasts.len() != self.len() {
            return Err(OfterError::DimensionMismatch {
                expected: self.len(),
                found: forecasts.len(),
            });
        }
        if !y_true.is_finite() {
            return Err(OfterError::NonFinite("realized target"));
        }
        let ret = match (self.loss_kind, actual_return) {
            (LossKind::NegPnl, None) => {
                return Err(OfterError::invalid("NEG_PNL loss needs the realized return"))
            }
            (_, r) => r.unwrap_or(0.0),
        };
        let kind = self.loss_kind;
        let loss = |f: f64| match kind {
            LossKind::Mse => (f - y_true) * (f - y_true),
            LossKind::Mae => (f - y_true).abs(),
            LossKind::NegPnl => -sign(f) * ret,
        };
        let ng = self.grnn_losses.len();
        let nk = self.knn_losses.len();
        for (r, f) in self.grnn_losses.iter_mut().zip(&forecasts[..ng]) {
            *r += loss(*f);
        }
        for (r, f) in self.knn_losses.iter_mut().zip(&forecasts[ng..ng + nk]) {
            *r += loss(*f);
        }
        self.ols_loss += loss(forecasts[ng + nk]);
        Ok(())
    }

    pub fn combine(&self, forecasts: &[f64]) -> Result<CombinedForecast> {
        let losses = self.losses();
        if forecasts.len() != losses.len() {
            return Err(OfterError::DimensionMismatch {
                expected: losses.len(),
                found: forecasts.len(),
            });
        }
        match self.combination {
            Combination::WinnerTakeAll => combine(&losses, forecasts),
            Combination::Averaging => combine_averaging(&losses, forecasts),
        }
    }
}

/// `sign` with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Equal weight on all candidates whose loss equals the minimum.
pub fn combine(losses: &[f64], forecasts: &[f64]) -> Result<CombinedForecast> {
    if losses.is_empty() {
        return Err(OfterError::invalid("empty candidate set"));
    }
    if losses.len() != forecasts.len() {
        return Err(OfterError::DimensionMismatch {
            expected: losses.len(),
            found: forecasts.len(),
        });
    }
    let best = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let winners: Vec<usize> = (0..losses.len()).filter(|&i| losses[i] == best).collect();
    if winners.is_empty() {
        return Err(OfterError::NonFinite("candidate losses"));
    }
    let w = 1.0 / winners.len() as f64;
    let mut eta = vec![0.0; losses.len()];
    for &i in &winners {
        eta[i] = w;
    }
    let value = winners.iter().map(|&i| forecasts[i]).sum::<f64>() * w;
    Ok(CombinedForecast { value, eta, winners })
}

/// Weights proportional to `1 / (R - R_min + mean excess)`.
pub fn combine_averaging(losses: &[f64], forecasts: &[f64]) -> Result<CombinedForecast> {
    let wta = combine(losses, forecasts)?;
    let best = losses[wta.winners[0]];
    let excess: Vec<f64> = losses.iter().map(|r| r - best).collect();
    let gap = excess.iter().sum::<f64>() / excess.len() as f64;
    if !(gap > 0.0) {
        let n = losses.len() as f64;
        return Ok(CombinedForecast {
            value: forecasts.iter().sum::<f64>() / n,
            eta: vec![1.0 / n; losses.len()],
            winners: wta.winners,
        });
    }
    let raw: Vec<f64> = excess.iter().map(|e| 1.0 / (e + gap)).collect();
    let total: f64 = raw.iter().sum();
    let eta: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let value = eta.iter().zip(forecasts).map(|(a, b)| a * b).sum();
    Ok(CombinedForecast {
        value,
        eta,
        winners: wta.winners,
    })
}

/// Per-candidate forecasts for one query, computing the distances once.
pub fn candidate_forecasts(
    window: &DMatrix<f64>,
    targets: &[f64],
    query: &[f64],
    ledger: &ModelLedger,
    weights: &FeatureWeights,
    ols: &OlsModel,
    ols_input: &[f64],
) -> Result<Vec<f64>> {
    if window.nrows() < ledger.max_k() {
        return Err(OfterError::TooShort {
            needed: ledger.max_k(),
            got: window.nrows(),
        });
    }
    let d = regress::distances(window, query, weights)?;
    let mut out = Vec::with_capacity(ledger.len());
    for &s in &ledger.s_set {
        out.push(regress::grnn_from_distances(&d, targets, s)?);
    }
    // One sort serves every k.
    let order = regress::nearest(&d, ledger.max_k());
    for &k in &ledger.k_set {
        out.push(order[..k].iter().map(|&i| targets[i]).sum::<f64>() / k as f64);
    }
    out.push(ols.predict(ols_input)?);
    Ok(out)
}

/// One forecasting step: candidates on the trailing window, then combination.
pub fn step(
    window: &DMatrix<f64>,
    targets: &[f64],
    query: &[f64],
    ledger: &ModelLedger,
    weights: &FeatureWeights,
    ols: &OlsModel,
) -> Result<(CombinedForecast, Vec<f64>)> {
    let forecasts = candidate_forecasts(window, targets, query, ledger, weights, ols, query)?;
    let combined = ledger.combine(&forecasts)?;
    Ok((combined, forecasts))
}
