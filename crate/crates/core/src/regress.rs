//! Weighted distances and the kNN, GRNN and OLS forecasters.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{OfterError, Result};
use crate::stats;

/// Non-negative per-column weights of the distance metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeights {
    v: Vec<f64>,
}

impl FeatureWeights {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(OfterError::invalid("feature weights must be finite and non-negative"));
        }
        let s: f64 = v.iter().sum();
        if s != 0.0 && (s - 1.0).abs() > 1e-12 {
            return Err(OfterError::invalid(format!(
                "feature weights sum to {s}, expected 0 or 1"
            )));
        }
        Ok(FeatureWeights { v })
    }

    /// Normalize arbitrary non-negative scores; all-zero input stays zero.
    pub fn normalized(raw: &[f64]) -> Result<Self> {
        let s: f64 = raw.iter().sum();
        if s > 0.0 {
            Self::new(raw.iter().map(|w| w / s).collect())
        } else {
            Self::new(raw.to_vec())
        }
    }

    pub fn uniform(d: usize) -> Self {
        FeatureWeights {
            v: vec![1.0 / d as f64; d],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.v
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.v.iter().all(|w| *w == 0.0)
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(OfterError::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// `sqrt(sum_j v_j (a_j - b_j)^2)`.
pub fn weighted_distance(a: &[f64], b: &[f64], weights: &FeatureWeights) -> Result<f64> {
    check_len(a.len(), b.len())?;
    check_len(a.len(), weights.len())?;
    Ok(raw_distance(a.iter().copied(), b, weights.as_slice()))
}

fn raw_distance(a: impl Iterator<Item = f64>, b: &[f64], v: &[f64]) -> f64 {
    a.zip(b)
        .zip(v)
        .map(|((x, y), w)| w * (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Distances from every row of `history` to `query`.
pub fn distances(history: &DMatrix<f64>, query: &[f64], weights: &FeatureWeights) -> Result<Vec<f64>> {
    check_len(history.ncols(), query.len())?;
    check_len(history.ncols(), weights.len())?;
    Ok((0..history.nrows())
        .map(|i| raw_distance(history.row(i).iter().copied(), query, weights.as_slice()))
        .collect())
}

fn check_window(n: usize, targets: usize) -> Result<()> {
    if n == 0 {
        return Err(OfterError::invalid("empty history window"));
    }
    check_len(n, targets)
}

/// Indices of the `k` smallest distances; ties go to the earlier index.
pub fn nearest(d: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// kNN forecast from precomputed distances.
pub fn knn_from_distances(d: &[f64], targets: &[f64], k: usize) -> Result<f64> {
    check_window(d.len(), targets.len())?;
    if k == 0 || k > d.len() {
        return Err(OfterError::invalid(format!(
            "k = {k} outside 1..={}",
            d.len()
        )));
    }
    let sel = nearest(d, k);
    Ok(sel.iter().map(|&i| targets[i]).sum::<f64>() / k as f64)
}

pub fn knn_forecast(
    history: &DMatrix<f64>,
    targets: &[f64],
    query: &[f64],
    k: usize,
    weights: &FeatureWeights,
) -> Result<f64> {
    let d = distances(history, query, weights)?;
    knn_from_distances(&d, targets, k)
}

/// Normalized GRNN kernel weights `exp(-d^2 / h)` with `h = median(d) / s`.
pub fn grnn_weights(d: &[f64], s: f64) -> Result<Vec<f64>> {
    if d.is_empty() {
        return Err(OfterError::invalid("empty history window"));
    }
    if !(s > 0.0) || !s.is_finite() {
        return Err(OfterError::invalid(format!("GRNN scale must be positive, got {s}")));
    }
    if d.iter().any(|x| !x.is_finite()) {
        return Err(OfterError::NonFinite("GRNN distances"));
    }
    let n = d.len();
    let mut med = stats::median(d);
    if med == 0.0 {
        med = d.iter().copied().filter(|&x| x > 0.0).fold(f64::INFINITY, f64::min);
        if !med.is_finite() {
            return Ok(vec![1.0 / n as f64; n]);
        }
    }
    let h = med / s;
    let d2min = d.iter().map(|x| x * x).fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = d.iter().map(|x| (-(x * x - d2min) / h).exp()).collect();
    let total: f64 = w.iter().sum();
    for wi in &mut w {
        *wi /= total;
    }
    Ok(w)
}

pub fn grnn_from_distances(d: &[f64], targets: &[f64], s: f64) -> Result<f64> {
    check_window(d.len(), targets.len())?;
    let w = grnn_weights(d, s)?;
    Ok(w.iter().zip(targets).map(|(a, b)| a * b).sum())
}

pub fn grnn_forecast(
    history: &DMatrix<f64>,
    targets: &[f64],
    query: &[f64],
    s: f64,
    weights: &FeatureWeights,
) -> Result<f64> {
    let d = distances(history, query, weights)?;
    grnn_from_distances(&d, targets, s)
}

/// Linear model `beta0 + beta^T x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsModel {
    pub beta0: f64,
    pub beta: Vec<f64>,
}

impl OlsModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_len(self.beta.len(), x.len())?;
        Ok(self.beta0 + self.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>())
    }
}

const OLS_RIDGE: f64 = 1e-8;

/// Least squares with intercept; falls back to a small ridge on a rank-deficient design.
pub fn ols_fit(x: &DMatrix<f64>, y: &[f64]) -> Result<OlsModel> {
    let (n, d) = x.shape();
    check_len(n, y.len())?;
    if n == 0 {
        return Err(OfterError::invalid("empty design"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(OfterError::NonFinite("OLS inputs"));
    }
    let ybar = stats::mean(y);
    let xbar: Vec<f64> = (0..d).map(|j| x.column(j).mean()).collect();
    let mut xc = x.clone();
    for (j, m) in xbar.iter().enumerate() {
        xc.column_mut(j).add_scalar_mut(-m);
    }
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - ybar));

    let beta = if d == 0 {
        DVector::zeros(0)
    } else {
        match full_rank_solve(&xc, &yc) {
            Some(b) => b,
            None => {
                warn!("OLS design is rank deficient; using ridge {OLS_RIDGE}");
                let mut g = xc.transpose() * &xc;
                for i in 0..d {
                    g[(i, i)] += OLS_RIDGE;
                }
                let rhs = xc.transpose() * &yc;
                g.cholesky()
                    .ok_or_else(|| OfterError::degenerate("ridge system not positive definite"))?
                    .solve(&rhs)
            }
        }
    };
    let beta0 = ybar - beta.iter().zip(&xbar).map(|(b, m)| b * m).sum::<f64>();
    let model = OlsModel {
        beta0,
        beta: beta.iter().copied().collect(),
    };
    if !model.beta0.is_finite() || model.beta.iter().any(|b| !b.is_finite()) {
        return Err(OfterError::NonFinite("OLS coefficients"));
    }
    Ok(model)
}

fn full_rank_solve(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    let (n, d) = x.shape();
    if n <= d {
        return None;
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let rmax = r.diagonal().amax();
    if rmax == 0.0 || r.diagonal().iter().any(|v| v.abs() < 1e-10 * rmax) {
        return None;
    }
    let qty = qr.q().transpose() * y;
    r.solve_upper_triangular(&qty)
}

/// Predict with `model` for each row.
pub fn ols_predict(model: &OlsModel, x: &[f64]) -> Result<f64> {
    model.predict(x)
}
