//! Unit-root testing, differencing, ARMA order search and the split of a
//! target into a one-step-ahead ARIMA component and a residual.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{OfterError, Result};
use crate::regress;
use crate::stats;

pub const R_MAX: usize = 2;
pub const DEFAULT_MAX_ORDER: usize = 3;
pub const DEFAULT_ACF_ALPHA: f64 = 0.001;

/// MacKinnon (1994/2010) response-surface coefficients for the constant-only
/// ADF regression with one series, as tabulated in statsmodels.
const TAU_MAX_C: f64 = 2.74;
const TAU_MIN_C: f64 = -18.83;
const TAU_STAR_C: f64 = -1.61;
const TAU_C_SMALLP: [f64; 3] = [2.1659, 1.4412, 0.038269];
const TAU_C_LARGEP: [f64; 4] = [1.7339, 0.93202, -0.12745, -0.010368];

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Approximate p-value of an ADF statistic (regression with intercept).
pub fn mackinnon_p(stat: f64) -> f64 {
    if stat > TAU_MAX_C {
        return 1.0;
    }
    if stat < TAU_MIN_C {
        return 0.0;
    }
    let coefs: &[f64] = if stat <= TAU_STAR_C {
        &TAU_C_SMALLP
    } else {
        &TAU_C_LARGEP
    };
    let poly = coefs.iter().rev().fold(0.0, |acc, c| acc * stat + c);
    std_normal().cdf(poly)
}

/// Schwert's rule `floor(12 (T/100)^(1/4))`.
pub fn schwert_lag(n: usize) -> usize {
    (12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    pub statistic: f64,
    pub p_value: f64,
    pub lags: usize,
    pub nobs: usize,
}

fn is_constant(y: &[f64]) -> bool {
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let scale = lo.abs().max(hi.abs());
    hi - lo <= 1e-12 * scale
}

/// Least squares returning coefficients, residual sum of squares and the
/// diagonal of `(X^T X)^{-1}`, or `None` if `X` is numerically rank deficient.
fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<(DVector<f64>, f64, DVector<f64>)> {
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
    let beta = r.solve_upper_triangular(&(qr.q().transpose() * y))?;
    let resid = y - x * &beta;
    let rinv = r.solve_upper_triangular(&DMatrix::identity(d, d))?;
    let diag = DVector::from_iterator(d, (0..d).map(|i| rinv.row(i).norm_squared()));
    Some((beta, resid.norm_squared(), diag))
}

/// Augmented Dickey-Fuller test with intercept.
///
/// `max_lag` defaults to Schwert's rule, capped at `T/2 - 2` so the
/// regression keeps degrees of freedom on short series. A regression that is
/// exactly collinear or fits perfectly (e.g. a linear ramp) is reported as
/// non-rejecting with statistic 0 and p-value 1.
pub fn adf_test(y: &[f64], max_lag: Option<usize>) -> Result<AdfResult> {
    let n = y.len();
    if n < 20 {
        return Err(OfterError::TooShort { needed: 20, got: n });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(OfterError::NonFinite("ADF input"));
    }
    if is_constant(y) {
        return Err(OfterError::degenerate("ADF on a constant series"));
    }
    let k = max_lag.unwrap_or_else(|| schwert_lag(n).min(n / 2 - 2));
    if k + 4 > n {
        return Err(OfterError::invalid(format!("ADF lag {k} too large for length {n}")));
    }
    let dy = difference(y);
    let nobs = dy.len() - k;
    let x = DMatrix::from_fn(nobs, k + 2, |i, j| {
        let t = i + k;
        match j {
            0 => y[t],
            1 => 1.0,
            l => dy[t + 1 - l],
        }
    });
    let target = DVector::from_iterator(nobs, dy[k..].iter().copied());
    let non_rejecting = AdfResult {
        statistic: 0.0,
        p_value: 1.0,
        lags: k,
        nobs,
    };
    let Some((beta, rss, diag)) = lstsq(&x, &target) else {
        return Ok(non_rejecting);
    };
    if rss <= 1e-24 * target.norm_squared() {
        return Ok(non_rejecting);
    }
    let sigma2 = rss / (nobs - (k + 2)) as f64;
    let statistic = beta[0] / (sigma2 * diag[0]).sqrt();
    Ok(AdfResult {
        statistic,
        p_value: mackinnon_p(statistic),
        lags: k,
        nobs,
    })
}

/// First differences.
pub fn difference(y: &[f64]) -> Vec<f64> {
    y.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Inverse of [`difference`] given the first value of the original series.
pub fn integrate(diffs: &[f64], initial: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(diffs.len() + 1);
    out.push(initial);
    let mut acc = initial;
    for d in diffs {
        acc += d;
        out.push(acc);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Differenced {
    pub series: Vec<f64>,
    pub r: usize,
    /// First value of each intermediate series, outermost first, for re-integration.
    pub initial: Vec<f64>,
    /// False if the unit-root null was still not rejected at `R_MAX`.
    pub stationary: bool,
}

impl Differenced {
    pub fn reintegrate(&self) -> Vec<f64> {
        self.initial
            .iter()
            .rev()
            .fold(self.series.clone(), |acc, &y0| integrate(&acc, y0))
    }
}

/// Difference until the ADF test rejects at `p_adf`, at most [`R_MAX`] times.
/// A (numerically) constant series counts as stationary.
pub fn difference_until_stationary(y: &[f64], p_adf: f64) -> Result<Differenced> {
    if !(p_adf > 0.0 && p_adf < 1.0) {
        return Err(OfterError::invalid(format!("p_adf must lie in (0, 1), got {p_adf}")));
    }
    let mut series = y.to_vec();
    let mut initial = Vec::new();
    for r in 0..=R_MAX {
        let stationary = is_constant(&series) || adf_test(&series, None)?.p_value < p_adf;
        if stationary || r == R_MAX {
            if !stationary {
                warn!("series still has a unit root after {R_MAX} differences");
            }
            return Ok(Differenced {
                series,
                r,
                initial,
                stationary,
            });
        }
        initial.push(series[0]);
        series = difference(&series);
    }
    unreachable!()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfPacf {
    /// Lags `0..=max_lag`.
    pub acf: Vec<f64>,
    /// Lags `0..=max_lag`; entry 0 is 1 by convention.
    pub pacf: Vec<f64>,
    /// Lags `1..=max_lag`: either ACF or PACF outside its band.
    pub significant: Vec<bool>,
    pub band: f64,
}

impl AcfPacf {
    pub fn any_significant(&self) -> bool {
        self.significant.iter().any(|&s| s)
    }
}

/// Sample autocorrelations with the usual `1/T` normalization.
pub fn acf(y: &[f64], max_lag: usize) -> Vec<f64> {
    let m = stats::mean(y);
    let c: Vec<f64> = y.iter().map(|v| v - m).collect();
    let c0: f64 = c.iter().map(|v| v * v).sum();
    let mut out = vec![0.0; max_lag + 1];
    out[0] = 1.0;
    if c0 == 0.0 {
        return out;
    }
    for (k, slot) in out.iter_mut().enumerate().skip(1) {
        *slot = c[k..].iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() / c0;
    }
    out
}

/// Partial autocorrelations from autocorrelations by Durbin-Levinson.
pub fn pacf_from_acf(r: &[f64]) -> Vec<f64> {
    let max_lag = r.len() - 1;
    let mut out = vec![0.0; max_lag + 1];
    out[0] = 1.0;
    let mut phi: Vec<f64> = Vec::new();
    for k in 1..=max_lag {
        let num = r[k] - (1..k).map(|j| phi[j - 1] * r[k - j]).sum::<f64>();
        let den = 1.0 - (1..k).map(|j| phi[j - 1] * r[j]).sum::<f64>();
        let pkk = if den.abs() > f64::EPSILON { num / den } else { 0.0 };
        let prev = phi.clone();
        for j in 1..k {
            phi[j - 1] = prev[j - 1] - pkk * prev[k - j - 1];
        }
        phi.push(pkk);
        out[k] = pkk;
    }
    out
}

pub fn acf_pacf(y: &[f64], max_lag: usize, significance: f64) -> Result<AcfPacf> {
    if y.len() <= 3 * max_lag {
        return Err(OfterError::TooShort {
            needed: 3 * max_lag + 1,
            got: y.len(),
        });
    }
    if !(significance > 0.0 && significance < 1.0) {
        return Err(OfterError::invalid("significance must lie in (0, 1)"));
    }
    let a = acf(y, max_lag);
    let p = pacf_from_acf(&a);
    let band = std_normal().inverse_cdf(1.0 - significance / 2.0) / (y.len() as f64).sqrt();
    let significant = (1..=max_lag)
        .map(|k| a[k].abs() > band || p[k].abs() > band)
        .collect();
    Ok(AcfPacf {
        acf: a,
        pacf: p,
        significant,
        band,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaSpec {
    pub p: usize,
    pub r: usize,
    pub q: usize,
    pub ar_coeffs: Vec<f64>,
    pub ma_coeffs: Vec<f64>,
    pub intercept: f64,
    /// AIC of the selected cell, if a grid search ran.
    pub aic: Option<f64>,
    /// Whether the differenced series passed the ADF test.
    pub stationary: bool,
}

impl ArimaSpec {
    pub fn is_null(&self) -> bool {
        self.p == 0 && self.r == 0 && self.q == 0
    }

    fn random_walk(r: usize, intercept: f64, stationary: bool) -> Self {
        ArimaSpec {
            p: 0,
            r,
            q: 0,
            ar_coeffs: vec![],
            ma_coeffs: vec![],
            intercept,
            aic: None,
            stationary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub y_ts: Vec<f64>,
    pub residual: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArimaOptions {
    pub p_adf: f64,
    pub max_p: usize,
    pub max_q: usize,
    pub acf_alpha: f64,
}

impl Default for ArimaOptions {
    fn default() -> Self {
        ArimaOptions {
            p_adf: 0.05,
            max_p: DEFAULT_MAX_ORDER,
            max_q: DEFAULT_MAX_ORDER,
            acf_alpha: DEFAULT_ACF_ALPHA,
        }
    }
}

/// Largest modulus of the roots of `z^n - c_1 z^{n-1} - ... - c_n`.
fn companion_radius(c: &[f64]) -> f64 {
    let n = c.len();
    if n == 0 {
        return 0.0;
    }
    let m = DMatrix::from_fn(n, n, |i, j| {
        if i == 0 {
            c[j]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

const ROOT_MARGIN: f64 = 1e-6;

/// AR polynomial roots lie outside the unit circle.
pub fn is_stationary(ar: &[f64]) -> bool {
    companion_radius(ar) < 1.0 - ROOT_MARGIN
}

/// MA polynomial `1 + theta_1 z + ...` has roots outside the unit circle.
pub fn is_invertible(ma: &[f64]) -> bool {
    let neg: Vec<f64> = ma.iter().map(|t| -t).collect();
    companion_radius(&neg) < 1.0 - ROOT_MARGIN
}

struct Cell {
    p: usize,
    q: usize,
    aic: f64,
    intercept: f64,
    ar: Vec<f64>,
    ma: Vec<f64>,
}

/// Hannan-Rissanen grid search over `(p, q)` by AIC on the stationary series `w`.
fn hannan_rissanen(w: &[f64], max_p: usize, max_q: usize) -> Result<Option<Cell>> {
    let n = w.len();
    let order = max_p.max(max_q);
    let m = if max_q > 0 {
        ((10.0 * (n as f64).log10()).floor() as usize)
            .max(max_p + max_q + 1)
            .min(n / 4)
    } else {
        0
    };
    let start = m + order;
    if n < start + 10 + max_p + max_q {
        return Err(OfterError::TooShort {
            needed: start + 10 + max_p + max_q,
            got: n,
        });
    }

    // Stage one: long autoregression residuals as innovation proxies.
    let mut innov = vec![0.0; n];
    if m > 0 {
        let rows = n - m;
        let x = DMatrix::from_fn(rows, m, |i, j| w[i + m - 1 - j]);
        let model = regress::ols_fit(&x, &w[m..])?;
        for i in 0..rows {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            innov[i + m] = w[i + m] - model.predict(&row)?;
        }
    }

    let rows = n - start;
    let target = &w[start..];
    let mut cells: Vec<(usize, usize)> = (0..=max_p)
        .flat_map(|p| (0..=max_q).map(move |q| (p, q)))
        .collect();
    cells.sort_by_key(|&(p, q)| (p + q, p));

    let mut best: Option<Cell> = None;
    for (p, q) in cells {
        let x = DMatrix::from_fn(rows, p + q, |i, j| {
            let t = i + start;
            if j < p {
                w[t - 1 - j]
            } else {
                innov[t - 1 - (j - p)]
            }
        });
        let model = regress::ols_fit(&x, target)?;
        let (ar, ma) = model.beta.split_at(p);
        if !is_stationary(ar) || !is_invertible(ma) {
            continue;
        }
        let mut rss = 0.0;
        for (i, y) in target.iter().enumerate() {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let e = y - model.predict(&row)?;
            rss += e * e;
        }
        let aic = rows as f64 * (rss / rows as f64).ln() + 2.0 * (p + q + 1) as f64;
        if best.as_ref().is_none_or(|b| aic < b.aic) {
            best = Some(Cell {
                p,
                q,
                aic,
                intercept: model.beta0,
                ar: ar.to_vec(),
                ma: ma.to_vec(),
            });
        }
    }
    Ok(best)
}

/// Select an ARIMA model on `y[..fit_len]` and decompose the whole of `y`
/// into causal one-step-ahead predictions and residuals.
pub fn fit_and_decompose(
    y: &[f64],
    fit_len: usize,
    opts: &ArimaOptions,
) -> Result<(ArimaSpec, Decomposition)> {
    if fit_len > y.len() {
        return Err(OfterError::invalid(format!(
            "fit window {fit_len} longer than series {}",
            y.len()
        )));
    }
    if fit_len < 50 {
        return Err(OfterError::TooShort {
            needed: 50,
            got: fit_len,
        });
    }
    let spec = select(&y[..fit_len], opts)?;
    let dec = decompose(&spec, y)?;
    Ok((spec, dec))
}

/// Select and decompose on the full series.
pub fn select_and_decompose(
    y: &[f64],
    p_adf: f64,
    max_p: usize,
    max_q: usize,
) -> Result<(ArimaSpec, Decomposition)> {
    let opts = ArimaOptions {
        p_adf,
        max_p,
        max_q,
        ..ArimaOptions::default()
    };
    fit_and_decompose(y, y.len(), &opts)
}

/// Order selection on a fitting window.
pub fn select(y: &[f64], opts: &ArimaOptions) -> Result<ArimaSpec> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(OfterError::NonFinite("ARIMA input"));
    }
    let diffed = difference_until_stationary(y, opts.p_adf)?;
    let w = &diffed.series;
    let r = diffed.r;
    let order = opts.max_p.max(opts.max_q);
    let walk = |stationary| ArimaSpec::random_walk(r, stats::mean(w), stationary);
    if order == 0 || is_constant(w) {
        return Ok(walk(diffed.stationary));
    }
    let corr = acf_pacf(w, order, opts.acf_alpha)?;
    if !corr.any_significant() {
        return Ok(walk(diffed.stationary));
    }
    match hannan_rissanen(w, opts.max_p, opts.max_q)? {
        Some(c) => Ok(ArimaSpec {
            p: c.p,
            r,
            q: c.q,
            ar_coeffs: c.ar,
            ma_coeffs: c.ma,
            intercept: c.intercept,
            aic: Some(c.aic),
            stationary: diffed.stationary,
        }),
        None => {
            warn!("no admissible ARMA cell; falling back to (0, {r}, 0)");
            Ok(walk(diffed.stationary))
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Causal one-step-ahead ARIMA predictions of `y` under `spec`.
///
/// The prediction at `t` uses only `y[..t]`. The first `r` points, which have
/// no differenced history, are predicted by the previous value (0 at `t = 0`).
pub fn decompose(spec: &ArimaSpec, y: &[f64]) -> Result<Decomposition> {
    let n = y.len();
    if spec.ar_coeffs.len() != spec.p || spec.ma_coeffs.len() != spec.q {
        return Err(OfterError::invalid("ARIMA coefficient lengths disagree with orders"));
    }
    let y_ts = if spec.is_null() {
        vec![0.0; n]
    } else {
        let r = spec.r;
        let mut w = y.to_vec();
        for _ in 0..r {
            w = difference(&w);
        }
        let phi_sum: f64 = spec.ar_coeffs.iter().sum();
        let mu = spec.intercept / (1.0 - phi_sum);
        let mut e = vec![0.0; w.len()];
        let mut out = vec![0.0; n];
        for (t, slot) in out.iter_mut().enumerate().take(r.min(n)) {
            *slot = if t == 0 { 0.0 } else { y[t - 1] };
        }
        // y_t - (Delta^r y)_t written in terms of y_{t-1}, ..., y_{t-r}.
        let carry: Vec<f64> = (1..=r)
            .map(|k| -binomial(r, k) * if k % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        for i in 0..w.len() {
            let lag_w = |j: usize| if i >= j { w[i - j] } else { mu };
            let lag_e = |j: usize| if i >= j { e[i - j] } else { 0.0 };
            let w_hat = spec.intercept
                + spec
                    .ar_coeffs
                    .iter()
                    .enumerate()
                    .map(|(j, a)| a * lag_w(j + 1))
                    .sum::<f64>()
                + spec
                    .ma_coeffs
                    .iter()
                    .enumerate()
                    .map(|(j, b)| b * lag_e(j + 1))
                    .sum::<f64>();
            e[i] = w[i] - w_hat;
            let t = i + r;
            out[t] = w_hat
                + carry
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * y[t - 1 - k])
                    .sum::<f64>();
        }
        out
    };
    let residual = y.iter().zip(&y_ts).map(|(a, b)| a - b).collect();
    Ok(Decomposition { y_ts, residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn differencing_examples() {
        assert_eq!(difference(&[1.0, 3.0, 6.0]), vec![2.0, 3.0]);
        assert_eq!(integrate(&[2.0, 3.0], 1.0), vec![1.0, 3.0, 6.0]);
    }

    #[test]
    fn acf_lag_zero_is_one() {
        let y: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64).collect();
        let a = acf_pacf(&y, 3, 0.001).unwrap();
        assert_eq!(a.acf[0], 1.0);
        assert_eq!(a.significant.len(), 3);
        assert!(acf_pacf(&y[..9], 3, 0.001).is_err());
    }

    #[test]
    fn pacf_of_ar1_acf() {
        let r: Vec<f64> = (0..5).map(|k| 0.6f64.powi(k)).collect();
        let p = pacf_from_acf(&r);
        assert!((p[1] - 0.6).abs() < 1e-15);
        for v in &p[2..] {
            assert!(v.abs() < 1e-14);
        }
    }

    #[test]
    fn mackinnon_boundaries() {
        assert_eq!(mackinnon_p(3.0), 1.0);
        assert_eq!(mackinnon_p(-20.0), 0.0);
        assert!(mackinnon_p(-2.86) > 0.04 && mackinnon_p(-2.86) < 0.06);
    }

    #[test]
    fn root_checks() {
        assert!(is_stationary(&[0.5, -0.3]));
        assert!(!is_stationary(&[1.0]));
        assert!(is_invertible(&[0.4]));
        assert!(!is_invertible(&[-1.5]));
    }

    #[test]
    fn null_spec_gives_zero_component() {
        let spec = ArimaSpec::random_walk(0, 3.0, true);
        let d = decompose(&spec, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(d.y_ts, vec![0.0; 3]);
        assert_eq!(d.residual, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn ramp_is_absorbed_by_one_difference() {
        let y: Vec<f64> = (0..200).map(|t| 5.0 + 0.25 * t as f64).collect();
        let (spec, dec) = select_and_decompose(&y, 0.05, 3, 3).unwrap();
        assert_eq!((spec.p, spec.r, spec.q), (0, 1, 0));
        for t in 1..y.len() {
            assert!(dec.residual[t].abs() < 1e-12);
        }
    }

    #[test]
    fn constant_series_is_null_model() {
        let y = vec![2.5; 100];
        let (spec, dec) = select_and_decompose(&y, 0.05, 3, 3).unwrap();
        assert!(spec.is_null());
        assert_eq!(dec.residual, y);
    }

    #[test]
    fn arma_prediction_is_causal() {
        let spec = ArimaSpec {
            p: 1,
            r: 1,
            q: 1,
            ar_coeffs: vec![0.4],
            ma_coeffs: vec![0.3],
            intercept: 0.1,
            aic: None,
            stationary: true,
        };
        let y: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin() * 3.0 + i as f64).collect();
        let base = decompose(&spec, &y).unwrap();
        let mut z = y.clone();
        z[20] += 10.0;
        let pert = decompose(&spec, &z).unwrap();
        assert_eq!(&base.y_ts[..21], &pert.y_ts[..21]);
        assert_ne!(base.y_ts[21], pert.y_ts[21]);
    }
}
