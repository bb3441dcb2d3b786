//! One-sided maximal correlation (OSMC) over a Bernstein polynomial basis.
//!
//! For a feature `v1` and target `v2`, OSMC is the largest Pearson
//! correlation between `v2` and any polynomial transform `phi(v1)` of
//! degree `K - 1`. With the centered design `Phi` (columns are the
//! Bernstein basis evaluated on `v1`), `z = Phi^T v2` and
//! `A = Phi^T Phi / (N - 1)`, the maximizer is `c = A^{-1} z / sqrt(z^T A^{-1} z)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diagnostics;
use crate::error::{OfterError, Result};
use crate::stats;

/// Number of basis functions used when none is configured (cubic basis).
pub const DEFAULT_K: usize = 4;

/// Fractional padding applied on each side of the observed feature range.
const DOMAIN_PAD: f64 = 0.01;

/// Bernstein basis of degree `n` on an affine window mapped onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernsteinBasis {
    degree: usize,
    lo: f64,
    hi: f64,
    binom: Vec<f64>,
}

impl BernsteinBasis {
    /// Fit the domain map to the range of `x` (with 1% padding either side).
    pub fn fit(x: &[f64], degree: usize) -> Result<Self> {
        let (min, max) = x
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        if !(max > min) || !min.is_finite() || !max.is_finite() {
            return Err(OfterError::degenerate("feature is constant"));
        }
        let pad = DOMAIN_PAD * (max - min);
        Ok(Self::with_domain(degree, min - pad, max + pad))
    }

    pub fn with_domain(degree: usize, lo: f64, hi: f64) -> Self {
        let mut binom = Vec::with_capacity(degree + 1);
        let mut c = 1.0f64;
        for k in 0..=degree {
            binom.push(c);
            c = c * (degree - k) as f64 / (k + 1) as f64;
        }
        BernsteinBasis {
            degree,
            lo,
            hi,
            binom,
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of basis functions, `degree + 1`.
    pub fn len(&self) -> usize {
        self.degree + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Affine map to `[0, 1]`, clamping values outside the fitted window.
    pub fn map(&self, x: f64) -> f64 {
        ((x - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }

    /// `b_{nu,n}(u) = C(n, nu) u^nu (1-u)^(n-nu)` at an already mapped `u`.
    pub fn eval_unit(&self, nu: usize, u: f64) -> f64 {
        let n = self.degree;
        self.binom[nu] * u.powi(nu as i32) * (1.0 - u).powi((n - nu) as i32)
    }

    /// Uncentered design row for a raw feature value.
    pub fn row(&self, x: f64) -> Vec<f64> {
        let u = self.map(x);
        (0..=self.degree).map(|nu| self.eval_unit(nu, u)).collect()
    }
}

/// Uncentered `N x K` Bernstein design.
pub fn bernstein_raw(basis: &BernsteinBasis, v1: &[f64]) -> DMatrix<f64> {
    let k = basis.len();
    let mut m = DMatrix::<f64>::zeros(v1.len(), k);
    for (i, &x) in v1.iter().enumerate() {
        for (j, b) in basis.row(x).into_iter().enumerate() {
            m[(i, j)] = b;
        }
    }
    m
}

/// Column-centered Bernstein design matrix `Phi` for `v1` with `degree + 1` columns.
pub fn bernstein_design(v1: &[f64], degree: usize) -> Result<(DMatrix<f64>, BernsteinBasis)> {
    let k = degree + 1;
    if v1.len() <= k {
        return Err(OfterError::TooShort {
            needed: k + 1,
            got: v1.len(),
        });
    }
    let basis = BernsteinBasis::fit(v1, degree)?;
    let mut phi = bernstein_raw(&basis, v1);
    for mut col in phi.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    Ok((phi, basis))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OsmcResult {
    /// Coefficients on the centered basis, scaled so `Phi c` has unit sample variance.
    pub c: Vec<f64>,
    /// Correlation between `Phi c` and the target, in `[0, 1]`.
    pub value: f64,
    pub basis: BernsteinBasis,
    /// Column means of the uncentered design on the fitting window.
    pub center: Vec<f64>,
}

impl OsmcResult {
    /// Apply the fitted transform to a new feature value.
    pub fn transform(&self, x: f64) -> f64 {
        self.basis
            .row(x)
            .iter()
            .zip(&self.center)
            .zip(&self.c)
            .map(|((b, m), c)| (b - m) * c)
            .sum()
    }
}

/// Fit the OSMC transform of `v1` against `v2` with `k` basis functions.
pub fn osmc_fit(v1: &[f64], v2: &[f64], k: usize) -> Result<OsmcResult> {
    if v1.len() != v2.len() {
        return Err(OfterError::DimensionMismatch {
            expected: v1.len(),
            found: v2.len(),
        });
    }
    if k < 2 {
        return Err(OfterError::invalid("OSMC needs at least two basis functions"));
    }
    let n = v1.len();
    diagnostics::record_osmc();
    let (phi, basis) = bernstein_design(v1, k - 1)?;
    let sd2 = stats::sample_sd(v2);
    if !(sd2 > 0.0) {
        return Err(OfterError::degenerate("target is constant"));
    }

    let v2bar = stats::mean(v2);
    let centered_target = DVector::from_iterator(n, v2.iter().map(|v| v - v2bar));
    // Phi is centered, so z and z-bar coincide; use the centered target for both.
    let z = phi.transpose() * &centered_target;
    let a = phi.transpose() * &phi / (n - 1) as f64;

    let ridge = 1e-8 * a.trace() / k as f64;
    let mut reg = a.clone();
    for i in 0..k {
        reg[(i, i)] += ridge;
    }
    let chol = reg
        .cholesky()
        .ok_or_else(|| OfterError::degenerate("Bernstein Gram matrix is not positive definite"))?;
    let mut c = chol.solve(&z);
    // Iterative refinement removes the ridge bias on the range of A.
    for _ in 0..3 {
        let r = &z - &a * &c;
        c += chol.solve(&r);
    }

    let fitted = &phi * &c;
    let var = fitted.norm_squared() / (n - 1) as f64;
    if !(var > 0.0) || !var.is_finite() {
        return Err(OfterError::degenerate("regularized OSMC solution is zero"));
    }
    c /= var.sqrt();
    let fitted_vec: Vec<f64> = (&phi * &c).iter().copied().collect();
    let mut value = stats::pearson(&fitted_vec, v2).unwrap_or(0.0);
    if value < 0.0 {
        c.neg_mut();
        value = -value;
    }

    let raw = bernstein_raw(&basis, v1);
    let center = (0..k).map(|j| raw.column(j).mean()).collect();
    Ok(OsmcResult {
        c: c.iter().copied().collect(),
        value,
        basis,
        center,
    })
}

/// OSMC correlation value of `v1` against `v2`.
pub fn osmc(v1: &[f64], v2: &[f64], k: usize) -> Result<f64> {
    osmc_fit(v1, v2, k).map(|r| r.value)
}
