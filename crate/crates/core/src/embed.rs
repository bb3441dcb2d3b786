//! PCA embedding with streaming covariance updates.
//!
//! The covariance is population-normalized, `C_t = (1/t) sum (x_i - mu_t)(x_i - mu_t)^T`,
//! so a new observation maps to
//!
//! ```text
//! C_t = (t-1)/t C_{t-1} + (1/t) xbar xbar^T + (1/t)(rho1 b1 b1^T + rho2 b2 b2^T)
//! ```
//!
//! where `xbar = x_t - mu_{t-1}` and the last two terms re-center the
//! accumulated scatter from `mu_{t-1}` to `mu_t`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{OfterError, Result};
use crate::frame::TimePanel;
use crate::spectra::{self, EigenSystem, RankOneUpdate};
use crate::stats;

pub const SNAPSHOT_VERSION: u32 = 1;

/// How the eigensystem is carried between observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateMode {
    /// Carry all `d` eigenpairs; every rank-one update is exact.
    #[default]
    Exact,
    /// Carry the leading `p` eigenpairs plus one scalar for the rest.
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingState {
    schema_version: u32,
    spectrum: EigenSystem,
    mean: Vec<f64>,
    scale: Vec<f64>,
    p: usize,
    t: usize,
    delta: f64,
    mode: UpdateMode,
    /// Total variance (trace of the covariance).
    trace: f64,
    /// Level assigned to the discarded eigenvalues in truncated mode.
    tail_level: f64,
}

/// Smallest `p` whose leading eigenvalues carry at least `delta` of the total.
pub fn retained_dimension(eigenvalues: &[f64], delta: f64) -> usize {
    let clipped: Vec<f64> = eigenvalues.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total <= 0.0 {
        return eigenvalues.len();
    }
    let mut cum = 0.0;
    for (i, v) in clipped.iter().enumerate() {
        cum += v;
        if cum / total >= delta - 4.0 * f64::EPSILON {
            return i + 1;
        }
    }
    eigenvalues.len()
}

/// Population covariance and mean of the rows of `values` after dividing by `scale`.
pub fn covariance(values: &DMatrix<f64>, scale: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
    let n = values.nrows();
    let d = values.ncols();
    let scaled = DMatrix::from_fn(n, d, |i, j| values[(i, j)] / scale[j]);
    let mean: Vec<f64> = (0..d).map(|j| scaled.column(j).mean()).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| scaled[(i, j)] - mean[j]);
    let mut cov = centered.transpose() * &centered / n as f64;
    // Enforce exact symmetry.
    cov = (&cov + cov.transpose()) * 0.5;
    let raw_mean = mean.iter().zip(scale).map(|(m, s)| m * s).collect();
    (cov, raw_mean)
}

/// Fit a PCA embedding on an already standardized panel.
pub fn fit_pca(panel: &TimePanel, delta: f64) -> Result<EmbeddingState> {
    EmbeddingState::fit(
        panel.values(),
        vec![1.0; panel.ncols()],
        delta,
        UpdateMode::default(),
    )
}

impl EmbeddingState {
    /// Fit on the rows of `values`; `scale` divides each column first and is
    /// frozen for the lifetime of the state.
    pub fn fit(
        values: &DMatrix<f64>,
        scale: Vec<f64>,
        delta: f64,
        mode: UpdateMode,
    ) -> Result<Self> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(OfterError::invalid(format!(
                "variance fraction {delta} outside (0, 1]"
            )));
        }
        let (n, d) = values.shape();
        if scale.len() != d {
            return Err(OfterError::DimensionMismatch {
                expected: d,
                found: scale.len(),
            });
        }
        if n < d || n < 2 {
            return Err(OfterError::TooShort {
                needed: d.max(2),
                got: n,
            });
        }
        if scale.iter().any(|s| !(*s > 0.0)) {
            return Err(OfterError::invalid("scale entries must be positive"));
        }
        let (cov, mean) = covariance(values, &scale);
        let mut spectrum = spectra::full_eig(&cov)?;
        let smallest = spectrum.values().last().copied().unwrap_or(0.0);
        let largest = spectrum.values().first().copied().unwrap_or(0.0);
        if !(largest > 0.0) || smallest <= 1e-12 * largest {
            return Err(OfterError::degenerate(
                "covariance is rank deficient; prune collinear columns first",
            ));
        }
        spectrum.canonicalize_signs();
        let p = retained_dimension(spectrum.values(), delta);
        let trace = spectrum.values().iter().sum();
        let tail_level = if p < d {
            stats::median(&spectrum.values()[p..])
        } else {
            0.0
        };
        let spectrum = match mode {
            UpdateMode::Exact => spectrum,
            UpdateMode::Truncated => spectrum.leading(p),
        };
        Ok(EmbeddingState {
            schema_version: SNAPSHOT_VERSION,
            spectrum,
            mean,
            scale,
            p,
            t: n,
            delta,
            mode,
            trace,
            tail_level,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn mode(&self) -> UpdateMode {
        self.mode
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    /// Leading `p` eigenvalues.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.spectrum.values()[..self.p]
    }

    /// The `d x p` projection matrix `U_p`.
    pub fn projection(&self) -> DMatrix<f64> {
        self.spectrum.vectors().columns(0, self.p).into_owned()
    }

    /// The carried eigensystem (all `d` pairs in exact mode, `p` in truncated mode).
    pub fn spectrum(&self) -> &EigenSystem {
        &self.spectrum
    }

    /// Override the retained dimension, e.g. to keep a refit comparable with
    /// an earlier state.
    pub fn with_retained(mut self, p: usize) -> Result<Self> {
        if p == 0 || p > self.spectrum.rank() {
            return Err(OfterError::invalid(format!(
                "retained dimension {p} outside 1..={}",
                self.spectrum.rank()
            )));
        }
        self.p = p;
        Ok(self)
    }

    /// Flip eigenvector signs to agree with `reference`.
    pub fn align_with(&mut self, reference: &EmbeddingState) {
        self.spectrum.align_signs(reference.spectrum.vectors());
    }

    fn centered(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter()
                .zip(self.mean.iter().zip(&self.scale))
                .map(|(v, (m, s))| (v - m) / s),
        )
    }

    /// `U_p^T ((x - mu_t) / scale)`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(OfterError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(OfterError::NonFinite("projected observation"));
        }
        let c = self.centered(x);
        let u = self.spectrum.vectors();
        Ok((0..self.p).map(|k| u.column(k).dot(&c)).collect())
    }

    /// Fold one observation into the covariance, mean and eigensystem.
    pub fn online_update(&self, x_new: &[f64]) -> Result<EmbeddingState> {
        if x_new.len() != self.dim() {
            return Err(OfterError::DimensionMismatch {
                expected: self.dim(),
                found: x_new.len(),
            });
        }
        if x_new.iter().any(|v| !v.is_finite()) {
            return Err(OfterError::NonFinite("embedding update"));
        }
        let t = (self.t + 1) as f64;
        let xbar = self.centered(x_new);
        let norm2 = xbar.norm_squared();

        let mut next = self.clone();
        next.t = self.t + 1;
        // Streaming mean, in raw units.
        for (j, m) in next.mean.iter_mut().enumerate() {
            *m += xbar[j] * self.scale[j] / t;
        }
        next.trace = self.trace * (t - 1.0) / t + norm2 / t - norm2 / (t * t);

        let mut spectrum = self.spectrum.scaled((t - 1.0) / t);
        let tail = self.tail_level * (t - 1.0) / t;
        if norm2 > 0.0 {
            let sqrt_disc = (t * t + 4.0).sqrt();
            let rho1 = (t - sqrt_disc) / 2.0;
            let rho2 = (t + sqrt_disc) / 2.0;
            // a = mu_{t-1} - mu_t, s = column sums of the data centered at mu_{t-1}.
            let a = &xbar * (-1.0 / t);
            let s = &xbar;
            let b1 = (&a * rho1 + s) / (1.0 + rho1 * rho1).sqrt();
            let b2 = (&a * rho2 + s) / (1.0 + rho2 * rho2).sqrt();
            let updates = [
                RankOneUpdate::new(norm2 / t, &xbar / norm2.sqrt())?,
                RankOneUpdate::new(rho1 / t, b1)?,
                RankOneUpdate::new(rho2 / t, b2)?,
            ];
            for u in &updates {
                spectrum = match self.mode {
                    UpdateMode::Exact => spectra::rank_one_update(&spectrum, u)?,
                    UpdateMode::Truncated => spectra::truncated_rank_one_update(&spectrum, u, tail)?,
                };
            }
            spectrum.align_signs(self.spectrum.vectors());
        }
        next.spectrum = spectrum;
        next.tail_level = match self.mode {
            UpdateMode::Exact => tail,
            UpdateMode::Truncated => {
                let d = self.dim();
                if d > self.p {
                    let kept: f64 = next.spectrum.values().iter().sum();
                    ((next.trace - kept) / (d - self.p) as f64).max(0.0)
                } else {
                    0.0
                }
            }
        };
        Ok(next)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let state: EmbeddingState = serde_json::from_str(s)?;
        if state.schema_version != SNAPSHOT_VERSION {
            return Err(OfterError::invalid(format!(
                "unsupported embedding snapshot version {}",
                state.schema_version
            )));
        }
        Ok(state)
    }
}
