//! Feature importance through the embedding and distance-based outlier flags.

use std::collections::VecDeque;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingState;
use crate::error::{OfterError, Result};
use crate::pipeline::PipelineState;
use crate::regress::{self, FeatureWeights};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    /// One non-negative score per original (pruned) feature.
    pub importance: Vec<f64>,
    pub labels: Vec<String>,
}

impl ImportanceReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["feature", "importance"])?;
        for (l, v) in self.labels.iter().zip(&self.importance) {
            w.write_record([l.as_str(), &v.to_string()])?;
        }
        w.flush().map_err(|e| OfterError::io(path, e))
    }
}

/// `2 |U [(U^T 1) * v_embed] + v_2|`: gradient of the squared weighted distance
/// at the all-ones displacement, taken with respect to the original features.
///
/// `weights` covers the `p` embedded columns followed by the augmented ones;
/// `augmented[i]` is the original index of augmented column `i`.
pub fn importance_from_projection(
    u: &DMatrix<f64>,
    weights: &FeatureWeights,
    augmented: &[usize],
    labels: Vec<String>,
) -> Result<ImportanceReport> {
    let (d, p) = u.shape();
    if weights.len() != p + augmented.len() {
        return Err(OfterError::DimensionMismatch {
            expected: p + augmented.len(),
            found: weights.len(),
        });
    }
    if labels.len() != d {
        return Err(OfterError::DimensionMismatch {
            expected: d,
            found: labels.len(),
        });
    }
    if let Some(&j) = augmented.iter().find(|&&j| j >= d) {
        return Err(OfterError::invalid(format!(
            "augmented column {j} is outside the {d} original features"
        )));
    }
    let v = weights.as_slice();
    let loadings = u.transpose() * DVector::from_element(d, 1.0);
    let scaled = DVector::from_iterator(p, (0..p).map(|k| loadings[k] * v[k]));
    let mut g = u * scaled;
    for (i, &j) in augmented.iter().enumerate() {
        g[j] += v[p + i];
    }
    Ok(ImportanceReport {
        importance: g.iter().map(|x| 2.0 * x.abs()).collect(),
        labels,
    })
}

pub fn feature_importance(
    embedding: &EmbeddingState,
    weights: &FeatureWeights,
    augmented: &[usize],
    labels: Vec<String>,
) -> Result<ImportanceReport> {
    importance_from_projection(&embedding.projection(), weights, augmented, labels)
}

/// Importance for a fitted pipeline. Without an embedding the projection is the
/// identity and the score reduces to `2 v`.
pub fn state_importance(state: &PipelineState) -> Result<ImportanceReport> {
    let labels = state.kept_columns();
    let weights = state.effective_weights();
    match &state.embedding {
        Some(e) => feature_importance(e, &weights, &state.augmented_columns, labels),
        None => importance_from_projection(
            &DMatrix::identity(labels.len(), labels.len()),
            &weights,
            &[],
            labels,
        ),
    }
}

/// Distance summary compared against the trailing quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceStatistic {
    /// Distance to the nearest of the trailing rows.
    #[default]
    Min,
    /// Mean distance to the trailing rows.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    /// Distance statistic per row; NaN for the first row, which has no past.
    pub d_min: Vec<f64>,
    /// `q3 + kappa (q3 - q1)` over the previous `lookback` statistics; NaN
    /// until that many are available.
    pub threshold: Vec<f64>,
    pub flags: Vec<bool>,
    pub kappa: f64,
    pub lookback: usize,
    pub statistic: DistanceStatistic,
}

impl OutlierReport {
    pub fn flagged(&self) -> Vec<usize> {
        (0..self.flags.len()).filter(|&t| self.flags[t]).collect()
    }

    /// Rows for which a decision was made.
    pub fn evaluated(&self) -> usize {
        self.threshold.iter().filter(|v| v.is_finite()).count()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| OfterError::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let io = |e| OfterError::io(path, e);
        writeln!(out, "t,d_min,threshold,flag").map_err(io)?;
        for t in 0..self.flags.len() {
            writeln!(
                out,
                "{t},{},{},{}",
                self.d_min[t], self.threshold[t], self.flags[t] as u8
            )
            .map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Outcome of one online step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierStep {
    pub d_min: Option<f64>,
    pub threshold: Option<f64>,
    pub flag: bool,
}

/// Streaming form of the outlier rule.
#[derive(Debug, Clone)]
pub struct OutlierDetector {
    weights: FeatureWeights,
    lookback: usize,
    kappa: f64,
    statistic: DistanceStatistic,
    rows: VecDeque<Vec<f64>>,
    recent: VecDeque<f64>,
}

impl OutlierDetector {
    pub fn new(weights: FeatureWeights, lookback: usize, kappa: f64) -> Result<Self> {
        if lookback < 2 {
            return Err(OfterError::invalid("outlier lookback must be at least 2"));
        }
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(OfterError::invalid(format!("kappa must be non-negative, got {kappa}")));
        }
        Ok(OutlierDetector {
            weights,
            lookback,
            kappa,
            statistic: DistanceStatistic::Min,
            rows: VecDeque::with_capacity(lookback + 1),
            recent: VecDeque::with_capacity(lookback + 1),
        })
    }

    pub fn with_statistic(mut self, statistic: DistanceStatistic) -> Self {
        self.statistic = statistic;
        self
    }

    /// Score `row` against the trailing rows, then add it to the history.
    pub fn push(&mut self, row: &[f64]) -> Result<OutlierStep> {
        if row.len() != self.weights.len() {
            return Err(OfterError::DimensionMismatch {
                expected: self.weights.len(),
                found: row.len(),
            });
        }
        let mut step = OutlierStep {
            d_min: None,
            threshold: None,
            flag: false,
        };
        if !self.rows.is_empty() {
            let v = self.weights.as_slice();
            let ds = self.rows.iter().map(|r| {
                r.iter()
                    .zip(row)
                    .zip(v)
                    .map(|((a, b), w)| w * (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            });
            let d = match self.statistic {
                DistanceStatistic::Min => ds.fold(f64::INFINITY, f64::min),
                DistanceStatistic::Mean => ds.sum::<f64>() / self.rows.len() as f64,
            };
            if self.recent.len() == self.lookback {
                let past: Vec<f64> = self.recent.iter().copied().collect();
                let (q1, q3) = (stats::quantile(&past, 0.25), stats::quantile(&past, 0.75));
                let threshold = q3 + self.kappa * (q3 - q1);
                step.threshold = Some(threshold);
                step.flag = d > threshold;
                self.recent.pop_front();
            }
            self.recent.push_back(d);
            step.d_min = Some(d);
        }
        if self.rows.len() == self.lookback {
            self.rows.pop_front();
        }
        self.rows.push_back(row.to_vec());
        Ok(step)
    }
}

/// Offline scan of a completed history (rows are time points).
///
/// Row `t` is compared with rows `max(0, t - L)..t`; it is flagged when its
/// statistic exceeds `q3 + kappa (q3 - q1)` of the previous `L` statistics, so
/// decisions start at `t = L + 1`.
pub fn detect_outliers(
    history: &DMatrix<f64>,
    weights: &FeatureWeights,
    lookback: usize,
    kappa: f64,
) -> Result<OutlierReport> {
    detect_outliers_with(history, weights, lookback, kappa, DistanceStatistic::Min)
}

pub fn detect_outliers_with(
    history: &DMatrix<f64>,
    weights: &FeatureWeights,
    lookback: usize,
    kappa: f64,
    statistic: DistanceStatistic,
) -> Result<OutlierReport> {
    let n = history.nrows();
    if n <= lookback + 1 {
        return Err(OfterError::TooShort {
            needed: lookback + 2,
            got: n,
        });
    }
    if history.ncols() != weights.len() {
        return Err(OfterError::DimensionMismatch {
            expected: history.ncols(),
            found: weights.len(),
        });
    }
    let mut det = OutlierDetector::new(weights.clone(), lookback, kappa)?.with_statistic(statistic);
    let mut report = OutlierReport {
        d_min: Vec::with_capacity(n),
        threshold: Vec::with_capacity(n),
        flags: Vec::with_capacity(n),
        kappa,
        lookback,
        statistic,
    };
    for t in 0..n {
        let row: Vec<f64> = history.row(t).iter().copied().collect();
        let s = det.push(&row)?;
        report.d_min.push(s.d_min.unwrap_or(f64::NAN));
        report.threshold.push(s.threshold.unwrap_or(f64::NAN));
        report.flags.push(s.flag);
    }
    Ok(report)
}

/// Outlier scan over the embedded rows of a fitted pipeline.
pub fn state_outliers(state: &PipelineState, lookback: usize, kappa: f64) -> Result<OutlierReport> {
    let history = state.history_matrix()?;
    detect_outliers(&history, &state.effective_weights(), lookback, kappa)
}

/// Brute-force `d_min` used by the tests.
#[doc(hidden)]
pub fn d_min_direct(history: &DMatrix<f64>, weights: &FeatureWeights, t: usize, lookback: usize) -> Result<f64> {
    let rows = t.saturating_sub(lookback)..t;
    let window = history.rows(rows.start, rows.len()).into_owned();
    let query: Vec<f64> = history.row(t).iter().copied().collect();
    let d = regress::distances(&window, &query, weights)?;
    Ok(d.into_iter().fold(f64::INFINITY, f64::min))
}
