//! Time-indexed observation panels: CSV ingestion, lagged features,
//! standardization and rank-deficiency pruning.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{OfterError, Result};

/// Default tolerance for dropping rank-deficient columns of standardized data.
pub const DEFAULT_PRUNE_EPS: f64 = 1e-8;

/// Header names that mark a leading column as the time index.
const INDEX_HEADERS: &[&str] = &[
    "", "t", "time", "date", "datetime", "timestamp", "index", "idx",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TimeIndex {
    Ticks(Vec<i64>),
    Dates(Vec<NaiveDate>),
}

impl TimeIndex {
    pub fn range(n: usize) -> Self {
        TimeIndex::Ticks((0..n as i64).collect())
    }

    pub fn len(&self) -> usize {
        match self {
            TimeIndex::Ticks(v) => v.len(),
            TimeIndex::Dates(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self, i: usize) -> String {
        match self {
            TimeIndex::Ticks(v) => v[i].to_string(),
            TimeIndex::Dates(v) => v[i].format("%Y-%m-%d").to_string(),
        }
    }

    fn slice(&self, rows: Range<usize>) -> Self {
        match self {
            TimeIndex::Ticks(v) => TimeIndex::Ticks(v[rows].to_vec()),
            TimeIndex::Dates(v) => TimeIndex::Dates(v[rows].to_vec()),
        }
    }

    /// Index of the first row that breaks strict monotonicity, if any.
    fn first_violation(&self) -> Option<usize> {
        fn scan<T: PartialOrd>(v: &[T]) -> Option<usize> {
            v.windows(2).position(|w| w[1] <= w[0]).map(|i| i + 1)
        }
        match self {
            TimeIndex::Ticks(v) => scan(v),
            TimeIndex::Dates(v) => scan(v),
        }
    }
}

/// A T x d observation matrix with column labels and a strictly increasing time index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimePanel {
    values: DMatrix<f64>,
    columns: Vec<String>,
    index: TimeIndex,
}

impl TimePanel {
    pub fn new(values: DMatrix<f64>, columns: Vec<String>, index: TimeIndex) -> Result<Self> {
        if columns.len() != values.ncols() {
            return Err(OfterError::DimensionMismatch {
                expected: values.ncols(),
                found: columns.len(),
            });
        }
        if index.len() != values.nrows() {
            return Err(OfterError::DimensionMismatch {
                expected: values.nrows(),
                found: index.len(),
            });
        }
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.as_str()) {
                return Err(OfterError::invalid(format!("duplicate column name {c:?}")));
            }
        }
        if let Some(row) = index.first_violation() {
            return Err(OfterError::NonMonotoneIndex { row });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(OfterError::NonFinite("panel values"));
        }
        Ok(TimePanel {
            values,
            columns,
            index,
        })
    }

    /// Panel with integer ticks 0..T and generated column names.
    pub fn from_matrix(values: DMatrix<f64>, columns: Vec<String>) -> Result<Self> {
        let n = values.nrows();
        Self::new(values, columns, TimeIndex::range(n))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn index(&self) -> &TimeIndex {
        &self.index
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| OfterError::UnknownColumn(name.to_string()))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }

    pub fn column_by_name(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.column(self.column_index(name)?))
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }

    pub fn slice_rows(&self, rows: Range<usize>) -> TimePanel {
        let values = self.values.rows(rows.start, rows.len()).into_owned();
        TimePanel {
            values,
            columns: self.columns.clone(),
            index: self.index.slice(rows),
        }
    }

    pub fn select_columns(&self, keep: &[usize]) -> TimePanel {
        let values = self.values.select_columns(keep.iter());
        let columns = keep.iter().map(|&j| self.columns[j].clone()).collect();
        TimePanel {
            values,
            columns,
            index: self.index.clone(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| OfterError::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| OfterError::io(path, e);
        write!(out, "t").map_err(io)?;
        for c in &self.columns {
            write!(out, ",{c}").map_err(io)?;
        }
        writeln!(out).map_err(io)?;
        for i in 0..self.nrows() {
            write!(out, "{}", self.index.label(i)).map_err(io)?;
            for j in 0..self.ncols() {
                write!(out, ",{}", self.values[(i, j)]).map_err(io)?;
            }
            writeln!(out).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Load a comma-separated numeric panel.
///
/// The first column is consumed as the time index when its header is one of
/// `t`, `time`, `date`, `datetime`, `timestamp`, `index`, `idx` (or empty), or
/// when its first cell is not numeric. Index cells are integer ticks or ISO
/// `YYYY-MM-DD` dates. Without an index column rows are numbered from 0.
pub fn load_csv(path: &Path, has_header: bool) -> Result<TimePanel> {
    let file = File::open(path).map_err(|e| OfterError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        records.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
    }
    parse_records(records, has_header)
}

fn parse_records(mut records: Vec<Vec<String>>, has_header: bool) -> Result<TimePanel> {
    let header = if has_header {
        if records.is_empty() {
            return Err(OfterError::degenerate("empty csv file"));
        }
        Some(records.remove(0))
    } else {
        None
    };
    let first = records
        .first()
        .ok_or_else(|| OfterError::degenerate("csv file has no data rows"))?;
    let width = header.as_ref().map_or(first.len(), Vec::len);

    let has_index = match &header {
        Some(h) => {
            INDEX_HEADERS.contains(&h[0].to_ascii_lowercase().as_str())
                || first[0].parse::<f64>().is_err()
        }
        None => first[0].parse::<f64>().is_err(),
    };
    let offset = usize::from(has_index);
    if width <= offset {
        return Err(OfterError::degenerate("csv file has no data columns"));
    }
    let columns: Vec<String> = match &header {
        Some(h) => h[offset..].to_vec(),
        None => (0..width - offset).map(|j| format!("x{j}")).collect(),
    };
    // Rows are reported 1-based as they appear in the file.
    let row_base = if has_header { 2 } else { 1 };

    let n = records.len();
    let d = columns.len();
    let mut values = DMatrix::<f64>::zeros(n, d);
    let mut ticks = Vec::new();
    let mut dates = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let row = i + row_base;
        if rec.len() != width {
            return Err(OfterError::RaggedRow {
                row,
                expected: width,
                found: rec.len(),
            });
        }
        if has_index {
            let cell = &rec[0];
            if let Ok(t) = cell.parse::<i64>() {
                ticks.push(t);
            } else if let Ok(date) = NaiveDate::parse_from_str(cell, "%Y-%m-%d") {
                dates.push(date);
            } else {
                return Err(OfterError::NonNumeric {
                    row,
                    column: "index".into(),
                    cell: cell.clone(),
                });
            }
        }
        for j in 0..d {
            let cell = &rec[j + offset];
            if cell.is_empty() {
                return Err(OfterError::MissingValue {
                    row,
                    column: columns[j].clone(),
                });
            }
            let v: f64 = cell.parse().map_err(|_| OfterError::NonNumeric {
                row,
                column: columns[j].clone(),
                cell: cell.clone(),
            })?;
            if !v.is_finite() {
                return Err(OfterError::NonNumeric {
                    row,
                    column: columns[j].clone(),
                    cell: cell.clone(),
                });
            }
            values[(i, j)] = v;
        }
    }

    let index = if !has_index {
        TimeIndex::range(n)
    } else if dates.is_empty() {
        TimeIndex::Ticks(ticks)
    } else if ticks.is_empty() {
        TimeIndex::Dates(dates)
    } else {
        return Err(OfterError::invalid("index column mixes integers and dates"));
    };
    if let Some(r) = index.first_violation() {
        return Err(OfterError::NonMonotoneIndex { row: r + row_base });
    }
    TimePanel::new(values, columns, index)
}

/// Stack lagged copies of every column: block `k` holds the input shifted by
/// `k` rows, columns named `<col>.lag<k>`. The first `max_lag` rows are dropped.
pub fn build_lagged_features(panel: &TimePanel, max_lag: usize) -> Result<TimePanel> {
    let t = panel.nrows();
    if max_lag >= t {
        return Err(OfterError::invalid(format!(
            "max_lag {max_lag} must be smaller than the series length {t}"
        )));
    }
    if max_lag == 0 {
        return Ok(panel.clone());
    }
    let d = panel.ncols();
    let rows = t - max_lag;
    let src = panel.values();
    let values = DMatrix::from_fn(rows, d * (max_lag + 1), |i, c| {
        let (k, j) = (c / d, c % d);
        src[(i + max_lag - k, j)]
    });
    let columns = (0..=max_lag)
        .flat_map(|k| panel.columns().iter().map(move |c| format!("{c}.lag{k}")))
        .collect();
    TimePanel::new(values, columns, panel.index().slice(max_lag..t))
}

/// Aligns a panel for one-step-ahead forecasting: row `i` of the returned
/// feature panel holds lags `0..=max_lag` observed at time `i + max_lag`, and
/// `targets[i]` is the named column at time `i + max_lag + 1`.
pub fn forecasting_pairs(
    panel: &TimePanel,
    target: &str,
    max_lag: usize,
) -> Result<(TimePanel, Vec<f64>)> {
    let j = panel.column_index(target)?;
    if panel.nrows() < max_lag + 2 {
        return Err(OfterError::TooShort {
            needed: max_lag + 2,
            got: panel.nrows(),
        });
    }
    let lagged = build_lagged_features(panel, max_lag)?;
    let n = lagged.nrows() - 1;
    let features = lagged.slice_rows(0..n);
    let y = (0..n).map(|i| panel.values()[(i + max_lag + 1, j)]).collect();
    Ok((features, y))
}

/// Column mask from a left-to-right orthogonal-triangular scan of the
/// column-centered matrix: column `j` is dropped when its diagonal `|R_jj|`
/// against the already-kept columns falls below `eps`.
pub fn rank_mask(values: &DMatrix<f64>, eps: f64) -> Vec<bool> {
    let n = values.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::with_capacity(values.ncols());
    for j in 0..values.ncols() {
        let col = values.column(j);
        let m = col.mean();
        let mut r = DVector::from_iterator(n, col.iter().map(|v| v - m));
        // Two passes of modified Gram-Schmidt keep the residual orthogonal.
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&r);
                r.axpy(-c, q, 1.0);
            }
        }
        let rjj = r.norm();
        if rjj < eps {
            keep.push(false);
        } else {
            basis.push(r / rjj);
            keep.push(true);
        }
    }
    keep
}

pub fn prune_rank_deficient(panel: &TimePanel, eps: f64) -> Result<(TimePanel, Vec<bool>)> {
    if !(eps > 0.0) {
        return Err(OfterError::invalid("prune tolerance must be positive"));
    }
    let mask = rank_mask(panel.values(), eps);
    let keep: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter_map(|(j, &k)| k.then_some(j))
        .collect();
    if keep.is_empty() {
        return Err(OfterError::degenerate("every column is rank deficient"));
    }
    Ok((panel.select_columns(&keep), mask))
}

/// Per-column statistics fitted on a window and frozen thereafter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationState {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub active: Vec<bool>,
}

impl StandardizationState {
    pub fn fit(values: &DMatrix<f64>, window: Range<usize>, columns: &[String]) -> Result<Self> {
        if window.len() < 2 || window.end > values.nrows() {
            return Err(OfterError::invalid(format!(
                "standardization window {window:?} invalid for {} rows",
                values.nrows()
            )));
        }
        let block = values.rows(window.start, window.len());
        let n = window.len() as f64;
        let mut mean = Vec::with_capacity(values.ncols());
        let mut scale = Vec::with_capacity(values.ncols());
        for (j, col) in block.column_iter().enumerate() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
            let sd = var.sqrt();
            if !(sd > 0.0) || sd <= 1e-12 * m.abs() {
                return Err(OfterError::degenerate(format!(
                    "column {:?} is constant on the standardization window",
                    columns.get(j).map_or("?", String::as_str)
                )));
            }
            mean.push(m);
            scale.push(sd);
        }
        let active = vec![true; mean.len()];
        Ok(StandardizationState {
            mean,
            scale,
            active,
        })
    }

    pub fn apply_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply(&self, values: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(values.nrows(), values.ncols(), |i, j| {
            (values[(i, j)] - self.mean[j]) / self.scale[j]
        })
    }
}

/// Standardize every row of the panel with statistics computed on `window` only.
pub fn standardize(
    panel: &TimePanel,
    window: Range<usize>,
) -> Result<(TimePanel, StandardizationState)> {
    let state = StandardizationState::fit(panel.values(), window, panel.columns())?;
    let out = TimePanel {
        values: state.apply(panel.values()),
        columns: panel.columns.clone(),
        index: panel.index.clone(),
    };
    Ok((out, state))
}
