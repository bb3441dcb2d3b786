//! Python bindings. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ofter::analyze;
use ofter::cli::{exit_code, EXIT_USER};
use ofter::datagen::{self, Model, SyntheticSpec};
use ofter::embed::{EmbeddingState, UpdateMode};
use ofter::metrics::{self, Quantile};
use ofter::pipeline::{self, OfterConfig, PipelineState, RunOutput, Variant};
use ofter::regress::FeatureWeights;
use ofter::select::LossKind;
use ofter::spectra::{self, RankOneUpdate};
use ofter::{OfterError, TimePanel};

fn err(e: OfterError) -> PyErr {
    if exit_code(&e) == EXIT_USER {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(PyValueError::new_err(format!(
            "row {i} has {} values, expected {ncols}",
            rows[i].len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// A table of time-indexed observations.
#[pyclass(name = "Panel", module = "pyofter", skip_from_py_object)]
#[derive(Clone)]
struct PyPanel {
    inner: TimePanel,
}

#[pymethods]
impl PyPanel {
    #[new]
    fn new(values: Vec<Vec<f64>>, columns: Vec<String>) -> PyResult<Self> {
        let inner = TimePanel::from_matrix(matrix(&values)?, columns).map_err(err)?;
        Ok(PyPanel { inner })
    }

    #[staticmethod]
    fn read_csv(path: PathBuf) -> PyResult<Self> {
        let inner = ofter::frame::load_csv(&path, true).map_err(err)?;
        Ok(PyPanel { inner })
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_csv(&path).map_err(err)
    }

    #[getter]
    fn columns(&self) -> Vec<String> {
        self.inner.columns().to_vec()
    }

    #[getter]
    fn values(&self) -> Vec<Vec<f64>> {
        rows(self.inner.values())
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.nrows(), self.inner.ncols())
    }

    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        self.inner.column_by_name(name).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.nrows()
    }

    fn __repr__(&self) -> String {
        format!("Panel({} rows x {} columns)", self.inner.nrows(), self.inner.ncols())
    }
}

/// Simulate one of the synthetic models `M1`, `M2` or `M3`.
#[pyfunction]
#[pyo3(signature = (model, length, seed = 0, sigma = None))]
fn generate(model: &str, length: usize, seed: u64, sigma: Option<f64>) -> PyResult<PyPanel> {
    let model: Model = model.parse().map_err(err)?;
    let mut spec = SyntheticSpec::new(model, length, seed);
    if let Some(s) = sigma {
        spec = spec.with_sigma(s);
    }
    Ok(PyPanel {
        inner: datagen::generate(&spec).map_err(err)?,
    })
}

/// Pipeline settings. Unset options keep their defaults for the variant.
#[pyclass(name = "Config", module = "pyofter", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: OfterConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (variant = "dr-ft", *, lookback = None, delta = None, c_min = None, c_original = None, l0_fraction = None, max_lag = None, loss = None, seed = None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        variant: &str,
        lookback: Option<usize>,
        delta: Option<f64>,
        c_min: Option<f64>,
        c_original: Option<f64>,
        l0_fraction: Option<f64>,
        max_lag: Option<usize>,
        loss: Option<&str>,
        seed: Option<u64>,
    ) -> PyResult<Self> {
        let v: Variant = variant.parse().map_err(err)?;
        let mut c = OfterConfig::for_variant(v);
        if let Some(x) = lookback {
            c.lookback = x;
        }
        if let Some(x) = delta {
            c.delta = x;
        }
        if let Some(x) = c_min {
            c.c_min = x;
        }
        if let Some(x) = c_original {
            c.c_original = x;
        }
        if let Some(x) = l0_fraction {
            c.l0_fraction = x;
        }
        if let Some(x) = max_lag {
            c.max_lag = x;
        }
        if let Some(x) = loss {
            c.loss_kind = x.parse::<LossKind>().map_err(err)?;
        }
        if let Some(x) = seed {
            c.seed = x;
        }
        c.validate().map_err(err)?;
        Ok(PyConfig { inner: c })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: OfterConfig = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(err)?;
        Ok(PyConfig { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.variant().to_string()
    }

    #[getter]
    fn lookback(&self) -> usize {
        self.inner.lookback
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }

    fn __repr__(&self) -> String {
        format!("Config(variant={:?}, lookback={})", self.variant(), self.inner.lookback)
    }
}

/// Fitted pipeline state, serializable to JSON.
#[pyclass(name = "State", module = "pyofter", skip_from_py_object)]
#[derive(Clone)]
struct PyState {
    inner: PipelineState,
}

#[pymethods]
impl PyState {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyState {
            inner: PipelineState::from_json(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    /// Rows folded in so far.
    #[getter]
    fn t(&self) -> usize {
        self.inner.t
    }

    #[getter]
    fn embedding_dim(&self) -> Option<usize> {
        self.inner.embedding.as_ref().map(EmbeddingState::p)
    }

    #[getter]
    fn feature_labels(&self) -> Vec<String> {
        self.inner.feature_labels()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights.as_slice().to_vec()
    }

    /// Importance of each original feature, as `(label, score)` pairs.
    fn importance(&self) -> PyResult<Vec<(String, f64)>> {
        let r = analyze::state_importance(&self.inner).map_err(err)?;
        Ok(r.labels.into_iter().zip(r.importance).collect())
    }

    /// Times flagged as outliers in the embedded history.
    #[pyo3(signature = (lookback = 600, kappa = 5.0))]
    fn outliers(&self, lookback: usize, kappa: f64) -> PyResult<Vec<usize>> {
        Ok(analyze::state_outliers(&self.inner, lookback, kappa).map_err(err)?.flagged())
    }
}

#[pyclass(name = "RunResult", module = "pyofter")]
struct PyRunResult {
    inner: RunOutput,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn forecasts(&self) -> Vec<f64> {
        self.inner.forecasts()
    }

    #[getter]
    fn truths(&self) -> Vec<f64> {
        self.inner.truths()
    }

    /// Input row index of each forecast.
    #[getter]
    fn times(&self) -> Vec<usize> {
        self.inner.records.iter().map(|r| r.t).collect()
    }

    #[getter]
    fn state(&self) -> PyState {
        PyState {
            inner: self.inner.state.clone(),
        }
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_forecast_csv(&path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.records.len()
    }
}

/// Forecast `y[t]` from the rows of `x` up to `t - 1`, walking forward.
#[pyfunction]
#[pyo3(signature = (x, y, config = None))]
fn run(py: Python<'_>, x: &PyPanel, y: Vec<f64>, config: Option<&PyConfig>) -> PyResult<PyRunResult> {
    let c = config.map_or_else(OfterConfig::default, |c| c.inner.clone());
    let x = x.inner.clone();
    let out = py.detach(move || pipeline::run(&x, &y, &c)).map_err(err)?;
    Ok(PyRunResult { inner: out })
}

/// Forecast one column of `panel` from lagged values of every column.
#[pyfunction]
#[pyo3(signature = (panel, target, config = None))]
fn run_target(py: Python<'_>, panel: &PyPanel, target: &str, config: Option<&PyConfig>) -> PyResult<PyRunResult> {
    let c = config.map_or_else(OfterConfig::default, |c| c.inner.clone());
    let p = panel.inner.clone();
    let t = target.to_string();
    let out = py.detach(move || pipeline::run_target(&p, &t, &c)).map_err(err)?;
    Ok(PyRunResult { inner: out })
}

/// One-sided maximal correlation of `v2` with polynomial transforms of `v1`.
#[pyfunction]
#[pyo3(signature = (v1, v2, k = 4))]
fn osmc(v1: Vec<f64>, v2: Vec<f64>, k: usize) -> PyResult<f64> {
    ofter::maxcorr::osmc(&v1, &v2, k).map_err(err)
}

/// Eigen-decomposition of `a + rho v v^T` from that of the symmetric `a`.
/// Returns eigenvalues in descending order and eigenvectors as columns.
#[pyfunction]
fn rank_one_update(a: Vec<Vec<f64>>, rho: f64, v: Vec<f64>) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let sys = spectra::full_eig(&matrix(&a)?).map_err(err)?;
    let up = RankOneUpdate::new(rho, DVector::from_vec(v)).map_err(err)?;
    let out = spectra::rank_one_update(&sys, &up).map_err(err)?;
    Ok((out.values().to_vec(), rows(out.vectors())))
}

/// Streaming PCA over rows.
#[pyclass(name = "Embedding", module = "pyofter", skip_from_py_object)]
#[derive(Clone)]
struct PyEmbedding {
    inner: EmbeddingState,
}

#[pymethods]
impl PyEmbedding {
    #[new]
    #[pyo3(signature = (rows, delta = 0.9, truncated = false))]
    fn new(rows: Vec<Vec<f64>>, delta: f64, truncated: bool) -> PyResult<Self> {
        let m = matrix(&rows)?;
        let mode = if truncated { UpdateMode::Truncated } else { UpdateMode::Exact };
        let inner = EmbeddingState::fit(&m, vec![1.0; m.ncols()], delta, mode).map_err(err)?;
        Ok(PyEmbedding { inner })
    }

    /// Fold in one new row.
    fn update(&mut self, row: Vec<f64>) -> PyResult<()> {
        self.inner = self.inner.online_update(&row).map_err(err)?;
        Ok(())
    }

    fn project(&self, row: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.project(&row).map_err(err)
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues().to_vec()
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean().to_vec()
    }

    /// Leading eigenvectors as a `d x p` list of rows.
    #[getter]
    fn components(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.projection())
    }
}

/// Pearson correlation, mean squared error and mean absolute error.
#[pyfunction]
fn forecast_quality(y_hat: Vec<f64>, y: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let q = metrics::forecast_quality(&y_hat, &y).map_err(err)?;
    Ok((q.pearson, q.mse, q.mae))
}

/// Backtest of sign positions on one quintile portfolio. Rows are days.
/// Returns `(pnl, sharpe, ppd, p_value)`.
#[pyfunction]
#[pyo3(signature = (signals, returns, quantile = "Q1"))]
fn evaluate_strategy(
    signals: Vec<Vec<f64>>,
    returns: Vec<Vec<f64>>,
    quantile: &str,
) -> PyResult<(Vec<f64>, Option<f64>, f64, Option<f64>)> {
    let q = Quantile::ALL
        .into_iter()
        .find(|q| q.to_string().eq_ignore_ascii_case(quantile))
        .ok_or_else(|| PyValueError::new_err(format!("unknown quantile {quantile:?}; use Q1..Q5")))?;
    let r = metrics::evaluate_strategy(&matrix(&signals)?, &matrix(&returns)?, q).map_err(err)?;
    Ok((r.pnl, r.sr, r.ppd, r.p_value))
}

/// Outlier flags for a history of rows under uniform weights.
#[pyfunction]
#[pyo3(signature = (history, lookback = 600, kappa = 5.0))]
fn detect_outliers(history: Vec<Vec<f64>>, lookback: usize, kappa: f64) -> PyResult<Vec<usize>> {
    let m = matrix(&history)?;
    let w = FeatureWeights::uniform(m.ncols());
    Ok(analyze::detect_outliers(&m, &w, lookback, kappa).map_err(err)?.flagged())
}

#[pymodule]
fn pyofter(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPanel>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyState>()?;
    m.add_class::<PyRunResult>()?;
    m.add_class::<PyEmbedding>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_target, m)?)?;
    m.add_function(wrap_pyfunction!(osmc, m)?)?;
    m.add_function(wrap_pyfunction!(rank_one_update, m)?)?;
    m.add_function(wrap_pyfunction!(forecast_quality, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_strategy, m)?)?;
    m.add_function(wrap_pyfunction!(detect_outliers, m)?)?;
    Ok(())
}
