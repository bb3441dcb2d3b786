//! The online forecasting loop: target decomposition, feature preparation,
//! embedding, feature weighting, ledger warm-start and step-by-step forecasts.

use log::{info, warn};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::arima::{self, ArimaOptions, ArimaSpec};
use crate::embed::{EmbeddingState, UpdateMode};
use crate::error::{OfterError, Result};
use crate::frame::{self, StandardizationState, TimePanel, DEFAULT_PRUNE_EPS};
use crate::maxcorr;
use crate::regress::{self, FeatureWeights, OlsModel};
use crate::select::{self, Combination, LossKind, ModelLedger, DEFAULT_K_SET, DEFAULT_S_SET};
use crate::stats;

pub const SNAPSHOT_VERSION: u32 = 1;

/// The four named configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Plain,
    Dr,
    Ft,
    #[default]
    DrFt,
}

impl Variant {
    pub fn flags(self) -> (bool, bool) {
        match self {
            Variant::Plain => (false, false),
            Variant::Dr => (true, false),
            Variant::Ft => (false, true),
            Variant::DrFt => (true, true),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = OfterError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "plain" => Ok(Variant::Plain),
            "dr" => Ok(Variant::Dr),
            "ft" => Ok(Variant::Ft),
            "dr-ft" => Ok(Variant::DrFt),
            other => Err(OfterError::invalid(format!(
                "unknown variant '{other}' (expected plain, dr, ft or dr-ft)"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Plain => "plain",
            Variant::Dr => "dr",
            Variant::Ft => "ft",
            Variant::DrFt => "dr-ft",
        })
    }
}

/// How the embedding follows new observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum EmbeddingRefresh {
    /// Rank-one eigen-updates after every observation.
    #[default]
    Online,
    /// Batch refit on all rows seen so far every `period` steps, fixed in between.
    Refit { period: usize },
    /// Never update after the training fit.
    Frozen,
}

/// Coordinates used for past rows in the neighbor window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistoryProjection {
    /// Each row keeps the projection computed when it arrived.
    Contemporaneous,
    /// The window is re-projected with the current embedding at every step.
    #[default]
    Latest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OfterConfig {
    pub use_dr: bool,
    pub use_ft: bool,
    pub delta: f64,
    pub l0_fraction: f64,
    pub lookback: usize,
    pub c_min: f64,
    pub c_original: f64,
    pub s_set: Vec<f64>,
    pub k_set: Vec<usize>,
    pub p_adf: f64,
    pub max_p: usize,
    pub max_q: usize,
    pub loss_kind: LossKind,
    pub combination: Combination,
    pub ols_refit_period: usize,
    pub bernstein_k: usize,
    pub max_lag: usize,
    pub embedding_refresh: EmbeddingRefresh,
    pub update_mode: UpdateMode,
    pub history: HistoryProjection,
    /// Recompute feature weights every this many steps; `None` keeps them frozen.
    pub weight_refresh: Option<usize>,
    pub seed: u64,
}

impl Default for OfterConfig {
    fn default() -> Self {
        OfterConfig {
            use_dr: true,
            use_ft: true,
            delta: 0.9,
            l0_fraction: 0.7,
            lookback: 800,
            c_min: 0.05,
            c_original: 0.05,
            s_set: DEFAULT_S_SET.to_vec(),
            k_set: DEFAULT_K_SET.to_vec(),
            p_adf: 0.05,
            max_p: arima::DEFAULT_MAX_ORDER,
            max_q: arima::DEFAULT_MAX_ORDER,
            loss_kind: LossKind::Mse,
            combination: Combination::WinnerTakeAll,
            ols_refit_period: 100,
            bernstein_k: maxcorr::DEFAULT_K,
            max_lag: 3,
            embedding_refresh: EmbeddingRefresh::Online,
            update_mode: UpdateMode::Exact,
            history: HistoryProjection::Latest,
            weight_refresh: None,
            seed: 0,
        }
    }
}

impl OfterConfig {
    pub fn for_variant(variant: Variant) -> Self {
        OfterConfig::default().with_variant(variant)
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        (self.use_dr, self.use_ft) = variant.flags();
        self
    }

    pub fn variant(&self) -> Variant {
        match (self.use_dr, self.use_ft) {
            (false, false) => Variant::Plain,
            (true, false) => Variant::Dr,
            (false, true) => Variant::Ft,
            (true, true) => Variant::DrFt,
        }
    }

    pub fn training_length(&self, t: usize) -> usize {
        (self.l0_fraction * t as f64).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(OfterError::invalid(m));
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.l0_fraction > 0.0 && self.l0_fraction < 1.0) {
            return bad(format!("l0_fraction must lie in (0, 1), got {}", self.l0_fraction));
        }
        for (name, c) in [("c_min", self.c_min), ("c_original", self.c_original)] {
            if !(0.0..1.0).contains(&c) {
                return bad(format!("{name} must lie in [0, 1), got {c}"));
            }
        }
        if !(self.p_adf > 0.0 && self.p_adf < 1.0) {
            return bad(format!("p_adf must lie in (0, 1), got {}", self.p_adf));
        }
        if self.s_set.is_empty() && self.k_set.is_empty() {
            return bad("at least one GRNN or kNN candidate is required".into());
        }
        if self.lookback == 0 {
            return bad("lookback must be positive".into());
        }
        if self.lookback < self.k_set.iter().copied().max().unwrap_or(1) {
            return bad("lookback is shorter than the largest kNN size".into());
        }
        if self.ols_refit_period == 0 {
            return bad("ols_refit_period must be positive".into());
        }
        if self.bernstein_k < 2 {
            return bad("bernstein_k must be at least 2".into());
        }
        if let EmbeddingRefresh::Refit { period: 0 } = self.embedding_refresh {
            return bad("embedding refit period must be positive".into());
        }
        if self.weight_refresh == Some(0) {
            return bad("weight refresh period must be positive".into());
        }
        Ok(())
    }

    fn arima_options(&self) -> ArimaOptions {
        ArimaOptions {
            p_adf: self.p_adf,
            max_p: self.max_p,
            max_q: self.max_q,
            ..ArimaOptions::default()
        }
    }
}

/// Dependence score of a feature on the target: OSMC or absolute Pearson.
pub fn dependence(x: &[f64], y: &[f64], use_ft: bool, bernstein_k: usize) -> f64 {
    let score = if use_ft {
        maxcorr::osmc(x, y, bernstein_k).ok()
    } else {
        stats::pearson(x, y).map(f64::abs)
    };
    score.filter(|s| s.is_finite()).unwrap_or(0.0)
}

/// Columns of `x` (rows `0..l0`) whose dependence on `y` reaches `c_original`.
pub fn select_original_features(
    x: &TimePanel,
    y: &[f64],
    l0: usize,
    c_original: f64,
    use_ft: bool,
) -> Result<Vec<usize>> {
    select_original_with_k(x.values(), y, l0, c_original, use_ft, maxcorr::DEFAULT_K)
}

fn select_original_with_k(
    x: &DMatrix<f64>,
    y: &[f64],
    l0: usize,
    c_original: f64,
    use_ft: bool,
    k: usize,
) -> Result<Vec<usize>> {
    if l0 > x.nrows() || l0 > y.len() {
        return Err(OfterError::invalid(format!(
            "training length {l0} exceeds the data ({} rows)",
            x.nrows()
        )));
    }
    let target = &y[..l0];
    Ok((0..x.ncols())
        .filter(|&j| {
            let col: Vec<f64> = x.column(j).rows(0, l0).iter().copied().collect();
            dependence(&col, target, use_ft, k) >= c_original
        })
        .collect())
}

/// Outcome of the weight computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFit {
    pub weights: FeatureWeights,
    pub scores: Vec<f64>,
    /// Every score fell below `c_min`; `weights` is the zero vector.
    pub degenerate: bool,
}

/// `v_j = c_j^2 1{c_j >= c_min} / sum_k c_k^2 1{c_k >= c_min}` on rows `0..l0`.
pub fn compute_feature_weights(
    x_tilde: &TimePanel,
    y: &[f64],
    l0: usize,
    c_min: f64,
    use_ft: bool,
) -> Result<WeightFit> {
    weights_on(x_tilde.values(), y, 0..l0, c_min, use_ft, maxcorr::DEFAULT_K)
}

fn weights_on(
    x: &DMatrix<f64>,
    y: &[f64],
    rows: std::ops::Range<usize>,
    c_min: f64,
    use_ft: bool,
    k: usize,
) -> Result<WeightFit> {
    if x.ncols() == 0 {
        return Err(OfterError::invalid("no columns to weight"));
    }
    if rows.end > x.nrows() || rows.end > y.len() {
        return Err(OfterError::invalid("weight window exceeds the data"));
    }
    let target = &y[rows.clone()];
    let scores: Vec<f64> = (0..x.ncols())
        .map(|j| {
            let col: Vec<f64> = x.column(j).rows(rows.start, rows.len()).iter().copied().collect();
            dependence(&col, target, use_ft, k)
        })
        .collect();
    weights_from_scores(scores, c_min)
}

/// Square, threshold at `c_min` and normalize dependence scores.
pub fn weights_from_scores(scores: Vec<f64>, c_min: f64) -> Result<WeightFit> {
    let raw: Vec<f64> = scores
        .iter()
        .map(|&c| if c >= c_min { c * c } else { 0.0 })
        .collect();
    let weights = FeatureWeights::normalized(&raw)?;
    let degenerate = weights.is_zero();
    Ok(WeightFit {
        weights,
        scores,
        degenerate,
    })
}

/// One online forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    /// Row position in the input.
    pub t: usize,
    pub label: String,
    pub y_hat: f64,
    pub y_hat_residual: f64,
    pub y_ts: f64,
    pub y_true: f64,
    pub winners: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub candidates: Option<Vec<f64>>,
    /// The step failed and the window mean was emitted instead.
    #[serde(default)]
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub schema_version: u32,
    pub config: OfterConfig,
    pub columns: Vec<String>,
    /// Columns kept by the rank pruning, over the input columns.
    pub prune_mask: Vec<bool>,
    pub standardization: StandardizationState,
    pub embedding: Option<EmbeddingState>,
    /// Indices (into the pruned columns) appended to the embedding.
    pub augmented_columns: Vec<usize>,
    pub weights: FeatureWeights,
    pub weight_scores: Vec<f64>,
    pub weights_degenerate: bool,
    pub ledger: ModelLedger,
    pub ols: OlsModel,
    pub arima: ArimaSpec,
    pub l0: usize,
    /// Number of rows folded in so far.
    pub t: usize,
    /// Embedded rows `0..t`, each projected with the embedding current at its time.
    pub embedded: Vec<Vec<f64>>,
    /// Standardized, pruned input rows `0..t`.
    pub standardized: Vec<Vec<f64>>,
    /// Residual targets for the embedded rows.
    pub residual_targets: Vec<f64>,
}

impl PipelineState {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let state: PipelineState = serde_json::from_str(s)?;
        if state.schema_version != SNAPSHOT_VERSION {
            return Err(OfterError::invalid(format!(
                "unsupported pipeline snapshot version {}",
                state.schema_version
            )));
        }
        Ok(state)
    }

    /// Width of the embedded-plus-augmented representation.
    pub fn width(&self) -> usize {
        match &self.embedding {
            None => self.standardization.mean.len(),
            Some(e) => e.p() + self.augmented_columns.len(),
        }
    }

    /// Labels of the embedded-plus-augmented columns.
    pub fn feature_labels(&self) -> Vec<String> {
        let kept = self.kept_columns();
        match &self.embedding {
            None => kept,
            Some(e) => (1..=e.p())
                .map(|k| format!("pc{k}"))
                .chain(self.augmented_columns.iter().map(|&j| kept[j].clone()))
                .collect(),
        }
    }

    /// Names of the input columns that survived pruning.
    pub fn kept_columns(&self) -> Vec<String> {
        self.columns
            .iter()
            .zip(&self.prune_mask)
            .filter_map(|(c, &k)| k.then(|| c.clone()))
            .collect()
    }

    /// Weights used for distances; uniform when every score fell below `c_min`.
    pub fn effective_weights(&self) -> FeatureWeights {
        if self.weights.is_zero() {
            FeatureWeights::uniform(self.weights.len())
        } else {
            self.weights.clone()
        }
    }

    /// Standardized, pruned version of a raw input row.
    fn prepare(&self, raw: &[f64]) -> Vec<f64> {
        let kept: Vec<f64> = raw
            .iter()
            .zip(&self.prune_mask)
            .filter_map(|(v, &k)| k.then_some(*v))
            .collect();
        self.standardization.apply_row(&kept)
    }

    fn embed_row(&self, std_row: &[f64]) -> Result<Vec<f64>> {
        match &self.embedding {
            None => Ok(std_row.to_vec()),
            Some(e) => {
                let mut z = e.project(std_row)?;
                z.extend(self.augmented_columns.iter().map(|&j| std_row[j]));
                Ok(z)
            }
        }
    }

    /// Every row seen so far in the coordinates the forecaster uses.
    pub fn history_matrix(&self) -> Result<DMatrix<f64>> {
        self.window_matrix(0..self.t)
    }

    fn window(&self) -> std::ops::Range<usize> {
        self.t.saturating_sub(self.config.lookback)..self.t
    }

    fn window_matrix(&self, rows: std::ops::Range<usize>) -> Result<DMatrix<f64>> {
        let w = self.width();
        if self.embedding.is_some() && self.config.history == HistoryProjection::Latest {
            let mut m = DMatrix::zeros(rows.len(), w);
            for (i, r) in rows.enumerate() {
                let z = self.embed_row(&self.standardized[r])?;
                m.row_mut(i).copy_from_slice(&z);
            }
            return Ok(m);
        }
        Ok(DMatrix::from_fn(rows.len(), w, |i, j| self.embedded[rows.start + i][j]))
    }
}

/// Everything produced by [`run`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub state: PipelineState,
    pub records: Vec<ForecastRecord>,
    /// One-step ARIMA component over every input row.
    pub y_ts: Vec<f64>,
}

impl RunOutput {
    pub fn forecasts(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.y_hat).collect()
    }

    pub fn truths(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.y_true).collect()
    }

    /// Write `t,label,y_hat,y_true,y_ts,winners,fallback` rows.
    pub fn write_forecast_csv(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| OfterError::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["t", "label", "y_hat", "y_true", "y_ts", "winners", "fallback"])?;
        for r in &self.records {
            w.write_record([
                r.t.to_string(),
                r.label.clone(),
                r.y_hat.to_string(),
                r.y_true.to_string(),
                r.y_ts.to_string(),
                r.winners.join(";"),
                r.fallback.to_string(),
            ])?;
        }
        w.flush().map_err(|e| OfterError::io(path, e))?;
        Ok(())
    }
}

fn min_training_length(config: &OfterConfig) -> usize {
    let max_k = config.k_set.iter().copied().max().unwrap_or(1);
    (2 * max_k).max(50)
}

/// Fit all training-window state on rows `0..l0` and warm-start the ledger.
/// Returns the state together with the one-step ARIMA component of `y`.
pub fn initialize(x: &TimePanel, y: &[f64], config: &OfterConfig) -> Result<(PipelineState, Vec<f64>)> {
    config.validate()?;
    let n = x.nrows();
    if y.len() != n {
        return Err(OfterError::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(OfterError::NonFinite("target"));
    }
    let l0 = config.training_length(n);
    let needed = min_training_length(config);
    if l0 < needed || l0 >= n {
        return Err(OfterError::TooShort {
            needed: (needed as f64 / config.l0_fraction).ceil() as usize + 1,
            got: n,
        });
    }
    if config.lookback > l0 {
        return Err(OfterError::invalid(format!(
            "lookback {} exceeds the training length {l0}",
            config.lookback
        )));
    }

    let (spec, dec) = arima::fit_and_decompose(y, l0, &config.arima_options())?;
    info!(
        "ARIMA({}, {}, {}) selected on {l0} training rows",
        spec.p, spec.r, spec.q
    );
    let residual = dec.residual;

    let train = x.slice_rows(0..l0);
    let (_, prune_mask) = frame::prune_rank_deficient(&train, DEFAULT_PRUNE_EPS)?;
    let keep: Vec<usize> = (0..prune_mask.len()).filter(|&j| prune_mask[j]).collect();
    let pruned = x.select_columns(&keep);
    let (std_panel, standardization) = frame::standardize(&pruned, 0..l0)?;
    let std_values = std_panel.values();
    let std_train = std_values.rows(0, l0).into_owned();

    let (embedding, augmented) = if config.use_dr {
        let e = EmbeddingState::fit(
            &std_train,
            vec![1.0; std_train.ncols()],
            config.delta,
            config.update_mode,
        )?;
        let aug = select_original_with_k(
            std_values,
            &residual,
            l0,
            config.c_original,
            config.use_ft,
            config.bernstein_k,
        )?;
        info!("embedding keeps {} of {} dimensions, {} original columns appended", e.p(), e.dim(), aug.len());
        (Some(e), aug)
    } else {
        (None, Vec::new())
    };

    let mut state = PipelineState {
        schema_version: SNAPSHOT_VERSION,
        config: config.clone(),
        columns: x.columns().to_vec(),
        prune_mask,
        standardization,
        embedding,
        augmented_columns: augmented,
        weights: FeatureWeights::uniform(1),
        weight_scores: Vec::new(),
        weights_degenerate: false,
        ledger: {
            let mut l = ModelLedger::new(config.s_set.clone(), config.k_set.clone(), config.loss_kind)?;
            l.combination = config.combination;
            l
        },
        ols: OlsModel {
            beta0: 0.0,
            beta: Vec::new(),
        },
        arima: spec,
        l0,
        t: 0,
        embedded: Vec::with_capacity(n),
        standardized: Vec::with_capacity(n),
        residual_targets: Vec::with_capacity(n),
    };

    for i in 0..l0 {
        let row: Vec<f64> = std_values.row(i).iter().copied().collect();
        let z = state.embed_row(&row)?;
        state.embedded.push(z);
        state.standardized.push(row);
        state.residual_targets.push(residual[i]);
    }
    state.t = l0;

    let xt = state.window_matrix(0..l0)?;
    let fit = weights_on(&xt, &residual, 0..l0, config.c_min, config.use_ft, config.bernstein_k)?;
    if fit.degenerate {
        warn!("every feature weight fell below c_min; distances fall back to uniform weights");
    }
    state.weights = fit.weights;
    state.weight_scores = fit.scores;
    state.weights_degenerate = fit.degenerate;
    state.ols = regress::ols_fit(&xt, &residual[..l0])?;

    warm_start(&mut state, y, &dec.y_ts)?;
    Ok((state, dec.y_ts))
}

/// Accumulate candidate losses over the training window with trailing windows.
fn warm_start(state: &mut PipelineState, y: &[f64], y_ts: &[f64]) -> Result<()> {
    let weights = state.effective_weights();
    let start = state.ledger.max_k().max(1);
    let lookback = state.config.lookback;
    for t in start..state.l0 {
        let rows = t.saturating_sub(lookback)..t;
        let window = state.window_matrix(rows.clone())?;
        let query = &state.embedded[t];
        let forecasts = select::candidate_forecasts(
            &window,
            &state.residual_targets[rows],
            query,
            &state.ledger,
            &weights,
            &state.ols,
            query,
        )?;
        record_losses(&mut state.ledger, &forecasts, state.residual_targets[t], y[t], y_ts[t])?;
    }
    Ok(())
}

fn record_losses(
    ledger: &mut ModelLedger,
    forecasts: &[f64],
    residual: f64,
    y: f64,
    y_ts: f64,
) -> Result<()> {
    match ledger.loss_kind {
        LossKind::NegPnl => {
            let recomposed: Vec<f64> = forecasts.iter().map(|f| f + y_ts).collect();
            ledger.update_losses(&recomposed, y, Some(y))
        }
        _ => ledger.update_losses(forecasts, residual, None),
    }
}

/// Run the whole pipeline on aligned features `x` and targets `y`: row `t`
/// of `x` must be known before `y[t]` is revealed.
pub fn run(x: &TimePanel, y: &[f64], config: &OfterConfig) -> Result<RunOutput> {
    run_verbose(x, y, config, false)
}

pub fn run_verbose(
    x: &TimePanel,
    y: &[f64],
    config: &OfterConfig,
    keep_candidates: bool,
) -> Result<RunOutput> {
    let (mut state, y_ts) = initialize(x, y, config)?;
    let mut records = Vec::with_capacity(x.nrows() - state.l0);
    let labels = state.ledger.candidates();
    for t in state.l0..x.nrows() {
        let raw: Vec<f64> = x.values().row(t).iter().copied().collect();
        let std_row = state.prepare(&raw);
        let z = state.embed_row(&std_row)?;
        let rows = state.window();
        let targets = &state.residual_targets[rows.clone()];
        let window = state.window_matrix(rows.clone())?;
        let weights = state.effective_weights();
        let residual_t = y[t] - y_ts[t];

        let (y_res, winners, candidates, fallback) =
            match select::step(&window, targets, &z, &state.ledger, &weights, &state.ols) {
                Ok((combined, forecasts)) => {
                    let w = combined.winners.iter().map(|&i| labels[i].to_string()).collect();
                    (combined.value, w, Some(forecasts), false)
                }
                Err(e) => {
                    warn!("step {t} failed ({e}); emitting the window mean");
                    (stats::mean(targets), Vec::new(), None, true)
                }
            };
        if let Some(f) = &candidates {
            record_losses(&mut state.ledger, f, residual_t, y[t], y_ts[t])?;
        }
        records.push(ForecastRecord {
            t,
            label: x.index().label(t),
            y_hat: y_res + y_ts[t],
            y_hat_residual: y_res,
            y_ts: y_ts[t],
            y_true: y[t],
            winners,
            candidates: if keep_candidates { candidates } else { None },
            fallback,
        });

        state.embedded.push(z);
        state.standardized.push(std_row.clone());
        state.residual_targets.push(residual_t);
        state.t = t + 1;
        refresh_embedding(&mut state, &std_row)?;
        let steps = state.t - state.l0;
        if state.t % config.ols_refit_period == 0 {
            let rows = state.window();
            let m = state.window_matrix(rows.clone())?;
            match regress::ols_fit(&m, &state.residual_targets[rows]) {
                Ok(ols) => state.ols = ols,
                Err(e) => warn!("OLS refit at {t} failed ({e}); keeping the previous model"),
            }
        }
        if let Some(period) = config.weight_refresh {
            if steps % period == 0 {
                let rows = state.window();
                let m = state.window_matrix(rows.clone())?;
                let targets = state.residual_targets[rows].to_vec();
                let fit = weights_on(&m, &targets, 0..m.nrows(), config.c_min, config.use_ft, config.bernstein_k)?;
                state.weights = fit.weights;
                state.weight_scores = fit.scores;
                state.weights_degenerate = fit.degenerate;
            }
        }
    }
    Ok(RunOutput {
        state,
        records,
        y_ts,
    })
}

fn refresh_embedding(state: &mut PipelineState, std_row: &[f64]) -> Result<()> {
    let Some(emb) = &state.embedding else {
        return Ok(());
    };
    let next = match state.config.embedding_refresh {
        EmbeddingRefresh::Frozen => return Ok(()),
        EmbeddingRefresh::Online => emb.online_update(std_row)?,
        EmbeddingRefresh::Refit { period } => {
            if (state.t - state.l0) % period != 0 {
                return Ok(());
            }
            let rows = &state.standardized;
            let values = DMatrix::from_fn(rows.len(), emb.dim(), |i, j| rows[i][j]);
            let mut refit = EmbeddingState::fit(&values, vec![1.0; emb.dim()], emb.delta(), emb.mode())?
                .with_retained(emb.p())?;
            refit.align_with(emb);
            refit
        }
    };
    state.embedding = Some(next);
    Ok(())
}

/// Build lagged forecasting pairs for `target` and run the pipeline.
pub fn run_target(panel: &TimePanel, target: &str, config: &OfterConfig) -> Result<RunOutput> {
    let (x, y) = frame::forecasting_pairs(panel, target, config.max_lag)?;
    run(&x, &y, config)
}
