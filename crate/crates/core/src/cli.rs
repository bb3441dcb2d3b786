//! Command-line front end: `datagen`, `run` and `report`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::analyze;
use crate::datagen::{self, Model, SyntheticSpec};
use crate::error::{OfterError, Result};
use crate::frame::{self, TimePanel};
use crate::metrics::{self, Quantile, StrategyResult};
use crate::pipeline::{self, HistoryProjection, OfterConfig, PipelineState, RunOutput, Variant};
use crate::select::{Combination, LossKind};

pub const SUMMARY_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ofter", version, about = "Online forecasting with temporal embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic panel.
    Datagen(DatagenArgs),
    /// Run the online forecaster on a CSV panel.
    Run(RunArgs),
    /// Importance or outlier reports from a run directory or snapshot.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct DatagenArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long = "T", visible_alias = "length")]
    pub t_len: usize,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CombinationArg {
    WinnerTakeAll,
    Averaging,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum HistoryArg {
    Latest,
    Contemporaneous,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Input panel (CSV with a header row).
    #[arg(long)]
    pub input: PathBuf,
    /// Target column; repeat for several targets.
    #[arg(long, required = true)]
    pub target: Vec<String>,
    /// Feature columns (comma separated); all columns by default.
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with `OfterConfig` keys; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// plain, dr, ft or dr-ft.
    #[arg(long)]
    pub variant: Option<String>,
    /// mse, mae or neg-pnl.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long, value_enum)]
    pub combination: Option<CombinationArg>,
    /// Share of variance kept by the embedding.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Rows in the trailing regression window.
    #[arg(long)]
    pub lookback: Option<usize>,
    /// Dependence below which an embedding coordinate gets zero weight.
    #[arg(long)]
    pub c_min: Option<f64>,
    /// Dependence at which an original column is appended to the embedding.
    #[arg(long)]
    pub c_original: Option<f64>,
    /// Fraction of the rows used for the initial fit.
    #[arg(long)]
    pub l0_fraction: Option<f64>,
    /// Lags 0..=max_lag of every column become features.
    #[arg(long)]
    pub max_lag: Option<usize>,
    #[arg(long, value_enum)]
    pub history: Option<HistoryArg>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    Importance,
    Outliers,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(value_enum)]
    pub kind: ReportKind,
    /// Run directory written by `run`.
    #[arg(long, conflicts_with = "snapshot", required_unless_present = "snapshot")]
    pub run: Option<PathBuf>,
    /// Pipeline snapshot JSON.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    /// Target to report on when the run has several.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, default_value_t = 5.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 600)]
    pub lookback: usize,
    /// Output CSV; defaults to a file next to the snapshot.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub input: PathBuf,
    pub targets: Vec<String>,
    pub features: Option<Vec<String>>,
    pub out: PathBuf,
    pub seed: u64,
    pub config: OfterConfig,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> OfterError + '_ {
    move |e| OfterError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let s = serde_json::to_string_pretty(value)?;
    std::fs::write(path, s + "\n").map_err(io_err(path))
}

pub fn cmd_datagen(args: &DatagenArgs) -> Result<TimePanel> {
    let model: Model = args.model.parse()?;
    let mut spec = SyntheticSpec::new(model, args.t_len, args.seed);
    spec.sigma = args.sigma;
    let panel = datagen::generate(&spec)?;
    panel.write_csv(&args.out)?;
    Ok(panel)
}

/// Resolve the configuration: defaults, then the JSON file, then flags.
pub fn resolve_config(args: &RunArgs) -> Result<OfterConfig> {
    let mut c = match &args.config {
        Some(p) => {
            let s = std::fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str::<OfterConfig>(&s)
                .map_err(|e| OfterError::invalid(format!("config {}: {e}", p.display())))?
        }
        None => OfterConfig::default(),
    };
    if let Some(v) = &args.variant {
        c = c.with_variant(v.parse::<Variant>()?);
    }
    if let Some(l) = &args.loss {
        c.loss_kind = l.parse::<LossKind>()?;
    }
    if let Some(m) = args.combination {
        c.combination = match m {
            CombinationArg::WinnerTakeAll => Combination::WinnerTakeAll,
            CombinationArg::Averaging => Combination::Averaging,
        };
    }
    if let Some(h) = args.history {
        c.history = match h {
            HistoryArg::Latest => HistoryProjection::Latest,
            HistoryArg::Contemporaneous => HistoryProjection::Contemporaneous,
        };
    }
    macro_rules! set {
        ($($field:ident),*) => {$(if let Some(v) = args.$field { c.$field = v; })*};
    }
    set!(delta, lookback, c_min, c_original, l0_fraction, max_lag, seed);
    c.validate()?;
    Ok(c)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetSummary {
    pub target: String,
    pub n_forecasts: usize,
    pub pearson: f64,
    pub mse: f64,
    pub mae: f64,
    pub arima_order: [usize; 3],
    pub embedding_dim: Option<usize>,
    pub augmented: Vec<String>,
    pub weights_degenerate: bool,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategySummary {
    pub quantile: Quantile,
    pub sr: Option<f64>,
    pub ppd: f64,
    pub p_value: Option<f64>,
    pub p_value_method: String,
    pub days: usize,
    pub empty_days: usize,
}

impl From<&StrategyResult> for StrategySummary {
    fn from(r: &StrategyResult) -> Self {
        StrategySummary {
            quantile: r.quantile,
            sr: r.sr,
            ppd: r.ppd,
            p_value: r.p_value,
            p_value_method: "probabilistic Sharpe approximation (skewness and kurtosis adjusted)".into(),
            days: r.pnl.len(),
            empty_days: r.empty_days.len(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub command: String,
    pub variant: Variant,
    pub config: OfterConfig,
    pub input: PathBuf,
    pub targets: Vec<TargetSummary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub strategy: Option<Vec<StrategySummary>>,
}

fn file_stem(target: &str) -> String {
    target
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

pub fn forecast_path(dir: &Path, target: &str) -> PathBuf {
    dir.join(format!("forecasts_{}.csv", file_stem(target)))
}

pub fn snapshot_path(dir: &Path, target: &str) -> PathBuf {
    dir.join(format!("snapshot_{}.json", file_stem(target)))
}

fn summarize(target: &str, out: &RunOutput) -> Result<TargetSummary> {
    let q = metrics::forecast_quality(&out.forecasts(), &out.truths())?;
    let s = &out.state;
    let kept = s.kept_columns();
    Ok(TargetSummary {
        target: target.to_string(),
        n_forecasts: out.records.len(),
        pearson: q.pearson,
        mse: q.mse,
        mae: q.mae,
        arima_order: [s.arima.p, s.arima.r, s.arima.q],
        embedding_dim: s.embedding.as_ref().map(|e| e.p()),
        augmented: s.augmented_columns.iter().map(|&j| kept[j].clone()).collect(),
        weights_degenerate: s.weights_degenerate,
        fallbacks: out.records.iter().filter(|r| r.fallback).count(),
    })
}

/// Sign strategy over the targets: each target is one instrument whose
/// realized value is its return.
pub fn strategy_results(outputs: &[RunOutput]) -> Result<Vec<StrategyResult>> {
    let days = outputs.first().map_or(0, |o| o.records.len());
    if outputs.iter().any(|o| o.records.len() != days) {
        return Err(OfterError::invalid("targets produced forecasts over different days"));
    }
    let n = outputs.len();
    let signals = DMatrix::from_fn(days, n, |d, i| outputs[i].records[d].y_hat);
    let returns = DMatrix::from_fn(days, n, |d, i| outputs[i].records[d].y_true);
    Quantile::ALL
        .iter()
        .map(|&q| metrics::evaluate_strategy(&signals, &returns, q))
        .collect()
}

fn write_pnl_csv(path: &Path, labels: &[String], results: &[StrategyResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend(results.iter().map(|r| r.quantile.to_string()));
    w.write_record(&header)?;
    for (d, label) in labels.iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend(results.iter().map(|r| r.pnl[d].to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn cmd_run(args: &RunArgs) -> Result<RunSummary> {
    let config = resolve_config(args)?;
    let panel = frame::load_csv(&args.input, true)?;
    let panel = match &args.features {
        None => panel,
        Some(names) => {
            let mut keep: Vec<usize> = names
                .iter()
                .map(|n| panel.column_index(n))
                .collect::<Result<_>>()?;
            for t in &args.target {
                let j = panel.column_index(t)?;
                if !keep.contains(&j) {
                    keep.push(j);
                }
            }
            panel.select_columns(&keep)
        }
    };
    for t in &args.target {
        panel.column_index(t)?;
    }
    std::fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;

    let outputs: Vec<RunOutput> = std::thread::scope(|s| {
        let handles: Vec<_> = args
            .target
            .iter()
            .map(|t| {
                let (panel, config) = (&panel, &config);
                s.spawn(move || pipeline::run_target(panel, t, config))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(OfterError::Convergence("worker panicked".into()))))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut targets = Vec::new();
    for (t, out) in args.target.iter().zip(&outputs) {
        out.write_forecast_csv(&forecast_path(&args.out, t))?;
        let snap = snapshot_path(&args.out, t);
        std::fs::write(&snap, out.state.to_json()?).map_err(io_err(&snap))?;
        targets.push(summarize(t, out)?);
    }

    let strategy = if config.loss_kind == LossKind::NegPnl {
        let results = strategy_results(&outputs)?;
        let labels: Vec<String> = outputs[0].records.iter().map(|r| r.label.clone()).collect();
        write_pnl_csv(&args.out.join("pnl.csv"), &labels, &results)?;
        Some(results.iter().map(StrategySummary::from).collect())
    } else {
        None
    };

    let summary = RunSummary {
        schema_version: SUMMARY_VERSION,
        command: "run".into(),
        variant: config.variant(),
        config: config.clone(),
        input: args.input.clone(),
        targets,
        strategy,
    };
    write_json(&args.out.join("summary.json"), &summary)?;
    let manifest = RunManifest {
        command: "run".into(),
        input: args.input.clone(),
        targets: args.target.clone(),
        features: args.features.clone(),
        out: args.out.clone(),
        seed: config.seed,
        config,
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    Ok(summary)
}

fn locate_snapshot(args: &ReportArgs) -> Result<PathBuf> {
    if let Some(s) = &args.snapshot {
        return Ok(s.clone());
    }
    let dir = args.run.as_ref().expect("clap requires --run or --snapshot");
    let target = match &args.target {
        Some(t) => t.clone(),
        None => {
            let path = dir.join("manifest.json");
            let s = std::fs::read_to_string(&path).map_err(io_err(&path))?;
            let m: RunManifest = serde_json::from_str(&s)?;
            match m.targets.as_slice() {
                [one] => one.clone(),
                _ => return Err(OfterError::invalid("the run has several targets; pass --target")),
            }
        }
    };
    Ok(snapshot_path(dir, &target))
}

pub fn cmd_report(args: &ReportArgs) -> Result<PathBuf> {
    let snap = locate_snapshot(args)?;
    let text = std::fs::read_to_string(&snap).map_err(io_err(&snap))?;
    let state = PipelineState::from_json(&text)?;
    let stem = snap.file_stem().and_then(|s| s.to_str()).unwrap_or("snapshot").to_string();
    let default_name = match args.kind {
        ReportKind::Importance => format!("{stem}.importance.csv"),
        ReportKind::Outliers => format!("{stem}.outliers.csv"),
    };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| snap.with_file_name(default_name));
    match args.kind {
        ReportKind::Importance => analyze::state_importance(&state)?.write_csv(&out)?,
        ReportKind::Outliers => {
            let report = analyze::state_outliers(&state, args.lookback, args.kappa).map_err(|e| match e {
                OfterError::TooShort { needed, got } => OfterError::invalid(format!(
                    "outlier scan with lookback {} needs at least {needed} embedded rows, the run has {got}",
                    args.lookback
                )),
                other => other,
            })?;
            report.write_csv(&out)?;
        }
    }
    Ok(out)
}

/// Exit code for an error: 1 for problems with the input, 2 otherwise.
pub fn exit_code(e: &OfterError) -> i32 {
    match e {
        OfterError::Io { .. }
        | OfterError::Csv(_)
        | OfterError::RaggedRow { .. }
        | OfterError::MissingValue { .. }
        | OfterError::NonNumeric { .. }
        | OfterError::NonMonotoneIndex { .. }
        | OfterError::UnknownColumn(_)
        | OfterError::DimensionMismatch { .. }
        | OfterError::TooShort { .. }
        | OfterError::InvalidArgument(_)
        | OfterError::NonFinite(_)
        | OfterError::Serde(_) => EXIT_USER,
        _ => EXIT_INTERNAL,
    }
}

fn dispatch(cli: &Cli) -> Result<String> {
    Ok(match &cli.command {
        Command::Datagen(a) => {
            let p = cmd_datagen(a)?;
            format!("wrote {} rows x {} columns to {}", p.nrows(), p.ncols(), a.out.display())
        }
        Command::Run(a) => {
            let s = cmd_run(a)?;
            let v: Vec<String> = s
                .targets
                .iter()
                .map(|t| format!("{}: r={:.4} mse={:.4}", t.target, t.pearson, t.mse))
                .collect();
            format!("{} ({})", v.join(", "), a.out.display())
        }
        Command::Report(a) => format!("wrote {}", cmd_report(a)?.display()),
    })
}

/// Parse `args` (including the program name), run and return the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USER } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(msg) => {
            println!("{msg}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
