//! Online multivariate time-series forecasting by temporal embedding regression.
//!
//! The pipeline residualizes the target with an ARIMA fit, embeds lagged
//! features with a streaming PCA whose eigensystem is kept current by
//! rank-one secular updates, weights embedding coordinates by their
//! one-sided maximal correlation with the target, and forecasts with a bank
//! of GRNN, kNN and OLS models combined by cumulative-loss selection.

pub mod analyze;
pub mod arima;
pub mod cli;
pub mod datagen;
pub mod diagnostics;
pub mod embed;
pub mod error;
pub mod frame;
pub mod maxcorr;
pub mod metrics;
pub mod pipeline;
pub mod regress;
pub mod select;
pub mod spectra;
pub mod stats;

pub use error::{OfterError, Result};
pub use frame::TimePanel;

pub use pipeline::{OfterConfig, Variant};
pub use spectra::EigenSystem;
