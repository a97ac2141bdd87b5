//! Single-server queue simulation under normal and UDP-flood traffic, with a
//! windowed metrics pipeline and a threshold detector that turns the metric
//! stream into a binary alarm signal.
//!
//! The usual pipeline is [`sim::run`] to produce an [`sim::EventTrace`],
//! [`metrics::series`] to fold it into windows, [`detector::signal_series`]
//! to raise alarms and [`detector::classification_report`] to score them.
//! [`experiment`] wires the stages together without storing traces.

pub mod analytics;
pub mod detector;
pub mod experiment;
pub mod flow;
pub mod io;
pub mod metrics;
pub mod scenario;
pub mod sim;
pub mod time;
pub mod traffic;
pub mod validate;

use thiserror::Error;

/// Failure of any pipeline stage.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] scenario::ConfigError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Analytics(#[from] analytics::AnalyticsError),
    #[error(transparent)]
    Report(#[from] detector::ReportError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    InvalidArgument(String),
}
