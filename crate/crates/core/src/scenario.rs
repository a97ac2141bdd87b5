//! Experiment description and its JSON file format.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::DetectorConfig;
use crate::flow::Protocol;
use crate::time::{SimDuration, SimTime};
use crate::traffic::{AttackSchedule, SourceKind, SourceSpec, TrafficModel};

pub const SCHEMA_VERSION: u32 = 1;

/// How long the server holds each packet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServiceModel {
    /// Service time is `size / link_capacity`.
    Deterministic,
    /// Service time is Exponential(mu), independent of size.
    Markovian { mu: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub horizon_s: f64,
    /// Bytes per second.
    pub link_capacity: f64,
    pub service: ServiceModel,
    /// Waiting slots, excluding the packet in service. `null` is unbounded.
    pub buffer_packets: Option<u32>,
    pub sources: Vec<SourceSpec>,
    #[serde(default)]
    pub attack: AttackSchedule,
    pub window_s: f64,
    #[serde(default)]
    pub detector: DetectorConfig,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid scenario:\n{}", join_fields(.0))]
    Invalid(Vec<FieldError>),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn join_fields(errors: &[FieldError]) -> String {
    errors
        .iter()
        .map(|e| format!("  - {e}"))
        .collect::<Vec<_>>()
        .join("\n")
}

struct Checker(Vec<FieldError>);

impl Checker {
    fn check(&mut self, ok: bool, field: impl Into<String>, message: impl Into<String>) {
        if !ok {
            self.0.push(FieldError {
                field: field.into(),
                message: message.into(),
            });
        }
    }

    fn positive(&mut self, value: f64, field: impl Into<String>) {
        self.check(
            value > 0.0 && value.is_finite(),
            field,
            format!("must be a positive finite number, got {value}"),
        );
    }
}

impl ScenarioConfig {
    pub fn horizon(&self) -> SimTime {
        SimTime::from_secs(self.horizon_s)
    }

    pub fn window(&self) -> SimDuration {
        SimDuration::from_secs(self.window_s)
    }

    pub fn buffer_capacity(&self) -> Option<usize> {
        self.buffer_packets.map(|k| k as usize)
    }

    /// Legitimate sources followed by floods, in engine order.
    pub fn all_sources(&self) -> impl Iterator<Item = &SourceSpec> {
        self.sources.iter().chain(self.attack.floods.iter())
    }

    /// Same scenario with the attack schedule removed.
    pub fn without_attack(&self) -> ScenarioConfig {
        ScenarioConfig {
            attack: AttackSchedule::default(),
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            seed,
            ..self.clone()
        }
    }

    /// Whether the final window is shorter than `window_s`.
    pub fn has_partial_window(&self) -> bool {
        let w = self.window().as_nanos();
        w > 0 && !self.horizon().as_nanos().is_multiple_of(w)
    }

    /// Checks every field and reports all violations at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut c = Checker(Vec::new());
        c.check(
            self.schema_version == SCHEMA_VERSION,
            "schema_version",
            format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
        );
        c.check(
            self.horizon_s >= 0.0 && self.horizon_s.is_finite(),
            "horizon_s",
            format!(
                "must be a non-negative finite number, got {}",
                self.horizon_s
            ),
        );
        c.positive(self.link_capacity, "link_capacity");
        c.positive(self.window_s, "window_s");
        if let ServiceModel::Markovian { mu } = self.service {
            c.positive(mu, "service.mu");
        }
        if let Some(k) = self.buffer_packets {
            c.check(k < u32::MAX, "buffer_packets", "too large");
        }
        for (i, s) in self.sources.iter().enumerate() {
            check_source(&mut c, &format!("sources[{i}]"), s);
            c.check(
                s.kind() != SourceKind::Flood,
                format!("sources[{i}].traffic.kind"),
                "floods belong in attack.floods",
            );
        }
        for (i, s) in self.attack.floods.iter().enumerate() {
            let field = format!("attack.floods[{i}]");
            check_source(&mut c, &field, s);
            c.check(
                s.kind() == SourceKind::Flood,
                format!("{field}.traffic.kind"),
                "attack entries must be floods",
            );
            c.check(
                s.flow.proto == Protocol::Udp,
                format!("{field}.flow.proto"),
                "floods are UDP",
            );
        }
        self.detector
            .check_into(&mut |field, msg| c.check(false, format!("detector.{field}"), msg));
        if c.0.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(c.0))
        }
    }

    pub fn from_json(text: &str) -> Result<ScenarioConfig, ConfigError> {
        let scenario: ScenarioConfig = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn load(path: &Path) -> Result<ScenarioConfig, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, self.to_json() + "\n")
    }
}

fn check_source(c: &mut Checker, field: &str, s: &SourceSpec) {
    c.check(
        s.start_s >= 0.0 && s.start_s < s.end_s,
        format!("{field}.start_s"),
        format!(
            "need 0 <= start_s < end_s, got [{}, {}]",
            s.start_s, s.end_s
        ),
    );
    c.check(
        s.packet_size > 0,
        format!("{field}.packet_size"),
        "must be > 0",
    );
    match s.traffic {
        TrafficModel::PoissonBackground { rate_pps } | TrafficModel::Cbr { rate_pps } => {
            c.positive(rate_pps, format!("{field}.traffic.rate_pps"));
        }
        TrafficModel::Flood {
            rate_pps,
            burst_size,
        } => {
            c.positive(rate_pps, format!("{field}.traffic.rate_pps"));
            c.check(
                burst_size >= 1,
                format!("{field}.traffic.burst_size"),
                "must be >= 1",
            );
        }
        TrafficModel::Ftp {
            initial_window,
            max_window,
            ack_delay_s,
            loss_detect_s,
        } => {
            c.check(
                initial_window >= 1,
                format!("{field}.traffic.initial_window"),
                "must be >= 1",
            );
            c.check(
                max_window >= initial_window,
                format!("{field}.traffic.max_window"),
                "must be >= initial_window",
            );
            c.check(
                ack_delay_s >= 0.0 && ack_delay_s.is_finite(),
                format!("{field}.traffic.ack_delay_s"),
                "must be >= 0",
            );
            c.positive(loss_detect_s, format!("{field}.traffic.loss_detect_s"));
        }
    }
}
