//! Two-stage flood detector.
//!
//! Stage one watches the metric stream for abrupt changes with an EWMA
//! mean/deviation test. Stage two raises the alarm when the link is
//! saturated, nearly every arriving packet is dropped and the buffer is full.
//! By default only stage two gates the alarm; abrupt changes are recorded
//! alongside it.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::MetricsWindow;
use crate::time::SimTime;
use crate::traffic::AttackSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Served load at or above which the link counts as saturated.
    pub util_threshold: f64,
    /// Drops must reach this fraction of arrivals in the window.
    pub drop_arrival_ratio_threshold: f64,
    /// Also require the buffer to have been full during the window.
    pub require_buffer_full: bool,
    pub ewma_alpha: f64,
    /// Deviation multiplier of the abrupt-change test.
    pub ewma_k: f64,
    /// Windows the rule must hold in a row before the alarm is raised.
    pub consecutive_windows: u32,
    /// Add the abrupt-change test to the alarm conjunction.
    pub ewma_gating: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            util_threshold: 0.85,
            drop_arrival_ratio_threshold: 0.9,
            require_buffer_full: true,
            ewma_alpha: 0.3,
            ewma_k: 3.0,
            consecutive_windows: 1,
            ewma_gating: false,
        }
    }
}

impl DetectorConfig {
    pub(crate) fn check_into(&self, report: &mut dyn FnMut(&'static str, String)) {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.util_threshold) {
            report(
                "util_threshold",
                format!("must lie in [0, 1], got {}", self.util_threshold),
            );
        }
        if !unit(self.drop_arrival_ratio_threshold) {
            report(
                "drop_arrival_ratio_threshold",
                format!(
                    "must lie in [0, 1], got {}",
                    self.drop_arrival_ratio_threshold
                ),
            );
        }
        if !(self.ewma_alpha > 0.0 && self.ewma_alpha <= 1.0) {
            report(
                "ewma_alpha",
                format!("must lie in (0, 1], got {}", self.ewma_alpha),
            );
        }
        if !(self.ewma_k > 0.0 && self.ewma_k.is_finite()) {
            report("ewma_k", format!("must be positive, got {}", self.ewma_k));
        }
        if self.consecutive_windows == 0 {
            report("consecutive_windows", "must be >= 1".to_string());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    HighUtilization,
    DropsEqualArrivals,
    BufferOverflow,
    AbruptChange,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::HighUtilization => "HighUtilization",
            Condition::DropsEqualArrivals => "DropsEqualArrivals",
            Condition::BufferOverflow => "BufferOverflow",
            Condition::AbruptChange => "AbruptChange",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "HighUtilization" => Ok(Condition::HighUtilization),
            "DropsEqualArrivals" => Ok(Condition::DropsEqualArrivals),
            "BufferOverflow" => Ok(Condition::BufferOverflow),
            "AbruptChange" => Ok(Condition::AbruptChange),
            other => Err(format!("unknown condition `{other}`")),
        }
    }
}

/// Detector output for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmSignal {
    pub window_start: SimTime,
    pub window_end: SimTime,
    /// 0 or 1.
    pub value: u8,
    pub fired_conditions: BTreeSet<Condition>,
}

impl AlarmSignal {
    pub fn is_alarm(&self) -> bool {
        self.value == 1
    }
}

/// Exponentially weighted mean and absolute deviation of one metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EwmaState {
    pub mean: f64,
    pub dev: f64,
    /// Lower bound on the deviation used by the change test.
    pub floor: f64,
    primed: bool,
}

impl EwmaState {
    pub fn new(floor: f64) -> Self {
        EwmaState {
            mean: 0.0,
            dev: 0.0,
            floor,
            primed: false,
        }
    }

    /// Folds in `x` and reports whether it deviates from the running mean by
    /// more than `k * max(dev, floor)`. The first observation only seeds the
    /// mean.
    pub fn update(&mut self, x: f64, alpha: f64, k: f64) -> bool {
        if !self.primed {
            self.mean = x;
            self.dev = 0.0;
            self.primed = true;
            return false;
        }
        let residual = (x - self.mean).abs();
        let abrupt = residual > k * self.dev.max(self.floor);
        self.mean = alpha * x + (1.0 - alpha) * self.mean;
        self.dev = alpha * residual + (1.0 - alpha) * self.dev;
        abrupt
    }
}

/// Change statistics over the three traffic-volume metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EwmaSet {
    pub drops: EwmaState,
    pub arrivals: EwmaState,
    pub utilization: EwmaState,
}

impl Default for EwmaSet {
    fn default() -> Self {
        EwmaSet {
            drops: EwmaState::new(1.0),
            arrivals: EwmaState::new(1.0),
            utilization: EwmaState::new(0.01),
        }
    }
}

impl EwmaSet {
    fn update(&mut self, w: &MetricsWindow, alpha: f64, k: f64) -> bool {
        let d = self.drops.update(w.p_drops as f64, alpha, k);
        let a = self.arrivals.update(w.p_arrivals as f64, alpha, k);
        let u = self.utilization.update(w.bandwidth_utilization, alpha, k);
        d || a || u
    }
}

/// Streaming detector over consecutive windows of one scenario.
#[derive(Debug, Clone)]
pub struct Detector {
    cfg: DetectorConfig,
    buffer_capacity: Option<u64>,
    ewma: EwmaSet,
    streak: u32,
}

impl Detector {
    pub fn new(cfg: DetectorConfig, buffer_capacity: Option<u32>) -> Self {
        Detector {
            cfg,
            buffer_capacity: buffer_capacity.map(u64::from),
            ewma: EwmaSet::default(),
            streak: 0,
        }
    }

    pub fn decide(&mut self, window: &MetricsWindow) -> AlarmSignal {
        let cfg = &self.cfg;
        let mut fired = BTreeSet::new();
        if window.bandwidth_utilization >= cfg.util_threshold {
            fired.insert(Condition::HighUtilization);
        }
        if window.p_arrivals > 0
            && window.p_drops as f64 >= cfg.drop_arrival_ratio_threshold * window.p_arrivals as f64
        {
            fired.insert(Condition::DropsEqualArrivals);
        }
        if self
            .buffer_capacity
            .is_some_and(|k| window.max_buffer_occupancy >= k)
        {
            fired.insert(Condition::BufferOverflow);
        }
        if self.ewma.update(window, cfg.ewma_alpha, cfg.ewma_k) {
            fired.insert(Condition::AbruptChange);
        }

        let holds = fired.contains(&Condition::HighUtilization)
            && fired.contains(&Condition::DropsEqualArrivals)
            && (!cfg.require_buffer_full || fired.contains(&Condition::BufferOverflow))
            && (!cfg.ewma_gating || fired.contains(&Condition::AbruptChange));
        self.streak = if holds { self.streak + 1 } else { 0 };

        AlarmSignal {
            window_start: window.window_start,
            window_end: window.window_end,
            value: u8::from(self.streak >= cfg.consecutive_windows.max(1)),
            fired_conditions: fired,
        }
    }
}

/// One alarm value per window, in order.
pub fn signal_series(
    windows: &[MetricsWindow],
    cfg: &DetectorConfig,
    buffer_capacity: Option<u32>,
) -> Vec<AlarmSignal> {
    let mut detector = Detector::new(cfg.clone(), buffer_capacity);
    windows.iter().map(|w| detector.decide(w)).collect()
}

/// Maximal runs of consecutive alarm windows as `(first_start, last_end)`.
pub fn alarm_runs(signals: &[AlarmSignal]) -> Vec<(SimTime, SimTime)> {
    let mut runs = Vec::new();
    let mut current: Option<(SimTime, SimTime)> = None;
    for s in signals {
        match (s.is_alarm(), current.as_mut()) {
            (true, Some(run)) => run.1 = s.window_end,
            (true, None) => current = Some((s.window_start, s.window_end)),
            (false, Some(_)) => runs.extend(current.take()),
            (false, None) => {}
        }
    }
    runs.extend(current);
    runs
}

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("signals end at {signals} but ground truth covers {truth}")]
    HorizonMismatch { signals: SimTime, truth: SimTime },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: u64,
    pub false_positive: u64,
    pub true_negative: u64,
    pub false_negative: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.true_positive + self.false_positive + self.true_negative + self.false_negative
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloodDetection {
    pub flood_index: usize,
    pub dport: u16,
    pub start_s: f64,
    pub end_s: f64,
    pub detected: bool,
    /// Windows from the first window touching the flood to the first alarm.
    pub latency_windows: Option<u64>,
    pub latency_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub windows: u64,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// False positives over truly benign windows.
    pub false_alarm_rate: Option<f64>,
    pub confusion: Confusion,
    pub alarm_windows: u64,
    pub floods: Vec<FloodDetection>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Scores the alarm series window by window. A window is an attack window
/// when it overlaps a flood interval for a positive length of time.
pub fn classification_report(
    signals: &[AlarmSignal],
    truth: &AttackSchedule,
    horizon: SimTime,
) -> Result<ClassificationReport, ReportError> {
    let covered = signals.last().map_or(SimTime::ZERO, |s| s.window_end);
    if covered != horizon {
        return Err(ReportError::HorizonMismatch {
            signals: covered,
            truth: horizon,
        });
    }
    let intervals = truth.intervals();
    let mut c = Confusion::default();
    for s in signals {
        let attack = intervals
            .iter()
            .any(|&(a, b)| s.window_start < b && a < s.window_end);
        match (attack, s.is_alarm()) {
            (true, true) => c.true_positive += 1,
            (true, false) => c.false_negative += 1,
            (false, true) => c.false_positive += 1,
            (false, false) => c.true_negative += 1,
        }
    }
    let floods = truth
        .floods
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let (a, b) = (f.start(), f.end());
            let touching: Vec<(usize, &AlarmSignal)> = signals
                .iter()
                .enumerate()
                .filter(|(_, s)| s.window_start < b && a < s.window_end)
                .collect();
            let onset = touching.first().map(|(idx, _)| *idx);
            let first_alarm = touching.iter().find(|(_, s)| s.is_alarm());
            FloodDetection {
                flood_index: i + 1,
                dport: f.flow.dport,
                start_s: f.start_s,
                end_s: f.end_s,
                detected: first_alarm.is_some(),
                latency_windows: first_alarm
                    .zip(onset)
                    .map(|((idx, _), onset)| (idx - onset) as u64),
                latency_s: first_alarm.map(|(_, s)| s.window_end.saturating_sub(a).as_secs()),
            }
        })
        .collect();
    Ok(ClassificationReport {
        windows: signals.len() as u64,
        accuracy: ratio(c.true_positive + c.true_negative, c.total()).unwrap_or(1.0),
        precision: ratio(c.true_positive, c.true_positive + c.false_positive),
        recall: ratio(c.true_positive, c.true_positive + c.false_negative),
        false_alarm_rate: ratio(c.false_positive, c.false_positive + c.true_negative),
        confusion: c,
        alarm_windows: c.true_positive + c.false_positive,
        floods,
    })
}
