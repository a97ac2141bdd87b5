//! End-to-end runs: simulate, window, detect, score.
//!
//! Every stage is a streaming fold, so a run never stores its trace unless
//! asked to. Sweeps and calibration run one independent simulation per seed
//! on the rayon pool.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{LittleAccumulator, LittleReport, LossAccumulator, LossTable, TrafficClass};
use crate::detector::{
    alarm_runs, classification_report, signal_series, AlarmSignal, ClassificationReport, Condition,
};
use crate::metrics::{MetricsAccumulator, MetricsConfig, MetricsWindow};
use crate::scenario::ScenarioConfig;
use crate::sim::{run_into, EventTrace, RunSummary};
use crate::Error;

/// Everything a single run produces.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub windows: Vec<MetricsWindow>,
    pub signals: Vec<AlarmSignal>,
    pub loss: LossTable,
    pub report: RunReport,
    pub trace: Option<EventTrace>,
}

/// The JSON summary written next to the CSV outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub horizon_s: f64,
    pub window_s: f64,
    pub partial_last_window: bool,
    pub totals: RunSummary,
    pub classification: ClassificationReport,
    /// `(start_s, end_s)` of each maximal run of alarm windows.
    pub alarm_runs: Vec<(f64, f64)>,
    /// Windows where the advisory EWMA stage flagged an abrupt change.
    pub abrupt_change_windows: u64,
    pub little: LittleReport,
    pub loss: LossTable,
}

pub fn run_experiment(scenario: &ScenarioConfig, keep_trace: bool) -> Result<Experiment, Error> {
    scenario.validate()?;
    let metrics = MetricsAccumulator::new(MetricsConfig::for_scenario(scenario))?;
    let trace = keep_trace.then(|| EventTrace::new(scenario.horizon()));
    let mut sink = (
        (metrics, LittleAccumulator::new()),
        LossAccumulator::for_scenario(scenario),
        trace,
    );
    let totals = run_into(scenario, &mut sink)?;
    let ((metrics, little), loss, trace) = sink;

    let windows = metrics.finish()?;
    let little = little.finish(scenario.horizon())?;
    let loss = loss.finish();
    let signals = signal_series(&windows, &scenario.detector, scenario.buffer_packets);
    let classification = classification_report(&signals, &scenario.attack, scenario.horizon())?;
    let report = RunReport {
        seed: scenario.seed,
        horizon_s: scenario.horizon_s,
        window_s: scenario.window_s,
        partial_last_window: scenario.has_partial_window(),
        totals,
        classification,
        alarm_runs: alarm_runs(&signals)
            .into_iter()
            .map(|(a, b)| (a.as_secs(), b.as_secs()))
            .collect(),
        abrupt_change_windows: signals
            .iter()
            .filter(|s| s.fired_conditions.contains(&Condition::AbruptChange))
            .count() as u64,
        little,
        loss: loss.clone(),
    };
    Ok(Experiment {
        windows,
        signals,
        loss,
        report,
        trace,
    })
}

/// `n` consecutive seeds starting at `base`.
pub fn seed_sequence(base: u64, n: u32) -> Vec<u64> {
    (0..u64::from(n)).map(|i| base.wrapping_add(i)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub accuracy: f64,
    pub false_alarm_rate: Option<f64>,
    pub alarm_windows: u64,
    pub alarm_runs: usize,
    pub cbr_flood_loss_percent: Option<f64>,
    pub ftp_flood_loss_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub floods: u64,
    pub missed: u64,
    /// Detection latency in windows → number of floods.
    pub histogram_windows: BTreeMap<u64, u64>,
    pub mean_s: Option<f64>,
    pub max_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub seeds: u32,
    pub mean_accuracy: f64,
    pub min_accuracy: f64,
    pub max_accuracy: f64,
    /// False-positive windows over all benign windows, pooled across seeds.
    pub false_alarm_rate: Option<f64>,
    pub false_alarm_windows: u64,
    pub latency: LatencySummary,
    pub runs: Vec<SeedOutcome>,
}

/// Runs the scenario once per seed (`scenario.seed`, `scenario.seed + 1`, ...)
/// in parallel and aggregates the detection scores.
pub fn sweep(scenario: &ScenarioConfig, seeds: u32) -> Result<SweepReport, Error> {
    if seeds == 0 {
        return Err(Error::InvalidArgument(
            "sweep needs at least one seed".into(),
        ));
    }
    let reports: Vec<RunReport> = seed_sequence(scenario.seed, seeds)
        .into_par_iter()
        .map(|seed| run_experiment(&scenario.with_seed(seed), false).map(|e| e.report))
        .collect::<Result<_, _>>()?;

    let accuracies: Vec<f64> = reports.iter().map(|r| r.classification.accuracy).collect();
    let (fp, benign) = reports.iter().fold((0, 0), |(fp, tn), r| {
        let c = r.classification.confusion;
        (
            fp + c.false_positive,
            tn + c.false_positive + c.true_negative,
        )
    });

    let mut latency = LatencySummary {
        floods: 0,
        missed: 0,
        histogram_windows: BTreeMap::new(),
        mean_s: None,
        max_s: None,
    };
    let mut latencies_s = Vec::new();
    for flood in reports.iter().flat_map(|r| &r.classification.floods) {
        latency.floods += 1;
        match (flood.latency_windows, flood.latency_s) {
            (Some(w), Some(s)) => {
                *latency.histogram_windows.entry(w).or_default() += 1;
                latencies_s.push(s);
            }
            _ => latency.missed += 1,
        }
    }
    if !latencies_s.is_empty() {
        latency.mean_s = Some(latencies_s.iter().sum::<f64>() / latencies_s.len() as f64);
        latency.max_s = latencies_s.iter().copied().reduce(f64::max);
    }

    let runs = reports
        .iter()
        .map(|r| SeedOutcome {
            seed: r.seed,
            accuracy: r.classification.accuracy,
            false_alarm_rate: r.classification.false_alarm_rate,
            alarm_windows: r.classification.alarm_windows,
            alarm_runs: r.alarm_runs.len(),
            cbr_flood_loss_percent: r.loss.flood_loss_percent(TrafficClass::Cbr),
            ftp_flood_loss_percent: r.loss.flood_loss_percent(TrafficClass::Ftp),
        })
        .collect();

    Ok(SweepReport {
        seeds,
        mean_accuracy: accuracies.iter().sum::<f64>() / accuracies.len() as f64,
        min_accuracy: accuracies.iter().copied().fold(f64::INFINITY, f64::min),
        max_accuracy: accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        false_alarm_rate: (benign > 0).then(|| fp as f64 / benign as f64),
        false_alarm_windows: fp,
        latency,
        runs,
    })
}

/// CBR loss during floods, pooled over `seeds` runs of `scenario` starting at
/// `scenario.seed`. `None` when no CBR packet arrived inside a flood.
pub fn mean_cbr_flood_loss(scenario: &ScenarioConfig, seeds: u32) -> Result<Option<f64>, Error> {
    let tables: Vec<LossTable> = seed_sequence(scenario.seed, seeds)
        .into_par_iter()
        .map(|seed| run_experiment(&scenario.with_seed(seed), false).map(|e| e.loss))
        .collect::<Result<_, _>>()?;
    let (arrivals, drops) = tables
        .iter()
        .flat_map(|t| &t.rows)
        .filter(|r| r.class == TrafficClass::Cbr && r.flood_index > 0)
        .fold((0u64, 0u64), |(a, d), r| (a + r.arrivals, d + r.drops));
    Ok((arrivals > 0).then(|| drops as f64 / arrivals as f64 * 100.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub min_rate_pps: f64,
    pub max_rate_pps: f64,
    /// Seeds averaged per evaluated rate.
    pub seeds: u32,
    /// Accepted distance from the target, in percentage points.
    pub tolerance_pct: f64,
    /// Bisection stops early once this close to the target.
    pub precision_pct: f64,
    pub max_iterations: u32,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            min_rate_pps: 2_000.0,
            max_rate_pps: 200_000.0,
            seeds: 5,
            tolerance_pct: 3.0,
            precision_pct: 0.5,
            max_iterations: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub target_pct: f64,
    pub rate_pps: f64,
    pub cbr_flood_loss_pct: f64,
    /// Every `(rate, loss)` pair evaluated, in order.
    pub evaluations: Vec<(f64, f64)>,
    pub scenario: ScenarioConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum CalibrationError {
    #[error("calibration target {0}% is outside (0, 100)")]
    InvalidTarget(f64),
    #[error("scenario has no floods to calibrate")]
    NoFloods,
    #[error(
        "target {target_pct}% unreachable: flood rate {low_rate_pps} pps gives {low_loss_pct:.2}% \
         and {high_rate_pps} pps gives {high_loss_pct:.2}% CBR loss"
    )]
    Unreachable {
        target_pct: f64,
        low_rate_pps: f64,
        low_loss_pct: f64,
        high_rate_pps: f64,
        high_loss_pct: f64,
    },
    #[error("no CBR packets arrive during the floods")]
    NoCbrTraffic,
    #[error(transparent)]
    Run(#[from] Error),
}

/// Log-scale bisection on the flood rate until CBR loss during floods is
/// within `precision_pct` of `target_pct` (or the iteration budget runs out
/// with the best point inside `tolerance_pct`).
pub fn calibrate(
    scenario: &ScenarioConfig,
    target_pct: f64,
    opts: &CalibrationOptions,
) -> Result<Calibration, CalibrationError> {
    if !(target_pct > 0.0 && target_pct < 100.0) {
        return Err(CalibrationError::InvalidTarget(target_pct));
    }
    if scenario.attack.is_empty() {
        return Err(CalibrationError::NoFloods);
    }
    let mut evaluations = Vec::new();
    let mut measure = |rate: f64| -> Result<f64, CalibrationError> {
        let mut s = scenario.clone();
        s.attack.set_rate(rate);
        let loss = mean_cbr_flood_loss(&s, opts.seeds)?.ok_or(CalibrationError::NoCbrTraffic)?;
        log::info!("flood rate {rate:.1} pps -> CBR flood loss {loss:.2}%");
        evaluations.push((rate, loss));
        Ok(loss)
    };

    let (mut lo, mut hi) = (opts.min_rate_pps, opts.max_rate_pps);
    let (lo_loss, hi_loss) = (measure(lo)?, measure(hi)?);
    let unreachable = |lo_loss, hi_loss| CalibrationError::Unreachable {
        target_pct,
        low_rate_pps: opts.min_rate_pps,
        low_loss_pct: lo_loss,
        high_rate_pps: opts.max_rate_pps,
        high_loss_pct: hi_loss,
    };
    if lo_loss > target_pct + opts.tolerance_pct || hi_loss < target_pct - opts.tolerance_pct {
        return Err(unreachable(lo_loss, hi_loss));
    }

    let mut best = if (lo_loss - target_pct).abs() <= (hi_loss - target_pct).abs() {
        (lo, lo_loss)
    } else {
        (hi, hi_loss)
    };
    for _ in 0..opts.max_iterations {
        if (best.1 - target_pct).abs() <= opts.precision_pct {
            break;
        }
        let mid = (lo * hi).sqrt();
        let loss = measure(mid)?;
        if (loss - target_pct).abs() < (best.1 - target_pct).abs() {
            best = (mid, loss);
        }
        if loss < target_pct {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (best.1 - target_pct).abs() > opts.tolerance_pct {
        return Err(unreachable(lo_loss, hi_loss));
    }

    let mut calibrated = scenario.clone();
    calibrated.attack.set_rate(best.0);
    Ok(Calibration {
        target_pct,
        rate_pps: best.0,
        cbr_flood_loss_pct: best.1,
        evaluations,
        scenario: calibrated,
    })
}
