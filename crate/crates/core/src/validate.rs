//! Self-checks of the simulator against closed-form queueing results, plus
//! the structural properties every trace must satisfy.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::analytics::{mm1_mean_metrics, mm1k_blocking, LittleAccumulator};
use crate::detector::{signal_series, DetectorConfig, EwmaState};
use crate::flow::{FlowKey, Protocol};
use crate::metrics::MetricsWindow;
use crate::scenario::{ScenarioConfig, ServiceModel, SCHEMA_VERSION};
use crate::sim::{
    run_into_with, EventTrace, FaultInjection, NullSink, PacketEventKind, RunSummary,
};
use crate::traffic::{cbr_interval, AttackSchedule, SourceSpec, TrafficModel};
use crate::Error;

/// Relative tolerance of the Little's-law and M/M/1 mean checks.
pub const MEAN_TOLERANCE: f64 = 0.05;
/// Absolute tolerance of the blocking-probability checks.
pub const BLOCKING_TOLERANCE: f64 = 0.02;

/// A single Poisson source feeding an exponential server.
pub fn mm1_scenario(
    lambda: f64,
    mu: f64,
    buffer_packets: Option<u32>,
    horizon_s: f64,
    seed: u64,
) -> ScenarioConfig {
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        seed,
        horizon_s,
        link_capacity: 1e6,
        service: ServiceModel::Markovian { mu },
        buffer_packets,
        sources: vec![SourceSpec {
            flow: FlowKey::new(2, 1000, 1, 80, Protocol::Udp),
            packet_size: 1000,
            start_s: 0.0,
            end_s: horizon_s,
            traffic: TrafficModel::PoissonBackground { rate_pps: lambda },
        }],
        attack: AttackSchedule::default(),
        window_s: 1.0,
        detector: DetectorConfig::default(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn within(name: &str, observed: f64, expected: f64, tolerance: f64, relative: bool) -> Self {
        let err = if relative {
            (observed - expected).abs() / expected.abs()
        } else {
            (observed - expected).abs()
        };
        let kind = if relative { "relative" } else { "absolute" };
        CheckResult {
            name: name.to_string(),
            passed: err <= tolerance,
            detail: format!(
                "observed {observed:.6}, expected {expected:.6}, {kind} error {err:.5} (tolerance {tolerance})"
            ),
        }
    }

    fn property(name: &str, outcome: Result<String, String>) -> Self {
        let passed = outcome.is_ok();
        CheckResult {
            name: name.to_string(),
            passed,
            detail: outcome.unwrap_or_else(|e| e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationConfig {
    /// Arrival and service rates of the infinite-buffer M/M/1 run.
    pub lambda: f64,
    pub mu: f64,
    pub horizon_s: f64,
    /// `(lambda, mu, K)` points of the finite-buffer blocking checks.
    pub blocking_points: Vec<(f64, f64, u32)>,
    pub blocking_min_arrivals: u64,
    /// Scenario whose trace feeds the property checks.
    pub property_scenario: ScenarioConfig,
    pub seed: u64,
    pub fault: FaultInjection,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        let mut property_scenario = crate::traffic::build_default_scenario();
        property_scenario.horizon_s = 40.0;
        ValidationConfig {
            lambda: 5.0,
            mu: 10.0,
            horizon_s: 1e4,
            blocking_points: vec![(9.0, 10.0, 20), (10.0, 10.0, 1)],
            blocking_min_arrivals: 1_000_000,
            property_scenario,
            seed: 7,
            fault: FaultInjection::None,
        }
    }
}

/// Runs every oracle and property check. Errors only when the configuration
/// itself is unusable, such as an unstable infinite-buffer queue.
pub fn validate(cfg: &ValidationConfig) -> Result<ValidationReport, Error> {
    let oracle = mm1_mean_metrics(cfg.lambda, cfg.mu)?;
    let mut report = ValidationReport::default();

    let scenario = mm1_scenario(cfg.lambda, cfg.mu, None, cfg.horizon_s, cfg.seed);
    let mut little = LittleAccumulator::new();
    run_into_with(&scenario, &mut little, cfg.fault)?;
    let little = little.finish(scenario.horizon())?;
    report.checks.push(CheckResult {
        name: "little_law".into(),
        passed: little.residual_n <= MEAN_TOLERANCE && little.residual_nq <= MEAN_TOLERANCE,
        detail: format!(
            "residual_N {:.5}, residual_Nq {:.5} (tolerance {MEAN_TOLERANCE})",
            little.residual_n, little.residual_nq
        ),
    });
    report.checks.push(CheckResult::within(
        "mm1_mean_n",
        little.n_measured,
        oracle.n,
        MEAN_TOLERANCE,
        true,
    ));
    report.checks.push(CheckResult::within(
        "mm1_mean_w",
        little.w_measured,
        oracle.w,
        MEAN_TOLERANCE,
        true,
    ));

    for &(lambda, mu, k) in &cfg.blocking_points {
        let expected = mm1k_blocking(lambda, mu, k)?;
        let summary = blocking_run(
            lambda,
            mu,
            k,
            cfg.blocking_min_arrivals,
            cfg.seed,
            cfg.fault,
        )?;
        let name = format!("mm1k_blocking(lambda={lambda}, mu={mu}, S={})", k + 1);
        let mut check = CheckResult::within(
            &name,
            summary.drops as f64 / summary.arrivals as f64,
            expected,
            BLOCKING_TOLERANCE,
            false,
        );
        if summary.arrivals < cfg.blocking_min_arrivals {
            check.passed = false;
            check.detail += &format!("; only {} arrivals", summary.arrivals);
        }
        report.checks.push(check);
    }

    let scenario = cfg.property_scenario.with_seed(cfg.seed);
    let mut trace = EventTrace::new(scenario.horizon());
    let summary = run_into_with(&scenario, &mut trace, cfg.fault)?;
    let k = scenario.buffer_packets;
    report.checks.push(CheckResult::property(
        "conservation",
        check_conservation(&trace, &summary),
    ));
    report
        .checks
        .push(CheckResult::property("fcfs", check_fcfs(&trace)));
    report.checks.push(CheckResult::property(
        "buffer_bound",
        check_buffer_bound(&trace, k),
    ));
    report.checks.push(CheckResult::property(
        "cbr_spacing",
        check_cbr_spacing(&trace, &scenario),
    ));
    let windows = crate::metrics::series(
        &trace,
        crate::metrics::MetricsConfig::for_scenario(&scenario),
    )?;
    report.checks.push(CheckResult::property(
        "threshold_monotonicity",
        check_threshold_monotonicity(&windows, &scenario.detector, k),
    ));
    report.checks.push(CheckResult::property(
        "ewma_constant_silence",
        check_ewma_silence(&scenario.detector),
    ));
    Ok(report)
}

/// Simulates M/M/1/K long enough for at least `min_arrivals` expected arrivals.
pub fn blocking_run(
    lambda: f64,
    mu: f64,
    k: u32,
    min_arrivals: u64,
    seed: u64,
    fault: FaultInjection,
) -> Result<RunSummary, Error> {
    // Five standard deviations of headroom over the Poisson count.
    let n = min_arrivals as f64;
    let horizon_s = (n + 5.0 * n.sqrt() + 10.0) / lambda;
    let scenario = mm1_scenario(lambda, mu, Some(k), horizon_s, seed);
    Ok(run_into_with(&scenario, &mut NullSink, fault)?)
}

/// Every arrival ends as a departure, a drop or a packet still in the system,
/// and the engine's own counters agree with the trace.
pub fn check_conservation(trace: &EventTrace, summary: &RunSummary) -> Result<String, String> {
    let arrivals = trace.count(PacketEventKind::Arrival) as u64;
    let departures = trace.count(PacketEventKind::Departure) as u64;
    let drops = trace.count(PacketEventKind::Drop) as u64;
    let open = arrivals
        .checked_sub(departures + drops)
        .ok_or("more terminal events than arrivals")?;
    if (arrivals, departures, drops) != (summary.arrivals, summary.departures, summary.drops) {
        return Err(format!(
            "trace counts {arrivals}/{departures}/{drops} disagree with engine {summary:?}"
        ));
    }
    if open != summary.in_system {
        return Err(format!(
            "{open} packets unaccounted for, engine reports {} in system",
            summary.in_system
        ));
    }
    Ok(format!("{arrivals} = {departures} + {drops} + {open}"))
}

/// Served packets depart in arrival order.
pub fn check_fcfs(trace: &EventTrace) -> Result<String, String> {
    let dropped: HashSet<u64> = trace
        .events
        .iter()
        .filter(|e| e.kind == PacketEventKind::Drop)
        .map(|e| e.packet_id)
        .collect();
    let mut admitted: VecDeque<u64> = trace
        .events
        .iter()
        .filter(|e| e.kind == PacketEventKind::Arrival && !dropped.contains(&e.packet_id))
        .map(|e| e.packet_id)
        .collect();
    let mut served = 0u64;
    for e in trace
        .events
        .iter()
        .filter(|e| e.kind == PacketEventKind::Departure)
    {
        match admitted.pop_front() {
            Some(id) if id == e.packet_id => served += 1,
            other => {
                return Err(format!(
                    "packet {} departed at {} while {:?} was ahead of it",
                    e.packet_id, e.time, other
                ))
            }
        }
    }
    Ok(format!("{served} departures in arrival order"))
}

/// The waiting line never holds more than `k` packets. An arrival followed
/// at once by its own drop or service start never occupied a slot.
pub fn check_buffer_bound(trace: &EventTrace, k: Option<u32>) -> Result<String, String> {
    let Some(k) = k else {
        return Ok("unbounded buffer".into());
    };
    let mut waiting: i64 = 0;
    let mut peak = 0;
    let events = &trace.events;
    for (i, e) in events.iter().enumerate() {
        match e.kind {
            PacketEventKind::Arrival => {
                let transient = events.get(i + 1).is_some_and(|n| {
                    n.packet_id == e.packet_id
                        && matches!(
                            n.kind,
                            PacketEventKind::Drop | PacketEventKind::ServiceStart
                        )
                });
                waiting += 1;
                if transient {
                    continue;
                }
            }
            PacketEventKind::Drop | PacketEventKind::ServiceStart => waiting -= 1,
            PacketEventKind::Departure => {}
        }
        peak = peak.max(waiting);
        if waiting < 0 || waiting > i64::from(k) {
            return Err(format!(
                "{waiting} packets waiting at {} with K = {k}",
                e.time
            ));
        }
    }
    Ok(format!("peak {peak} of {k}"))
}

/// Every CBR flow's arrivals are spaced by exactly its configured interval.
pub fn check_cbr_spacing(trace: &EventTrace, scenario: &ScenarioConfig) -> Result<String, String> {
    let mut last: HashMap<FlowKey, (crate::time::SimDuration, Option<crate::time::SimTime>)> =
        scenario
            .sources
            .iter()
            .filter_map(|s| match s.traffic {
                TrafficModel::Cbr { rate_pps } => Some((s.flow, (cbr_interval(rate_pps), None))),
                _ => None,
            })
            .collect();
    let mut gaps = 0u64;
    for e in trace
        .events
        .iter()
        .filter(|e| e.kind == PacketEventKind::Arrival)
    {
        if let Some((interval, prev)) = last.get_mut(&e.flow) {
            if let Some(p) = *prev {
                if e.time - p != *interval {
                    return Err(format!(
                        "{} arrived {} after its predecessor, expected {}",
                        e.flow,
                        e.time - p,
                        interval
                    ));
                }
                gaps += 1;
            }
            *prev = Some(e.time);
        }
    }
    Ok(format!("{gaps} CBR gaps exact across {} flows", last.len()))
}

/// Raising either threshold never turns a quiet window into an alarm.
pub fn check_threshold_monotonicity(
    windows: &[MetricsWindow],
    cfg: &DetectorConfig,
    k: Option<u32>,
) -> Result<String, String> {
    let grid = [0.0, 0.25, 0.5, 0.8, 0.85, 0.9, 0.95, 1.0];
    let series = |u: f64, r: f64| {
        let c = DetectorConfig {
            util_threshold: u,
            drop_arrival_ratio_threshold: r,
            ..cfg.clone()
        };
        signal_series(windows, &c, k)
    };
    let mut compared = 0u64;
    for (i, &u) in grid.iter().enumerate() {
        for (j, &r) in grid.iter().enumerate() {
            let base = series(u, r);
            for (hu, hr) in [(grid.get(i + 1), Some(&r)), (Some(&u), grid.get(j + 1))] {
                let (Some(&hu), Some(&hr)) = (hu, hr) else {
                    continue;
                };
                let raised = series(hu, hr);
                for (a, b) in base.iter().zip(&raised) {
                    if b.value > a.value {
                        return Err(format!(
                            "window at {} alarms with thresholds ({hu}, {hr}) but not ({u}, {r})",
                            a.window_start
                        ));
                    }
                    compared += 1;
                }
            }
        }
    }
    Ok(format!("{compared} window pairs compared"))
}

/// A constant metric stream never trips the abrupt-change test.
pub fn check_ewma_silence(cfg: &DetectorConfig) -> Result<String, String> {
    for x in [0.0, 1.0, 0.5, 37.0, 12_500.0] {
        let mut state = EwmaState::new(1.0);
        for step in 0..1000 {
            if state.update(x, cfg.ewma_alpha, cfg.ewma_k) {
                return Err(format!(
                    "abrupt change on constant input {x} at step {step}"
                ));
            }
        }
    }
    Ok("1000 constant observations, no abrupt change".into())
}
