//! Queueing oracles and trace-level estimators.
//!
//! Capacity convention: a buffer of `K` waiting slots plus the server gives
//! a system capacity of `S = K + 1` packets. [`mm1k_blocking`] takes `K`, the
//! same number the simulator is configured with.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::FlowKey;
use crate::scenario::ScenarioConfig;
use crate::sim::{EventTrace, PacketEvent, PacketEventKind, TraceSink};
use crate::time::SimTime;
use crate::traffic::SourceKind;

/// Denominator guard for relative residuals.
pub const RESIDUAL_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("unstable system: lambda = {lambda} >= mu = {mu} has no steady state with an unbounded buffer")]
    Unstable { lambda: f64, mu: f64 },
    #[error("invalid parameter `{name}` = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("trace integrity: {0}")]
    Integrity(String),
}

/// Closed-form means of a stable M/M/1 queue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mm1Metrics {
    pub rho: f64,
    /// Mean number in system.
    pub n: f64,
    /// Mean sojourn time.
    pub w: f64,
    /// Mean number waiting.
    pub nq: f64,
    /// Mean waiting time before service.
    pub wq: f64,
}

pub fn mm1_mean_metrics(lambda: f64, mu: f64) -> Result<Mm1Metrics, AnalyticsError> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(AnalyticsError::InvalidParameter {
            name: "lambda",
            value: lambda,
        });
    }
    if !mu.is_finite() || mu <= 0.0 {
        return Err(AnalyticsError::InvalidParameter {
            name: "mu",
            value: mu,
        });
    }
    if lambda >= mu {
        return Err(AnalyticsError::Unstable { lambda, mu });
    }
    let rho = lambda / mu;
    Ok(Mm1Metrics {
        rho,
        n: rho / (1.0 - rho),
        w: 1.0 / (mu - lambda),
        nq: rho * rho / (1.0 - rho),
        wq: rho / (mu - lambda),
    })
}

/// Steady-state probability that an arrival finds an M/M/1/K system full.
///
/// `buffer_slots` is `K`; the system holds `S = K + 1` packets and
/// `P_block = (1 - rho) rho^S / (1 - rho^(S+1))`, or `1 / (S + 1)` at `rho = 1`.
pub fn mm1k_blocking(lambda: f64, mu: f64, buffer_slots: u32) -> Result<f64, AnalyticsError> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(AnalyticsError::InvalidParameter {
            name: "lambda",
            value: lambda,
        });
    }
    if !mu.is_finite() || mu <= 0.0 {
        return Err(AnalyticsError::InvalidParameter {
            name: "mu",
            value: mu,
        });
    }
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let s = f64::from(buffer_slots) + 1.0;
    let rho = lambda / mu;
    if rho == 1.0 {
        return Ok(1.0 / (s + 1.0));
    }
    // Work with r = min(rho, 1/rho) < 1 so powers never overflow:
    // rho < 1: P = (1 - r) r^S / (1 - r^(S+1))
    // rho > 1: P = (1 - r) / (1 - r^(S+1))
    let (r, scale) = if rho < 1.0 {
        (rho, (s * rho.ln()).exp())
    } else {
        (1.0 / rho, 1.0)
    };
    let ln_r = r.ln();
    let one_minus_r = -ln_r.exp_m1();
    let one_minus_r_pow = -((s + 1.0) * ln_r).exp_m1();
    Ok(one_minus_r * scale / one_minus_r_pow)
}

/// Little's-law quantities measured on a trace.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LittleReport {
    /// Admitted arrivals per second; dropped packets are excluded.
    pub lambda_measured: f64,
    /// Offered arrivals per second, drops included.
    pub lambda_offered: f64,
    pub n_measured: f64,
    pub w_measured: f64,
    pub nq_measured: f64,
    pub wq_measured: f64,
    pub residual_n: f64,
    pub residual_nq: f64,
}

#[derive(Debug, Clone, Copy)]
struct Lifecycle {
    arrived: SimTime,
    started: bool,
}

/// Streaming form of [`little_law_check`].
#[derive(Debug, Default)]
pub struct LittleAccumulator {
    last_time: SimTime,
    in_system: u64,
    busy: u64,
    n_integral: u128,
    nq_integral: u128,
    live: HashMap<u64, Lifecycle>,
    arrivals: u64,
    drops: u64,
    departed: u64,
    sojourn_ns: u128,
    started: u64,
    wait_ns: u128,
    error: Option<AnalyticsError>,
}

impl LittleAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    fn integrate_to(&mut self, t: SimTime) {
        if t > self.last_time {
            let dt = u128::from((t - self.last_time).as_nanos());
            self.n_integral += u128::from(self.in_system) * dt;
            self.nq_integral += u128::from(self.in_system - self.busy) * dt;
            self.last_time = t;
        }
    }

    pub fn ingest(&mut self, e: &PacketEvent) -> Result<(), AnalyticsError> {
        if e.time < self.last_time {
            return Err(AnalyticsError::Integrity(format!(
                "event at {} precedes {}",
                e.time, self.last_time
            )));
        }
        self.integrate_to(e.time);
        let id = e.packet_id;
        let missing = || AnalyticsError::Integrity(format!("{} for unknown packet {id}", e.kind));
        match e.kind {
            PacketEventKind::Arrival => {
                if self.live.contains_key(&id) {
                    return Err(AnalyticsError::Integrity(format!(
                        "packet {id} arrived twice"
                    )));
                }
                self.live.insert(
                    id,
                    Lifecycle {
                        arrived: e.time,
                        started: false,
                    },
                );
                self.arrivals += 1;
                self.in_system += 1;
            }
            PacketEventKind::ServiceStart => {
                let life = self.live.get_mut(&id).ok_or_else(missing)?;
                if life.started {
                    return Err(AnalyticsError::Integrity(format!(
                        "packet {id} served twice"
                    )));
                }
                life.started = true;
                self.started += 1;
                self.wait_ns += u128::from((e.time - life.arrived).as_nanos());
                self.busy += 1;
            }
            PacketEventKind::Departure => {
                let life = self.live.remove(&id).ok_or_else(missing)?;
                if !life.started {
                    return Err(AnalyticsError::Integrity(format!(
                        "packet {id} departed without service"
                    )));
                }
                self.departed += 1;
                self.sojourn_ns += u128::from((e.time - life.arrived).as_nanos());
                self.in_system -= 1;
                self.busy -= 1;
            }
            PacketEventKind::Drop => {
                let life = self.live.remove(&id).ok_or_else(missing)?;
                if life.started {
                    return Err(AnalyticsError::Integrity(format!(
                        "packet {id} dropped after entering service"
                    )));
                }
                self.drops += 1;
                self.in_system -= 1;
            }
        }
        Ok(())
    }

    pub fn finish(mut self, horizon: SimTime) -> Result<LittleReport, AnalyticsError> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.integrate_to(horizon);
        let t = horizon.as_secs();
        if t <= 0.0 {
            return Ok(LittleReport::default());
        }
        let mean_ns = |sum: u128, n: u64| {
            if n > 0 {
                sum as f64 / n as f64 / 1e9
            } else {
                0.0
            }
        };
        let lambda = (self.arrivals - self.drops) as f64 / t;
        let n = self.n_integral as f64 / 1e9 / t;
        let nq = self.nq_integral as f64 / 1e9 / t;
        let w = mean_ns(self.sojourn_ns, self.departed);
        let wq = mean_ns(self.wait_ns, self.started);
        Ok(LittleReport {
            lambda_measured: lambda,
            lambda_offered: self.arrivals as f64 / t,
            n_measured: n,
            w_measured: w,
            nq_measured: nq,
            wq_measured: wq,
            residual_n: (n - lambda * w).abs() / n.max(RESIDUAL_EPSILON),
            residual_nq: (nq - lambda * wq).abs() / nq.max(RESIDUAL_EPSILON),
        })
    }
}

impl TraceSink for LittleAccumulator {
    fn record(&mut self, event: &PacketEvent) {
        if self.error.is_none() {
            if let Err(e) = self.ingest(event) {
                self.error = Some(e);
            }
        }
    }
}

/// Measures `N`, `W`, `Nq`, `Wq` and the admitted arrival rate on a trace and
/// reports how far `N = lambda W` and `Nq = lambda Wq` are from holding.
pub fn little_law_check(trace: &EventTrace) -> Result<LittleReport, AnalyticsError> {
    let mut acc = LittleAccumulator::new();
    for e in &trace.events {
        acc.ingest(e)?;
    }
    acc.finish(trace.horizon)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrafficClass {
    #[serde(rename = "CBR")]
    Cbr,
    #[serde(rename = "FTP")]
    Ftp,
}

impl fmt::Display for TrafficClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrafficClass::Cbr => "CBR",
            TrafficClass::Ftp => "FTP",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub class: TrafficClass,
    /// 1-based flood number; 0 aggregates all time outside the floods.
    pub flood_index: usize,
    pub arrivals: u64,
    pub drops: u64,
    pub loss_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTable {
    pub rows: Vec<LossRow>,
    pub notes: Vec<String>,
}

impl LossTable {
    pub fn get(&self, class: TrafficClass, flood_index: usize) -> Option<&LossRow> {
        self.rows
            .iter()
            .find(|r| r.class == class && r.flood_index == flood_index)
    }

    /// Pooled loss of `class` over all flood intervals.
    pub fn flood_loss_percent(&self, class: TrafficClass) -> Option<f64> {
        let (a, d) = self
            .rows
            .iter()
            .filter(|r| r.class == class && r.flood_index > 0)
            .fold((0, 0), |(a, d), r| (a + r.arrivals, d + r.drops));
        (a > 0).then(|| d as f64 / a as f64 * 100.0)
    }
}

/// Per-class arrival and drop counts inside each flood interval.
#[derive(Debug)]
pub struct LossAccumulator {
    classes: HashMap<FlowKey, TrafficClass>,
    intervals: Vec<(SimTime, SimTime)>,
    /// `[interval slot][class]` with slot 0 = outside every flood.
    counts: Vec<[(u64, u64); 2]>,
    pending: HashMap<u64, (usize, usize)>,
}

fn class_slot(c: TrafficClass) -> usize {
    match c {
        TrafficClass::Cbr => 0,
        TrafficClass::Ftp => 1,
    }
}

impl LossAccumulator {
    pub fn for_scenario(scenario: &ScenarioConfig) -> Self {
        let classes = scenario
            .sources
            .iter()
            .filter_map(|s| match s.kind() {
                SourceKind::Cbr => Some((s.flow, TrafficClass::Cbr)),
                SourceKind::Ftp => Some((s.flow, TrafficClass::Ftp)),
                _ => None,
            })
            .collect();
        let intervals = scenario.attack.intervals();
        LossAccumulator {
            classes,
            counts: vec![[(0, 0); 2]; intervals.len() + 1],
            intervals,
            pending: HashMap::new(),
        }
    }

    fn slot(&self, t: SimTime) -> usize {
        self.intervals
            .iter()
            .position(|&(a, b)| a <= t && t < b)
            .map_or(0, |i| i + 1)
    }

    pub fn finish(self) -> LossTable {
        let mut table = LossTable::default();
        for (slot, per_class) in self.counts.iter().enumerate() {
            for class in [TrafficClass::Cbr, TrafficClass::Ftp] {
                let (arrivals, drops) = per_class[class_slot(class)];
                if arrivals == 0 {
                    let place = if slot == 0 {
                        "outside the floods".to_string()
                    } else {
                        format!("during flood {slot}")
                    };
                    table.notes.push(format!("no {class} arrivals {place}"));
                    continue;
                }
                table.rows.push(LossRow {
                    class,
                    flood_index: slot,
                    arrivals,
                    drops,
                    loss_percent: drops as f64 / arrivals as f64 * 100.0,
                });
            }
        }
        table
    }
}

impl TraceSink for LossAccumulator {
    fn record(&mut self, e: &PacketEvent) {
        match e.kind {
            PacketEventKind::Arrival => {
                if let Some(&class) = self.classes.get(&e.flow) {
                    let slot = self.slot(e.time);
                    self.counts[slot][class_slot(class)].0 += 1;
                    self.pending.insert(e.packet_id, (slot, class_slot(class)));
                }
            }
            PacketEventKind::Drop => {
                if let Some((slot, c)) = self.pending.remove(&e.packet_id) {
                    self.counts[slot][c].1 += 1;
                }
            }
            PacketEventKind::ServiceStart => {
                self.pending.remove(&e.packet_id);
            }
            PacketEventKind::Departure => {}
        }
    }
}

/// Loss percentage per traffic class and flood interval, attributed by
/// arrival time.
pub fn loss_by_class(trace: &EventTrace, scenario: &ScenarioConfig) -> LossTable {
    let mut acc = LossAccumulator::for_scenario(scenario);
    trace.replay(&mut acc);
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Protocol;

    #[test]
    fn no_load_means_pure_service() {
        let m = mm1_mean_metrics(0.0, 10.0).unwrap();
        assert_eq!(m.n, 0.0);
        assert!((m.w - 0.1).abs() < 1e-15);
    }

    #[test]
    fn half_load_closed_forms() {
        let m = mm1_mean_metrics(5.0, 10.0).unwrap();
        assert_eq!(m.n, 1.0);
        assert_eq!(m.w, 0.2);
        assert_eq!(m.n, 5.0 * m.w);
        assert_eq!(m.nq, 0.5);
        assert_eq!(m.nq, 5.0 * m.wq);
    }

    #[test]
    fn unstable_queue_is_rejected() {
        assert_eq!(
            mm1_mean_metrics(10.0, 10.0),
            Err(AnalyticsError::Unstable {
                lambda: 10.0,
                mu: 10.0
            })
        );
        assert!(mm1_mean_metrics(12.0, 10.0).is_err());
    }

    #[test]
    fn blocking_edge_values() {
        assert_eq!(mm1k_blocking(0.0, 10.0, 20).unwrap(), 0.0);
        // rho = 1, S = 4: five equiprobable states.
        assert!((mm1k_blocking(7.0, 7.0, 3).unwrap() - 0.2).abs() < 1e-15);
        assert!(mm1k_blocking(-1.0, 10.0, 3).is_err());
        assert!(mm1k_blocking(1.0, 0.0, 3).is_err());
    }

    /// Direct summation of the truncated geometric state distribution.
    fn blocking_by_summation(lambda: f64, mu: f64, s: u32) -> f64 {
        let rho = lambda / mu;
        let weights: Vec<f64> = (0..=s).map(|n| rho.powi(n as i32)).collect();
        weights[s as usize] / weights.iter().sum::<f64>()
    }

    #[test]
    fn blocking_matches_direct_summation() {
        // Frozen from exact rational summation: lambda=9, mu=10, S=21.
        let frozen = 0.012137127958069876;
        assert!((mm1k_blocking(9.0, 10.0, 20).unwrap() - frozen).abs() < 1e-15);
        for &(l, m, k) in &[
            (9.0, 10.0, 20),
            (20.0, 10.0, 2),
            (3.0, 10.0, 0),
            (15.0, 10.0, 49),
        ] {
            let closed = mm1k_blocking(l, m, k).unwrap();
            let summed = blocking_by_summation(l, m, k + 1);
            assert!(
                (closed - summed).abs() < 1e-12,
                "{l} {m} {k}: {closed} vs {summed}"
            );
        }
    }

    #[test]
    fn blocking_is_continuous_at_unit_load() {
        let s = 21u32;
        let at_one = 1.0 / f64::from(s + 1);
        for rho in [1.0 - 1e-6, 1.0 + 1e-6] {
            let p = mm1k_blocking(rho * 10.0, 10.0, s - 1).unwrap();
            assert!((p - at_one).abs() < 1e-4, "rho {rho}: {p}");
        }
    }

    #[test]
    fn huge_overload_does_not_overflow() {
        let p = mm1k_blocking(1e6, 1.0, 1000).unwrap();
        assert!((p - (1.0 - 1e-6)).abs() < 1e-9);
    }

    fn e(t: f64, kind: PacketEventKind, id: u64) -> PacketEvent {
        PacketEvent {
            time: SimTime::from_secs(t),
            kind,
            packet_id: id,
            flow: FlowKey::new(1, 1, 2, 2, Protocol::Udp),
            size: 100,
        }
    }

    #[test]
    fn empty_trace_is_all_zero() {
        let r = little_law_check(&EventTrace::new(SimTime::from_secs(10.0))).unwrap();
        assert_eq!(r.n_measured, 0.0);
        assert_eq!(r.residual_n, 0.0);
        assert_eq!(r.residual_nq, 0.0);
        let r = little_law_check(&EventTrace::default()).unwrap();
        assert_eq!(r, LittleReport::default());
    }

    #[test]
    fn deterministic_d_d_1_trace() {
        // Arrivals every 1 s, 0.5 s service, 100 packets over 100 s:
        // lambda = 1, W = 0.5, N = 50 packet-seconds / 100 s = 0.5.
        let mut trace = EventTrace::new(SimTime::from_secs(100.0));
        for i in 0..100u64 {
            let t = i as f64;
            trace.events.push(e(t, PacketEventKind::Arrival, i));
            trace.events.push(e(t, PacketEventKind::ServiceStart, i));
            trace.events.push(e(t + 0.5, PacketEventKind::Departure, i));
        }
        let r = little_law_check(&trace).unwrap();
        assert!((r.lambda_measured - 1.0).abs() < 1e-12);
        assert!((r.w_measured - 0.5).abs() < 1e-12);
        assert!((r.n_measured - 0.5).abs() < 1e-12);
        assert!(r.residual_n < 1e-9);
        assert_eq!(r.nq_measured, 0.0);
        assert_eq!(r.residual_nq, 0.0);
    }

    #[test]
    fn dropped_packets_do_not_count_in_lambda() {
        let mut trace = EventTrace::new(SimTime::from_secs(10.0));
        trace.events.push(e(0.0, PacketEventKind::Arrival, 0));
        trace.events.push(e(0.0, PacketEventKind::ServiceStart, 0));
        trace.events.push(e(0.0, PacketEventKind::Arrival, 1));
        trace.events.push(e(0.0, PacketEventKind::Drop, 1));
        trace.events.push(e(1.0, PacketEventKind::Departure, 0));
        let r = little_law_check(&trace).unwrap();
        assert!((r.lambda_measured - 0.1).abs() < 1e-12);
        assert!((r.lambda_offered - 0.2).abs() < 1e-12);
    }

    #[test]
    fn unmatched_lifecycle_is_an_integrity_error() {
        let mut trace = EventTrace::new(SimTime::from_secs(10.0));
        trace.events.push(e(1.0, PacketEventKind::Departure, 7));
        assert!(matches!(
            little_law_check(&trace),
            Err(AnalyticsError::Integrity(_))
        ));

        let mut trace = EventTrace::new(SimTime::from_secs(10.0));
        trace.events.push(e(0.0, PacketEventKind::Arrival, 1));
        trace.events.push(e(1.0, PacketEventKind::Departure, 1));
        assert!(matches!(
            little_law_check(&trace),
            Err(AnalyticsError::Integrity(_))
        ));
    }
}
