//! Arrival processes for legitimate sources and UDP flood attacks.
//!
//! Legitimate traffic is a mix of constant-bit-rate UDP, Poisson background
//! UDP and window-limited FTP over TCP. Floods are compound Poisson: burst
//! epochs arrive as a Poisson process and each epoch emits `burst_size`
//! back-to-back packets, so `rate_pps` is the mean packet rate.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::detector::DetectorConfig;
use crate::flow::{FlowKey, Protocol};
use crate::scenario::{ScenarioConfig, ServiceModel, SCHEMA_VERSION};
use crate::sim::{sample_exponential, stream_rng, PacketEventKind, SimRng};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    PoissonBackground,
    Cbr,
    Ftp,
    Flood,
}

/// Per-kind parameters of a source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrafficModel {
    PoissonBackground {
        rate_pps: f64,
    },
    Cbr {
        rate_pps: f64,
    },
    /// Bulk transfer limited by an AIMD window. Acknowledgements reach the
    /// sender `ack_delay_s` after a departure; a drop is noticed
    /// `loss_detect_s` after it happens.
    Ftp {
        initial_window: u32,
        max_window: u32,
        ack_delay_s: f64,
        loss_detect_s: f64,
    },
    Flood {
        rate_pps: f64,
        #[serde(default = "default_burst")]
        burst_size: u32,
    },
}

fn default_burst() -> u32 {
    1
}

impl TrafficModel {
    pub fn kind(&self) -> SourceKind {
        match self {
            TrafficModel::PoissonBackground { .. } => SourceKind::PoissonBackground,
            TrafficModel::Cbr { .. } => SourceKind::Cbr,
            TrafficModel::Ftp { .. } => SourceKind::Ftp,
            TrafficModel::Flood { .. } => SourceKind::Flood,
        }
    }

    /// Mean offered packet rate, or `None` for window-driven sources.
    pub fn rate_pps(&self) -> Option<f64> {
        match *self {
            TrafficModel::PoissonBackground { rate_pps }
            | TrafficModel::Cbr { rate_pps }
            | TrafficModel::Flood { rate_pps, .. } => Some(rate_pps),
            TrafficModel::Ftp { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub flow: FlowKey,
    pub packet_size: u32,
    pub start_s: f64,
    pub end_s: f64,
    pub traffic: TrafficModel,
}

impl SourceSpec {
    pub fn kind(&self) -> SourceKind {
        self.traffic.kind()
    }

    pub fn start(&self) -> SimTime {
        SimTime::from_secs(self.start_s)
    }

    pub fn end(&self) -> SimTime {
        SimTime::from_secs(self.end_s)
    }

    /// Whether `t` lies in the half-open active interval `[start, end)`.
    pub fn is_active_at(&self, t: SimTime) -> bool {
        self.start() <= t && t < self.end()
    }
}

/// Flood sources launched against the server.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSchedule {
    pub floods: Vec<SourceSpec>,
}

impl AttackSchedule {
    pub fn intervals(&self) -> Vec<(SimTime, SimTime)> {
        self.floods.iter().map(|f| (f.start(), f.end())).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.floods.is_empty()
    }

    /// Sets every flood to the same mean packet rate.
    pub fn set_rate(&mut self, rate: f64) {
        for flood in &mut self.floods {
            if let TrafficModel::Flood { rate_pps, .. } = &mut flood.traffic {
                *rate_pps = rate;
            }
        }
    }
}

/// Next arrival instant of a timer-driven source (CBR, Poisson, flood),
/// given the previous arrival at `now`.
///
/// A source that has not started yet returns its first arrival (CBR fires
/// exactly at `start`; Poisson processes draw their first gap from `start`).
/// Returns `None` once the next instant would fall at or after `end`, and
/// always for FTP, whose sends are driven by [`FtpWindow`].
pub fn next_arrival(spec: &SourceSpec, now: SimTime, rng: &mut SimRng) -> Option<SimTime> {
    let start = spec.start();
    let next = match spec.traffic {
        TrafficModel::Cbr { rate_pps } => {
            if now < start {
                start
            } else {
                now + cbr_interval(rate_pps)
            }
        }
        TrafficModel::PoissonBackground { rate_pps } => now.max(start) + exp_gap(rate_pps, rng)?,
        TrafficModel::Flood {
            rate_pps,
            burst_size,
        } => now.max(start) + exp_gap(rate_pps / f64::from(burst_size.max(1)), rng)?,
        TrafficModel::Ftp { .. } => return None,
    };
    (next < spec.end()).then_some(next)
}

/// First arrival of a timer-driven source: CBR fires exactly at `start`,
/// Poisson processes draw their first gap from `start`.
pub fn first_arrival(spec: &SourceSpec, rng: &mut SimRng) -> Option<SimTime> {
    let start = spec.start();
    let first = match spec.traffic {
        TrafficModel::Cbr { .. } => start,
        TrafficModel::Ftp { .. } => return None,
        _ => return next_arrival(spec, start, rng),
    };
    (first < spec.end()).then_some(first)
}

/// Spacing between CBR packets, fixed for the whole flow.
pub fn cbr_interval(rate_pps: f64) -> SimDuration {
    SimDuration::from_secs(1.0 / rate_pps)
}

fn exp_gap(rate: f64, rng: &mut SimRng) -> Option<SimDuration> {
    sample_exponential(rate, rng)
        .ok()
        .map(SimDuration::from_secs)
}

/// AIMD congestion window of one FTP flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FtpWindow {
    window: f64,
    max_window: f64,
    unacked: u32,
}

impl FtpWindow {
    pub fn new(initial_window: u32, max_window: u32) -> Self {
        let max_window = f64::from(max_window.max(1));
        FtpWindow {
            window: f64::from(initial_window.max(1)).min(max_window),
            max_window,
            unacked: 0,
        }
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn unacked(&self) -> u32 {
        self.unacked
    }

    /// A new packet may be sent while fewer than `floor(window)` are unacknowledged.
    pub fn can_send(&self) -> bool {
        f64::from(self.unacked) < self.window.floor()
    }

    pub fn on_send(&mut self) {
        self.unacked += 1;
    }

    /// Applies the transport feedback for one of the flow's packets:
    /// a departure acknowledges it and grows the window by `1/window`
    /// (capped), a drop halves the window (floor 1). Other kinds are ignored.
    pub fn ack_feedback(&mut self, outcome: PacketEventKind) {
        match outcome {
            PacketEventKind::Departure => {
                self.unacked = self.unacked.saturating_sub(1);
                self.window = (self.window + 1.0 / self.window).min(self.max_window);
            }
            PacketEventKind::Drop => {
                self.unacked = self.unacked.saturating_sub(1);
                self.window = (self.window / 2.0).max(1.0);
            }
            PacketEventKind::Arrival | PacketEventKind::ServiceStart => {}
        }
    }
}

/// Runtime state of every source in a scenario.
#[derive(Debug)]
pub struct TrafficSources {
    sources: Vec<SourceRuntime>,
    by_flow: HashMap<FlowKey, usize>,
}

#[derive(Debug)]
pub struct SourceRuntime {
    pub spec: SourceSpec,
    pub rng: SimRng,
    pub ftp: Option<FtpWindow>,
}

impl TrafficSources {
    /// Builds runtimes for the legitimate sources followed by the floods.
    /// Source `i` draws from random stream `i + 1` of `seed`; stream 0
    /// belongs to the server.
    pub fn new(seed: u64, sources: &[SourceSpec], attack: &AttackSchedule) -> Self {
        let mut by_flow = HashMap::new();
        let runtimes = sources
            .iter()
            .chain(attack.floods.iter())
            .enumerate()
            .map(|(i, spec)| {
                by_flow.entry(spec.flow).or_insert(i);
                let ftp = match spec.traffic {
                    TrafficModel::Ftp {
                        initial_window,
                        max_window,
                        ..
                    } => Some(FtpWindow::new(initial_window, max_window)),
                    _ => None,
                };
                SourceRuntime {
                    spec: spec.clone(),
                    rng: stream_rng(seed, i as u64 + 1),
                    ftp,
                }
            })
            .collect();
        TrafficSources {
            sources: runtimes,
            by_flow,
        }
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn get(&self, idx: usize) -> &SourceRuntime {
        &self.sources[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut SourceRuntime {
        &mut self.sources[idx]
    }

    pub fn source_of(&self, flow: &FlowKey) -> Option<usize> {
        self.by_flow.get(flow).copied()
    }

    /// Feeds a departure or drop back to the FTP flow it belongs to.
    /// Packets of non-FTP flows are ignored.
    pub fn ack_feedback(&mut self, flow: &FlowKey, outcome: PacketEventKind) {
        if let Some(idx) = self.source_of(flow) {
            if let Some(window) = self.sources[idx].ftp.as_mut() {
                window.ack_feedback(outcome);
            }
        }
    }
}

/// Node that every source targets.
pub const SERVER_NODE: u32 = 1;

/// Ports of the three scheduled floods.
pub const FLOOD_PORTS: [u16; 3] = [21, 5060, 1580];

/// Calibrated mean flood rate of the default scenario (packets/second).
/// Produced by `calibrate` with a 36% CBR-loss target.
pub const DEFAULT_FLOOD_RATE_PPS: f64 = 12_500.0;

/// Mixed CBR/UDP, Poisson/UDP and FTP/TCP clients sharing one server, with
/// three sequential UDP floods aimed at ports 21, 5060 and 1580.
pub fn build_default_scenario() -> ScenarioConfig {
    let horizon = 120.0;
    let legit = |traffic: TrafficModel, flow: FlowKey| SourceSpec {
        flow,
        packet_size: 512,
        start_s: 0.0,
        end_s: horizon,
        traffic,
    };

    // CBR phases are interleaved so the three flows never arrive together.
    let mut sources = Vec::new();
    for i in 0..3u32 {
        sources.push(SourceSpec {
            start_s: f64::from(i) / 120.0,
            ..legit(
                TrafficModel::Cbr { rate_pps: 40.0 },
                FlowKey::new(10 + i, 4000 + i as u16, SERVER_NODE, 9000, Protocol::Udp),
            )
        });
    }
    sources.push(legit(
        TrafficModel::PoissonBackground { rate_pps: 20.0 },
        FlowKey::new(20, 5353, SERVER_NODE, 53, Protocol::Udp),
    ));
    for i in 0..4u32 {
        sources.push(legit(
            TrafficModel::Ftp {
                initial_window: 1,
                max_window: 4,
                ack_delay_s: 0.1,
                loss_detect_s: 0.2,
            },
            FlowKey::new(30 + i, 20000 + i as u16, SERVER_NODE, 21, Protocol::Tcp),
        ));
    }

    let floods = [(20.0, 30.0), (50.0, 60.0), (80.0, 90.0)]
        .iter()
        .zip(FLOOD_PORTS)
        .enumerate()
        .map(|(i, (&(start_s, end_s), dport))| SourceSpec {
            flow: FlowKey::new(100 + i as u32, 31337, SERVER_NODE, dport, Protocol::Udp),
            packet_size: 1024,
            start_s,
            end_s,
            traffic: TrafficModel::Flood {
                rate_pps: DEFAULT_FLOOD_RATE_PPS,
                burst_size: 50,
            },
        })
        .collect();

    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        seed: 2011,
        horizon_s: horizon,
        link_capacity: 250_000.0,
        service: ServiceModel::Deterministic,
        buffer_packets: Some(50),
        sources,
        attack: AttackSchedule { floods },
        window_s: 1.0,
        detector: DetectorConfig::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(traffic: TrafficModel, start_s: f64, end_s: f64) -> SourceSpec {
        SourceSpec {
            flow: FlowKey::new(1, 1, 2, 2, Protocol::Udp),
            packet_size: 512,
            start_s,
            end_s,
            traffic,
        }
    }

    #[test]
    fn cbr_spacing_is_exact() {
        let s = spec(TrafficModel::Cbr { rate_pps: 100.0 }, 0.0, 10.0);
        let mut rng = stream_rng(1, 1);
        let next = next_arrival(&s, SimTime::from_secs(1.0), &mut rng).unwrap();
        assert_eq!(next, SimTime::from_secs(1.010));
    }

    #[test]
    fn cbr_before_start_fires_at_start() {
        let s = spec(TrafficModel::Cbr { rate_pps: 10.0 }, 2.5, 10.0);
        let mut rng = stream_rng(1, 1);
        assert_eq!(
            next_arrival(&s, SimTime::ZERO, &mut rng),
            Some(SimTime::from_secs(2.5))
        );
    }

    #[test]
    fn past_end_is_absent() {
        let mut rng = stream_rng(1, 1);
        let cbr = spec(TrafficModel::Cbr { rate_pps: 100.0 }, 0.0, 1.0);
        assert_eq!(
            next_arrival(&cbr, SimTime::from_secs(0.995), &mut rng),
            None
        );
        let flood = spec(
            TrafficModel::Flood {
                rate_pps: 1e4,
                burst_size: 1,
            },
            0.0,
            1.0,
        );
        assert_eq!(
            next_arrival(&flood, SimTime::from_secs(1.5), &mut rng),
            None
        );
        let ftp = spec(
            TrafficModel::Ftp {
                initial_window: 1,
                max_window: 4,
                ack_delay_s: 0.1,
                loss_detect_s: 0.2,
            },
            0.0,
            1.0,
        );
        assert_eq!(next_arrival(&ftp, SimTime::ZERO, &mut rng), None);
    }

    #[test]
    fn flood_count_matches_poisson_statistics() {
        // 10^4 pkt/s over [10, 20) s: count ~ Poisson(10^5), sigma ~ 316.
        let s = spec(
            TrafficModel::Flood {
                rate_pps: 1e4,
                burst_size: 1,
            },
            10.0,
            20.0,
        );
        let mut rng = stream_rng(5, 9);
        let mut t = SimTime::ZERO;
        let mut count = 0u64;
        while let Some(next) = next_arrival(&s, t, &mut rng) {
            assert!(s.is_active_at(next));
            count += 1;
            t = next;
        }
        let expected = 1e5;
        assert!(
            (count as f64 - expected).abs() < 3.0 * expected.sqrt(),
            "count {count}"
        );
    }

    #[test]
    fn window_halves_on_drop_with_floor() {
        let mut w = FtpWindow::new(8, 16);
        w.ack_feedback(PacketEventKind::Drop);
        assert_eq!(w.window(), 4.0);
        let mut w = FtpWindow::new(1, 16);
        w.ack_feedback(PacketEventKind::Drop);
        assert_eq!(w.window(), 1.0);
    }

    #[test]
    fn window_grows_toward_cap_without_drops() {
        // Step-through oracle of w <- min(w + 1/w, cap).
        let mut w = FtpWindow::new(1, 6);
        let mut expected = 1.0_f64;
        for _ in 0..200 {
            w.on_send();
            w.ack_feedback(PacketEventKind::Departure);
            expected = (expected + 1.0 / expected).min(6.0);
            assert_eq!(w.window(), expected);
        }
        assert_eq!(w.window(), 6.0);
        assert_eq!(w.unacked(), 0);
    }

    #[test]
    fn can_send_respects_unacked_count() {
        let mut w = FtpWindow::new(2, 4);
        assert!(w.can_send());
        w.on_send();
        w.on_send();
        assert!(!w.can_send());
        w.ack_feedback(PacketEventKind::ServiceStart);
        assert!(!w.can_send());
        w.ack_feedback(PacketEventKind::Departure);
        assert!(w.can_send());
    }

    #[test]
    fn feedback_for_non_ftp_flow_is_ignored() {
        let cbr = spec(TrafficModel::Cbr { rate_pps: 1.0 }, 0.0, 1.0);
        let mut sources =
            TrafficSources::new(1, std::slice::from_ref(&cbr), &AttackSchedule::default());
        sources.ack_feedback(&cbr.flow, PacketEventKind::Drop);
        assert!(sources.get(0).ftp.is_none());
    }

    #[test]
    fn default_scenario_shape() {
        let s = build_default_scenario();
        let mut ports: Vec<u16> = s.attack.floods.iter().map(|f| f.flow.dport).collect();
        ports.sort_unstable();
        assert_eq!(ports, vec![21, 1580, 5060]);
        assert!(s
            .attack
            .floods
            .iter()
            .all(|f| f.flow.proto == Protocol::Udp && f.kind() == SourceKind::Flood));
        assert!(s
            .sources
            .iter()
            .any(|x| x.kind() == SourceKind::Cbr && x.flow.proto == Protocol::Udp));
        assert!(s
            .sources
            .iter()
            .any(|x| x.kind() == SourceKind::Ftp && x.flow.proto == Protocol::Tcp));
        let mut iv = s.attack.intervals();
        iv.sort();
        assert!(iv.windows(2).all(|w| w[0].1 <= w[1].0), "floods overlap");
        s.validate().unwrap();
    }
}
