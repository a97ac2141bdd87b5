//! Windowed performance parameters computed from the packet event stream.
//!
//! [`MetricsAccumulator`] is a single-pass fold: it can sit directly behind
//! the engine as a [`TraceSink`] or be replayed over a stored trace with
//! [`series`]. Queue occupancy is reconstructed from the events themselves,
//! so the fold needs nothing from the engine beyond the ordered stream.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::FlowKey;
use crate::scenario::{ScenarioConfig, ServiceModel};
use crate::sim::{transmission_time, EventTrace, PacketEvent, PacketEventKind, TraceSink};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("event at {event} arrived after {last}: trace is not time-ordered")]
    OutOfOrder { event: SimTime, last: SimTime },
    #[error("event at {0} lies beyond the horizon")]
    BeyondHorizon(SimTime),
    #[error("window width must be positive")]
    InvalidWindow,
}

/// Feature vector of one time window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsWindow {
    pub window_start: SimTime,
    pub window_end: SimTime,
    pub p_arrivals: u64,
    pub p_departures: u64,
    pub p_drops: u64,
    /// Bytes put on the link during the window. A transmission that straddles
    /// a boundary is split in proportion to the time spent in each window.
    pub bytes_transmitted: u64,
    /// Served load in [0, 1].
    pub bandwidth_utilization: f64,
    pub flow_count: u64,
    pub avg_packet_size: f64,
    /// Largest number of packets waiting in the buffer at any settled instant.
    pub max_buffer_occupancy: u64,
    /// Time-averaged number of packets waiting in the buffer.
    pub mean_queue_length: f64,
    /// Mean buffer wait (service start minus arrival) of packets departing in the window.
    pub mean_wait: f64,
}

impl MetricsWindow {
    pub fn width(&self) -> SimDuration {
        self.window_end - self.window_start
    }

    /// Whether the window overlaps `[start, end)` for a positive length of time.
    pub fn overlaps(&self, start: SimTime, end: SimTime) -> bool {
        self.window_start < end && start < self.window_end
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsConfig {
    pub window: SimDuration,
    pub horizon: SimTime,
    pub link_capacity: f64,
    pub service: ServiceModel,
}

impl MetricsConfig {
    pub fn for_scenario(scenario: &ScenarioConfig) -> Self {
        MetricsConfig {
            window: scenario.window(),
            horizon: scenario.horizon(),
            link_capacity: scenario.link_capacity,
            service: scenario.service,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Transmission {
    id: u64,
    started: SimTime,
    size: u32,
    /// Known up front only when the link serves at a fixed byte rate.
    duration: Option<SimDuration>,
    credited: u64,
    wait: SimDuration,
}

#[derive(Debug, Default)]
struct OpenCounters {
    arrivals: u64,
    departures: u64,
    drops: u64,
    bytes_tx: u64,
    bytes_arrived: u64,
    flows: HashSet<FlowKey>,
    max_buffer: u64,
    queue_integral: u128,
    busy_ns: u64,
    wait_sum_ns: u128,
    wait_count: u64,
}

/// Streaming window builder.
#[derive(Debug)]
pub struct MetricsAccumulator {
    cfg: MetricsConfig,
    windows: Vec<MetricsWindow>,
    start: SimTime,
    end: SimTime,
    open: OpenCounters,
    last_time: SimTime,
    in_system: u64,
    transmitting: Option<Transmission>,
    arrived_at: HashMap<u64, SimTime>,
    error: Option<MetricsError>,
}

impl MetricsAccumulator {
    pub fn new(cfg: MetricsConfig) -> Result<Self, MetricsError> {
        if cfg.window == SimDuration::ZERO {
            return Err(MetricsError::InvalidWindow);
        }
        Ok(MetricsAccumulator {
            cfg,
            windows: Vec::new(),
            start: SimTime::ZERO,
            end: SimTime::ZERO + cfg.window,
            open: OpenCounters::default(),
            last_time: SimTime::ZERO,
            in_system: 0,
            transmitting: None,
            arrived_at: HashMap::new(),
            error: None,
        })
    }

    pub fn windows(&self) -> &[MetricsWindow] {
        &self.windows
    }

    fn buffer_len(&self) -> u64 {
        self.in_system - u64::from(self.transmitting.is_some())
    }

    /// End of the open window, clipped to the horizon while inside it.
    fn current_end(&self) -> SimTime {
        if self.start < self.cfg.horizon {
            self.end.min(self.cfg.horizon)
        } else {
            self.end
        }
    }

    /// Advances the clock to `t`, closing every window that ends at or before it.
    fn advance(&mut self, t: SimTime) {
        if t > self.last_time {
            // The state at `last_time` is settled once time moves on.
            self.open.max_buffer = self.open.max_buffer.max(self.buffer_len());
        }
        while t >= self.current_end() {
            self.end = self.current_end();
            self.integrate_to(self.end);
            let window = self.finish_window();
            self.windows.push(window);
        }
        self.integrate_to(t);
    }

    fn integrate_to(&mut self, t: SimTime) {
        if t <= self.last_time {
            return;
        }
        let dt = (t - self.last_time).as_nanos();
        self.open.queue_integral += u128::from(self.buffer_len()) * u128::from(dt);
        if self.transmitting.is_some() {
            self.open.busy_ns += dt;
        }
        self.last_time = t;
    }

    fn finish_window(&mut self) -> MetricsWindow {
        let (start, end) = (self.start, self.end);
        let width_ns = (end - start).as_nanos();
        if let Some(tx) = self.transmitting.as_mut() {
            if let Some(duration) = tx.duration {
                let elapsed = (end - tx.started).as_nanos().min(duration.as_nanos());
                let due = (u128::from(tx.size) * u128::from(elapsed)
                    / u128::from(duration.as_nanos().max(1))) as u64;
                if due > tx.credited {
                    self.open.bytes_tx += due - tx.credited;
                    tx.credited = due;
                }
            }
        }
        let buffer_now = self.buffer_len();
        let c = std::mem::take(&mut self.open);
        let width_s = width_ns as f64 / 1e9;
        let utilization = match self.cfg.service {
            ServiceModel::Deterministic => c.bytes_tx as f64 / (self.cfg.link_capacity * width_s),
            ServiceModel::Markovian { .. } => c.busy_ns as f64 / width_ns as f64,
        };
        let window = MetricsWindow {
            window_start: start,
            window_end: end,
            p_arrivals: c.arrivals,
            p_departures: c.departures,
            p_drops: c.drops,
            bytes_transmitted: c.bytes_tx,
            bandwidth_utilization: utilization.clamp(0.0, 1.0),
            flow_count: c.flows.len() as u64,
            avg_packet_size: if c.arrivals > 0 {
                c.bytes_arrived as f64 / c.arrivals as f64
            } else {
                0.0
            },
            max_buffer_occupancy: c.max_buffer.max(buffer_now),
            mean_queue_length: c.queue_integral as f64 / width_ns as f64,
            mean_wait: if c.wait_count > 0 {
                c.wait_sum_ns as f64 / c.wait_count as f64 / 1e9
            } else {
                0.0
            },
        };
        self.start = end;
        self.end = end + self.cfg.window;
        // Every new window starts with the occupancy carried over.
        self.open.max_buffer = buffer_now;
        window
    }

    /// Folds one event into the open window.
    pub fn ingest(&mut self, event: &PacketEvent) -> Result<(), MetricsError> {
        if event.time < self.last_time {
            return Err(MetricsError::OutOfOrder {
                event: event.time,
                last: self.last_time,
            });
        }
        if event.time >= self.cfg.horizon {
            return Err(MetricsError::BeyondHorizon(event.time));
        }
        self.advance(event.time);
        match event.kind {
            PacketEventKind::Arrival => {
                self.open.arrivals += 1;
                self.open.bytes_arrived += u64::from(event.size);
                self.open.flows.insert(event.flow);
                self.in_system += 1;
                self.arrived_at.insert(event.packet_id, event.time);
            }
            PacketEventKind::ServiceStart => {
                let arrived = self
                    .arrived_at
                    .remove(&event.packet_id)
                    .unwrap_or(event.time);
                let duration = match self.cfg.service {
                    ServiceModel::Deterministic => {
                        Some(transmission_time(event.size, self.cfg.link_capacity))
                    }
                    ServiceModel::Markovian { .. } => None,
                };
                self.transmitting = Some(Transmission {
                    id: event.packet_id,
                    started: event.time,
                    size: event.size,
                    duration,
                    credited: 0,
                    wait: event.time.saturating_sub(arrived),
                });
            }
            PacketEventKind::Departure => {
                self.open.departures += 1;
                self.in_system = self.in_system.saturating_sub(1);
                match self.transmitting.take() {
                    Some(tx) if tx.id == event.packet_id => {
                        self.open.bytes_tx += u64::from(tx.size).saturating_sub(tx.credited);
                        self.open.wait_sum_ns += u128::from(tx.wait.as_nanos());
                        self.open.wait_count += 1;
                    }
                    other => {
                        // Departure without a matching service start: count the bytes whole.
                        self.transmitting = other;
                        self.open.bytes_tx += u64::from(event.size);
                    }
                }
            }
            PacketEventKind::Drop => {
                self.open.drops += 1;
                self.in_system = self.in_system.saturating_sub(1);
                self.arrived_at.remove(&event.packet_id);
            }
        }
        Ok(())
    }

    /// Closes the open window at its scheduled end and returns it.
    pub fn close_window(&mut self) -> MetricsWindow {
        self.advance(self.current_end());
        self.windows
            .last()
            .cloned()
            .expect("advance closed a window")
    }

    /// Closes all windows up to the horizon and returns the series.
    pub fn finish(mut self) -> Result<Vec<MetricsWindow>, MetricsError> {
        if let Some(err) = self.error.take() {
            return Err(err);
        }
        while self.start < self.cfg.horizon {
            self.advance(self.current_end());
        }
        Ok(self.windows)
    }
}

impl TraceSink for MetricsAccumulator {
    fn record(&mut self, event: &PacketEvent) {
        if self.error.is_none() {
            if let Err(e) = self.ingest(event) {
                self.error = Some(e);
            }
        }
    }
}

/// Windows of `cfg.window` covering `[0, horizon)`; the last one is shorter
/// when the width does not divide the horizon.
pub fn series(trace: &EventTrace, cfg: MetricsConfig) -> Result<Vec<MetricsWindow>, MetricsError> {
    let cfg = MetricsConfig {
        horizon: trace.horizon,
        ..cfg
    };
    let mut acc = MetricsAccumulator::new(cfg)?;
    for event in &trace.events {
        acc.ingest(event)?;
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Protocol;

    const CAP: f64 = 1000.0;

    fn cfg(window_s: f64, horizon_s: f64) -> MetricsConfig {
        MetricsConfig {
            window: SimDuration::from_secs(window_s),
            horizon: SimTime::from_secs(horizon_s),
            link_capacity: CAP,
            service: ServiceModel::Deterministic,
        }
    }

    fn ev(t: f64, kind: PacketEventKind, id: u64, size: u32) -> PacketEvent {
        PacketEvent {
            time: SimTime::from_secs(t),
            kind,
            packet_id: id,
            flow: FlowKey::new(id as u32 % 3, 1, 9, 80, Protocol::Udp),
            size,
        }
    }

    use PacketEventKind::*;

    #[test]
    fn empty_window_is_all_zero() {
        let mut acc = MetricsAccumulator::new(cfg(1.0, 10.0)).unwrap();
        let w = acc.close_window();
        assert_eq!(
            (w.p_arrivals, w.p_departures, w.p_drops, w.bytes_transmitted),
            (0, 0, 0, 0)
        );
        assert_eq!(w.bandwidth_utilization, 0.0);
        assert_eq!(w.avg_packet_size, 0.0);
        assert_eq!(w.window_end, SimTime::from_secs(1.0));
    }

    #[test]
    fn counters_follow_event_kinds() {
        let mut acc = MetricsAccumulator::new(cfg(0.5, 10.0)).unwrap();
        acc.ingest(&ev(0.1, Arrival, 1, 512)).unwrap();
        acc.ingest(&ev(0.1, ServiceStart, 1, 512)).unwrap();
        acc.ingest(&ev(0.2, Arrival, 2, 100)).unwrap();
        acc.ingest(&ev(0.3, Arrival, 3, 100)).unwrap();
        acc.ingest(&ev(0.3, Drop, 3, 100)).unwrap();
        let w = acc.close_window();
        assert_eq!(w.p_arrivals, 3);
        assert_eq!(w.p_drops, 1);
        assert_eq!(w.p_departures, 0);
        assert!((w.avg_packet_size - 712.0 / 3.0).abs() < 1e-12);
        assert_eq!(w.flow_count, 3);
        // Packet 1 has been on the wire for 0.4 s of its 0.512 s at close.
        assert_eq!(w.bytes_transmitted, 400);
        assert_eq!(w.max_buffer_occupancy, 1);
    }

    #[test]
    fn departure_adds_transmitted_bytes() {
        let mut acc = MetricsAccumulator::new(cfg(10.0, 10.0)).unwrap();
        acc.ingest(&ev(1.0, Arrival, 1, 512)).unwrap();
        acc.ingest(&ev(1.0, ServiceStart, 1, 512)).unwrap();
        acc.ingest(&ev(1.512, Departure, 1, 512)).unwrap();
        let w = acc.close_window();
        assert_eq!(w.p_departures, 1);
        assert_eq!(w.bytes_transmitted, 512);
    }

    #[test]
    fn straddling_transmission_is_split_by_time() {
        let mut acc = MetricsAccumulator::new(cfg(1.0, 2.0)).unwrap();
        acc.ingest(&ev(0.5, Arrival, 1, 1000)).unwrap();
        acc.ingest(&ev(0.5, ServiceStart, 1, 1000)).unwrap();
        acc.ingest(&ev(1.5, Departure, 1, 1000)).unwrap();
        let ws = acc.finish().unwrap();
        assert_eq!(ws.len(), 2);
        assert_eq!(ws[0].bytes_transmitted, 500);
        assert_eq!(ws[1].bytes_transmitted, 500);
        assert!((ws[0].bandwidth_utilization - 0.5).abs() < 1e-12);
    }

    #[test]
    fn continuous_transmission_saturates_at_one() {
        // Back-to-back 100 B packets on a 1000 B/s link for a full second.
        let mut acc = MetricsAccumulator::new(cfg(1.0, 1.0)).unwrap();
        let mut t = 0.0;
        for id in 0..10 {
            acc.ingest(&ev(t, Arrival, id, 100)).unwrap();
            if id > 0 {
                acc.ingest(&ev(t, Departure, id - 1, 100)).unwrap();
            }
            acc.ingest(&ev(t, ServiceStart, id, 100)).unwrap();
            t += 0.1;
        }
        let ws = acc.finish().unwrap();
        let u = ws[0].bandwidth_utilization;
        assert!(u <= 1.0 && u > 1.0 - 1e-6, "utilization {u}");
    }

    #[test]
    fn out_of_order_event_is_rejected() {
        let mut acc = MetricsAccumulator::new(cfg(1.0, 10.0)).unwrap();
        acc.ingest(&ev(2.0, Arrival, 1, 10)).unwrap();
        assert!(matches!(
            acc.ingest(&ev(1.0, Arrival, 2, 10)),
            Err(MetricsError::OutOfOrder { .. })
        ));
    }

    #[test]
    fn zero_width_is_rejected() {
        assert_eq!(
            MetricsAccumulator::new(cfg(0.0, 1.0)).unwrap_err(),
            MetricsError::InvalidWindow
        );
    }

    #[test]
    fn partial_last_window() {
        let trace = EventTrace::new(SimTime::from_secs(2.5));
        let ws = series(&trace, cfg(1.0, 2.5)).unwrap();
        assert_eq!(ws.len(), 3);
        assert_eq!(ws[2].width(), SimDuration::from_secs(0.5));
        assert_eq!(ws[2].window_end, SimTime::from_secs(2.5));
    }

    #[test]
    fn drop_transient_does_not_inflate_max_occupancy() {
        // K = 1: second arrival waits, third is dropped at the same instant.
        let mut acc = MetricsAccumulator::new(cfg(1.0, 1.0)).unwrap();
        acc.ingest(&ev(0.0, Arrival, 1, 100)).unwrap();
        acc.ingest(&ev(0.0, ServiceStart, 1, 100)).unwrap();
        acc.ingest(&ev(0.0, Arrival, 2, 100)).unwrap();
        acc.ingest(&ev(0.0, Arrival, 3, 100)).unwrap();
        acc.ingest(&ev(0.0, Drop, 3, 100)).unwrap();
        let ws = acc.finish().unwrap();
        assert_eq!(ws[0].max_buffer_occupancy, 1);
    }

    #[test]
    fn mean_wait_and_queue_length() {
        let mut acc = MetricsAccumulator::new(cfg(1.0, 1.0)).unwrap();
        // p1 served 0.0-0.1; p2 arrives 0.0, waits 0.1, served 0.1-0.2.
        acc.ingest(&ev(0.0, Arrival, 1, 100)).unwrap();
        acc.ingest(&ev(0.0, ServiceStart, 1, 100)).unwrap();
        acc.ingest(&ev(0.0, Arrival, 2, 100)).unwrap();
        acc.ingest(&ev(0.1, Departure, 1, 100)).unwrap();
        acc.ingest(&ev(0.1, ServiceStart, 2, 100)).unwrap();
        acc.ingest(&ev(0.2, Departure, 2, 100)).unwrap();
        let ws = acc.finish().unwrap();
        assert!((ws[0].mean_wait - 0.05).abs() < 1e-12);
        assert!((ws[0].mean_queue_length - 0.1).abs() < 1e-12);
    }
}
