//! Discrete-event engine for a single-server, finite-buffer FCFS queue.
//!
//! [`run`] drives every traffic source through one [`QueueState`] and writes
//! the full packet lifecycle (arrival, service start, departure or drop) to a
//! [`TraceSink`]. A run is a pure function of its [`ScenarioConfig`]: the
//! clock is integer nanoseconds, simultaneous events are ordered by
//! `(time, kind priority, sequence number)` and every random stream is a
//! ChaCha8 stream keyed by the scenario seed.

mod engine;
mod events;
mod queue;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::FlowKey;
use crate::scenario::ServiceModel;
use crate::time::{SimDuration, SimTime, NANOS_PER_SEC};

pub use engine::{run, run_into, run_into_with, FaultInjection, RunSummary};
pub use events::{EventPriority, EventQueue};
pub use queue::{Admission, InService, QueueState, QueuedPacket};

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid parameter `{name}` = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("engine invariant violated: {0}")]
    InternalState(&'static str),
}

/// Independent random stream `stream` derived from `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Inverse CDF of Exponential(rate) evaluated at `u` in [0, 1).
pub fn exponential_inverse_cdf(rate: f64, u: f64) -> Result<f64, SimError> {
    if !rate.is_finite() || rate <= 0.0 {
        return Err(SimError::InvalidParameter {
            name: "rate",
            value: rate,
        });
    }
    Ok(-(1.0 - u).ln() / rate)
}

/// Draws an Exponential(rate) duration in seconds by inverse-transform sampling.
pub fn sample_exponential<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<f64, SimError> {
    let u: f64 = rng.random();
    exponential_inverse_cdf(rate, u)
}

/// Where the server's service durations come from.
#[derive(Debug)]
pub struct ServiceClock {
    model: ServiceModel,
    link_capacity: f64,
    rng: SimRng,
}

impl ServiceClock {
    pub fn new(model: ServiceModel, link_capacity: f64, rng: SimRng) -> Self {
        ServiceClock {
            model,
            link_capacity,
            rng,
        }
    }

    pub fn duration(&mut self, size: u32) -> SimDuration {
        match self.model {
            ServiceModel::Deterministic => transmission_time(size, self.link_capacity),
            ServiceModel::Markovian { mu } => {
                let secs = sample_exponential(mu, &mut self.rng)
                    .expect("service rate is validated before the run starts");
                SimDuration::from_secs(secs)
            }
        }
    }
}

/// Time to clock `size` bytes onto a link of `capacity` bytes/second,
/// rounded up to the next nanosecond so that the link never exceeds capacity.
pub fn transmission_time(size: u32, capacity: f64) -> SimDuration {
    let ns = (size as f64 * NANOS_PER_SEC as f64 / capacity).ceil();
    SimDuration::from_nanos(ns as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketEventKind {
    Arrival,
    ServiceStart,
    Departure,
    Drop,
}

impl PacketEventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PacketEventKind::Arrival => "arrival",
            PacketEventKind::ServiceStart => "service_start",
            PacketEventKind::Departure => "departure",
            PacketEventKind::Drop => "drop",
        }
    }
}

impl fmt::Display for PacketEventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PacketEventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "arrival" => Ok(PacketEventKind::Arrival),
            "service_start" => Ok(PacketEventKind::ServiceStart),
            "departure" => Ok(PacketEventKind::Departure),
            "drop" => Ok(PacketEventKind::Drop),
            other => Err(format!("unknown event kind `{other}`")),
        }
    }
}

/// One step of a packet's lifecycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketEvent {
    pub time: SimTime,
    pub kind: PacketEventKind,
    pub packet_id: u64,
    pub flow: FlowKey,
    pub size: u32,
}

/// Consumer of the ordered event stream produced by a run.
pub trait TraceSink {
    fn record(&mut self, event: &PacketEvent);
}

impl TraceSink for Vec<PacketEvent> {
    fn record(&mut self, event: &PacketEvent) {
        self.push(*event);
    }
}

impl<T: TraceSink + ?Sized> TraceSink for &mut T {
    fn record(&mut self, event: &PacketEvent) {
        (**self).record(event);
    }
}

impl<A: TraceSink, B: TraceSink> TraceSink for (A, B) {
    fn record(&mut self, event: &PacketEvent) {
        self.0.record(event);
        self.1.record(event);
    }
}

impl<A: TraceSink, B: TraceSink, C: TraceSink> TraceSink for (A, B, C) {
    fn record(&mut self, event: &PacketEvent) {
        self.0.record(event);
        self.1.record(event);
        self.2.record(event);
    }
}

impl<T: TraceSink> TraceSink for Option<T> {
    fn record(&mut self, event: &PacketEvent) {
        if let Some(sink) = self {
            sink.record(event);
        }
    }
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl TraceSink for NullSink {
    fn record(&mut self, _event: &PacketEvent) {}
}

/// The complete ordered event list of a run plus the horizon it covers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventTrace {
    pub horizon: SimTime,
    pub events: Vec<PacketEvent>,
}

impl EventTrace {
    pub fn new(horizon: SimTime) -> Self {
        EventTrace {
            horizon,
            events: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, kind: PacketEventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Replays the stored events into another sink.
    pub fn replay<S: TraceSink>(&self, sink: &mut S) {
        for event in &self.events {
            sink.record(event);
        }
    }
}

impl TraceSink for EventTrace {
    fn record(&mut self, event: &PacketEvent) {
        self.events.push(*event);
    }
}
