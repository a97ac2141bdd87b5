use log::debug;
use serde::{Deserialize, Serialize};

use super::{
    Admission, EventPriority, EventQueue, EventTrace, PacketEventKind, QueueState, QueuedPacket,
    ServiceClock, TraceSink,
};
use crate::flow::FlowKey;
use crate::scenario::{ConfigError, ScenarioConfig};
use crate::sim::stream_rng;
use crate::time::{SimDuration, SimTime};
use crate::traffic::{first_arrival, next_arrival, TrafficModel, TrafficSources};

/// Deliberate engine defects used to show that the validation checks bite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaultInjection {
    #[default]
    None,
    /// The buffer admits one packet more than configured.
    BufferOffByOne,
}

/// Lifecycle totals of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    #[serde(rename = "horizon_ns")]
    pub horizon: SimTime,
    pub arrivals: u64,
    pub departures: u64,
    pub drops: u64,
    /// Packets still queued or in service at the horizon.
    pub in_system: u64,
}

#[derive(Debug, Clone, Copy)]
enum Action {
    /// Timer-driven source fires (CBR, Poisson, flood burst).
    Emit(usize),
    /// FTP source becomes active and sends its initial window.
    FtpStart(usize),
    /// Delayed acknowledgement or loss notification for an FTP packet.
    Feedback(usize, PacketEventKind),
}

/// Runs the scenario and collects the full trace.
pub fn run(scenario: &ScenarioConfig) -> Result<EventTrace, ConfigError> {
    let mut trace = EventTrace::new(scenario.horizon());
    run_into(scenario, &mut trace)?;
    Ok(trace)
}

/// Runs the scenario, streaming events into `sink`.
pub fn run_into<S: TraceSink>(
    scenario: &ScenarioConfig,
    sink: &mut S,
) -> Result<RunSummary, ConfigError> {
    run_into_with(scenario, sink, FaultInjection::None)
}

pub fn run_into_with<S: TraceSink>(
    scenario: &ScenarioConfig,
    sink: &mut S,
    fault: FaultInjection,
) -> Result<RunSummary, ConfigError> {
    scenario.validate()?;
    let mut sim = Simulation::new(scenario, sink);
    if fault == FaultInjection::BufferOffByOne {
        sim.queue.widen_capacity_by_one();
    }
    sim.run();
    Ok(sim.summary())
}

struct Simulation<'a, S: TraceSink> {
    horizon: SimTime,
    events: EventQueue<Action>,
    queue: QueueState,
    clock: ServiceClock,
    sources: TrafficSources,
    next_packet_id: u64,
    arrivals: u64,
    departures: u64,
    drops: u64,
    sink: &'a mut S,
}

impl<'a, S: TraceSink> Simulation<'a, S> {
    fn new(scenario: &ScenarioConfig, sink: &'a mut S) -> Self {
        let sources = TrafficSources::new(scenario.seed, &scenario.sources, &scenario.attack);
        let mut sim = Simulation {
            horizon: scenario.horizon(),
            events: EventQueue::new(),
            queue: QueueState::new(scenario.buffer_capacity()),
            clock: ServiceClock::new(
                scenario.service,
                scenario.link_capacity,
                stream_rng(scenario.seed, 0),
            ),
            sources,
            next_packet_id: 0,
            arrivals: 0,
            departures: 0,
            drops: 0,
            sink,
        };
        for idx in 0..sim.sources.len() {
            let rt = sim.sources.get_mut(idx);
            if matches!(rt.spec.traffic, TrafficModel::Ftp { .. }) {
                let start = rt.spec.start();
                sim.events
                    .schedule(start, EventPriority::Arrival, Action::FtpStart(idx));
            } else if let Some(t) = first_arrival(&rt.spec, &mut rt.rng) {
                sim.events
                    .schedule(t, EventPriority::Arrival, Action::Emit(idx));
            }
        }
        sim
    }

    fn run(&mut self) {
        loop {
            let departure = self.queue.next_departure();
            let pending = self.events.peek_key();
            let take_departure = match (departure, pending) {
                (Some(d), Some((t, _))) => d <= t,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            if take_departure {
                let t = departure.expect("checked above");
                if t >= self.horizon {
                    break;
                }
                self.events.advance_to(t);
                self.on_departure(t);
            } else {
                let (t, _) = pending.expect("checked above");
                if t >= self.horizon {
                    break;
                }
                let (t, action) = self.events.pop().expect("peeked");
                self.dispatch(t, action);
            }
        }
        debug!(
            "run finished: {} arrivals, {} departures, {} drops",
            self.arrivals, self.departures, self.drops
        );
    }

    fn dispatch(&mut self, now: SimTime, action: Action) {
        match action {
            Action::Emit(idx) => {
                let (burst, size, flow) = {
                    let rt = self.sources.get(idx);
                    let burst = match rt.spec.traffic {
                        TrafficModel::Flood { burst_size, .. } => burst_size.max(1),
                        _ => 1,
                    };
                    (burst, rt.spec.packet_size, rt.spec.flow)
                };
                for _ in 0..burst {
                    self.offer(now, flow, size);
                }
                self.schedule_next_emit(idx, now);
            }
            Action::FtpStart(idx) => self.ftp_send(idx, now),
            Action::Feedback(idx, outcome) => {
                if let Some(window) = self.sources.get_mut(idx).ftp.as_mut() {
                    window.ack_feedback(outcome);
                }
                self.ftp_send(idx, now);
            }
        }
    }

    fn schedule_next_emit(&mut self, idx: usize, now: SimTime) {
        let rt = self.sources.get_mut(idx);
        if let Some(t) = next_arrival(&rt.spec, now, &mut rt.rng) {
            self.events
                .schedule(t, EventPriority::Arrival, Action::Emit(idx));
        }
    }

    fn ftp_send(&mut self, idx: usize, now: SimTime) {
        loop {
            let rt = self.sources.get_mut(idx);
            if !rt.spec.is_active_at(now) {
                return;
            }
            let Some(window) = rt.ftp.as_mut() else {
                return;
            };
            if !window.can_send() {
                return;
            }
            window.on_send();
            let (flow, size) = (rt.spec.flow, rt.spec.packet_size);
            self.offer(now, flow, size);
        }
    }

    fn offer(&mut self, now: SimTime, flow: FlowKey, size: u32) {
        let packet = QueuedPacket {
            id: self.next_packet_id,
            flow,
            size,
            arrived: now,
        };
        self.next_packet_id += 1;
        self.arrivals += 1;
        if self.queue.enqueue(packet, now, &mut self.clock, self.sink) == Admission::Dropped {
            self.drops += 1;
            self.notify_ftp(now, &flow, PacketEventKind::Drop);
        }
    }

    fn on_departure(&mut self, now: SimTime) {
        let event = self
            .queue
            .complete_service(now, &mut self.clock, self.sink)
            .expect("departure scheduled only while busy");
        self.departures += 1;
        self.notify_ftp(now, &event.flow, PacketEventKind::Departure);
    }

    fn notify_ftp(&mut self, now: SimTime, flow: &FlowKey, outcome: PacketEventKind) {
        let Some(idx) = self.sources.source_of(flow) else {
            return;
        };
        let TrafficModel::Ftp {
            ack_delay_s,
            loss_detect_s,
            ..
        } = self.sources.get(idx).spec.traffic
        else {
            return;
        };
        let delay = match outcome {
            PacketEventKind::Drop => loss_detect_s,
            _ => ack_delay_s,
        };
        self.events.schedule(
            now + SimDuration::from_secs(delay),
            EventPriority::Feedback,
            Action::Feedback(idx, outcome),
        );
    }

    fn summary(&self) -> RunSummary {
        RunSummary {
            horizon: self.horizon,
            arrivals: self.arrivals,
            departures: self.departures,
            drops: self.drops,
            in_system: self.queue.in_system() as u64,
        }
    }
}
