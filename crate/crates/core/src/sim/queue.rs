use std::collections::VecDeque;

use super::{PacketEvent, PacketEventKind, ServiceClock, SimError, TraceSink};
use crate::flow::FlowKey;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueuedPacket {
    pub id: u64,
    pub flow: FlowKey,
    pub size: u32,
    pub arrived: SimTime,
}

impl QueuedPacket {
    fn event(&self, time: SimTime, kind: PacketEventKind) -> PacketEvent {
        PacketEvent {
            time,
            kind,
            packet_id: self.id,
            flow: self.flow,
            size: self.size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InService {
    pub packet: QueuedPacket,
    pub started: SimTime,
    pub departs_at: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Accepted,
    Dropped,
}

/// Single FCFS server in front of a drop-tail buffer.
///
/// `capacity` counts waiting slots only; the packet in service does not
/// occupy one. A buffer of `K` slots therefore gives a system capacity of
/// `K + 1` packets, which is the `S` used by the blocking-probability oracle.
/// `None` means an unbounded buffer.
#[derive(Debug, Clone)]
pub struct QueueState {
    buffer: VecDeque<QueuedPacket>,
    capacity: Option<usize>,
    in_service: Option<InService>,
}

impl QueueState {
    pub fn new(capacity: Option<usize>) -> Self {
        QueueState {
            buffer: VecDeque::new(),
            capacity,
            in_service: None,
        }
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    /// Packets waiting in the buffer (excluding the one in service).
    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn is_busy(&self) -> bool {
        self.in_service.is_some()
    }

    pub fn in_system(&self) -> usize {
        self.buffer.len() + usize::from(self.is_busy())
    }

    pub fn in_service(&self) -> Option<&InService> {
        self.in_service.as_ref()
    }

    pub fn next_departure(&self) -> Option<SimTime> {
        self.in_service.map(|s| s.departs_at)
    }

    fn is_full(&self) -> bool {
        self.capacity.is_some_and(|k| self.buffer.len() >= k)
    }

    fn start_service<S: TraceSink>(
        &mut self,
        packet: QueuedPacket,
        now: SimTime,
        clock: &mut ServiceClock,
        sink: &mut S,
    ) {
        let departs_at = now + clock.duration(packet.size);
        sink.record(&packet.event(now, PacketEventKind::ServiceStart));
        self.in_service = Some(InService {
            packet,
            started: now,
            departs_at,
        });
    }

    /// Offers an arriving packet to the server. Records the arrival and, at
    /// the same instant, either a service start, nothing (queued) or a drop.
    pub fn enqueue<S: TraceSink>(
        &mut self,
        packet: QueuedPacket,
        now: SimTime,
        clock: &mut ServiceClock,
        sink: &mut S,
    ) -> Admission {
        debug_assert_eq!(packet.arrived, now);
        sink.record(&packet.event(now, PacketEventKind::Arrival));
        if self.in_service.is_none() {
            debug_assert!(self.buffer.is_empty(), "idle server with a backlog");
            self.start_service(packet, now, clock, sink);
            Admission::Accepted
        } else if self.is_full() {
            sink.record(&packet.event(now, PacketEventKind::Drop));
            Admission::Dropped
        } else {
            self.buffer.push_back(packet);
            Admission::Accepted
        }
    }

    /// Finishes the packet in service and pulls the head of the buffer, if
    /// any, into service at the same instant.
    pub fn complete_service<S: TraceSink>(
        &mut self,
        now: SimTime,
        clock: &mut ServiceClock,
        sink: &mut S,
    ) -> Result<PacketEvent, SimError> {
        let done = self
            .in_service
            .take()
            .ok_or(SimError::InternalState("departure with an idle server"))?;
        let departure = done.packet.event(now, PacketEventKind::Departure);
        sink.record(&departure);
        if let Some(next) = self.buffer.pop_front() {
            self.start_service(next, now, clock, sink);
        }
        Ok(departure)
    }

    /// Test hook used by mutation checks: admits one packet beyond capacity.
    #[doc(hidden)]
    pub fn widen_capacity_by_one(&mut self) {
        if let Some(k) = self.capacity.as_mut() {
            *k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Protocol;
    use crate::scenario::ServiceModel;
    use crate::sim::stream_rng;

    fn clock() -> ServiceClock {
        // 1000 B/s link: a 100-byte packet takes 0.1 s.
        ServiceClock::new(ServiceModel::Deterministic, 1000.0, stream_rng(0, 0))
    }

    fn pkt(id: u64, t: SimTime) -> QueuedPacket {
        QueuedPacket {
            id,
            flow: FlowKey::new(1, 1000, 2, 80, Protocol::Udp),
            size: 100,
            arrived: t,
        }
    }

    #[test]
    fn idle_server_starts_service_immediately() {
        let mut q = QueueState::new(Some(2));
        let mut trace = Vec::new();
        let t = SimTime::from_secs(1.0);
        assert_eq!(
            q.enqueue(pkt(1, t), t, &mut clock(), &mut trace),
            Admission::Accepted
        );
        let kinds: Vec<_> = trace.iter().map(|e| (e.kind, e.time)).collect();
        assert_eq!(
            kinds,
            vec![
                (PacketEventKind::Arrival, t),
                (PacketEventKind::ServiceStart, t)
            ]
        );
        assert_eq!(q.next_departure(), Some(SimTime::from_secs(1.1)));
        assert!(q.is_empty());
    }

    #[test]
    fn full_buffer_drops_and_last_slot_accepts() {
        let mut q = QueueState::new(Some(2));
        let mut c = clock();
        let mut trace = Vec::new();
        let t = SimTime::ZERO;
        q.enqueue(pkt(1, t), t, &mut c, &mut trace);
        q.enqueue(pkt(2, t), t, &mut c, &mut trace);
        // K - 1 waiting: accepted at the tail without a service start.
        let before = trace.len();
        assert_eq!(
            q.enqueue(pkt(3, t), t, &mut c, &mut trace),
            Admission::Accepted
        );
        assert_eq!(trace.len(), before + 1);
        assert_eq!(q.len(), 2);
        // K waiting: dropped.
        assert_eq!(
            q.enqueue(pkt(4, t), t, &mut c, &mut trace),
            Admission::Dropped
        );
        let last = trace.last().unwrap();
        assert_eq!((last.kind, last.packet_id), (PacketEventKind::Drop, 4));
        assert_eq!(q.len(), 2);
    }

    #[test]
    fn departure_pulls_head_into_service() {
        let mut q = QueueState::new(Some(4));
        let mut c = clock();
        let mut trace = Vec::new();
        q.enqueue(pkt(1, SimTime::ZERO), SimTime::ZERO, &mut c, &mut trace);
        let t2 = SimTime::from_secs(0.05);
        q.enqueue(pkt(2, t2), t2, &mut c, &mut trace);
        let dep_at = q.next_departure().unwrap();
        let dep = q.complete_service(dep_at, &mut c, &mut trace).unwrap();
        assert_eq!(dep.packet_id, 1);
        let last = trace.last().unwrap();
        assert_eq!(
            (last.kind, last.packet_id, last.time),
            (PacketEventKind::ServiceStart, 2, dep_at)
        );
        // Empty buffer: server goes idle and schedules nothing.
        let dep_at = q.next_departure().unwrap();
        q.complete_service(dep_at, &mut c, &mut trace).unwrap();
        assert!(!q.is_busy());
        assert_eq!(q.next_departure(), None);
    }

    #[test]
    fn departure_without_service_is_an_engine_error() {
        let mut q = QueueState::new(None);
        let err = q
            .complete_service(SimTime::ZERO, &mut clock(), &mut Vec::new())
            .unwrap_err();
        assert!(matches!(err, SimError::InternalState(_)));
    }
}
