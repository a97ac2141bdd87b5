//! CSV formats for traces, metrics, alarms and loss tables.
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! reproduces the written values exactly.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analytics::LossRow;
use crate::detector::{AlarmSignal, Condition};
use crate::flow::{FlowKey, Protocol};
use crate::metrics::MetricsWindow;
use crate::sim::{PacketEvent, PacketEventKind};
use crate::time::SimTime;
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time_ns: u64,
    pub kind: PacketEventKind,
    pub packet_id: u64,
    pub src: u32,
    pub sport: u16,
    pub dst: u32,
    pub dport: u16,
    pub proto: Protocol,
    pub size_bytes: u32,
}

impl From<&PacketEvent> for TraceRecord {
    fn from(e: &PacketEvent) -> Self {
        TraceRecord {
            time_ns: e.time.as_nanos(),
            kind: e.kind,
            packet_id: e.packet_id,
            src: e.flow.src,
            sport: e.flow.sport,
            dst: e.flow.dst,
            dport: e.flow.dport,
            proto: e.flow.proto,
            size_bytes: e.size,
        }
    }
}

impl From<&TraceRecord> for PacketEvent {
    fn from(r: &TraceRecord) -> Self {
        PacketEvent {
            time: SimTime::from_nanos(r.time_ns),
            kind: r.kind,
            packet_id: r.packet_id,
            flow: FlowKey::new(r.src, r.sport, r.dst, r.dport, r.proto),
            size: r.size_bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub window_start_s: f64,
    pub p_arrivals: u64,
    pub p_departures: u64,
    pub p_drops: u64,
    pub bytes_tx: u64,
    pub utilization: f64,
    pub flow_count: u64,
    pub avg_pkt_size: f64,
    pub max_buf: u64,
    pub mean_qlen: f64,
    pub mean_wait_s: f64,
}

impl From<&MetricsWindow> for MetricsRecord {
    fn from(w: &MetricsWindow) -> Self {
        MetricsRecord {
            window_start_s: w.window_start.as_secs(),
            p_arrivals: w.p_arrivals,
            p_departures: w.p_departures,
            p_drops: w.p_drops,
            bytes_tx: w.bytes_transmitted,
            utilization: w.bandwidth_utilization,
            flow_count: w.flow_count,
            avg_pkt_size: w.avg_packet_size,
            max_buf: w.max_buffer_occupancy,
            mean_qlen: w.mean_queue_length,
            mean_wait_s: w.mean_wait,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmRecord {
    pub window_start_s: f64,
    pub signal: u8,
    /// Semicolon-separated condition names, empty when nothing fired.
    pub fired_conditions: String,
}

impl From<&AlarmSignal> for AlarmRecord {
    fn from(s: &AlarmSignal) -> Self {
        AlarmRecord {
            window_start_s: s.window_start.as_secs(),
            signal: s.value,
            fired_conditions: s
                .fired_conditions
                .iter()
                .map(|c| c.as_str())
                .collect::<Vec<_>>()
                .join(";"),
        }
    }
}

impl AlarmRecord {
    pub fn conditions(&self) -> Result<BTreeSet<Condition>, Error> {
        self.fired_conditions
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::InvalidArgument(format!("unknown condition `{s}`")))
            })
            .collect()
    }
}

/// Row type of one of the CSV formats.
pub trait CsvRecord: Serialize + DeserializeOwned {
    const HEADER: &'static [&'static str];
}

impl CsvRecord for TraceRecord {
    const HEADER: &'static [&'static str] = &[
        "time_ns",
        "kind",
        "packet_id",
        "src",
        "sport",
        "dst",
        "dport",
        "proto",
        "size_bytes",
    ];
}

impl CsvRecord for MetricsRecord {
    const HEADER: &'static [&'static str] = &[
        "window_start_s",
        "p_arrivals",
        "p_departures",
        "p_drops",
        "bytes_tx",
        "utilization",
        "flow_count",
        "avg_pkt_size",
        "max_buf",
        "mean_qlen",
        "mean_wait_s",
    ];
}

impl CsvRecord for AlarmRecord {
    const HEADER: &'static [&'static str] = &["window_start_s", "signal", "fired_conditions"];
}

impl CsvRecord for LossRow {
    const HEADER: &'static [&'static str] =
        &["class", "flood_index", "arrivals", "drops", "loss_percent"];
}

/// Writes the header line even when there are no rows.
pub fn write_csv<T: CsvRecord, W: Write>(
    writer: W,
    rows: impl IntoIterator<Item = impl std::borrow::Borrow<T>>,
) -> Result<(), Error> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    w.write_record(T::HEADER)?;
    for row in rows {
        w.serialize(row.borrow())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: CsvRecord, R: Read>(reader: R) -> Result<Vec<T>, Error> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

fn create(path: &Path) -> Result<File, Error> {
    Ok(File::create(path)?)
}

fn open(path: &Path) -> Result<File, Error> {
    Ok(File::open(path)?)
}

pub fn write_trace(path: &Path, events: &[PacketEvent]) -> Result<(), Error> {
    write_csv::<TraceRecord, _>(create(path)?, events.iter().map(TraceRecord::from))
}

pub fn read_trace(path: &Path) -> Result<Vec<PacketEvent>, Error> {
    let rows: Vec<TraceRecord> = read_csv(open(path)?)?;
    Ok(rows.iter().map(PacketEvent::from).collect())
}

pub fn write_metrics(path: &Path, windows: &[MetricsWindow]) -> Result<(), Error> {
    write_csv::<MetricsRecord, _>(create(path)?, windows.iter().map(MetricsRecord::from))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>, Error> {
    read_csv(open(path)?)
}

pub fn write_alarms(path: &Path, signals: &[AlarmSignal]) -> Result<(), Error> {
    write_csv::<AlarmRecord, _>(create(path)?, signals.iter().map(AlarmRecord::from))
}

pub fn read_alarms(path: &Path) -> Result<Vec<AlarmRecord>, Error> {
    read_csv(open(path)?)
}

pub fn write_loss(path: &Path, rows: &[LossRow]) -> Result<(), Error> {
    write_csv::<LossRow, _>(create(path)?, rows)
}

pub fn read_loss(path: &Path) -> Result<Vec<LossRow>, Error> {
    read_csv(open(path)?)
}
