//! Default scenario end to end: feature shapes, detector behaviour, sweeps.

use floodgate::analytics::{loss_by_class, TrafficClass};
use floodgate::detector::{classification_report, signal_series, DetectorConfig};
use floodgate::experiment::{mean_cbr_flood_loss, run_experiment, sweep};
use floodgate::flow::Protocol;
use floodgate::metrics::{series, MetricsConfig};
use floodgate::scenario::ScenarioConfig;
use floodgate::sim::{run, PacketEventKind};
use floodgate::traffic::{build_default_scenario, SourceKind, FLOOD_PORTS};

fn inside_flood(s: &ScenarioConfig, start: f64, end: f64) -> bool {
    s.attack
        .floods
        .iter()
        .any(|f| f.start_s <= start && end <= f.end_s)
}

fn touches_flood(s: &ScenarioConfig, start: f64, end: f64) -> bool {
    s.attack
        .floods
        .iter()
        .any(|f| start < f.end_s && f.start_s < end)
}

#[test]
fn default_scenario_shape() {
    let s = build_default_scenario();
    let ports: Vec<u16> = s.attack.floods.iter().map(|f| f.flow.dport).collect();
    assert_eq!(ports, FLOOD_PORTS);
    assert!(s
        .attack
        .floods
        .iter()
        .all(|f| f.flow.proto == Protocol::Udp));
    assert!(s
        .sources
        .iter()
        .any(|x| x.kind() == SourceKind::Cbr && x.flow.proto == Protocol::Udp));
    assert!(s
        .sources
        .iter()
        .any(|x| x.kind() == SourceKind::Ftp && x.flow.proto == Protocol::Tcp));
    let legit: f64 = s.sources.iter().filter_map(|x| x.traffic.rate_pps()).sum();
    let flood = s.attack.floods[0].traffic.rate_pps().unwrap();
    assert!(flood >= 10.0 * legit, "{flood} vs {legit}");
    assert!(!s.has_partial_window());
}

#[test]
fn scenario_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenario.json");
    let s = build_default_scenario();
    s.save(&path).unwrap();
    assert_eq!(ScenarioConfig::load(&path).unwrap(), s);
}

#[test]
fn drops_plateau_during_floods() {
    let s = build_default_scenario();
    let trace = run(&s).unwrap();
    let windows = series(&trace, MetricsConfig::for_scenario(&s)).unwrap();
    let (flood, base): (Vec<_>, Vec<_>) = windows
        .iter()
        .filter(|w| {
            let (a, b) = (w.window_start.as_secs(), w.window_end.as_secs());
            inside_flood(&s, a, b) || !touches_flood(&s, a, b)
        })
        .partition(|w| inside_flood(&s, w.window_start.as_secs(), w.window_end.as_secs()));
    assert_eq!(flood.len(), 30);
    let base_max_drops = base.iter().map(|w| w.p_drops).max().unwrap();
    let base_max_flows = base.iter().map(|w| w.flow_count).max().unwrap();
    for w in &flood {
        assert!(w.p_drops > base_max_drops);
        assert!(w.flow_count >= base_max_flows);
        assert!(w.bandwidth_utilization >= 0.8);
        assert!(w.avg_packet_size > 512.0);
    }

    // One window over the whole horizon is the trace aggregate.
    let whole = series(
        &trace,
        MetricsConfig {
            window: s.horizon() - floodgate::time::SimTime::ZERO,
            ..MetricsConfig::for_scenario(&s)
        },
    )
    .unwrap();
    assert_eq!(whole.len(), 1);
    assert_eq!(whole[0].p_drops, trace.count(PacketEventKind::Drop) as u64);
    assert_eq!(
        whole[0].p_arrivals,
        windows.iter().map(|w| w.p_arrivals).sum::<u64>()
    );
}

#[test]
fn baseline_never_alarms_and_barely_loses() {
    let s = build_default_scenario().without_attack();
    let exp = run_experiment(&s, true).unwrap();
    assert!(exp.signals.iter().all(|x| x.value == 0));
    assert_eq!(exp.report.classification.false_alarm_rate, Some(0.0));
    for row in &exp.loss.rows {
        assert_eq!(row.flood_index, 0);
        assert!(row.loss_percent < 0.5, "{row:?}");
    }
    let max_util = exp
        .windows
        .iter()
        .map(|w| w.bandwidth_utilization)
        .fold(0.0, f64::max);
    assert!(max_util < s.detector.util_threshold);
    assert_eq!(loss_by_class(exp.trace.as_ref().unwrap(), &s), exp.loss);
}

#[test]
fn vacuous_thresholds_alarm_wherever_packets_arrive() {
    let s = build_default_scenario();
    let trace = run(&s).unwrap();
    let windows = series(&trace, MetricsConfig::for_scenario(&s)).unwrap();
    let cfg = DetectorConfig {
        util_threshold: 0.0,
        drop_arrival_ratio_threshold: 0.0,
        require_buffer_full: false,
        ..DetectorConfig::default()
    };
    for (w, sig) in windows
        .iter()
        .zip(signal_series(&windows, &cfg, s.buffer_packets))
    {
        assert_eq!(sig.value, u8::from(w.p_arrivals > 0));
    }
}

#[test]
fn default_run_scores_perfectly_with_prompt_detection() {
    let s = build_default_scenario();
    let exp = run_experiment(&s, false).unwrap();
    let r = &exp.report.classification;
    assert!(r.accuracy >= 0.95);
    for f in &r.floods {
        assert!(f.detected);
        assert!(f.latency_windows.unwrap() <= u64::from(s.detector.consecutive_windows) + 1);
    }
    // Rescoring the stored signals gives the same report.
    assert_eq!(
        &classification_report(&exp.signals, &s.attack, s.horizon()).unwrap(),
        r
    );
    for i in 1..=3 {
        let cbr = exp.loss.get(TrafficClass::Cbr, i).unwrap();
        let ftp = exp.loss.get(TrafficClass::Ftp, i).unwrap();
        assert!(ftp.loss_percent > cbr.loss_percent);
        assert!((30.0..=45.0).contains(&cbr.loss_percent), "{cbr:?}");
    }
}

#[test]
fn single_seed_sweep_equals_single_run() {
    let s = build_default_scenario();
    let single = run_experiment(&s, false).unwrap().report;
    let agg = sweep(&s, 1).unwrap();
    assert_eq!(agg.mean_accuracy, single.classification.accuracy);
    assert_eq!(agg.min_accuracy, single.classification.accuracy);
    assert_eq!(agg.false_alarm_rate, single.classification.false_alarm_rate);
    assert_eq!(agg.runs[0].seed, s.seed);
    assert!(sweep(&s, 0).is_err());
}

#[test]
fn longer_consecutive_requirement_delays_alarm() {
    let mut s = build_default_scenario();
    s.detector.consecutive_windows = 3;
    let exp = run_experiment(&s, false).unwrap();
    for f in &exp.report.classification.floods {
        assert_eq!(f.latency_windows, Some(2));
    }
}

#[test]
fn flood_loss_grows_with_rate() {
    let mut previous = 0.0;
    for rate in [3_000.0, 6_000.0, 12_000.0, 24_000.0] {
        let mut s = build_default_scenario().with_seed(500);
        s.attack.set_rate(rate);
        let loss = mean_cbr_flood_loss(&s, 5).unwrap().unwrap();
        assert!(loss >= previous, "{rate} pps: {loss} < {previous}");
        previous = loss;
    }
}
