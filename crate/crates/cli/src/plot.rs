//! Minimal SVG line charts of the windowed series.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Result;
use floodgate::detector::AlarmSignal;
use floodgate::metrics::MetricsWindow;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 300.0;
const MARGIN: f64 = 50.0;

/// Step chart of `(x, y)` points; each y holds until the next x.
pub fn svg_step_chart(title: &str, y_label: &str, points: &[(f64, f64)], x_end: f64) -> String {
    let x_max = x_end
        .max(points.last().map_or(1.0, |p| p.0))
        .max(f64::MIN_POSITIVE);
    let y_max = points.iter().map(|p| p.1).fold(0.0, f64::max).max(1e-12) * 1.05;
    let sx = |x: f64| MARGIN + x / x_max * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - y / y_max * (HEIGHT - 2.0 * MARGIN);

    let mut path = String::new();
    for (i, &(x, y)) in points.iter().enumerate() {
        let next_x = points.get(i + 1).map_or(x_end, |p| p.0);
        let cmd = if i == 0 { 'M' } else { 'L' };
        let _ = write!(
            path,
            "{cmd}{:.2},{:.2} L{:.2},{:.2} ",
            sx(x),
            sy(y),
            sx(next_x),
            sy(y)
        );
    }

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#,
        WIDTH / 2.0
    );
    let (x0, y0, x1, y1) = (sx(0.0), sy(0.0), sx(x_max), sy(y_max));
    let _ = writeln!(
        svg,
        r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#
    );
    let _ = writeln!(svg, r#"<text x="{x0}" y="{}" >0</text>"#, y0 + 15.0);
    let _ = writeln!(
        svg,
        r#"<text x="{x1}" y="{}" text-anchor="end">{x_max} s</text>"#,
        y0 + 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{y1}" text-anchor="end">{:.3}</text>"#,
        x0 - 4.0,
        y_max
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">{y_label}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    let _ = writeln!(
        svg,
        r#"<path d="{path}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#
    );
    svg.push_str("</svg>\n");
    svg
}

pub fn write_all(dir: &Path, windows: &[MetricsWindow], signals: &[AlarmSignal]) -> Result<()> {
    let end = windows.last().map_or(0.0, |w| w.window_end.as_secs());
    let series = |f: &dyn Fn(&MetricsWindow) -> f64| -> Vec<(f64, f64)> {
        windows
            .iter()
            .map(|w| (w.window_start.as_secs(), f(w)))
            .collect()
    };
    let charts = [
        (
            "drops.svg",
            "Packet drops per window",
            "drops",
            series(&|w| w.p_drops as f64),
        ),
        (
            "utilization.svg",
            "Bandwidth utilization",
            "utilization",
            series(&|w| w.bandwidth_utilization),
        ),
        (
            "arrivals.svg",
            "Packet arrivals per window",
            "arrivals",
            series(&|w| w.p_arrivals as f64),
        ),
        (
            "departures.svg",
            "Packet departures per window",
            "departures",
            series(&|w| w.p_departures as f64),
        ),
        (
            "alarms.svg",
            "Alarm signal",
            "signal",
            signals
                .iter()
                .map(|s| (s.window_start.as_secs(), f64::from(s.value)))
                .collect(),
        ),
    ];
    for (file, title, label, points) in charts {
        fs::write(dir.join(file), svg_step_chart(title, label, &points, end))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_chart_is_well_formed() {
        let svg = svg_step_chart(
            "Alarm signal",
            "signal",
            &[(0.0, 0.0), (20.0, 1.0), (30.0, 0.0)],
            40.0,
        );
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        let d = svg
            .split(r#"<path d=""#)
            .nth(1)
            .unwrap()
            .split('"')
            .next()
            .unwrap();
        // One move and five line commands for three steps.
        assert_eq!(d.matches('M').count(), 1);
        assert_eq!(d.matches('L').count(), 5);
    }

    #[test]
    fn empty_series_still_renders_axes() {
        let svg = svg_step_chart("Drops", "drops", &[], 0.0);
        assert!(svg.contains("<line") && svg.contains(r#"d="""#));
    }
}
