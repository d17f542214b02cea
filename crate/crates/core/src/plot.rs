//! Static SVG line charts of actual vs predicted growth, plus the tidy CSV
//! of the plotted points.
//!
//! Actual values are a solid black line, predictions a dashed red line; a
//! grey zero line marks the recession boundary. Every first quarter on the
//! x axis gets a `YYYY` tick label.

use std::fmt::Write as _;

use thiserror::Error;

use crate::backtest::PredictionRecord;

#[derive(Debug, Error, PartialEq)]
pub enum PlotError {
    #[error("nothing to plot: no prediction records")]
    Empty,
}

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;

/// Tick positions covering `[lo, hi]` with a 1/2/5 × 10^k step.
fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-9);
    let raw = span / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).floor() as i64;
    let last = (hi / step).ceil() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render_svg(records: &[PredictionRecord], title: &str) -> Result<String, PlotError> {
    if records.is_empty() {
        return Err(PlotError::Empty);
    }
    let values = records.iter().flat_map(|r| [r.actual, r.predicted]);
    let (mut lo, mut hi) = values.fold((0.0f64, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    let ticks = nice_ticks(lo, hi, 6);
    lo = lo.min(ticks[0]);
    hi = hi.max(*ticks.last().expect("non-empty"));

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let n = records.len();
    let x_at = |i: usize| {
        if n == 1 {
            LEFT + plot_w / 2.0
        } else {
            LEFT + plot_w * i as f64 / (n - 1) as f64
        }
    };
    let y_at = |v: f64| TOP + plot_h * (hi - v) / (hi - lo);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="28" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    for t in &ticks {
        let y = y_at(*t);
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e6e6e6"/>"##,
            WIDTH - RIGHT
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.2}" text-anchor="end">{t}</text>"#,
            LEFT - 8.0,
            y + 4.0
        );
    }
    for (i, r) in records.iter().enumerate() {
        if r.quarter.q() == 1 {
            let x = x_at(i);
            let _ = writeln!(
                svg,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#444"/>"##,
                TOP + plot_h,
                TOP + plot_h + 5.0
            );
            let _ = writeln!(
                svg,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"#,
                TOP + plot_h + 18.0,
                r.quarter.year()
            );
        }
    }
    let _ = writeln!(
        svg,
        r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>"##
    );
    let zero = y_at(0.0);
    let _ = writeln!(
        svg,
        r##"<line x1="{LEFT}" y1="{zero:.2}" x2="{:.2}" y2="{zero:.2}" stroke="#888" stroke-width="1"/>"##,
        WIDTH - RIGHT
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">Annualised growth, per cent</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">Quarter</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );

    let line = |get: fn(&PredictionRecord) -> f64| -> String {
        records
            .iter()
            .enumerate()
            .map(|(i, r)| format!("{:.2},{:.2}", x_at(i), y_at(get(r))))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let _ = writeln!(
        svg,
        r#"<polyline id="actual" fill="none" stroke="black" stroke-width="1.6" points="{}"/>"#,
        line(|r| r.actual)
    );
    let _ = writeln!(
        svg,
        r#"<polyline id="predicted" fill="none" stroke="red" stroke-width="1.6" stroke-dasharray="6,4" points="{}"/>"#,
        line(|r| r.predicted)
    );
    for (i, r) in records.iter().enumerate() {
        let x = x_at(i);
        let _ = writeln!(
            svg,
            r#"<circle cx="{x:.2}" cy="{:.2}" r="1.8" fill="black"/><circle cx="{x:.2}" cy="{:.2}" r="1.8" fill="red"/>"#,
            y_at(r.actual),
            y_at(r.predicted)
        );
    }

    let lx = LEFT + 16.0;
    let ly = TOP + 16.0;
    let _ = writeln!(
        svg,
        r#"<rect x="{:.1}" y="{:.1}" width="150" height="44" fill="white" stroke="gray"/>"#,
        lx - 8.0,
        ly - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="black" stroke-width="1.6"/><text x="{:.1}" y="{:.1}">Actual</text>"#,
        lx + 30.0,
        lx + 38.0,
        ly + 4.0
    );
    let ly2 = ly + 20.0;
    let _ = writeln!(
        svg,
        r#"<line x1="{lx:.1}" y1="{ly2:.1}" x2="{:.1}" y2="{ly2:.1}" stroke="red" stroke-width="1.6" stroke-dasharray="6,4"/><text x="{:.1}" y="{:.1}">Predicted</text>"#,
        lx + 30.0,
        lx + 38.0,
        ly2 + 4.0
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Long-format CSV of the plotted points: `quarter,series,value`.
pub fn tidy_csv(records: &[PredictionRecord]) -> String {
    let mut out = String::from("quarter,series,value\n");
    for r in records {
        let _ = writeln!(out, "{},actual,{:.6}", r.quarter, r.actual);
        let _ = writeln!(out, "{},predicted,{:.6}", r.quarter, r.predicted);
    }
    out
}
