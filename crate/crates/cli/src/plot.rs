//! Standalone SVG line charts of dated series, each with a companion CSV of
//! the plotted values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use carbon_core::data::{format_value, DATE_FORMAT};
use chrono::{Datelike, NaiveDate};

use crate::error::{CliError, CliResult};

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];
const Y_TICKS: usize = 5;
const X_TICKS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(NaiveDate, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(NaiveDate, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
        }
    }
}

/// Write `<stem>.svg` and `<stem>.csv` into `dir`.
pub fn emit_series_plot(title: &str, series: &[Series], dir: &Path, stem: &str) -> CliResult<()> {
    let (svg, csv) = render(title, series)?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for (ext, body) in [("svg", svg), ("csv", csv)] {
        let path = dir.join(format!("{stem}.{ext}"));
        std::fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

/// The chart and its companion CSV as strings.
pub fn render(title: &str, series: &[Series]) -> CliResult<(String, String)> {
    if series.is_empty() || series.iter().any(|s| s.points.is_empty()) {
        return Err(CliError::Usage(format!(
            "plot `{title}` has an empty series"
        )));
    }
    if let Some(s) = series
        .iter()
        .find(|s| s.points.iter().any(|(_, v)| !v.is_finite()))
    {
        return Err(CliError::Usage(format!(
            "plot `{title}`: series {} has non-finite values",
            s.name
        )));
    }
    Ok((svg(title, series), companion_csv(series)))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn day(d: NaiveDate) -> f64 {
    d.num_days_from_ce() as f64
}

fn svg(title: &str, series: &[Series]) -> String {
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for (d, v) in all {
        x0 = x0.min(day(*d));
        x1 = x1.max(day(*d));
        y0 = y0.min(*v);
        y1 = y1.max(*v);
    }
    if x1 == x0 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    let pad = if y1 > y0 {
        0.05 * (y1 - y0)
    } else {
        y0.abs().max(1.0) * 0.05
    };
    y0 -= pad;
    y1 += pad;

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| MARGIN_TOP + (y1 - y) / (y1 - y0) * plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for i in 0..=Y_TICKS {
        let v = y0 + (y1 - y0) * i as f64 / Y_TICKS as f64;
        let y = sy(v);
        let _ = writeln!(
            out,
            r##"<line x1="{MARGIN_LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            MARGIN_LEFT + plot_w,
            MARGIN_LEFT - 6.0,
            y + 4.0,
            tick_label(v, y1 - y0)
        );
    }
    for i in 0..=X_TICKS {
        let x = x0 + (x1 - x0) * i as f64 / X_TICKS as f64;
        let label = NaiveDate::from_num_days_from_ce_opt(x.round() as i32)
            .map(|d| d.format(DATE_FORMAT).to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
            sx(x),
            MARGIN_TOP + plot_h + 20.0
        );
    }
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        if s.points.len() == 1 {
            let (d, v) = s.points[0];
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{color}"/>"#,
                sx(day(d)),
                sy(v)
            );
        } else {
            let path: Vec<String> = s
                .points
                .iter()
                .map(|(d, v)| format!("{:.2},{:.2}", sx(day(*d)), sy(*v)))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            );
        }
        let ly = MARGIN_TOP + 16.0 + 20.0 * k as f64;
        let lx = MARGIN_LEFT + plot_w + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn tick_label(v: f64, span: f64) -> String {
    let decimals = if span >= 100.0 {
        0
    } else if span >= 1.0 {
        2
    } else {
        4
    };
    format!("{v:.decimals$}")
}

/// One row per date in the union of all series; absent values are `NA`.
fn companion_csv(series: &[Series]) -> String {
    let mut rows: BTreeMap<NaiveDate, Vec<Option<f64>>> = BTreeMap::new();
    for (k, s) in series.iter().enumerate() {
        for (d, v) in &s.points {
            rows.entry(*d).or_insert_with(|| vec![None; series.len()])[k] = Some(*v);
        }
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["date".to_string()];
    header.extend(series.iter().map(|s| s.name.clone()));
    writer.write_record(&header).expect("in-memory write");
    for (d, values) in rows {
        let mut rec = vec![d.format(DATE_FORMAT).to_string()];
        rec.extend(
            values
                .into_iter()
                .map(|v| v.map(format_value).unwrap_or_else(|| "NA".into())),
        );
        writer.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}
