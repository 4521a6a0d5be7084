//! Self-contained SVG line and bar charts built from record tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::sim::records::{RunRecord, Table};

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD_L: f64 = 70.0;
const PAD_R: f64 = 130.0;
const PAD_T: f64 = 40.0;
const PAD_B: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn frame(out: &mut String, title: &str, xlabel: &str, ylabel: &str, x: (f64, f64), y: (f64, f64)) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = write!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        (PAD_L + W - PAD_R) / 2.0,
        esc(title)
    );
    let (x0, y0, x1, y1) = (PAD_L, H - PAD_B, W - PAD_R, PAD_T);
    let _ = write!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = write!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for t in 0..=4 {
        let f = t as f64 / 4.0;
        let px = x0 + f * (x1 - x0);
        let py = y0 - f * (y0 - y1);
        let _ = write!(
            out,
            r#"<text x="{px}" y="{}" text-anchor="middle">{}</text>"#,
            y0 + 15.0,
            fmt_tick(x.0 + f * (x.1 - x.0))
        );
        let _ = write!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            x0 - 5.0,
            py + 4.0,
            fmt_tick(y.0 + f * (y.1 - y.0))
        );
    }
    let _ = write!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 12.0,
        esc(xlabel)
    );
    let _ = write!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        esc(ylabel)
    );
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn legend(out: &mut String, labels: &[String]) {
    for (s, label) in labels.iter().enumerate() {
        let y = PAD_T + 15.0 * s as f64;
        let c = PALETTE[s % PALETTE.len()];
        let _ = write!(
            out,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{c}"/><text x="{}" y="{}">{}</text>"#,
            W - PAD_R + 10.0,
            y,
            W - PAD_R + 24.0,
            y + 9.0,
            esc(label)
        );
    }
}

pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let x = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let y = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let mut out = String::new();
    frame(&mut out, title, xlabel, ylabel, x, y);
    let px = |v: f64| PAD_L + (v - x.0) / (x.1 - x.0) * (W - PAD_R - PAD_L);
    let py = |v: f64| H - PAD_B - (v - y.0) / (y.1 - y.0) * (H - PAD_B - PAD_T);
    for (s, ser) in series.iter().enumerate() {
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(a, b)| format!("{:.2},{:.2}", px(a), py(b)))
            .collect();
        let _ = write!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            PALETTE[s % PALETTE.len()],
            pts.join(" ")
        );
    }
    legend(&mut out, &series.iter().map(|s| s.label.clone()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Grouped bars: one group per category, one bar per series.
pub fn bar_chart(title: &str, ylabel: &str, categories: &[String], series: &[(String, Vec<f64>)]) -> String {
    let y = bounds(series.iter().flat_map(|s| s.1.iter().copied()).chain(std::iter::once(0.0)));
    let y = (y.0.min(0.0), y.1);
    let mut out = String::new();
    frame(&mut out, title, "", ylabel, (0.0, categories.len() as f64), y);
    let group_w = (W - PAD_R - PAD_L) / categories.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    let py = |v: f64| H - PAD_B - (v - y.0) / (y.1 - y.0) * (H - PAD_B - PAD_T);
    for (g, cat) in categories.iter().enumerate() {
        let gx = PAD_L + g as f64 * group_w;
        for (s, (_, vals)) in series.iter().enumerate() {
            let v = vals.get(g).copied().unwrap_or(f64::NAN);
            if !v.is_finite() {
                continue;
            }
            let top = py(v.max(0.0));
            let height = (py(v.min(0.0)) - top).abs();
            let _ = write!(
                out,
                r#"<rect x="{:.2}" y="{top:.2}" width="{bar_w:.2}" height="{height:.2}" fill="{}"/>"#,
                gx + group_w * 0.1 + s as f64 * bar_w,
                PALETTE[s % PALETTE.len()]
            );
        }
        let _ = write!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            gx + group_w / 2.0,
            H - PAD_B + 28.0,
            esc(cat)
        );
    }
    legend(&mut out, &series.iter().map(|s| s.0.clone()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

fn grouped<T>(rows: &[T], key: impl Fn(&T) -> usize, point: impl Fn(&T) -> (f64, f64), label: &str) -> Vec<Series> {
    let mut by: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        by.entry(key(r)).or_default().push(point(r));
    }
    by.into_iter()
        .map(|(k, points)| Series {
            label: format!("{label}={k}"),
            points,
        })
        .collect()
}

/// Renders the chart(s) for a record into `dir`.
pub fn render_charts(record: &RunRecord, dir: &Path) -> Result<Vec<PathBuf>> {
    let svg = match &record.table {
        Table::Users(rows) => line_chart(
            "Approximation vs users",
            "users n",
            "eta",
            &grouped(rows, |r| r.horizon, |r| (r.n as f64, r.eta), "T"),
        ),
        Table::Channels(rows) => line_chart(
            "Per-channel approximation vs channels",
            "channels k",
            "eta / k",
            &grouped(rows, |r| r.horizon, |r| (r.k as f64, r.eta_per_channel), "T"),
        ),
        Table::Optin(rows) => {
            let cats: Vec<String> = rows
                .iter()
                .map(|r| format!("{:.0}:{:.0}", r.ratio_in * 10.0, r.ratio_out * 10.0))
                .collect();
            let get = |f: fn(&crate::sim::experiments::OptinRow) -> Option<f64>| {
                rows.iter().map(|r| f(r).unwrap_or(f64::NAN)).collect::<Vec<_>>()
            };
            bar_chart(
                "Average utility by group",
                "expected utility",
                &cats,
                &[
                    ("opt-in".to_string(), get(|r| r.mean_opt_in)),
                    ("opt-out".to_string(), get(|r| r.mean_opt_out)),
                ],
            )
        }
        Table::Dynamics(rows) => line_chart(
            "Users per cell",
            "step",
            "users",
            &grouped(rows, |r| r.cell, |r| (r.step as f64, r.users as f64), "cell"),
        ),
        Table::Simulate(rep) => line_chart(
            "Learning trajectory",
            "period",
            "mean q-bar",
            &[Series {
                label: "q-bar".into(),
                points: rep.periods.iter().map(|p| (p.period as f64, p.mean_q_bar)).collect(),
            }],
        ),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("{}.svg", record.experiment));
    std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    Ok(vec![path])
}
