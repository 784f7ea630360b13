//! SVG bar charts of Hβ per task and β.
//!
//! Each file holds one group per integration mechanism. Inside a group, bars
//! are the five best cells at that β, colored by loss type and labeled by
//! strategy. A dashed line marks the baseline when one is present.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::record::{top_n_by, Record};

pub const TOP_N: usize = 5;

const BAR_W: f64 = 22.0;
const BAR_GAP: f64 = 4.0;
const GROUP_GAP: f64 = 30.0;
const PLOT_H: f64 = 240.0;
const LEFT: f64 = 50.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 90.0;
const RIGHT: f64 = 140.0;

fn color(loss: &str) -> &'static str {
    match loss {
        "soft" => "#4c72b0",
        "binary" => "#dd8452",
        "real" => "#55a868",
        _ => "#8c8c8c",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Rows the charts draw from: aggregates when present, otherwise runs.
fn plotted(records: &[Record]) -> Vec<Record> {
    let agg: Vec<Record> = records.iter().filter(|r| r.is_aggregate()).cloned().collect();
    if agg.is_empty() {
        records.iter().cloned().map(|mut r| {
            r.seed = crate::record::AGG.into();
            r
        }).collect()
    } else {
        agg
    }
}

/// One chart for `task` at `beta`. `records` should already be filtered to
/// the task.
pub fn chart(task: &str, beta: f64, records: &[Record]) -> String {
    let rows = plotted(records);
    let baseline = rows.iter().find(|r| r.mechanism == "none");
    let mut groups = top_n_by(&rows, beta, TOP_N, &|r| r.mechanism.clone());
    if groups.is_empty() {
        if let Some(b) = baseline {
            groups.push(("none".into(), vec![b]));
        }
    }
    let bars: usize = groups.iter().map(|(_, v)| v.len()).sum();
    let plot_w = bars as f64 * (BAR_W + BAR_GAP) + groups.len().saturating_sub(1) as f64 * GROUP_GAP + BAR_GAP;
    let width = LEFT + plot_w + RIGHT;
    let height = TOP + PLOT_H + BOTTOM;
    let y_of = |v: f64| TOP + PLOT_H * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="20" font-size="13">{} H-beta, beta = {beta}</text>"#,
        escape(task)
    );
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let y = y_of(v);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y}" x2="{}" y2="{y}" stroke="#dddddd"/><text x="{}" y="{}" text-anchor="end">{v}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#,
        TOP + PLOT_H
    );

    let mut x = LEFT + BAR_GAP;
    for (gi, (mech, members)) in groups.iter().enumerate() {
        if gi > 0 {
            x += GROUP_GAP - BAR_GAP;
        }
        let start = x;
        for r in members {
            let v = r.hbeta_at(beta).unwrap_or(f64::NAN);
            let h = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
            let _ = writeln!(
                s,
                r#"<rect class="bar" x="{x}" y="{}" width="{BAR_W}" height="{}" fill="{}" data-loss="{}" data-strategy="{}" data-value="{v}"><title>{} {} {}: {v}</title></rect>"#,
                y_of(h),
                PLOT_H * h,
                color(&r.loss_type),
                escape(&r.loss_type),
                escape(&r.strategy),
                escape(&r.loss_type),
                escape(&r.strategy),
                escape(&r.mechanism),
            );
            let lx = x + BAR_W / 2.0;
            let ly = TOP + PLOT_H + 8.0;
            let _ = writeln!(
                s,
                r#"<text x="{lx}" y="{ly}" transform="rotate(60 {lx} {ly})" font-size="9">{}</text>"#,
                escape(&r.strategy)
            );
            x += BAR_W + BAR_GAP;
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (start + x - BAR_GAP) / 2.0,
            TOP + PLOT_H + 75.0,
            escape(mech)
        );
    }
    if let Some(b) = baseline.and_then(|b| b.hbeta_at(beta)).filter(|v| v.is_finite()) {
        let y = y_of(b);
        let _ = writeln!(
            s,
            r#"<line class="baseline" x1="{LEFT}" y1="{y}" x2="{}" y2="{y}" stroke="black" stroke-dasharray="5,3" data-value="{b}"/>"#,
            LEFT + plot_w
        );
    }
    let lx = LEFT + plot_w + 15.0;
    for (i, loss) in ["soft", "binary", "real", "none"].iter().enumerate() {
        let y = TOP + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{y}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{loss}</text>"#,
            color(loss),
            lx + 14.0,
            y + 9.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black" stroke-dasharray="5,3"/><text x="{}" y="{}">baseline</text>"#,
        lx,
        TOP + 75.0,
        lx + 10.0,
        TOP + 75.0,
        lx + 14.0,
        TOP + 79.0
    );
    s.push_str("</svg>\n");
    s
}

/// Writes `<task>_hbeta_<β>.svg` for every task present and every β. Returns
/// the paths written; empty input writes nothing.
pub fn emit_plots(records: &[Record], betas: &[f64], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut tasks: Vec<&str> = Vec::new();
    for r in records {
        if !tasks.contains(&r.task.as_str()) {
            tasks.push(&r.task);
        }
    }
    if tasks.is_empty() {
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(out_dir)?;
    let mut paths = Vec::new();
    for task in tasks {
        let rows: Vec<Record> = records.iter().filter(|r| r.task == task).cloned().collect();
        for &b in betas {
            let path = out_dir.join(format!("{task}_hbeta_{b}.svg"));
            std::fs::write(&path, chart(task, b, &rows))?;
            paths.push(path);
        }
    }
    Ok(paths)
}
