//! Hand-written SVG: mazes with trajectories, and training curves.

use std::fmt::Write as _;

use crate::maze::trajlog::TrajRecord;
use crate::maze::MazeSpec;

use super::log::LogRecord;

pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

const CELL_PX: f64 = 32.0;

pub fn task_color(task: usize) -> &'static str {
    PALETTE[task % PALETTE.len()]
}

/// Maze walls, start, goal and every episode of `records` drawn as a
/// polyline colored by task.
pub fn maze_svg(maze: &MazeSpec, records: &[TrajRecord]) -> String {
    let w = maze.width as f64 * CELL_PX;
    let h = maze.height as f64 * CELL_PX;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(&maze.name));
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{w}" height="{h}" fill="#ffffff"/>"##);
    for r in 0..maze.height {
        for c in 0..maze.width {
            if maze.is_wall(r as i64, c as i64) {
                let _ = writeln!(
                    s,
                    r##"<rect class="wall" x="{}" y="{}" width="{CELL_PX}" height="{CELL_PX}" fill="#444444"/>"##,
                    c as f64 * CELL_PX,
                    r as f64 * CELL_PX
                );
            }
        }
    }
    let gr = maze.goal_radius * CELL_PX;
    let _ = writeln!(
        s,
        r##"<circle class="goal" cx="{:.2}" cy="{:.2}" r="{gr:.2}" fill="#ffd70080" stroke="#b8860b"/>"##,
        maze.goal.x * CELL_PX,
        maze.goal.y * CELL_PX
    );
    let _ = writeln!(
        s,
        r##"<circle class="start" cx="{:.2}" cy="{:.2}" r="5" fill="#000000"/>"##,
        maze.start.x * CELL_PX,
        maze.start.y * CELL_PX
    );

    let mut i = 0;
    while i < records.len() {
        let (task, ep) = (records[i].task, records[i].episode);
        let mut pts = String::new();
        while i < records.len() && records[i].task == task && records[i].episode == ep {
            let _ = write!(pts, "{:.2},{:.2} ", records[i].x * CELL_PX, records[i].y * CELL_PX);
            i += 1;
        }
        let _ = writeln!(
            s,
            r#"<polyline class="traj" data-task="{task}" data-episode="{ep}" points="{}" fill="none" stroke="{}" stroke-width="1.5" stroke-opacity="0.7"/>"#,
            pts.trim_end(),
            task_color(task)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One series of a curve plot.
pub struct Series<'a> {
    pub label: String,
    pub records: &'a [LogRecord],
}

/// Two stacked panels: mean episode reward and policy entropy over steps.
pub fn curves_svg(series: &[Series<'_>]) -> String {
    let (w, panel_h, margin) = (640.0, 240.0, 50.0);
    let h = 2.0 * panel_h + 3.0 * margin;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{w}" height="{h}" fill="#ffffff"/>"##);
    let max_step = series
        .iter()
        .flat_map(|x| x.records.iter().map(|r| r.step))
        .max()
        .unwrap_or(1)
        .max(1) as f64;

    let panels: [(&str, fn(&LogRecord) -> Option<f64>); 2] = [
        ("training reward per episode", |r| {
            (r.episodes_finished > 0).then_some(r.mean_episode_reward)
        }),
        ("policy entropy", |r| Some(r.entropy)),
    ];
    for (p, (title, get)) in panels.iter().enumerate() {
        let top = margin + p as f64 * (panel_h + margin);
        let vals: Vec<f64> = series.iter().flat_map(|x| x.records.iter().filter_map(get)).collect();
        let (lo, hi) = bounds(&vals);
        let x0 = margin;
        let x1 = w - margin / 2.0;
        let _ = writeln!(
            s,
            r##"<rect x="{x0}" y="{top}" width="{}" height="{panel_h}" fill="none" stroke="#000000"/>"##,
            x1 - x0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x0}" y="{}" font-family="sans-serif" font-size="13">{title}</text>"#,
            top - 8.0
        );
        let _ = writeln!(
            s,
            r#"<text x="4" y="{}" font-family="sans-serif" font-size="10">{hi:.2}</text>"#,
            top + 10.0
        );
        let _ = writeln!(
            s,
            r#"<text x="4" y="{}" font-family="sans-serif" font-size="10">{lo:.2}</text>"#,
            top + panel_h
        );
        for (k, ser) in series.iter().enumerate() {
            let mut pts = String::new();
            for r in ser.records {
                if let Some(v) = get(r) {
                    let x = x0 + (x1 - x0) * r.step as f64 / max_step;
                    let y = top + panel_h * (1.0 - (v - lo) / (hi - lo));
                    let _ = write!(pts, "{x:.2},{y:.2} ");
                }
            }
            let _ = writeln!(
                s,
                r#"<polyline class="curve" data-series="{}" points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
                escape(&ser.label),
                pts.trim_end(),
                PALETTE[k % PALETTE.len()]
            );
        }
    }
    for (k, ser) in series.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{}">{}</text>"#,
            margin + 120.0 * k as f64,
            h - 12.0,
            PALETTE[k % PALETTE.len()],
            escape(&ser.label)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">steps (max {max_step})</text>"#,
        w - 200.0,
        h - 12.0
    );
    s.push_str("</svg>\n");
    s
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
