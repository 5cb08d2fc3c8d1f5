//! Evaluation reports (text table and JSON) and SVG trajectory overlays.

use std::fmt::Write as _;

use serde::Serialize;
use signnav_core::episode::Episode;
use signnav_core::metrics::EvalReport;
use signnav_core::scene::SceneMap;

/// Report columns, in order.
pub const COLUMNS: [&str; 5] = ["SR", "NDTW", "SDTW", "RMSE", "steps"];

#[derive(Serialize)]
struct Row<'a> {
    episode_id: &'a str,
    #[serde(rename = "SR")]
    sr: f64,
    #[serde(rename = "NDTW")]
    ndtw: f64,
    #[serde(rename = "SDTW")]
    sdtw: f64,
    #[serde(rename = "RMSE")]
    rmse: f64,
    steps: f64,
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    policy: &'a str,
    split: &'a str,
    columns: [&'static str; 5],
    mean: Row<'a>,
    episodes: Vec<Row<'a>>,
}

fn mean_row(r: &EvalReport) -> Row<'static> {
    Row {
        episode_id: "mean",
        sr: r.sr,
        ndtw: r.ndtw,
        sdtw: r.sdtw,
        rmse: r.rmse,
        steps: r.steps,
    }
}

fn rows(r: &EvalReport) -> Vec<Row<'_>> {
    r.rows
        .iter()
        .map(|e| Row {
            episode_id: &e.episode_id,
            sr: if e.success { 1.0 } else { 0.0 },
            ndtw: e.ndtw,
            sdtw: e.sdtw,
            rmse: e.rmse,
            steps: e.steps as f64,
        })
        .collect()
}

pub fn report_json(r: &EvalReport, split: &str) -> String {
    let doc = ReportDoc {
        policy: &r.policy,
        split,
        columns: COLUMNS,
        mean: mean_row(r),
        episodes: rows(r),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
    s.push('\n');
    s
}

pub fn report_text(r: &EvalReport, split: &str) -> String {
    let mut out = format!("policy: {}  split: {}  episodes: {}\n", r.policy, split, r.rows.len());
    let all = rows(r);
    let id_w = all.iter().map(|e| e.episode_id.len()).max().unwrap_or(0).max(7);
    let _ = write!(out, "{:<id_w$}", "episode");
    for c in COLUMNS {
        let _ = write!(out, " {c:>8}");
    }
    out.push('\n');
    let line = |out: &mut String, e: &Row<'_>| {
        let _ = writeln!(
            out,
            "{:<id_w$} {:>8.2} {:>8.4} {:>8.4} {:>8.4} {:>8.1}",
            e.episode_id, e.sr, e.ndtw, e.sdtw, e.rmse, e.steps
        );
    };
    for e in &all {
        line(&mut out, e);
    }
    line(&mut out, &mean_row(r));
    out
}

/// Occupancy, signs, ground-truth path and agent path in scene coordinates
/// (y up), one SVG per episode.
pub fn trajectory_svg(scene: &SceneMap, episode: &Episode, agent: &[(f64, f64)]) -> String {
    let ext = scene.extent();
    let scale = 600.0 / ext.x.max(ext.y);
    let (w, h) = (ext.x * scale, ext.y * scale);
    let px = |x: f64, y: f64| (x * scale, h - y * scale);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.2} {h:.2}">"#
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let cs = scene.cell_size * scale;
    for j in 0..scene.height {
        // runs of occupied cells per row
        let mut i = 0;
        while i < scene.width {
            if !scene.occupied(i as isize, j as isize) {
                i += 1;
                continue;
            }
            let start = i;
            while i < scene.width && scene.occupied(i as isize, j as isize) {
                i += 1;
            }
            let (x, y) = px(start as f64 * scene.cell_size, (j + 1) as f64 * scene.cell_size);
            let _ = writeln!(
                s,
                r##"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{cs:.2}" fill="#555555"/>"##,
                (i - start) as f64 * cs
            );
        }
    }
    let polyline = |s: &mut String, pts: &mut dyn Iterator<Item = (f64, f64)>, colour: &str| {
        let p: Vec<String> = pts
            .map(|(x, y)| {
                let (a, b) = px(x, y);
                format!("{a:.2},{b:.2}")
            })
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#, p.join(" "));
    };
    polyline(&mut s, &mut episode.gt_path.points.iter().map(|p| (p.x, p.y)), "#2a9d3f");
    polyline(&mut s, &mut agent.iter().copied(), "#d62828");
    for sign in &scene.signs {
        let (x, y) = px(sign.position.x, sign.position.y);
        let _ = writeln!(s, r##"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="#1d4ed8"><title>{}</title></circle>"##, sign.sign_id);
    }
    if let Some(g) = scene.goal(&episode.goal_id) {
        let (x, y) = px(g.position.x, g.position.y);
        let _ = writeln!(s, r##"<circle cx="{x:.2}" cy="{y:.2}" r="6" fill="none" stroke="#f59e0b" stroke-width="2"/>"##);
    }
    let (x, y) = px(episode.start.x(), episode.start.y());
    let _ = writeln!(s, r##"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="#000000"/>"##);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use signnav_core::metrics::EpisodeResult;
    use signnav_core::sim::Outcome;

    fn report() -> EvalReport {
        let row = |id: &str, ok: bool, n: f64| EpisodeResult {
            episode_id: id.into(),
            success: ok,
            outcome: if ok { Outcome::Success } else { Outcome::StopFailure },
            ndtw: n,
            sdtw: if ok { n } else { 0.0 },
            rmse: 0.1,
            steps: 10,
            poses: Vec::new(),
        };
        EvalReport::from_rows("oracle".into(), vec![row("a", true, 0.9), row("b", false, 0.5)])
    }

    #[test]
    fn json_has_exactly_the_columns() {
        let v: serde_json::Value = serde_json::from_str(&report_json(&report(), "train")).unwrap();
        let keys: Vec<&str> = v["mean"].as_object().unwrap().keys().map(String::as_str).collect();
        let mut expect: Vec<&str> = COLUMNS.to_vec();
        expect.push("episode_id");
        expect.sort();
        let mut got = keys.clone();
        got.sort();
        assert_eq!(got, expect);
        assert_eq!(v["mean"]["SR"], 0.5);
        assert_eq!(v["mean"]["SDTW"], 0.45);
    }

    #[test]
    fn text_header_lists_columns() {
        let t = report_text(&report(), "train");
        let header = t.lines().nth(1).unwrap();
        let cols: Vec<&str> = header.split_whitespace().skip(1).collect();
        assert_eq!(cols, COLUMNS);
        assert!(t.lines().last().unwrap().starts_with("mean"));
    }
}
