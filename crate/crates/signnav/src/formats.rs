//! Scene documents, line-delimited episode files and dataset manifests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use signnav_core::episode::{Episode, EpisodeStep, SmoothPath};
use signnav_core::math::Vec2;
use signnav_core::render::BBox;
use signnav_core::scene::{ArrowDir, Goal, Pose, SceneMap, Sign};
use signnav_core::sim::ActionId;

/// Rounds to 9 significant digits.
pub fn round9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

/// 64-bit FNV-1a of `bytes` as 16 lowercase hex digits.
pub fn content_hash(bytes: &[u8]) -> String {
    format!("{:016x}", signnav_core::hash::fnv1a64(bytes))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SignDoc {
    sign_id: String,
    position: [f64; 2],
    normal: f64,
    arrows: BTreeMap<String, String>,
    quad_width: f64,
    mount_height_frac: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GoalDoc {
    goal_id: String,
    position: [f64; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    scene_id: String,
    cell_size: f64,
    width: usize,
    height: usize,
    occupancy: Vec<String>,
    signs: Vec<SignDoc>,
    goals: Vec<GoalDoc>,
}

fn parse_arrow(s: &str, field: &str) -> Result<ArrowDir, String> {
    ArrowDir::parse(s).ok_or_else(|| format!("invalid scene field `{field}`: unknown arrow {s:?}"))
}

/// Pretty JSON scene document; reals keep at most 9 significant digits.
pub fn scene_to_json(scene: &SceneMap) -> String {
    let occ = scene.occupancy();
    let doc = SceneDoc {
        scene_id: scene.scene_id.clone(),
        cell_size: round9(scene.cell_size),
        width: scene.width,
        height: scene.height,
        occupancy: occ
            .chunks(scene.width)
            .map(|row| row.iter().map(|&o| if o { '#' } else { '.' }).collect())
            .collect(),
        signs: scene
            .signs
            .iter()
            .map(|s| SignDoc {
                sign_id: s.sign_id.clone(),
                position: [round9(s.position.x), round9(s.position.y)],
                normal: round9(s.normal),
                arrows: s.arrows.iter().map(|(k, v)| (k.clone(), v.as_str().to_string())).collect(),
                quad_width: round9(s.quad_width),
                mount_height_frac: round9(s.mount_height_frac),
            })
            .collect(),
        goals: scene
            .goals
            .iter()
            .map(|g| GoalDoc {
                goal_id: g.goal_id.clone(),
                position: [round9(g.position.x), round9(g.position.y)],
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("scene document serializes");
    s.push('\n');
    s
}

/// Parses and validates a scene document. Errors name the offending field.
pub fn scene_from_json(text: &str) -> Result<SceneMap, String> {
    let doc: SceneDoc = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if doc.occupancy.len() != doc.height {
        return Err(format!(
            "invalid scene field `occupancy`: {} rows for height {}",
            doc.occupancy.len(),
            doc.height
        ));
    }
    let mut occ = Vec::with_capacity(doc.width * doc.height);
    for (j, row) in doc.occupancy.iter().enumerate() {
        if row.len() != doc.width {
            return Err(format!("invalid scene field `occupancy`: row {j} has length {} for width {}", row.len(), doc.width));
        }
        for ch in row.chars() {
            occ.push(match ch {
                '#' => true,
                '.' => false,
                c => return Err(format!("invalid scene field `occupancy`: character {c:?} in row {j}")),
            });
        }
    }
    let mut signs = Vec::with_capacity(doc.signs.len());
    for s in doc.signs {
        let mut sign = Sign::new(s.sign_id, Vec2::new(s.position[0], s.position[1]), s.normal);
        sign.normal = s.normal;
        sign.quad_width = s.quad_width;
        sign.mount_height_frac = s.mount_height_frac;
        for (goal, dir) in s.arrows {
            let d = parse_arrow(&dir, "signs.arrows")?;
            sign.arrows.insert(goal, d);
        }
        signs.push(sign);
    }
    let goals = doc
        .goals
        .into_iter()
        .map(|g| Goal {
            goal_id: g.goal_id,
            position: Vec2::new(g.position[0], g.position[1]),
        })
        .collect();
    SceneMap::new(doc.scene_id, doc.cell_size, doc.width, doc.height, occ, signs, goals).map_err(|e| e.to_string())
}

#[derive(Serialize, Deserialize, Clone, Copy)]
#[serde(deny_unknown_fields)]
struct PoseDoc {
    x: f64,
    y: f64,
    theta: f64,
}

impl From<Pose> for PoseDoc {
    fn from(p: Pose) -> Self {
        PoseDoc {
            x: p.x(),
            y: p.y(),
            theta: p.theta(),
        }
    }
}

impl PoseDoc {
    fn pose(self) -> Result<Pose, String> {
        if !(self.x.is_finite() && self.y.is_finite() && (0.0..core::f64::consts::TAU).contains(&self.theta)) {
            return Err(format!("invalid pose ({}, {}, {})", self.x, self.y, self.theta));
        }
        Ok(Pose::new(self.x, self.y, self.theta))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathDoc {
    points: Vec<[f64; 2]>,
    tangents: Vec<[f64; 2]>,
    fallback_segments: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderDoc {
    episode_id: String,
    scene_id: String,
    goal_id: String,
    start: PoseDoc,
    gt_path: PathDoc,
    sign_arrows: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepDoc {
    t: usize,
    pose: PoseDoc,
    action: String,
    hint_dir: Option<String>,
    bbox: Option<[i32; 4]>,
}

fn pts(v: &[Vec2]) -> Vec<[f64; 2]> {
    v.iter().map(|p| [p.x, p.y]).collect()
}

fn vecs(v: Vec<[f64; 2]>) -> Vec<Vec2> {
    v.into_iter().map(|[x, y]| Vec2::new(x, y)).collect()
}

/// One JSON header line followed by one line per step. Reals are written at
/// full round-trip precision so that replays stay bit-exact.
pub fn episode_to_jsonl(ep: &Episode) -> String {
    let header = HeaderDoc {
        episode_id: ep.episode_id.clone(),
        scene_id: ep.scene_id.clone(),
        goal_id: ep.goal_id.clone(),
        start: ep.start.into(),
        gt_path: PathDoc {
            points: pts(&ep.gt_path.points),
            tangents: pts(&ep.gt_path.tangents),
            fallback_segments: ep.gt_path.fallback_segments.clone(),
        },
        sign_arrows: ep.sign_arrows.iter().map(|(k, v)| (k.clone(), v.as_str().to_string())).collect(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for (t, s) in ep.steps.iter().enumerate() {
        let doc = StepDoc {
            t,
            pose: s.pose.into(),
            action: s.action.as_str().to_string(),
            hint_dir: s.hint_dir.map(|d| d.as_str().to_string()),
            bbox: s.bbox.map(|b| [b.x_min, b.y_min, b.x_max, b.y_max]),
        };
        out.push_str(&serde_json::to_string(&doc).expect("step serializes"));
        out.push('\n');
    }
    out
}

pub fn episode_from_jsonl(text: &str) -> Result<Episode, String> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or("empty episode file")?;
    let h: HeaderDoc = serde_json::from_str(head).map_err(|e| format!("line 1: {e}"))?;
    let gt_path = SmoothPath {
        points: vecs(h.gt_path.points),
        tangents: vecs(h.gt_path.tangents),
        fallback_segments: h.gt_path.fallback_segments,
    };
    if gt_path.points.len() != gt_path.tangents.len() || gt_path.points.is_empty() {
        return Err("line 1: gt_path points and tangents must be nonempty and of equal length".into());
    }
    let mut sign_arrows = BTreeMap::new();
    for (k, v) in h.sign_arrows {
        let d = ArrowDir::parse(&v).ok_or_else(|| format!("line 1: unknown arrow {v:?}"))?;
        sign_arrows.insert(k, d);
    }
    let mut steps = Vec::new();
    for (n, line) in lines {
        let s: StepDoc = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", n + 1))?;
        if s.t != steps.len() {
            return Err(format!("line {}: step index {} out of order", n + 1, s.t));
        }
        let action = ActionId::parse(&s.action).ok_or_else(|| format!("line {}: unknown action {:?}", n + 1, s.action))?;
        let hint_dir = match s.hint_dir {
            Some(d) => Some(ArrowDir::parse(&d).ok_or_else(|| format!("line {}: unknown hint_dir {d:?}", n + 1))?),
            None => None,
        };
        steps.push(EpisodeStep {
            pose: s.pose.pose().map_err(|e| format!("line {}: {e}", n + 1))?,
            action,
            hint_dir,
            bbox: s.bbox.map(|[x_min, y_min, x_max, y_max]| BBox { x_min, y_min, x_max, y_max }),
        });
    }
    if steps.is_empty() {
        return Err("episode has no steps".into());
    }
    Ok(Episode {
        episode_id: h.episode_id,
        scene_id: h.scene_id,
        goal_id: h.goal_id,
        start: h.start.pose().map_err(|e| format!("line 1: {e}"))?,
        gt_path,
        sign_arrows,
        steps,
    })
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    /// Path relative to the directory holding the manifest.
    pub file: String,
    pub hash: String,
}

/// Scene index written by `gen-scenes`.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SceneIndex {
    pub seed: u64,
    pub config: String,
    pub scenes: Vec<FileEntry>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    /// Effective run configuration, `key = value` lines.
    pub config: String,
    pub scenes: Vec<FileEntry>,
    /// Split name to episode files.
    pub splits: BTreeMap<String, Vec<FileEntry>>,
}

pub fn to_pretty_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("document serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use signnav_core::episode::{build_nav_plan, generate_episode, EpisodeParams};
    use signnav_core::scene::{gen_floorplan, FloorplanParams};

    #[test]
    fn round9_keeps_nine_digits() {
        assert_eq!(round9(1.0 / 3.0), 0.333333333);
        assert_eq!(round9(-123456.7891234), -123456.789);
        assert_eq!(round9(0.0), 0.0);
        let s = serde_json::to_string(&round9(std::f64::consts::PI)).unwrap();
        assert_eq!(s, "3.14159265");
    }

    #[test]
    fn scene_round_trip_is_stable() {
        let s = gen_floorplan(4, &FloorplanParams::default()).unwrap();
        let text = scene_to_json(&s);
        let back = scene_from_json(&text).unwrap();
        assert_eq!(back.occupancy(), s.occupancy());
        assert_eq!(back.signs.len(), s.signs.len());
        assert_eq!(scene_to_json(&back), text);
    }

    #[test]
    fn scene_errors_name_field() {
        let s = SceneMap::from_ascii("s", 0.5, &["###", "#.#", "###"]).unwrap();
        let text = scene_to_json(&s);
        let bad = text.replace("\"cell_size\": 0.5", "\"cell_size\": -0.5");
        assert!(scene_from_json(&bad).unwrap_err().contains("cell_size"));
        let missing = text.replace("\"width\": 3,", "");
        assert!(scene_from_json(&missing).unwrap_err().contains("width"));
        let rows = text.replace("\"#.#\"", "\"#.\"");
        assert!(scene_from_json(&rows).unwrap_err().contains("occupancy"));
    }

    #[test]
    fn episode_round_trip_is_exact() {
        let s = gen_floorplan(2, &FloorplanParams::default()).unwrap();
        let p = EpisodeParams::default();
        let plan = build_nav_plan(&s, &p, 5).unwrap();
        let ep = generate_episode(&s, &plan, 9, &p).unwrap();
        let text = episode_to_jsonl(&ep);
        assert_eq!(text.lines().count(), ep.steps.len() + 1);
        let back = episode_from_jsonl(&text).unwrap();
        assert_eq!(back, ep);
        assert!(back.replays_exactly(&s));
    }

    #[test]
    fn episode_errors() {
        assert!(episode_from_jsonl("").is_err());
        let s = gen_floorplan(2, &FloorplanParams::default()).unwrap();
        let p = EpisodeParams::default();
        let plan = build_nav_plan(&s, &p, 5).unwrap();
        let ep = generate_episode(&s, &plan, 9, &p).unwrap();
        let text = episode_to_jsonl(&ep).replacen("\"forward\"", "\"jump\"", 1);
        assert!(episode_from_jsonl(&text).unwrap_err().contains("jump"));
    }
}
