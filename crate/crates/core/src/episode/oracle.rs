use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::{EpisodeError, SmoothPath};
use crate::math::{self, angle_diff, deg, Vec2};
use crate::scene::{ArrowDir, Goal, Pose, SceneMap};
use crate::sim::{apply_action, ActionId, FORWARD_STEP};

pub const ANNOTATE_RADIUS: f64 = 3.0;
pub const CURVATURE_WINDOW: f64 = 2.0;
pub const STRAIGHT_BAND_DEG: f64 = 20.0;

pub const LOOKAHEAD: f64 = 0.5;
pub const DEADBAND_DEG: f64 = 7.5;
pub const STOP_RADIUS: f64 = 0.5;
pub const STOP_ALIGN_DEG: f64 = 45.0;
/// Lower bound on the follower step budget so very short paths can still
/// turn in place before stopping.
pub const MIN_STEP_BUDGET: usize = 24;

/// Copy of `scene` whose `goal_id` arrows are those implied by `path`.
pub fn annotate_signs(scene: &SceneMap, path: &SmoothPath, goal_id: &str) -> SceneMap {
    scene.with_goal_arrows(goal_id, &sign_arrows(scene, path))
}

/// Arrow on every sign within the annotation radius of the path, keyed by
/// sign id. Signs farther away get no entry.
pub fn sign_arrows(scene: &SceneMap, path: &SmoothPath) -> BTreeMap<String, ArrowDir> {
    let mut out = BTreeMap::new();
    if path.points.is_empty() {
        return out;
    }
    let arc = path.arc_lengths();
    let band = deg(STRAIGHT_BAND_DEG);
    for sign in &scene.signs {
        let (near, d) = path
            .points
            .iter()
            .enumerate()
            .map(|(k, p)| (k, p.dist(sign.position)))
            .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
        if d > ANNOTATE_RADIUS {
            continue;
        }
        let target = arc[near] + CURVATURE_WINDOW;
        let fwd = (near..path.points.len())
            .find(|&k| arc[k] >= target)
            .unwrap_or(path.points.len() - 1);
        let chord = path.points[fwd] - path.points[near];
        let delta = if chord.norm() > 0.0 {
            angle_diff(chord.angle(), path.tangents[near].angle())
        } else {
            0.0
        };
        let dir = if delta > band {
            ArrowDir::Left
        } else if delta < -band {
            ArrowDir::Right
        } else {
            ArrowDir::Straight
        };
        out.insert(sign.sign_id.clone(), dir);
    }
    out
}

/// Step budget for following a path of `length` meters.
pub fn step_budget(length: f64) -> usize {
    (math::ceil(10.0 * length / FORWARD_STEP) as usize).max(MIN_STEP_BUDGET)
}

/// Greedy lookahead follower from the first path point and tangent. Each
/// entry is the pose at which the action was taken.
pub fn oracle_actions(
    scene: &SceneMap,
    path: &SmoothPath,
    goal: &Goal,
) -> Result<Vec<(Pose, ActionId)>, EpisodeError> {
    let start = match (path.points.first(), path.tangents.first()) {
        (Some(&p), Some(&t)) => Pose::at(p, t.angle()),
        _ => return Err(EpisodeError::InvalidParam("empty path")),
    };
    oracle_from(scene, path, goal, start)
}

/// Follower starting from an arbitrary pose near the path.
pub fn oracle_from(
    scene: &SceneMap,
    path: &SmoothPath,
    goal: &Goal,
    start: Pose,
) -> Result<Vec<(Pose, ActionId)>, EpisodeError> {
    let mut follower = Follower::new(path, goal.position)?;
    let budget = step_budget(path.length());
    let mut pose = start;
    let mut out = Vec::new();
    for _ in 0..budget {
        let action = follower.action(&pose);
        out.push((pose, action));
        if action == ActionId::Stop {
            return Ok(out);
        }
        pose = apply_action(scene, &pose, action);
    }
    Err(EpisodeError::OracleBudget { steps: budget })
}

/// Stateful lookahead controller along a fixed path.
#[derive(Clone, Debug)]
pub struct Follower {
    points: Vec<Vec2>,
    arc: Vec<f64>,
    goal: Vec2,
    near: Option<usize>,
}

impl Follower {
    pub fn new(path: &SmoothPath, goal: Vec2) -> Result<Self, EpisodeError> {
        if path.points.is_empty() {
            return Err(EpisodeError::InvalidParam("empty path"));
        }
        Ok(Follower {
            points: path.points.clone(),
            arc: path.arc_lengths(),
            goal,
            near: None,
        })
    }

    pub fn action(&mut self, pose: &Pose) -> ActionId {
        let pts = &self.points;
        let p = pose.position();
        // progress is monotone; one step moves at most 0.25 m along the path
        let near = match self.near {
            None => nearest_index(pts, p, 0, pts.len()),
            Some(k) => {
                let window = ((1.0 + FORWARD_STEP) / super::PATH_SPACING) as usize + 1;
                nearest_index(pts, p, k, (k + window).min(pts.len()))
            }
        };
        self.near = Some(near);
        let reach = self.arc[near] + LOOKAHEAD;
        let mut target = near;
        while target + 1 < pts.len() && self.arc[target + 1] <= reach {
            target += 1;
        }
        let to_target = pts[target] - p;
        let err = if to_target.norm() > 1e-9 {
            angle_diff(to_target.angle(), pose.theta())
        } else {
            0.0
        };
        if p.dist(self.goal) <= STOP_RADIUS && err.abs() <= deg(STOP_ALIGN_DEG) {
            ActionId::Stop
        } else if err > deg(DEADBAND_DEG) {
            ActionId::Left
        } else if err < -deg(DEADBAND_DEG) {
            ActionId::Right
        } else {
            ActionId::Forward
        }
    }
}

fn nearest_index(pts: &[Vec2], p: Vec2, lo: usize, hi: usize) -> usize {
    let mut best = lo;
    let mut bd = f64::INFINITY;
    for (k, q) in pts.iter().enumerate().take(hi.max(lo + 1)).skip(lo) {
        let d = q.dist(p);
        if d < bd {
            bd = d;
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::smooth_path;
    use crate::math::PI;
    use crate::scene::Sign;
    use alloc::vec;

    fn open(n: usize) -> SceneMap {
        let rows: Vec<String> = (0..n)
            .map(|j| {
                (0..n)
                    .map(|i| if i == 0 || j == 0 || i == n - 1 || j == n - 1 { '#' } else { '.' })
                    .collect()
            })
            .collect();
        let refs: Vec<&str> = rows.iter().map(|r| r.as_str()).collect();
        SceneMap::from_ascii("open", 0.1, &refs).unwrap()
    }

    fn goal_at(p: Vec2) -> Goal {
        Goal {
            goal_id: "g".into(),
            position: p,
        }
    }

    #[test]
    fn straight_one_meter() {
        let s = open(60);
        let path = smooth_path(&s, &[Vec2::new(2.0, 2.0), Vec2::new(3.0, 2.0)]);
        let acts: Vec<ActionId> = oracle_actions(&s, &path, &goal_at(Vec2::new(3.0, 2.0)))
            .unwrap()
            .into_iter()
            .map(|(_, a)| a)
            .collect();
        assert_eq!(acts, vec![ActionId::Forward, ActionId::Forward, ActionId::Stop]);
    }

    #[test]
    fn start_at_goal_stops() {
        let s = open(60);
        let path = SmoothPath::from_points(vec![Vec2::new(2.0, 2.0)]);
        let acts = oracle_actions(&s, &path, &goal_at(Vec2::new(2.0, 2.0))).unwrap();
        assert_eq!(acts.len(), 1);
        assert_eq!(acts[0].1, ActionId::Stop);
    }

    #[test]
    fn target_to_the_left_turns_six_times() {
        let s = open(60);
        let path = smooth_path(&s, &[Vec2::new(2.0, 2.0), Vec2::new(2.0, 3.0)]);
        let start = Pose::new(2.0, 2.0, 0.0);
        let acts: Vec<ActionId> = oracle_from(&s, &path, &goal_at(Vec2::new(2.0, 3.0)), start)
            .unwrap()
            .into_iter()
            .map(|(_, a)| a)
            .collect();
        assert_eq!(&acts[..7], &[ActionId::Left; 6].iter().copied().chain([ActionId::Forward]).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn blocked_follower_exhausts_budget() {
        let s = open(30);
        // path runs through the wall at x = 2.9
        let path = SmoothPath::from_points(vec![Vec2::new(2.5, 1.5), Vec2::new(3.5, 1.5)]);
        let err = oracle_actions(&s, &path, &goal_at(Vec2::new(3.5, 1.5))).unwrap_err();
        assert!(matches!(err, EpisodeError::OracleBudget { .. }));
    }

    fn sign_scene() -> SceneMap {
        let mut s = open(100);
        // sign on the south wall face y = 0.1, facing +y
        s.signs.push(Sign::new("n", Vec2::new(3.0, 0.1), 0.5 * PI));
        s.signs.push(Sign::new("far", Vec2::new(9.9, 9.0), PI));
        s
    }

    #[test]
    fn arrows_follow_path_curvature() {
        let s = sign_scene();
        let straight = smooth_path(&s, &[Vec2::new(1.0, 1.5), Vec2::new(8.0, 1.5)]);
        let a = annotate_signs(&s, &straight, "g");
        assert_eq!(a.sign("n").unwrap().arrows.get("g"), Some(&ArrowDir::Straight));
        assert!(a.sign("far").unwrap().arrows.is_empty());

        // 90 degree left turn 1 m past the sign
        let wp = [Vec2::new(1.0, 1.5), Vec2::new(3.5, 1.5), Vec2::new(4.0, 1.5), Vec2::new(4.0, 6.0)];
        let left = smooth_path(&s, &wp);
        let a = sign_arrows(&s, &left);
        // independent recomputation of the curvature angle
        let k = (0..left.points.len())
            .min_by(|&i, &j| {
                left.points[i]
                    .dist(s.signs[0].position)
                    .total_cmp(&left.points[j].dist(s.signs[0].position))
            })
            .unwrap();
        let arc = left.arc_lengths();
        let f = (k..arc.len()).find(|&q| arc[q] >= arc[k] + 2.0).unwrap();
        let d = angle_diff((left.points[f] - left.points[k]).angle(), left.tangents[k].angle());
        assert!(d > deg(20.0), "{d}");
        assert_eq!(a.get("n"), Some(&ArrowDir::Left));

        let mut mirrored = open(100);
        mirrored.signs.push(Sign::new("n", Vec2::new(3.0, 9.9), 1.5 * PI));
        let wp_m: Vec<Vec2> = wp.iter().map(|p| Vec2::new(p.x, 10.0 - p.y)).collect();
        let right = smooth_path(&mirrored, &wp_m);
        assert_eq!(sign_arrows(&mirrored, &right).get("n"), Some(&ArrowDir::Right));
    }

    #[test]
    fn annotation_is_idempotent() {
        let s = sign_scene();
        let path = smooth_path(&s, &[Vec2::new(1.0, 1.5), Vec2::new(4.0, 1.5), Vec2::new(4.0, 6.0)]);
        let once = annotate_signs(&s, &path, "g");
        assert_eq!(annotate_signs(&once, &path, "g"), once);
    }
}
