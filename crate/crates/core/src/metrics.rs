//! Trajectory similarity metrics, policy interface and batch evaluation.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::episode::{resample, Episode, Follower, SmoothPath};
use crate::math::{self, Vec2};
use crate::render::{CameraModel, Frame};
use crate::scene::{Pose, SceneMap};
use crate::sim::{rule_policy, ActionId, Env, Outcome, RuleMemory, SimError};

/// Spacing of the reference trajectory used for nDTW, meters.
pub const REFERENCE_SPACING: f64 = 0.25;
/// nDTW distance threshold, meters.
pub const NDTW_THRESHOLD: f64 = 1.0;

/// Dynamic time warping with Euclidean point cost.
pub fn dtw(r: &[Vec2], q: &[Vec2]) -> f64 {
    assert!(!r.is_empty() && !q.is_empty(), "dtw needs nonempty trajectories");
    let m = q.len();
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    for (i, a) in r.iter().enumerate() {
        for (j, b) in q.iter().enumerate() {
            let c = a.dist(*b);
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let mut best = f64::INFINITY;
                if i > 0 {
                    best = best.min(prev[j]);
                }
                if j > 0 {
                    best = best.min(cur[j - 1]);
                }
                if i > 0 && j > 0 {
                    best = best.min(prev[j - 1]);
                }
                best
            };
            cur[j] = c + best;
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[m - 1]
}

pub fn ndtw(r: &[Vec2], q: &[Vec2], d_th: f64) -> f64 {
    math::exp(-dtw(r, q) / (r.len() as f64 * d_th))
}

pub fn sdtw(success: bool, ndtw_value: f64) -> f64 {
    if success {
        ndtw_value
    } else {
        0.0
    }
}

/// Root mean square of each agent point's distance to its nearest path point.
pub fn rmse(agent: &[Vec2], gt_path: &SmoothPath) -> f64 {
    assert!(!agent.is_empty() && !gt_path.points.is_empty());
    let sum: f64 = agent
        .iter()
        .map(|a| {
            gt_path
                .points
                .iter()
                .map(|p| a.dist(*p))
                .fold(f64::INFINITY, f64::min)
        })
        .map(|d| d * d)
        .sum();
    math::sqrt(sum / agent.len() as f64)
}

/// Reference trajectory for nDTW: the ground-truth path at step-scale spacing.
pub fn reference_trajectory(gt_path: &SmoothPath) -> Vec<Vec2> {
    resample(&gt_path.points, REFERENCE_SPACING)
}

/// Agent positions with consecutive repeats (turns in place, blocked moves)
/// collapsed.
pub fn agent_trajectory(poses: &[Pose]) -> Vec<Vec2> {
    let mut out: Vec<Vec2> = Vec::with_capacity(poses.len());
    for p in poses {
        let q = p.position();
        if out.last() != Some(&q) {
            out.push(q);
        }
    }
    out
}

/// Everything a policy may look at when choosing an action. `goal` and
/// `gt_path` are privileged and only used by the oracle and rule baselines.
pub struct PolicyInput<'a> {
    pub frame: &'a Frame,
    pub pose: Pose,
    pub goal: Vec2,
    pub gt_path: &'a SmoothPath,
    pub step: usize,
}

pub trait Policy {
    fn name(&self) -> String;
    /// Called before each episode.
    fn reset(&mut self);
    fn act(&mut self, input: &PolicyInput<'_>) -> ActionId;
}

/// Path follower on the episode's ground-truth path.
#[derive(Default)]
pub struct OraclePolicy {
    follower: Option<Follower>,
}

impl OraclePolicy {
    pub fn new() -> Self {
        OraclePolicy::default()
    }
}

impl Policy for OraclePolicy {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn reset(&mut self) {
        self.follower = None;
    }

    fn act(&mut self, input: &PolicyInput<'_>) -> ActionId {
        let f = self.follower.get_or_insert_with(|| {
            Follower::new(input.gt_path, input.goal).expect("nonempty path")
        });
        f.action(&input.pose)
    }
}

/// Reactive sign-following baseline with privileged stop distance.
#[derive(Default)]
pub struct RulePolicy {
    memory: RuleMemory,
}

impl Policy for RulePolicy {
    fn name(&self) -> String {
        "rule".into()
    }

    fn reset(&mut self) {
        self.memory = RuleMemory::default();
    }

    fn act(&mut self, input: &PolicyInput<'_>) -> ActionId {
        rule_policy(input.frame, &mut self.memory, input.pose.position().dist(input.goal))
    }
}

/// Stops immediately.
#[derive(Default)]
pub struct StopPolicy;

impl Policy for StopPolicy {
    fn name(&self) -> String {
        "stop".into()
    }

    fn reset(&mut self) {}

    fn act(&mut self, _input: &PolicyInput<'_>) -> ActionId {
        ActionId::Stop
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn reset(&mut self) {
        (**self).reset()
    }

    fn act(&mut self, input: &PolicyInput<'_>) -> ActionId {
        (**self).act(input)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub episode_id: String,
    pub success: bool,
    pub outcome: Outcome,
    pub ndtw: f64,
    pub sdtw: f64,
    pub rmse: f64,
    pub steps: usize,
    /// Poses visited, starting pose first, final pose last.
    pub poses: Vec<Pose>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub policy: String,
    pub rows: Vec<EpisodeResult>,
    pub sr: f64,
    pub ndtw: f64,
    pub sdtw: f64,
    pub rmse: f64,
    pub steps: f64,
}

impl EvalReport {
    pub fn from_rows(policy: String, rows: Vec<EpisodeResult>) -> Self {
        let n = rows.len().max(1) as f64;
        let mean = |f: &dyn Fn(&EpisodeResult) -> f64| rows.iter().map(f).sum::<f64>() / n;
        EvalReport {
            policy,
            sr: mean(&|r| if r.success { 1.0 } else { 0.0 }),
            ndtw: mean(&|r| r.ndtw),
            sdtw: mean(&|r| r.sdtw),
            rmse: mean(&|r| r.rmse),
            steps: mean(&|r| r.steps as f64),
            rows,
        }
    }
}

/// Rolls `policy` out on one episode and scores it.
pub fn evaluate_episode(
    scene: &SceneMap,
    episode: &Episode,
    policy: &mut dyn Policy,
    cam: &CameraModel,
    max_steps: usize,
) -> Result<EpisodeResult, SimError> {
    let annotated = episode.annotated_scene(scene);
    let goal = annotated
        .goal(&episode.goal_id)
        .ok_or_else(|| crate::render::RenderError::UnknownGoal(episode.goal_id.clone()))?
        .position;
    policy.reset();
    let (mut env, mut obs) = Env::reset(&annotated, cam, &episode.goal_id, episode.start, max_steps)?;
    let mut poses = vec![episode.start];
    while !obs.state.done {
        let input = PolicyInput {
            frame: &obs.frame,
            pose: obs.state.pose,
            goal,
            gt_path: &episode.gt_path,
            step: obs.state.step_count,
        };
        let action = policy.act(&input);
        obs = env.step(action)?;
        poses.push(obs.state.pose);
    }
    let state = obs.state;
    let success = state.outcome == Outcome::Success;
    let agent = agent_trajectory(&poses);
    let n = ndtw(&reference_trajectory(&episode.gt_path), &agent, NDTW_THRESHOLD);
    Ok(EpisodeResult {
        episode_id: episode.episode_id.clone(),
        success,
        outcome: state.outcome,
        ndtw: n,
        sdtw: sdtw(success, n),
        rmse: rmse(&agent, &episode.gt_path),
        steps: state.step_count,
        poses,
    })
}

/// Evaluates `policy` over `(scene, episode)` pairs in order.
pub fn evaluate<'a>(
    items: impl IntoIterator<Item = (&'a SceneMap, &'a Episode)>,
    policy: &mut dyn Policy,
    cam: &CameraModel,
    max_steps: usize,
) -> Result<EvalReport, SimError> {
    let mut rows = Vec::new();
    for (scene, ep) in items {
        rows.push(evaluate_episode(scene, ep, policy, cam, max_steps)?);
    }
    Ok(EvalReport::from_rows(policy.name(), rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::{build_nav_plan, generate_episode, EpisodeParams};
    use crate::hash::stream;
    use crate::scene::{gen_floorplan, FloorplanParams};
    use crate::sim::DEFAULT_MAX_STEPS;
    use rand::Rng;

    fn v(pts: &[(f64, f64)]) -> Vec<Vec2> {
        pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect()
    }

    /// Minimum over every monotone alignment, costs accumulated in path order.
    fn brute(r: &[Vec2], q: &[Vec2], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = r[i].dist(q[j]) + acc;
        if i + 1 == r.len() && j + 1 == q.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < r.len() {
            brute(r, q, i + 1, j, acc, best);
        }
        if j + 1 < q.len() {
            brute(r, q, i, j + 1, acc, best);
        }
        if i + 1 < r.len() && j + 1 < q.len() {
            brute(r, q, i + 1, j + 1, acc, best);
        }
    }

    #[test]
    fn dtw_examples() {
        let r = v(&[(0.0, 0.0), (1.0, 0.0)]);
        assert_eq!(dtw(&r, &r), 0.0);
        assert_eq!(dtw(&r, &v(&[(0.0, 1.0), (1.0, 1.0)])), 2.0);
    }

    #[test]
    fn dtw_matches_enumeration() {
        let mut rng = stream(1, "dtw", 0);
        for _ in 0..200 {
            let t = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec2> {
                (0..n)
                    .map(|_| Vec2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
                    .collect()
            };
            let (a, b) = (rng.random_range(1..=6), rng.random_range(1..=6));
            let r = t(a, &mut rng);
            let q = t(b, &mut rng);
            let mut best = f64::INFINITY;
            brute(&r, &q, 0, 0, 0.0, &mut best);
            assert_eq!(dtw(&r, &q).to_bits(), best.to_bits());
            assert_eq!(dtw(&r, &q), dtw(&q, &r));
        }
    }

    #[test]
    fn ndtw_identities() {
        let r = v(&[(0.0, 0.0), (1.0, 0.0)]);
        assert_eq!(ndtw(&r, &r, 1.0), 1.0);
        let q = v(&[(0.0, 1.0), (1.0, 1.0)]);
        assert!((ndtw(&r, &q, 1.0) - math::exp(-1.0)).abs() <= 1e-9);
        let far = v(&[(0.0, 3.0), (1.0, 3.0)]);
        assert!(ndtw(&r, &far, 1.0) <= ndtw(&r, &q, 1.0));
    }

    #[test]
    fn sdtw_gating() {
        assert_eq!(sdtw(true, 0.74), 0.74);
        assert_eq!(sdtw(false, 0.9), 0.0);
        assert_eq!(sdtw(true, 0.0), 0.0);
    }

    #[test]
    fn rmse_cases() {
        let path = SmoothPath::from_points(v(&[(0.0, 0.0), (0.5, 0.0), (1.0, 0.0)]));
        assert_eq!(rmse(&v(&[(0.5, 0.0), (1.0, 0.0)]), &path), 0.0);
        assert!((rmse(&v(&[(0.5, 0.3)]), &path) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn oracle_and_stop_policies() {
        let s = gen_floorplan(2, &FloorplanParams::default()).unwrap();
        let params = EpisodeParams::default();
        let plan = build_nav_plan(&s, &params, 5).unwrap();
        let eps: Vec<Episode> = (0..4).map(|k| generate_episode(&s, &plan, k, &params).unwrap()).collect();
        let cam = CameraModel::default();
        let rep = evaluate(eps.iter().map(|e| (&s, e)), &mut OraclePolicy::new(), &cam, DEFAULT_MAX_STEPS).unwrap();
        assert_eq!(rep.sr, 1.0);
        for (row, ep) in rep.rows.iter().zip(&eps) {
            assert_eq!(row.steps, ep.steps.len());
            assert!(row.rmse <= 0.25, "{}", row.rmse);
            assert!(row.sdtw <= row.ndtw);
        }
        let stop = evaluate(eps.iter().map(|e| (&s, e)), &mut StopPolicy, &cam, DEFAULT_MAX_STEPS).unwrap();
        assert_eq!(stop.sr, 0.0);
        assert!(stop.rows.iter().all(|r| r.sdtw == 0.0));
        let mean: f64 = stop.rows.iter().map(|r| r.ndtw).sum::<f64>() / stop.rows.len() as f64;
        assert_eq!(stop.ndtw, mean);
    }
}
