//! Discrete agent dynamics, the episode loop and the rule-based baseline.

use alloc::string::String;

use crate::math::{self, Vec2};
use crate::render::{render_with_hint, CameraModel, Frame, HintQuery, RenderError};
use crate::scene::{line_of_sight, ArrowDir, Pose, SceneMap, AGENT_RADIUS};

pub const FORWARD_STEP: f64 = 0.25;
pub const TURN_ANGLE: f64 = math::PI / 12.0;
pub const SUCCESS_RADIUS: f64 = 1.0;
pub const DEFAULT_MAX_STEPS: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActionId {
    Forward,
    Left,
    Right,
    Stop,
}

impl ActionId {
    pub const ALL: [ActionId; 4] = [ActionId::Forward, ActionId::Left, ActionId::Right, ActionId::Stop];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ActionId> {
        ActionId::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionId::Forward => "forward",
            ActionId::Left => "left",
            ActionId::Right => "right",
            ActionId::Stop => "stop",
        }
    }

    pub fn parse(s: &str) -> Option<ActionId> {
        ActionId::ALL.into_iter().find(|a| a.as_str() == s)
    }
}

/// Successor pose under `action`. Forward is blocked (pose unchanged) when
/// the swept agent disk would touch occupancy; Stop does not move.
pub fn apply_action(scene: &SceneMap, pose: &Pose, action: ActionId) -> Pose {
    let mut next = *pose;
    match action {
        ActionId::Forward => {
            let from = pose.position();
            let to = from + pose.heading() * FORWARD_STEP;
            if scene.in_bounds(to) && line_of_sight(scene, from, to, AGENT_RADIUS) {
                next.set_position(to);
            }
        }
        ActionId::Left => next.rotate(TURN_ANGLE),
        ActionId::Right => next.rotate(-TURN_ANGLE),
        ActionId::Stop => {}
    }
    next
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("start pose ({x}, {y}) collides with occupancy")]
    StartInCollision { x: f64, y: f64 },
    #[error("step called after the episode finished")]
    AlreadyDone,
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Running,
    Success,
    StopFailure,
    Timeout,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Running => "running",
            Outcome::Success => "success",
            Outcome::StopFailure => "stop_failure",
            Outcome::Timeout => "timeout",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub goal_id: String,
    pub goal: Vec2,
    pub pose: Pose,
    pub step_count: usize,
    pub max_steps: usize,
    pub done: bool,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub frame: Frame,
    pub state: EnvState,
}

/// Single-owner environment over a borrowed scene.
pub struct Env<'a> {
    scene: &'a SceneMap,
    cam: CameraModel,
    query: HintQuery,
    state: EnvState,
}

impl<'a> Env<'a> {
    pub fn reset(
        scene: &'a SceneMap,
        cam: &CameraModel,
        goal_id: &str,
        start: Pose,
        max_steps: usize,
    ) -> Result<(Env<'a>, StepResult), SimError> {
        let goal = scene
            .goal(goal_id)
            .ok_or_else(|| RenderError::UnknownGoal(goal_id.into()))?
            .position;
        if !scene.disk_free(start.position(), AGENT_RADIUS) {
            return Err(SimError::StartInCollision {
                x: start.x(),
                y: start.y(),
            });
        }
        let env = Env {
            scene,
            cam: cam.clone(),
            query: HintQuery::new(goal_id),
            state: EnvState {
                goal_id: goal_id.into(),
                goal,
                pose: start,
                step_count: 0,
                max_steps,
                done: false,
                outcome: Outcome::Running,
            },
        };
        let first = env.observe()?;
        Ok((env, first))
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn scene(&self) -> &SceneMap {
        self.scene
    }

    pub fn camera(&self) -> &CameraModel {
        &self.cam
    }

    fn observe(&self) -> Result<StepResult, SimError> {
        Ok(StepResult {
            frame: render_with_hint(self.scene, &self.state.pose, &self.cam, &self.query)?,
            state: self.state.clone(),
        })
    }

    /// Advances the state without rendering.
    pub fn step_state(&mut self, action: ActionId) -> Result<&EnvState, SimError> {
        if self.state.done {
            return Err(SimError::AlreadyDone);
        }
        let s = &mut self.state;
        s.pose = apply_action(self.scene, &s.pose, action);
        s.step_count += 1;
        if action == ActionId::Stop {
            s.done = true;
            s.outcome = if s.pose.position().dist(s.goal) <= SUCCESS_RADIUS {
                Outcome::Success
            } else {
                Outcome::StopFailure
            };
        } else if s.step_count >= s.max_steps {
            s.done = true;
            s.outcome = Outcome::Timeout;
        }
        Ok(&self.state)
    }

    pub fn step(&mut self, action: ActionId) -> Result<StepResult, SimError> {
        self.step_state(action)?;
        self.observe()
    }
}

/// What the rule baseline remembers between steps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RuleMemory {
    pub last_hint: Option<ArrowDir>,
    pub steps_since_seen: usize,
}

/// Hand-written reactive baseline. `goal_dist` is privileged information
/// used only for the Stop decision.
pub fn rule_policy(frame: &Frame, memory: &mut RuleMemory, goal_dist: f64) -> ActionId {
    if goal_dist <= SUCCESS_RADIUS {
        return ActionId::Stop;
    }
    let w = frame.depth.width;
    let h = frame.depth.height;
    if let Some(hint) = &frame.hint {
        memory.last_hint = Some(hint.dir);
        memory.steps_since_seen = 0;
        let cx = hint.bbox.center_x();
        let (lo, hi) = (w as f64 / 3.0, 2.0 * w as f64 / 3.0);
        let inner = cx >= lo && cx < hi;
        return match hint.dir {
            ArrowDir::Straight => ActionId::Forward,
            ArrowDir::Left if inner => ActionId::Left,
            ArrowDir::Right if inner => ActionId::Right,
            _ => ActionId::Forward,
        };
    }
    memory.steps_since_seen += 1;
    let row = h / 2;
    if frame.depth.get(w / 2, row, 0) > 1.0 {
        return ActionId::Forward;
    }
    let mean = |cols: core::ops::Range<usize>| {
        let n = cols.len().max(1) as f64;
        cols.map(|c| frame.depth.get(c, row, 0)).sum::<f64>() / n
    };
    let left = mean(0..w / 2);
    let right = mean(w / 2..w);
    if left > right {
        ActionId::Left
    } else if right > left {
        ActionId::Right
    } else if memory.last_hint == Some(ArrowDir::Right) {
        ActionId::Right
    } else {
        ActionId::Left
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::stream;
    use crate::render::{BBox, Hint, Image};
    use crate::scene::{gen_floorplan, FloorplanParams, Goal};
    use alloc::vec::Vec;
    use rand::Rng;

    fn room() -> SceneMap {
        let rows: Vec<String> = (0..50)
            .map(|j| {
                (0..50)
                    .map(|i| if i == 0 || j == 0 || i == 49 || j == 49 { '#' } else { '.' })
                    .collect()
            })
            .collect();
        let refs: Vec<&str> = rows.iter().map(|r| r.as_str()).collect();
        let mut s = SceneMap::from_ascii("room", 0.1, &refs).unwrap();
        s.goals.push(Goal {
            goal_id: "g".into(),
            position: Vec2::new(2.5, 2.5),
        });
        s.validate().unwrap();
        s
    }

    #[test]
    fn left_turn_constant() {
        let s = room();
        let p = apply_action(&s, &Pose::new(2.0, 2.0, 0.0), ActionId::Left);
        assert_eq!(p.theta(), math::PI / 12.0);
        let p = apply_action(&s, &Pose::new(2.0, 2.0, 0.0), ActionId::Right);
        assert!((p.theta() - (math::TAU - math::PI / 12.0)).abs() < 1e-12);
    }

    #[test]
    fn forward_into_wall_is_blocked() {
        let s = room();
        // wall face at x = 4.9; disk edge 0.1 m from it
        let mut env = Env::reset(&s, &CameraModel::default(), "g", Pose::new(4.6, 2.5, 0.0), 500)
            .unwrap()
            .0;
        let before = env.state().pose;
        let st = env.step(ActionId::Forward).unwrap().state;
        assert_eq!(st.pose, before);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn stop_success_radius() {
        let s = room();
        let cam = CameraModel::default();
        let (mut env, r) = Env::reset(&s, &cam, "g", Pose::new(3.3, 2.5, 0.0), 500).unwrap();
        assert_eq!(r.state.outcome, Outcome::Running);
        assert_eq!(r.state.step_count, 0);
        assert_eq!(env.step(ActionId::Stop).unwrap().state.outcome, Outcome::Success);
        let (mut env, _) = Env::reset(&s, &cam, "g", Pose::new(3.7, 2.5, 0.0), 500).unwrap();
        assert_eq!(env.step(ActionId::Stop).unwrap().state.outcome, Outcome::StopFailure);
        assert_eq!(env.step(ActionId::Forward).unwrap_err(), SimError::AlreadyDone);
    }

    #[test]
    fn start_in_wall_rejected() {
        let s = room();
        let err = Env::reset(&s, &CameraModel::default(), "g", Pose::new(0.05, 2.0, 0.0), 500)
            .err()
            .unwrap();
        assert!(matches!(err, SimError::StartInCollision { .. }));
    }

    #[test]
    fn reset_is_deterministic() {
        let s = room();
        let cam = CameraModel::default();
        let a = Env::reset(&s, &cam, "g", Pose::new(1.0, 1.0, 0.4), 500).unwrap().1;
        let b = Env::reset(&s, &cam, "g", Pose::new(1.0, 1.0, 0.4), 500).unwrap().1;
        assert_eq!(a, b);
    }

    #[test]
    fn timeout_at_max_steps() {
        let s = room();
        let (mut env, _) =
            Env::reset(&s, &CameraModel::default(), "g", Pose::new(1.0, 1.0, 0.0), 3).unwrap();
        env.step_state(ActionId::Left).unwrap();
        env.step_state(ActionId::Left).unwrap();
        let st = env.step_state(ActionId::Left).unwrap();
        assert!(st.done);
        assert_eq!(st.outcome, Outcome::Timeout);
    }

    #[test]
    fn random_walks_stay_collision_free_and_replay() {
        let s = gen_floorplan(4, &FloorplanParams::default()).unwrap();
        let g = s.goals[0].clone();
        for k in 0..100u64 {
            let mut rng = stream(k, "walk", 0);
            let actions: Vec<ActionId> = (0..60)
                .map(|_| ActionId::ALL[rng.random_range(0..3)])
                .collect();
            let start = Pose::at(g.position, rng.random_range(0.0..math::TAU));
            let mut trace = Vec::new();
            let mut p = start;
            for &a in &actions {
                p = apply_action(&s, &p, a);
                assert!(s.disk_free(p.position(), AGENT_RADIUS));
                trace.push(p);
            }
            let mut q = start;
            for (a, expect) in actions.iter().zip(&trace) {
                q = apply_action(&s, &q, *a);
                assert_eq!(q, *expect);
            }
        }
    }

    fn frame_with(depth_row: impl Fn(usize) -> f64, hint: Option<Hint>) -> Frame {
        let mut depth = Image::new(64, 64, 1);
        for y in 0..64 {
            for x in 0..64 {
                depth.set(x, y, 0, depth_row(x));
            }
        }
        Frame {
            rgb: Image::new(64, 64, 3),
            depth,
            hint,
        }
    }

    fn hint(dir: ArrowDir, x0: i32) -> Hint {
        Hint {
            crop: Image::new(16, 16, 3),
            bbox: BBox {
                x_min: x0,
                y_min: 20,
                x_max: x0 + 8,
                y_max: 28,
            },
            dir,
        }
    }

    #[test]
    fn rule_policy_cases() {
        let mut m = RuleMemory::default();
        let f = frame_with(|_| 5.0, Some(hint(ArrowDir::Straight, 28)));
        assert_eq!(rule_policy(&f, &mut m, 9.0), ActionId::Forward);
        let f = frame_with(|_| 5.0, Some(hint(ArrowDir::Right, 28)));
        assert_eq!(rule_policy(&f, &mut m, 9.0), ActionId::Right);
        let f = frame_with(|_| 5.0, Some(hint(ArrowDir::Right, 2)));
        assert_eq!(rule_policy(&f, &mut m, 9.0), ActionId::Forward);
        // wall 0.5 m ahead, left half deeper
        let f = frame_with(|x| if x < 32 { 3.0 } else { 0.5 }, None);
        assert_eq!(rule_policy(&f, &mut m, 9.0), ActionId::Left);
        assert_eq!(rule_policy(&f, &mut m, 0.5), ActionId::Stop);
    }
}
