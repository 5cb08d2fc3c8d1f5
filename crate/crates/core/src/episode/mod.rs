//! Episode pipeline: waypoint sampling, navigation graph, shortest path,
//! spline smoothing, sign annotation and oracle transcription.

mod graph;
mod oracle;
mod poisson;
mod spline;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::hash::{derive_seed, stream};
use crate::render::{select_hint, BBox, CameraModel, HintQuery};
use crate::scene::{ArrowDir, Pose, SceneMap, AGENT_RADIUS};
use crate::sim::{apply_action, ActionId};

pub use graph::{build_graph, build_graph_with_radius, path_length, shortest_path, NavGraph};
pub use oracle::{
    annotate_signs, oracle_actions, oracle_from, Follower, sign_arrows, step_budget, ANNOTATE_RADIUS,
    CURVATURE_WINDOW, DEADBAND_DEG, LOOKAHEAD, MIN_STEP_BUDGET, STOP_ALIGN_DEG, STOP_RADIUS,
};
pub use poisson::poisson_sample;
pub use spline::{resample, smooth_path, smooth_path_with_clearance, SmoothPath, PATH_SPACING};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EpisodeError {
    #[error("invalid parameter: {0}")]
    InvalidParam(&'static str),
    #[error("no free cell has the required clearance")]
    NoEligibleCell,
    #[error("no path from vertex {from} to vertex {to}")]
    NoPath { from: usize, to: usize },
    #[error("oracle follower exceeded its budget of {steps} steps")]
    OracleBudget { steps: usize },
    #[error("no valid start/goal pair after {0} rejections")]
    Rejected(usize),
    #[error("scene has no goals")]
    NoGoals,
    #[error("insufficient scenes: {0}")]
    InsufficientScenes(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeStep {
    /// Pose at which `action` was taken.
    pub pose: Pose,
    pub action: ActionId,
    pub hint_dir: Option<ArrowDir>,
    pub bbox: Option<BBox>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub episode_id: String,
    pub scene_id: String,
    pub goal_id: String,
    pub start: Pose,
    pub gt_path: SmoothPath,
    /// Arrows for `goal_id` derived from this episode's path, by sign id.
    pub sign_arrows: BTreeMap<String, ArrowDir>,
    pub steps: Vec<EpisodeStep>,
}

impl Episode {
    /// The scene as the agent sees it during this episode.
    pub fn annotated_scene(&self, scene: &SceneMap) -> SceneMap {
        scene.with_goal_arrows(&self.goal_id, &self.sign_arrows)
    }

    pub fn actions(&self) -> Vec<ActionId> {
        self.steps.iter().map(|s| s.action).collect()
    }

    /// Poses visited when executing the recorded actions from `start`,
    /// one per step (the pose at which each action is taken).
    pub fn replay(&self, scene: &SceneMap) -> Vec<Pose> {
        let mut out = Vec::with_capacity(self.steps.len());
        let mut pose = self.start;
        for s in &self.steps {
            out.push(pose);
            pose = apply_action(scene, &pose, s.action);
        }
        out
    }

    pub fn replays_exactly(&self, scene: &SceneMap) -> bool {
        let poses = self.replay(scene);
        poses.len() == self.steps.len()
            && poses.iter().zip(&self.steps).all(|(p, s)| {
                p.x().to_bits() == s.pose.x().to_bits()
                    && p.y().to_bits() == s.pose.y().to_bits()
                    && p.theta().to_bits() == s.pose.theta().to_bits()
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeParams {
    pub poisson_radius: f64,
    pub c_min: f64,
    pub r_edge: f64,
    /// Capsule radius for graph edges; at least the agent radius.
    pub plan_radius: f64,
    /// Clearance below which a spline segment falls back to its chord.
    pub smooth_clearance: f64,
    pub min_geodesic: f64,
    pub max_rejections: usize,
    pub camera: CameraModel,
    pub max_hint_distance: f64,
    pub max_face_angle: f64,
}

impl Default for EpisodeParams {
    fn default() -> Self {
        let q = HintQuery::new("");
        EpisodeParams {
            poisson_radius: 0.5,
            c_min: 0.35,
            r_edge: 2.5,
            plan_radius: 0.3,
            smooth_clearance: 0.3,
            min_geodesic: 5.0,
            max_rejections: 100,
            camera: CameraModel::default(),
            max_hint_distance: q.max_hint_distance,
            max_face_angle: q.max_face_angle,
        }
    }
}

impl EpisodeParams {
    pub fn hint_query(&self, goal_id: &str) -> HintQuery {
        HintQuery {
            goal_id: goal_id.into(),
            max_hint_distance: self.max_hint_distance,
            max_face_angle: self.max_face_angle,
        }
    }
}

/// Sampled waypoints plus goal positions, connected into a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct NavPlan {
    pub graph: NavGraph,
    /// Number of leading vertices that are Poisson samples.
    pub n_samples: usize,
    pub goal_vertex: BTreeMap<String, usize>,
}

pub fn build_nav_plan(
    scene: &SceneMap,
    params: &EpisodeParams,
    seed: u64,
) -> Result<NavPlan, EpisodeError> {
    if scene.goals.is_empty() {
        return Err(EpisodeError::NoGoals);
    }
    if params.r_edge < params.poisson_radius {
        return Err(EpisodeError::InvalidParam("r_edge must be at least the poisson radius"));
    }
    let mut vertices = poisson_sample(scene, params.poisson_radius, params.c_min, seed)?;
    let n_samples = vertices.len();
    let mut goal_vertex = BTreeMap::new();
    for g in &scene.goals {
        goal_vertex.insert(g.goal_id.clone(), vertices.len());
        vertices.push(g.position);
    }
    let graph = build_graph_with_radius(scene, &vertices, params.r_edge, params.plan_radius);
    Ok(NavPlan {
        graph,
        n_samples,
        goal_vertex,
    })
}

/// A generated episode together with the graph vertex it starts from.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub episode: Episode,
    pub start_vertex: usize,
}

/// Rejection-samples a start vertex and goal and transcribes the oracle.
pub fn generate_episode(
    scene: &SceneMap,
    plan: &NavPlan,
    seed: u64,
    params: &EpisodeParams,
) -> Result<Episode, EpisodeError> {
    generate_episode_filtered(scene, plan, seed, params, &format!("{}_{seed:016x}", scene.scene_id), |_, _| true)
        .map(|g| g.episode)
}

/// As `generate_episode`; `accept(start_vertex, goal_id)` can veto pairs.
pub fn generate_episode_filtered(
    scene: &SceneMap,
    plan: &NavPlan,
    seed: u64,
    params: &EpisodeParams,
    episode_id: &str,
    mut accept: impl FnMut(usize, &str) -> bool,
) -> Result<Generated, EpisodeError> {
    if plan.n_samples == 0 || scene.goals.is_empty() {
        return Err(EpisodeError::InvalidParam("navigation graph has no samples"));
    }
    let mut rng = stream(seed, "episode", 0);
    for _ in 0..params.max_rejections {
        let sv = rng.random_range(0..plan.n_samples);
        let goal = &scene.goals[rng.random_range(0..scene.goals.len())];
        if !accept(sv, &goal.goal_id) {
            continue;
        }
        let gv = plan.goal_vertex[&goal.goal_id];
        let dist = plan.graph.distances_from(gv);
        if !(dist[sv].is_finite() && dist[sv] >= params.min_geodesic) {
            continue;
        }
        let Ok(vpath) = shortest_path(&plan.graph, sv, gv) else {
            continue;
        };
        let waypoints: Vec<_> = vpath.iter().map(|&v| plan.graph.vertices[v]).collect();
        let smooth = smooth_path_with_clearance(scene, &waypoints, params.smooth_clearance);
        if smooth.length() < params.min_geodesic
            || smooth.points.iter().any(|&p| !scene.disk_free(p, AGENT_RADIUS))
        {
            continue;
        }
        let arrows = sign_arrows(scene, &smooth);
        let annotated = scene.with_goal_arrows(&goal.goal_id, &arrows);
        let Ok(trace) = oracle_actions(scene, &smooth, goal) else {
            continue;
        };
        let query = params.hint_query(&goal.goal_id);
        let mut steps = Vec::with_capacity(trace.len());
        for (pose, action) in trace {
            let hint = select_hint(&annotated, &pose, &params.camera, &query)
                .expect("goal exists in scene");
            steps.push(EpisodeStep {
                pose,
                action,
                hint_dir: hint.map(|h| h.2),
                bbox: hint.map(|h| h.1),
            });
        }
        let gt_path = SmoothPath::from_points(smooth.points);
        let episode = Episode {
            episode_id: episode_id.into(),
            scene_id: scene.scene_id.clone(),
            goal_id: goal.goal_id.clone(),
            start: steps[0].pose,
            gt_path,
            sign_arrows: arrows,
            steps,
        };
        return Ok(Generated {
            episode,
            start_vertex: sv,
        });
    }
    Err(EpisodeError::Rejected(params.max_rejections))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    ValSeen,
    ValUnseen,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::ValSeen, Split::ValUnseen];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::ValSeen => "val_seen",
            Split::ValUnseen => "val_unseen",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|x| x.as_str() == s)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val_seen: usize,
    pub val_unseen: usize,
}

impl SplitCounts {
    pub fn get(&self, s: Split) -> usize {
        match s {
            Split::Train => self.train,
            Split::ValSeen => self.val_seen,
            Split::ValUnseen => self.val_unseen,
        }
    }
}

/// Scene indices for (train/val_seen, val_unseen). With two or more scenes
/// the last `max(1, n/5)` are held out.
pub fn split_scenes(
    n_scenes: usize,
    counts: &SplitCounts,
) -> Result<(Vec<usize>, Vec<usize>), EpisodeError> {
    if counts.val_unseen > 0 && n_scenes < 2 {
        return Err(EpisodeError::InsufficientScenes(format!(
            "val_unseen needs at least 2 scenes, got {n_scenes}"
        )));
    }
    if counts.train + counts.val_seen > 0 && n_scenes == 0 {
        return Err(EpisodeError::InsufficientScenes("no scenes given".into()));
    }
    let held = if n_scenes >= 2 { (n_scenes / 5).max(1) } else { 0 };
    let seen = (0..n_scenes - held).collect();
    let unseen = (n_scenes - held..n_scenes).collect();
    Ok((seen, unseen))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEpisode {
    pub split: Split,
    pub scene_index: usize,
    pub episode: Episode,
}

/// Episodes for every split. Each episode draws from its own seeded stream;
/// val_seen pairs never repeat a train (scene, start, goal) triple.
pub fn build_dataset(
    scenes: &[SceneMap],
    counts: &SplitCounts,
    seed: u64,
    params: &EpisodeParams,
) -> Result<Vec<DatasetEpisode>, EpisodeError> {
    let (seen, unseen) = split_scenes(scenes.len(), counts)?;
    let mut plans: BTreeMap<usize, NavPlan> = BTreeMap::new();
    let mut used: BTreeSet<(usize, usize, String)> = BTreeSet::new();
    let mut out = Vec::new();
    for split in Split::ALL {
        let pool = if split == Split::ValUnseen { &unseen } else { &seen };
        for i in 0..counts.get(split) {
            let si = pool[i % pool.len()];
            let scene = &scenes[si];
            if !plans.contains_key(&si) {
                let p = build_nav_plan(scene, params, derive_seed(seed, "navplan", si as u64))?;
                plans.insert(si, p);
            }
            let plan = &plans[&si];
            let ep_seed = derive_seed(seed, split.as_str(), i as u64);
            let id = format!("{}_{i:05}", split.as_str());
            let g = generate_episode_filtered(scene, plan, ep_seed, params, &id, |sv, goal| {
                split != Split::ValSeen || !used.contains(&(si, sv, String::from(goal)))
            })?;
            if split == Split::Train {
                used.insert((si, g.start_vertex, g.episode.goal_id.clone()));
            }
            out.push(DatasetEpisode {
                split,
                scene_index: si,
                episode: g.episode,
            });
        }
    }
    Ok(out)
}
