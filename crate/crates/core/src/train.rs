//! Inflection-weighted teacher forcing, Adam updates and DAgger aggregation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::episode::{
    shortest_path, smooth_path_with_clearance, Episode, EpisodeError, EpisodeParams, Follower, NavPlan,
};
use crate::hash;
use crate::math::Vec2;
use crate::model::{sample, Observation, StartModel, StartPolicy, Decode, NUM_ACTIONS};
use crate::nn::{Adam, NnError, Tape, Var};
use crate::render::{render_with_hint, CameraModel, HintQuery, RenderError};
use crate::scene::{line_of_sight, Pose, SceneMap, AGENT_RADIUS};
use crate::sim::{ActionId, Env, SimError};

/// Probability floor inside the log of the loss.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dagger_iterations: usize,
    /// Epochs of retraining on the aggregate after each DAgger iteration.
    pub dagger_epochs: usize,
    pub beta0: f64,
    pub seed: u64,
    /// Stop teacher forcing once an epoch reaches this per-step accuracy.
    pub target_accuracy: Option<f64>,
}

impl TrainConfig {
    pub fn micro() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 8,
            epochs: 200,
            dagger_iterations: 3,
            dagger_epochs: 5,
            beta0: 0.75,
            seed: 42,
            target_accuracy: None,
        }
    }

    pub fn full() -> Self {
        TrainConfig {
            lr: 1e-5,
            batch_size: 12,
            dagger_iterations: 10,
            ..TrainConfig::micro()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.beta0 > 0.0 && self.beta0 <= 1.0) {
            return Err(TrainError::Config(format!("beta0 must be in (0, 1], got {}", self.beta0)));
        }
        if let Some(a) = self.target_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return Err(TrainError::Config(format!("target_accuracy {a} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn is_inflection(actions: &[ActionId], t: usize) -> bool {
    t == 0 || actions[t] != actions[t - 1]
}

/// Inflections over steps across all sequences.
pub fn inflection_ratio<'a>(seqs: impl IntoIterator<Item = &'a [ActionId]>) -> f64 {
    let (mut inf, mut total) = (0usize, 0usize);
    for s in seqs {
        inf += (0..s.len()).filter(|&t| is_inflection(s, t)).count();
        total += s.len();
    }
    if total == 0 {
        1.0
    } else {
        inf as f64 / total as f64
    }
}

/// `1/rho` at inflections, 1 elsewhere, normalized to mean 1.
pub fn inflection_weights(actions: &[ActionId], rho: f64) -> Result<Vec<f64>, TrainError> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(TrainError::Config(format!("inflection ratio must be in (0, 1], got {rho}")));
    }
    if actions.is_empty() {
        return Err(TrainError::Config("empty action sequence".into()));
    }
    let raw: Vec<f64> = (0..actions.len())
        .map(|t| if is_inflection(actions, t) { 1.0 / rho } else { 1.0 })
        .collect();
    let n = raw.len() as f64;
    let sum: f64 = raw.iter().sum();
    Ok(raw.iter().map(|w| w * n / sum).collect())
}

/// `-sum_t w_t ln max(p_t[a_t], 1e-12)` for plain distributions.
pub fn sequence_loss(p_seq: &[[f64; NUM_ACTIONS]], targets: &[ActionId], weights: &[f64]) -> Result<f64, TrainError> {
    if p_seq.len() != targets.len() || p_seq.len() != weights.len() {
        return Err(TrainError::Config("loss inputs differ in length".into()));
    }
    Ok(p_seq
        .iter()
        .zip(targets)
        .zip(weights)
        .map(|((p, a), w)| -w * libm::log(p[a.index()].max(LOG_FLOOR)))
        .sum())
}

/// Batch loss: mean over sequences of `sequence_loss`.
pub fn batch_loss(batch: &[(Vec<[f64; NUM_ACTIONS]>, Vec<ActionId>, Vec<f64>)]) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for (p, a, w) in batch {
        total += sequence_loss(p, a, w)?;
    }
    Ok(total / batch.len().max(1) as f64)
}

/// The same loss recorded on a tape.
pub fn tape_loss(tape: &mut Tape, probs: &[Var], targets: &[ActionId], weights: &[f64]) -> Result<Var, TrainError> {
    if probs.len() != targets.len() || probs.len() != weights.len() {
        return Err(TrainError::Config("loss inputs differ in length".into()));
    }
    let mut terms = Vec::with_capacity(probs.len());
    for ((&p, a), &w) in probs.iter().zip(targets).zip(weights) {
        terms.push((tape.log_pick(p, a.index(), LOG_FLOOR)?, -w));
    }
    Ok(tape.weighted_sum(&terms)?)
}

/// A supervised trajectory: poses visited and the action label at each.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    /// Scene with the episode's sign arrows applied.
    pub scene: SceneMap,
    pub goal_id: String,
    pub poses: Vec<Pose>,
    pub labels: Vec<ActionId>,
}

impl TrainItem {
    pub fn from_episode(scene: &SceneMap, ep: &Episode) -> Self {
        TrainItem {
            scene: ep.annotated_scene(scene),
            goal_id: ep.goal_id.clone(),
            poses: ep.steps.iter().map(|s| s.pose).collect(),
            labels: ep.actions(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn observations(&self, model: &StartModel, cam: &CameraModel) -> Result<Vec<Observation>, TrainError> {
        let q = HintQuery::new(self.goal_id.clone());
        self.poses
            .iter()
            .map(|p| {
                let frame = render_with_hint(&self.scene, p, cam, &q)?;
                Ok(Observation::from_frame(&frame, &model.cfg)?)
            })
            .collect()
    }
}

/// Loss, gradients and greedy hits for one teacher-forced trajectory.
pub struct ItemPass {
    pub loss: f64,
    pub correct: usize,
    pub steps: usize,
    pub floored: usize,
}

/// Forward and backward over one item; gradients are scaled by `grad_scale`
/// and accumulated into the model's parameters.
pub fn item_pass(
    model: &mut StartModel,
    item: &TrainItem,
    weights: &[f64],
    cam: &CameraModel,
    grad_scale: f64,
) -> Result<ItemPass, TrainError> {
    let obs = item.observations(model, cam)?;
    let (loss, correct, floored, grads) = {
        let mut t = Tape::new(&model.params);
        let steps = model.unroll(&mut t, &obs, &item.labels)?;
        let probs: Vec<Var> = steps.iter().map(|s| s.probs).collect();
        let correct = probs
            .iter()
            .zip(&item.labels)
            .filter(|(p, a)| {
                let d = &t.value(**p).data;
                crate::model::greedy(&[d[0], d[1], d[2], d[3]]) == **a
            })
            .count();
        let l = tape_loss(&mut t, &probs, &item.labels, weights)?;
        let loss = t.value(l).data[0];
        let mut g = t.backward(l);
        g.0.iter_mut().for_each(|(_, v)| v.iter_mut().for_each(|x| *x *= grad_scale));
        (loss, correct, t.floored_logs(), g)
    };
    model.params.accumulate(&grads);
    Ok(ItemPass {
        loss,
        correct,
        steps: item.len(),
        floored,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub stage: String,
    /// Epoch within teacher forcing, or iteration index for DAgger.
    pub epoch: usize,
    /// Weighted loss per step.
    pub loss: f64,
    pub accuracy: f64,
    pub dataset_size: usize,
    /// Steps whose target probability hit the log floor.
    pub floored: usize,
}

/// Teacher forcing over `items`: shuffled epochs, Adam step per batch of
/// sequences. `on_epoch` sees every log record as it is produced.
pub fn train_teacher_forcing(
    model: &mut StartModel,
    items: &[TrainItem],
    cfg: &TrainConfig,
    cam: &CameraModel,
    stage: &str,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<Vec<EpochLog>, TrainError> {
    cfg.validate()?;
    if items.is_empty() || items.iter().any(|i| i.is_empty()) {
        return Err(TrainError::Config("training set is empty or has empty trajectories".into()));
    }
    let rho = inflection_ratio(items.iter().map(|i| i.labels.as_slice()));
    let weights: Vec<Vec<f64>> = items
        .iter()
        .map(|i| inflection_weights(&i.labels, rho))
        .collect::<Result<_, _>>()?;
    let mut opt = Adam::new(cfg.lr);
    model.params.zero_grads();
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..items.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = hash::stream(cfg.seed, stage, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let (mut loss, mut correct, mut steps, mut floored) = (0.0, 0, 0, 0);
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let r = item_pass(model, &items[i], &weights[i], cam, scale)?;
                loss += r.loss;
                correct += r.correct;
                steps += r.steps;
                floored += r.floored;
            }
            opt.step(&mut model.params);
        }
        let rec = EpochLog {
            stage: stage.into(),
            epoch,
            loss: loss / steps as f64,
            accuracy: correct as f64 / steps as f64,
            dataset_size: items.len(),
            floored,
        };
        on_epoch(&rec);
        let done = cfg.target_accuracy.is_some_and(|a| rec.accuracy >= a);
        log.push(rec);
        if done {
            break;
        }
    }
    Ok(log)
}

/// Trailing moving average with the given window (shorter at the start).
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Expert label at `pose`: plan a fresh path to the goal through the
/// navigation graph and ask a new path follower. `None` when no graph vertex
/// is reachable from `pose`.
pub fn expert_action(
    scene: &SceneMap,
    plan: &NavPlan,
    goal_id: &str,
    pose: &Pose,
    params: &EpisodeParams,
) -> Option<ActionId> {
    let goal = scene.goal(goal_id)?.position;
    let gv = *plan.goal_vertex.get(goal_id)?;
    let p = pose.position();
    let dist = plan.graph.distances_from(gv);
    let mut best: Option<(f64, usize)> = None;
    for (v, &q) in plan.graph.vertices.iter().enumerate() {
        let d = q.dist(p);
        if !dist[v].is_finite() || d > params.r_edge || !line_of_sight(scene, p, q, AGENT_RADIUS) {
            continue;
        }
        let cost = d + dist[v];
        if best.is_none_or(|(c, _)| cost < c) {
            best = Some((cost, v));
        }
    }
    let (_, v) = best?;
    let vpath = shortest_path(&plan.graph, v, gv).ok()?;
    let mut waypoints: Vec<Vec2> = Vec::with_capacity(vpath.len() + 1);
    waypoints.push(p);
    waypoints.extend(vpath.iter().map(|&i| plan.graph.vertices[i]));
    let path = smooth_path_with_clearance(scene, &waypoints, params.smooth_clearance);
    let mut f = Follower::new(&path, goal).ok()?;
    Some(f.action(pose))
}

/// Outcome of one mixed-policy rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// Visited poses with expert labels.
    pub item: TrainItem,
    pub executed: Vec<ActionId>,
    /// Whether each executed action came from the expert branch.
    pub from_expert: Vec<bool>,
    pub truncated: bool,
}

/// Executes `beta`-mixture of expert and sampled model actions from the
/// episode start, labelling every visited state with the expert action.
#[allow(clippy::too_many_arguments)]
pub fn dagger_rollout(
    model: &StartModel,
    scene: &SceneMap,
    plan: &NavPlan,
    episode: &Episode,
    params: &EpisodeParams,
    cam: &CameraModel,
    beta: f64,
    seed: u64,
) -> Result<Rollout, TrainError> {
    let annotated = episode.annotated_scene(scene);
    let max_steps = (2 * episode.steps.len()).max(40);
    let mut mix = hash::stream(seed, "dagger-mix", 0);
    let mut policy = StartPolicy::new(model.clone(), Decode::Greedy);
    let mut draw = hash::stream(seed, "dagger-sample", 0);
    let (mut env, mut obs) = Env::reset(&annotated, cam, &episode.goal_id, episode.start, max_steps)?;
    let mut out = Rollout {
        item: TrainItem {
            scene: annotated.clone(),
            goal_id: episode.goal_id.clone(),
            poses: Vec::new(),
            labels: Vec::new(),
        },
        executed: Vec::new(),
        from_expert: Vec::new(),
        truncated: false,
    };
    while !obs.state.done {
        let pose = obs.state.pose;
        let Some(label) = expert_action(&annotated, plan, &episode.goal_id, &pose, params) else {
            out.truncated = true;
            break;
        };
        let pred = policy.predict(&obs.frame)?;
        let use_expert = mix.random::<f64>() < beta;
        let action = if use_expert { label } else { sample(&pred.probs, &mut draw) };
        policy.commit(pred, action);
        out.item.poses.push(pose);
        out.item.labels.push(label);
        out.executed.push(action);
        out.from_expert.push(use_expert);
        obs = env.step(action)?;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Expert,
    Dagger(usize),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AggregatedDataset {
    pub items: Vec<(TrainItem, Provenance)>,
}

impl AggregatedDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn train_items(&self) -> Vec<TrainItem> {
        self.items.iter().map(|(i, _)| i.clone()).collect()
    }
}

/// Per-iteration DAgger statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct DaggerIteration {
    pub iteration: usize,
    pub beta: f64,
    pub new_rollouts: usize,
    pub aggregate_size: usize,
    /// Share of executed actions drawn from the expert branch.
    pub expert_fraction: f64,
    /// Share of executed actions equal to the expert label.
    pub label_agreement: f64,
    pub truncated: usize,
    pub log: Vec<EpochLog>,
}

/// A training episode with its scene and navigation graph.
pub struct DaggerSource<'a> {
    pub scene: &'a SceneMap,
    pub plan: &'a NavPlan,
    pub episode: &'a Episode,
}

/// Runs iterations `1..=cfg.dagger_iterations` with `beta_i = beta0^i`,
/// appending one relabelled rollout per source episode and retraining on the
/// whole aggregate after each iteration.
pub fn dagger(
    model: &mut StartModel,
    sources: &[DaggerSource<'_>],
    params: &EpisodeParams,
    cfg: &TrainConfig,
    cam: &CameraModel,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<(AggregatedDataset, Vec<DaggerIteration>), TrainError> {
    cfg.validate()?;
    let mut agg = AggregatedDataset {
        items: sources
            .iter()
            .map(|s| (TrainItem::from_episode(s.scene, s.episode), Provenance::Expert))
            .collect(),
    };
    let mut stats = Vec::new();
    for i in 1..=cfg.dagger_iterations {
        let beta = libm::pow(cfg.beta0, i as f64);
        let (mut executed, mut expert, mut agree, mut truncated, mut added) = (0, 0, 0, 0, 0);
        for (k, s) in sources.iter().enumerate() {
            let seed = hash::derive_seed(cfg.seed, &format!("dagger-{i}"), k as u64);
            let r = dagger_rollout(model, s.scene, s.plan, s.episode, params, cam, beta, seed)?;
            executed += r.executed.len();
            expert += r.from_expert.iter().filter(|&&e| e).count();
            agree += r.executed.iter().zip(&r.item.labels).filter(|(a, b)| a == b).count();
            truncated += usize::from(r.truncated);
            if !r.item.is_empty() {
                agg.items.push((r.item, Provenance::Dagger(i)));
                added += 1;
            }
        }
        let mut sub = cfg.clone();
        sub.epochs = cfg.dagger_epochs.max(1);
        sub.target_accuracy = None;
        sub.seed = hash::derive_seed(cfg.seed, "dagger-train", i as u64);
        let log = train_teacher_forcing(model, &agg.train_items(), &sub, cam, &format!("dagger-{i}"), on_epoch)?;
        let frac = |n: usize| if executed == 0 { 0.0 } else { n as f64 / executed as f64 };
        stats.push(DaggerIteration {
            iteration: i,
            beta,
            new_rollouts: added,
            aggregate_size: agg.len(),
            expert_fraction: frac(expert),
            label_agreement: frac(agree),
            truncated,
            log,
        });
    }
    Ok((agg, stats))
}
