//! The pipeline commands behind the command line.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;
use signnav_core::episode::{build_nav_plan, generate_episode_filtered, Episode, SplitCounts};
use signnav_core::hash::derive_seed;
use signnav_core::metrics::{evaluate, OraclePolicy, Policy, PolicyInput, RulePolicy, StopPolicy};
use signnav_core::model::{Decode, StartPolicy};
use signnav_core::scene::{Pose, SceneMap};
use signnav_core::sim::{Env, Outcome};
use signnav_core::train::{dagger, train_teacher_forcing, DaggerSource, EpochLog, TrainItem};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats::{scene_from_json, SceneIndex};
use crate::report::{report_json, report_text, trajectory_svg};
use crate::{pnm, store};

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn gen_scenes(cfg: &RunConfig, count: usize, out: &Path) -> Result<SceneIndex> {
    store::gen_scenes(out, cfg, count)
}

pub fn gen_episodes(cfg: &RunConfig, scenes: &Path, out: &Path, counts: &SplitCounts) -> Result<usize> {
    let m = store::gen_episodes(scenes, out, cfg, counts)?;
    Ok(m.splits.values().map(Vec::len).sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    TeacherForcing,
    Dagger,
}

impl Stage {
    pub fn parse(s: &str) -> Option<Stage> {
        match s {
            "tf" => Some(Stage::TeacherForcing),
            "dagger" => Some(Stage::Dagger),
            _ => None,
        }
    }
}

fn log_line(rec: &EpochLog) -> String {
    json!({
        "stage": rec.stage,
        "epoch": rec.epoch,
        "loss": rec.loss,
        "accuracy": rec.accuracy,
        "dataset_size": rec.dataset_size,
        "floored": rec.floored,
    })
    .to_string()
}

pub struct TrainArgs<'a> {
    pub dataset: &'a Path,
    pub out: &'a Path,
    pub stage: Stage,
    /// Teacher-forced checkpoint to fine-tune (dagger stage).
    pub from: Option<&'a Path>,
    /// Training log; defaults to the checkpoint path with `.log.jsonl`.
    pub log: Option<&'a Path>,
}

/// Trains and writes a checkpoint plus a JSON-lines epoch log. Returns the log.
pub fn train(cfg: &RunConfig, args: &TrainArgs<'_>, progress: &mut dyn FnMut(&EpochLog)) -> Result<Vec<EpochLog>> {
    let from = match args.stage {
        Stage::Dagger => Some(
            args.from
                .ok_or_else(|| Error::Usage("stage dagger needs --from <teacher-forcing checkpoint>".into()))?,
        ),
        Stage::TeacherForcing => args.from,
    };
    if let Some(p) = from {
        if !p.is_file() {
            return Err(Error::Usage(format!("checkpoint {} does not exist", p.display())));
        }
    }
    let ds = store::load_dataset(args.dataset)?;
    let mut model = match from {
        Some(p) => store::load_model(p)?,
        None => signnav_core::model::StartModel::new(cfg.model()).map_err(|e| Error::Usage(e.to_string()))?,
    };
    let cam = cfg.camera();
    if (cam.image_width, cam.image_height) != (model.cfg.image_width, model.cfg.image_height) {
        return Err(Error::Usage(format!(
            "camera {}x{} does not match the model input {}x{}",
            cam.image_width, cam.image_height, model.cfg.image_width, model.cfg.image_height
        )));
    }
    let tcfg = cfg.train();
    let pairs = ds.pairs("train")?;
    if pairs.is_empty() {
        return Err(Error::Data(format!("{}: train split is empty", args.dataset.display())));
    }
    let mut log = Vec::new();
    let mut record = |rec: &EpochLog| {
        progress(rec);
        log.push(rec.clone());
    };
    match args.stage {
        Stage::TeacherForcing => {
            let items: Vec<TrainItem> = pairs.iter().map(|(s, e)| TrainItem::from_episode(s, e)).collect();
            train_teacher_forcing(&mut model, &items, &tcfg, &cam, "tf", &mut record)
                .map_err(|e| Error::Data(e.to_string()))?;
        }
        Stage::Dagger => {
            // navigation graphs exactly as episode generation built them
            let params = ds.config.episode();
            let mut plans = Vec::with_capacity(ds.scenes.len());
            for (si, s) in ds.scenes.iter().enumerate() {
                let p = build_nav_plan(s, &params, derive_seed(ds.config.seed(), "navplan", si as u64))
                    .map_err(|e| Error::Data(format!("{}: {e}", s.scene_id)))?;
                plans.push(p);
            }
            let sources: Vec<DaggerSource<'_>> = pairs
                .iter()
                .map(|(s, e)| {
                    let si = ds.scenes.iter().position(|x| x.scene_id == s.scene_id).expect("scene present");
                    DaggerSource {
                        scene: s,
                        plan: &plans[si],
                        episode: e,
                    }
                })
                .collect();
            dagger(&mut model, &sources, &params, &tcfg, &cam, &mut record).map_err(|e| Error::Data(e.to_string()))?;
        }
    }
    store::save_model(args.out, &model)?;
    let log_path = args.log.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut p = args.out.as_os_str().to_owned();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    let text: String = log.iter().map(|r| log_line(r) + "\n").collect();
    write(&log_path, text.as_bytes())?;
    Ok(log)
}

/// `oracle`, `rule`, `stop` or `start:<checkpoint>`.
pub fn make_policy(spec: &str) -> Result<Box<dyn Policy>> {
    match spec {
        "oracle" => Ok(Box::new(OraclePolicy::new())),
        "rule" => Ok(Box::new(RulePolicy::default())),
        "stop" => Ok(Box::new(StopPolicy)),
        _ => match spec.strip_prefix("start:") {
            Some(path) if !path.is_empty() => {
                let model = store::load_model(Path::new(path))?;
                Ok(Box::new(StartPolicy::new(model, Decode::Greedy)))
            }
            _ => Err(Error::Usage(format!("unknown policy {spec:?} (oracle, rule, stop, start:<checkpoint>)"))),
        },
    }
}

pub struct EvalArgs<'a> {
    pub dataset: &'a Path,
    pub split: &'a str,
    pub policy: &'a str,
    /// Directory for `report.txt` and `report.json`.
    pub report: Option<&'a Path>,
    /// Directory for per-episode SVG overlays.
    pub plots: Option<&'a Path>,
}

/// Evaluates and returns the text report.
pub fn eval(cfg: &RunConfig, args: &EvalArgs<'_>) -> Result<String> {
    let mut policy = make_policy(args.policy)?;
    let ds = store::load_dataset(args.dataset)?;
    let pairs = ds.pairs(args.split)?;
    let report = evaluate(pairs.iter().copied(), &mut policy, &cfg.camera(), cfg.max_steps())
        .map_err(|e| Error::Data(e.to_string()))?;
    let text = report_text(&report, args.split);
    if let Some(dir) = args.report {
        write(&dir.join("report.txt"), text.as_bytes())?;
        write(&dir.join("report.json"), report_json(&report, args.split).as_bytes())?;
    }
    if let Some(dir) = args.plots {
        for ((scene, ep), row) in pairs.iter().zip(&report.rows) {
            let agent: Vec<(f64, f64)> = row.poses.iter().map(|p| (p.x(), p.y())).collect();
            write(&dir.join(format!("{}.svg", ep.episode_id)), trajectory_svg(scene, ep, &agent).as_bytes())?;
        }
    }
    Ok(text)
}

pub struct RolloutArgs<'a> {
    pub scene: &'a Path,
    pub goal: &'a str,
    pub policy: &'a str,
    pub seed: u64,
    /// Directory for the trace and per-step frames.
    pub dump: Option<&'a Path>,
}

/// Result of a single rollout: the sampled episode and the trace text.
pub struct RolloutResult {
    pub episode: Episode,
    pub outcome: Outcome,
    pub trace: String,
    pub frames: usize,
}

fn pose_json(p: &Pose) -> serde_json::Value {
    json!({"x": p.x(), "y": p.y(), "theta": p.theta()})
}

/// Samples a start for `goal` and rolls `policy` out from it.
pub fn rollout(cfg: &RunConfig, args: &RolloutArgs<'_>) -> Result<RolloutResult> {
    let text = fs::read_to_string(args.scene).map_err(|e| Error::io(args.scene, e))?;
    let scene: SceneMap = scene_from_json(&text).map_err(|m| Error::data(args.scene, m))?;
    if scene.goal(args.goal).is_none() {
        let ids: Vec<&str> = scene.goals.iter().map(|g| g.goal_id.as_str()).collect();
        return Err(Error::Usage(format!("unknown goal {:?}; scene has {}", args.goal, ids.join(", "))));
    }
    let mut policy = make_policy(args.policy)?;
    let params = cfg.episode();
    let cam = cfg.camera();
    let plan = build_nav_plan(&scene, &params, derive_seed(args.seed, "navplan", 0))
        .map_err(|e| Error::Data(e.to_string()))?;
    let id = format!("rollout_{}_{}", scene.scene_id, args.goal);
    let episode = generate_episode_filtered(&scene, &plan, derive_seed(args.seed, "rollout", 0), &params, &id, |_, g| {
        g == args.goal
    })
    .map_err(|e| Error::Data(format!("cannot sample a start for goal {}: {e}", args.goal)))?
    .episode;

    let annotated = episode.annotated_scene(&scene);
    let goal = annotated.goal(args.goal).expect("goal checked").position;
    let (mut env, mut obs) = Env::reset(&annotated, &cam, args.goal, episode.start, cfg.max_steps())
        .map_err(|e| Error::Data(e.to_string()))?;
    let mut trace = String::new();
    let header = json!({
        "scene_id": scene.scene_id,
        "goal_id": args.goal,
        "policy": policy.name(),
        "seed": args.seed,
        "start": pose_json(&episode.start),
    });
    trace.push_str(&(header.to_string() + "\n"));
    policy.reset();
    let mut frames = 0;
    while !obs.state.done {
        let pose = obs.state.pose;
        let action = policy.act(&PolicyInput {
            frame: &obs.frame,
            pose,
            goal,
            gt_path: &episode.gt_path,
            step: obs.state.step_count,
        });
        if let Some(dir) = args.dump {
            let t = obs.state.step_count;
            write(&dir.join(format!("frames/rgb_{t:04}.ppm")), &pnm::rgb_p6(&obs.frame.rgb))?;
            write(&dir.join(format!("frames/depth_{t:04}.pgm")), &pnm::depth_p5(&obs.frame.depth))?;
            frames += 1;
        }
        let line = json!({
            "t": obs.state.step_count,
            "pose": pose_json(&pose),
            "action": action.as_str(),
            "hint_dir": obs.frame.hint.as_ref().map(|h| h.dir.as_str()),
        });
        trace.push_str(&(line.to_string() + "\n"));
        obs = env.step(action).map_err(|e| Error::Internal(e.to_string()))?;
    }
    let footer = json!({
        "outcome": obs.state.outcome.as_str(),
        "steps": obs.state.step_count,
        "final_pose": pose_json(&obs.state.pose),
    });
    trace.push_str(&(footer.to_string() + "\n"));
    if let Some(dir) = args.dump {
        write(&dir.join("trace.jsonl"), trace.as_bytes())?;
    }
    Ok(RolloutResult {
        episode,
        outcome: obs.state.outcome,
        trace,
        frames,
    })
}

/// Prints to stdout, ignoring a closed pipe.
pub fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
    let _ = out.flush();
}
