use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use signnav::formats::{content_hash, episode_from_jsonl, scene_from_json, DatasetManifest, SceneIndex};
use signnav_core::scene::Pose;
use signnav_core::sim::{apply_action, ActionId};

const SMALL: [&str; 2] = ["--set", "scene.extent=12"];

fn signnav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_signnav"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = signnav(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen_scenes(dir: &Path, count: usize, seed: u64) {
    let (c, s) = (count.to_string(), seed.to_string());
    let mut args = vec!["gen-scenes", "--count", &c, "--seed", &s, "--out", p(dir), "-q"];
    args.extend(SMALL);
    ok(&args);
}

fn gen_episodes(scenes: &Path, out: &Path, counts: [usize; 3]) -> Output {
    let c: Vec<String> = counts.iter().map(usize::to_string).collect();
    let mut args = vec![
        "gen-episodes", "--scenes", p(scenes), "--out", p(out), "--train", &c[0], "--val-seen", &c[1], "--val-unseen",
        &c[2], "-q",
    ];
    args.extend(SMALL);
    signnav(&args)
}

fn file_hashes(dir: &Path) -> Vec<(String, String)> {
    let mut v: Vec<_> = walk(dir)
        .into_iter()
        .map(|f| (f.strip_prefix(dir).unwrap().display().to_string(), content_hash(&fs::read(&f).unwrap())))
        .collect();
    v.sort();
    v
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

#[test]
fn gen_scenes_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    gen_scenes(&t.path().join("a"), 3, 1);
    gen_scenes(&t.path().join("b"), 3, 1);
    let a = file_hashes(&t.path().join("a"));
    assert_eq!(a.len(), 4);
    assert_eq!(a, file_hashes(&t.path().join("b")));
    let idx: SceneIndex = serde_json::from_str(&fs::read_to_string(t.path().join("a/index.json")).unwrap()).unwrap();
    assert_eq!(idx.seed, 1);
    assert!(idx.config.contains("scene.extent = 12"));
}

#[test]
fn gen_scenes_zero_count_writes_empty_index() {
    let t = tempfile::tempdir().unwrap();
    gen_scenes(t.path(), 0, 1);
    let idx: SceneIndex = serde_json::from_str(&fs::read_to_string(t.path().join("index.json")).unwrap()).unwrap();
    assert!(idx.scenes.is_empty());
}

#[test]
fn invalid_params_name_the_key() {
    let t = tempfile::tempdir().unwrap();
    let out = signnav(&["gen-scenes", "--count", "1", "--out", p(t.path()), "--set", "scene.corridor_width=-1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scene.corridor_width"));
    let out = signnav(&["gen-scenes", "--count", "1", "--out", p(t.path()), "--set", "scene.colour=red"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scene.colour"));
}

#[test]
fn config_file_is_applied_and_echoed() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("run.cfg");
    fs::write(&cfg, "# small scenes\nscene.extent = 12\nseed = 9\n").unwrap();
    ok(&["gen-scenes", "--count", "1", "--out", p(&t.path().join("s")), "--config", p(&cfg), "-q"]);
    let idx: SceneIndex = serde_json::from_str(&fs::read_to_string(t.path().join("s/index.json")).unwrap()).unwrap();
    assert_eq!(idx.seed, 9);
    assert!(idx.config.contains("scene.extent = 12"));
}

#[test]
fn episode_splits_and_determinism() {
    let t = tempfile::tempdir().unwrap();
    let scenes = t.path().join("scenes");
    gen_scenes(&scenes, 3, 4);
    for d in ["d1", "d2"] {
        let out = gen_episodes(&scenes, &t.path().join(d), [40, 10, 10]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let m1 = fs::read(t.path().join("d1/manifest.json")).unwrap();
    assert_eq!(content_hash(&m1), content_hash(&fs::read(t.path().join("d2/manifest.json")).unwrap()));
    assert_eq!(file_hashes(&t.path().join("d1")), file_hashes(&t.path().join("d2")));

    let m: DatasetManifest = serde_json::from_slice(&m1).unwrap();
    let total: usize = m.splits.values().map(Vec::len).sum();
    assert_eq!(total, 60);
    let scene_ids = |split: &str| -> BTreeSet<String> {
        m.splits[split]
            .iter()
            .map(|e| episode_from_jsonl(&fs::read_to_string(t.path().join("d1").join(&e.file)).unwrap()).unwrap().scene_id)
            .collect()
    };
    let unseen = scene_ids("val_unseen");
    assert_eq!(unseen, BTreeSet::from(["scene_002".to_string()]));
    assert!(scene_ids("train").is_disjoint(&unseen));
    assert!(scene_ids("val_seen").is_disjoint(&unseen));
}

#[test]
fn unseen_split_needs_two_scenes() {
    let t = tempfile::tempdir().unwrap();
    gen_scenes(&t.path().join("s"), 1, 1);
    let out = gen_episodes(&t.path().join("s"), &t.path().join("d"), [0, 0, 5]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("insufficient scenes"));
}

/// Two scenes with a handful of short episodes.
fn tiny_dataset(root: &Path) -> std::path::PathBuf {
    gen_scenes(&root.join("scenes"), 2, 3);
    let d = root.join("data");
    let out = gen_episodes(&root.join("scenes"), &d, [2, 2, 1]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    d
}

#[test]
fn eval_reports_and_plots() {
    let t = tempfile::tempdir().unwrap();
    let d = tiny_dataset(t.path());
    let rep = t.path().join("rep");
    let plots = t.path().join("plots");
    let out = ok(&[
        "eval", "--dataset", p(&d), "--split", "train", "--policy", "oracle", "--report", p(&rep), "--plots", p(&plots),
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mean = text.lines().last().unwrap();
    assert_eq!(mean.split_whitespace().nth(1), Some("1.00"), "{text}");
    assert_eq!(fs::read_to_string(rep.join("report.txt")).unwrap(), text);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(rep.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["mean"]["SR"], 1.0);
    assert_eq!(json["columns"], serde_json::json!(["SR", "NDTW", "SDTW", "RMSE", "steps"]));
    assert_eq!(fs::read_dir(&plots).unwrap().count(), 2);

    ok(&["eval", "--dataset", p(&d), "--split", "val_seen", "--policy", "stop", "--report", p(&rep)]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(rep.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["mean"]["SR"], 0.0);
    assert_eq!(json["mean"]["SDTW"], 0.0);
    assert_eq!(json["policy"], "stop");

    let out = signnav(&["eval", "--dataset", p(&d), "--policy", "teleport"]);
    assert_eq!(out.status.code(), Some(1));
    let out = signnav(&["eval", "--dataset", p(&d), "--split", "test", "--policy", "oracle"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn tampered_dataset_aborts_with_data_error() {
    let t = tempfile::tempdir().unwrap();
    let d = tiny_dataset(t.path());
    let ep = walk(&d.join("episodes/train")).into_iter().next().unwrap();
    let mut text = fs::read_to_string(&ep).unwrap();
    text.push('\n');
    fs::write(&ep, text).unwrap();
    let out = signnav(&["eval", "--dataset", p(&d), "--split", "val_seen", "--policy", "oracle"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hash mismatch"));
    let out = signnav(&["train", "--dataset", p(&d), "--out", p(&t.path().join("m.ckpt"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!t.path().join("m.ckpt").exists());
}

#[test]
fn train_is_reproducible_and_dagger_needs_checkpoint() {
    let t = tempfile::tempdir().unwrap();
    let d = tiny_dataset(t.path());
    let quick = ["--set", "train.epochs=2", "--set", "train.dagger_iterations=1", "--set", "train.dagger_epochs=1", "-q"];
    let train = |out: &Path, extra: &[&str]| {
        let mut args = vec!["train", "--dataset", p(&d), "--out", p(out)];
        args.extend(quick);
        args.extend(extra);
        signnav(&args)
    };
    let (a, b) = (t.path().join("a.ckpt"), t.path().join("b.ckpt"));
    assert!(train(&a, &[]).status.success());
    assert!(train(&b, &[]).status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let log = fs::read_to_string(t.path().join("a.ckpt.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert_eq!(last["stage"], "tf");
    assert!(last["accuracy"].as_f64().unwrap() > 0.0);

    let out = train(&t.path().join("c.ckpt"), &["--stage", "dagger"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--from"));
    let out = train(&t.path().join("c.ckpt"), &["--stage", "dagger", "--from", p(&t.path().join("missing.ckpt"))]);
    assert_eq!(out.status.code(), Some(1));

    let c = t.path().join("c.ckpt");
    let out = train(&c, &["--stage", "dagger", "--from", p(&a)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = fs::read_to_string(t.path().join("c.ckpt.log.jsonl")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(rec["stage"], "dagger-1");
    // one expert and one relabelled rollout per train episode
    assert_eq!(rec["dataset_size"], 4);

    let spec = format!("start:{}", p(&c));
    ok(&["eval", "--dataset", p(&d), "--split", "val_unseen", "--policy", &spec]);
}

#[test]
fn rollout_trace_replays_and_dumps_frames() {
    let t = tempfile::tempdir().unwrap();
    gen_scenes(&t.path().join("s"), 1, 2);
    let scene_path = t.path().join("s/scene_000.json");
    let scene = scene_from_json(&fs::read_to_string(&scene_path).unwrap()).unwrap();
    let goal = scene.goals[0].goal_id.clone();
    let dump = t.path().join("dump");
    let mut args = vec!["rollout", "--scene", p(&scene_path), "--goal", &goal, "--seed", "5", "--dump", p(&dump), "-q"];
    args.extend(SMALL);
    ok(&args);

    let trace = fs::read_to_string(dump.join("trace.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = trace.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let pose = |v: &serde_json::Value| Pose::new(v["x"].as_f64().unwrap(), v["y"].as_f64().unwrap(), v["theta"].as_f64().unwrap());
    let steps = &lines[1..lines.len() - 1];
    let footer = lines.last().unwrap();
    assert_eq!(footer["outcome"], "success");
    assert_eq!(footer["steps"].as_u64().unwrap() as usize, steps.len());

    let mut cur = pose(&lines[0]["start"]);
    for s in steps {
        assert_eq!(pose(&s["pose"]), cur);
        cur = apply_action(&scene, &cur, ActionId::parse(s["action"].as_str().unwrap()).unwrap());
    }
    assert_eq!(cur, pose(&footer["final_pose"]));

    let frames: Vec<String> = fs::read_dir(dump.join("frames"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(frames.iter().filter(|f| f.ends_with(".ppm")).count(), steps.len());
    assert_eq!(frames.iter().filter(|f| f.ends_with(".pgm")).count(), steps.len());

    let out = signnav(&["rollout", "--scene", p(&scene_path), "--goal", "nowhere"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));
}

#[test]
fn rollout_without_dump_prints_trace() {
    let t = tempfile::tempdir().unwrap();
    gen_scenes(&t.path().join("s"), 1, 2);
    let scene_path = t.path().join("s/scene_000.json");
    let scene = scene_from_json(&fs::read_to_string(&scene_path).unwrap()).unwrap();
    let mut args = vec!["rollout", "--scene", p(&scene_path), "--goal", &scene.goals[0].goal_id, "--policy", "stop"];
    args.extend(SMALL);
    let out = ok(&args);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.contains("stop_failure") || text.contains("success"));
}
