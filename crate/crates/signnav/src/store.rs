//! On-disk scene sets, datasets and model checkpoints.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use signnav_core::episode::{build_dataset, Episode, Split, SplitCounts};
use signnav_core::hash::derive_seed;
use signnav_core::model::{StartConfig, StartModel};
use signnav_core::nn::{decode_checkpoint, encode_checkpoint};
use signnav_core::scene::{gen_floorplan, SceneMap};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats::{
    content_hash, episode_from_jsonl, episode_to_jsonl, scene_from_json, scene_to_json, to_pretty_json,
    DatasetManifest, FileEntry, SceneIndex,
};

pub const SCENE_INDEX: &str = "index.json";
pub const MANIFEST: &str = "manifest.json";

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read(path)?).map_err(|_| Error::data(path, "not valid UTF-8"))
}

/// Writes `text` under `dir/file` and returns its manifest entry.
fn put(dir: &Path, file: String, text: &str) -> Result<FileEntry> {
    write(&dir.join(&file), text.as_bytes())?;
    Ok(FileEntry {
        hash: content_hash(text.as_bytes()),
        file,
    })
}

/// Reads every listed file and checks its hash before anything is parsed.
fn verified(dir: &Path, entries: &[FileEntry]) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        if Path::new(&e.file).is_absolute() || e.file.split(['/', '\\']).any(|c| c == "..") {
            return Err(Error::Data(format!("manifest entry {:?} escapes its directory", e.file)));
        }
        let path = dir.join(&e.file);
        let bytes = read(&path)?;
        let h = content_hash(&bytes);
        if h != e.hash {
            return Err(Error::data(&path, format!("hash mismatch: manifest {} but file {h}", e.hash)));
        }
        out.push(String::from_utf8(bytes).map_err(|_| Error::data(&path, "not valid UTF-8"))?);
    }
    Ok(out)
}

/// Generates `count` scenes from `cfg` into `out` with an index file.
pub fn gen_scenes(out: &Path, cfg: &RunConfig, count: usize) -> Result<SceneIndex> {
    let fp = cfg.floorplan();
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let mut scene = gen_floorplan(derive_seed(cfg.seed(), "scene", i as u64), &fp)
            .map_err(|e| Error::Usage(format!("scene {i}: {e}")))?;
        scene.scene_id = format!("scene_{i:03}");
        let text = scene_to_json(&scene);
        // the file is the source of truth; it must load back
        scene_from_json(&text).map_err(|e| Error::Internal(format!("scene {i} does not reload: {e}")))?;
        entries.push(put(out, format!("{}.json", scene.scene_id), &text)?);
    }
    let index = SceneIndex {
        seed: cfg.seed(),
        config: cfg.to_text(),
        scenes: entries,
    };
    write(&out.join(SCENE_INDEX), to_pretty_json(&index).as_bytes())?;
    Ok(index)
}

/// Scenes listed in `dir`'s index, hash-verified, in index order.
pub fn load_scenes(dir: &Path) -> Result<Vec<SceneMap>> {
    let path = dir.join(SCENE_INDEX);
    let index: SceneIndex = serde_json::from_str(&read_text(&path)?).map_err(|e| Error::data(&path, e))?;
    parse_scenes(dir, &index.scenes)
}

fn parse_scenes(dir: &Path, entries: &[FileEntry]) -> Result<Vec<SceneMap>> {
    let texts = verified(dir, entries)?;
    let mut scenes = Vec::with_capacity(texts.len());
    let mut ids = BTreeSet::new();
    for (e, text) in entries.iter().zip(texts) {
        let s = scene_from_json(&text).map_err(|m| Error::data(&dir.join(&e.file), m))?;
        if !ids.insert(s.scene_id.clone()) {
            return Err(Error::data(&dir.join(&e.file), format!("duplicate scene_id {}", s.scene_id)));
        }
        scenes.push(s);
    }
    Ok(scenes)
}

/// A verified dataset: scenes, per-split episodes and the config that made it.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub config: RunConfig,
    pub scenes: Vec<SceneMap>,
    pub splits: BTreeMap<String, Vec<Episode>>,
}

impl Dataset {
    pub fn scene(&self, scene_id: &str) -> Option<&SceneMap> {
        self.scenes.iter().find(|s| s.scene_id == scene_id)
    }

    pub fn split(&self, name: &str) -> Result<&[Episode]> {
        if Split::parse(name).is_none() {
            return Err(Error::Usage(format!("unknown split {name:?} (train, val_seen, val_unseen)")));
        }
        Ok(self.splits.get(name).map_or(&[][..], Vec::as_slice))
    }

    /// `(scene, episode)` pairs of a split.
    pub fn pairs(&self, name: &str) -> Result<Vec<(&SceneMap, &Episode)>> {
        self.split(name)?
            .iter()
            .map(|e| {
                self.scene(&e.scene_id)
                    .map(|s| (s, e))
                    .ok_or_else(|| Error::Data(format!("episode {} names unknown scene {}", e.episode_id, e.scene_id)))
            })
            .collect()
    }
}

/// Generates episodes over the scenes in `scenes_dir` into `out`.
pub fn gen_episodes(scenes_dir: &Path, out: &Path, cfg: &RunConfig, counts: &SplitCounts) -> Result<DatasetManifest> {
    let scenes = load_scenes(scenes_dir)?;
    let params = cfg.episode();
    let eps = build_dataset(&scenes, counts, cfg.seed(), &params).map_err(|e| match e {
        signnav_core::episode::EpisodeError::InsufficientScenes(_) => Error::Usage(e.to_string()),
        other => Error::Data(other.to_string()),
    })?;
    let mut scene_entries = Vec::with_capacity(scenes.len());
    for s in &scenes {
        scene_entries.push(put(out, format!("scenes/{}.json", s.scene_id), &scene_to_json(s))?);
    }
    let mut splits: BTreeMap<String, Vec<FileEntry>> = BTreeMap::new();
    for split in Split::ALL {
        splits.insert(split.as_str().to_string(), Vec::new());
    }
    for d in &eps {
        let name = d.split.as_str();
        let file = format!("episodes/{name}/{}.jsonl", d.episode.episode_id);
        let entry = put(out, file, &episode_to_jsonl(&d.episode))?;
        splits.get_mut(name).expect("split registered").push(entry);
    }
    let manifest = DatasetManifest {
        seed: cfg.seed(),
        config: cfg.to_text(),
        scenes: scene_entries,
        splits,
    };
    write(&out.join(MANIFEST), to_pretty_json(&manifest).as_bytes())?;
    Ok(manifest)
}

/// Loads a dataset, verifying every hash before parsing any content.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST);
    let manifest: DatasetManifest = serde_json::from_str(&read_text(&path)?).map_err(|e| Error::data(&path, e))?;
    for name in manifest.splits.keys() {
        if Split::parse(name).is_none() {
            return Err(Error::data(&path, format!("unknown split {name:?}")));
        }
    }
    let all: Vec<FileEntry> = manifest.splits.values().flatten().cloned().collect();
    let ep_texts = verified(dir, &all)?;
    let scenes = parse_scenes(dir, &manifest.scenes)?;
    let config = RunConfig::load(Some(&manifest.config), &[]).map_err(|e| Error::data(&path, format!("config echo: {e}")))?;

    let mut texts = ep_texts.into_iter();
    let mut splits = BTreeMap::new();
    for (name, entries) in &manifest.splits {
        let mut eps = Vec::with_capacity(entries.len());
        for e in entries {
            let text = texts.next().expect("one text per entry");
            let ep = episode_from_jsonl(&text).map_err(|m| Error::data(&dir.join(&e.file), m))?;
            if !scenes.iter().any(|s| s.scene_id == ep.scene_id) {
                return Err(Error::data(&dir.join(&e.file), format!("unknown scene_id {}", ep.scene_id)));
            }
            eps.push(ep);
        }
        splits.insert(name.clone(), eps);
    }
    let scene_set = |name: &str| -> BTreeSet<String> {
        splits
            .get(name)
            .map(|v: &Vec<Episode>| v.iter().map(|e| e.scene_id.clone()).collect())
            .unwrap_or_default()
    };
    let seen: BTreeSet<String> = scene_set("train").union(&scene_set("val_seen")).cloned().collect();
    if let Some(shared) = scene_set("val_unseen").intersection(&seen).next() {
        return Err(Error::data(&path, format!("val_unseen shares scene {shared} with a seen split")));
    }
    Ok(Dataset {
        dir: dir.to_path_buf(),
        manifest,
        config,
        scenes,
        splits,
    })
}

/// Parameter checkpoint with the model config block.
pub fn save_model(path: &Path, model: &StartModel) -> Result<()> {
    let bytes = encode_checkpoint(&model.params, model.cfg.config_hash(), &model.cfg.to_text());
    write(path, &bytes)
}

pub fn load_model(path: &Path) -> Result<StartModel> {
    let ck = decode_checkpoint(&read(path)?).map_err(|e| Error::data(path, e))?;
    let cfg = StartConfig::from_text(&ck.config_text).map_err(|e| Error::data(path, e))?;
    let mut model = StartModel::new(cfg).map_err(|e| Error::data(path, e))?;
    ck.load_into(&mut model.params, model.cfg.config_hash()).map_err(|e| Error::data(path, e))?;
    Ok(model)
}
