//! Flat `key = value` run configuration.
//!
//! Every key has a built-in default and a fixed type. Layers are applied in
//! order: defaults, then a config file, then command-line overrides.

use std::collections::BTreeMap;
use std::fmt;

use signnav_core::episode::EpisodeParams;
use signnav_core::model::{InputMode, StartConfig};
use signnav_core::render::CameraModel;
use signnav_core::scene::FloorplanParams;
use signnav_core::sim::DEFAULT_MAX_STEPS;
use signnav_core::train::TrainConfig;

use crate::error::Error;

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
}

impl Value {
    fn kind(&self) -> &'static str {
        match self {
            Value::Int(_) => "integer",
            Value::Float(_) => "float",
            Value::Bool(_) => "boolean",
            Value::Str(_) => "string",
        }
    }

    /// Parses `text` as the same kind as `self`.
    fn parse_like(&self, text: &str) -> Option<Value> {
        let t = text.trim();
        match self {
            Value::Int(_) => t.parse().ok().map(Value::Int),
            Value::Float(_) => t.parse::<f64>().ok().filter(|v| v.is_finite()).map(Value::Float),
            Value::Bool(_) => match t {
                "true" => Some(Value::Bool(true)),
                "false" => Some(Value::Bool(false)),
                _ => None,
            },
            Value::Str(_) => Some(Value::Str(t.to_string())),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v:?}"),
            Value::Bool(v) => write!(f, "{v}"),
            Value::Str(v) => f.write_str(v),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, Value>,
}

fn defaults() -> BTreeMap<String, Value> {
    let fp = FloorplanParams::default();
    let ep = EpisodeParams::default();
    let cam = CameraModel::default();
    let m = StartConfig::micro();
    let tr = TrainConfig::micro();
    let f = Value::Float;
    let i = |v: usize| Value::Int(v as i64);
    let entries = [
        ("seed", Value::Int(42)),
        ("scene.extent", f(fp.extent)),
        ("scene.corridor_width", f(fp.corridor_width)),
        ("scene.rooms_min", i(fp.rooms_min)),
        ("scene.rooms_max", i(fp.rooms_max)),
        ("scene.cell_size", f(fp.cell_size)),
        ("episode.poisson_radius", f(ep.poisson_radius)),
        ("episode.c_min", f(ep.c_min)),
        ("episode.r_edge", f(ep.r_edge)),
        ("episode.plan_radius", f(ep.plan_radius)),
        ("episode.smooth_clearance", f(ep.smooth_clearance)),
        ("episode.min_geodesic", f(ep.min_geodesic)),
        ("episode.max_rejections", i(ep.max_rejections)),
        ("camera.width", i(cam.image_width)),
        ("camera.height", i(cam.image_height)),
        ("camera.hfov", f(cam.hfov)),
        ("camera.wall_height", f(cam.wall_height)),
        ("camera.eye_height", f(cam.eye_height)),
        ("camera.max_depth", f(cam.max_depth)),
        ("sim.max_steps", i(DEFAULT_MAX_STEPS)),
        ("model.enc_channels_1", i(m.enc_channels[0])),
        ("model.enc_channels_2", i(m.enc_channels[1])),
        ("model.fused_channels", i(m.fused_channels)),
        ("model.patch", i(m.patch)),
        ("model.d_model", i(m.d_model)),
        ("model.spatial_layers", i(m.spatial_layers)),
        ("model.spatial_heads", i(m.spatial_heads)),
        ("model.temporal_layers", i(m.temporal_layers)),
        ("model.temporal_heads", i(m.temporal_heads)),
        ("model.history", i(m.history)),
        ("model.hint_channels", i(m.hint_channels)),
        ("model.hint_width", i(m.hint_width)),
        ("model.ffn_mult", i(m.ffn_mult)),
        ("model.inputs", Value::Str(m.inputs.as_str().into())),
        ("model.spatial_module", Value::Bool(m.spatial_module)),
        ("model.temporal_module", Value::Bool(m.temporal_module)),
        ("train.lr", f(tr.lr)),
        ("train.batch_size", i(tr.batch_size)),
        ("train.epochs", i(tr.epochs)),
        ("train.dagger_iterations", i(tr.dagger_iterations)),
        ("train.dagger_epochs", i(tr.dagger_epochs)),
        ("train.beta0", f(tr.beta0)),
        ("train.target_accuracy", f(tr.target_accuracy.unwrap_or(0.0))),
    ];
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { values: defaults() }
    }
}

impl RunConfig {
    /// Defaults, then `file` (if any), then `overrides` in order.
    pub fn load(file: Option<&str>, overrides: &[(String, String)]) -> Result<Self, Error> {
        let mut cfg = RunConfig::default();
        if let Some(text) = file {
            cfg.apply_text(text)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.values.get(key)
    }

    /// Sets `key` from text; the key must exist and the text must parse as its type.
    pub fn set(&mut self, key: &str, text: &str) -> Result<(), Error> {
        let slot = self
            .values
            .get_mut(key)
            .ok_or_else(|| Error::Usage(format!("unknown config key `{key}`")))?;
        *slot = slot.parse_like(text).ok_or_else(|| {
            Error::Usage(format!("config key `{key}` expects a {}, got {text:?}", slot.kind()))
        })?;
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), Error> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("config line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Canonical text form, sorted by key; parses back to the same config.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    fn int(&self, key: &str) -> i64 {
        match self.values[key] {
            Value::Int(v) => v,
            _ => unreachable!("{key} is an integer key"),
        }
    }

    fn uint(&self, key: &str) -> usize {
        self.int(key).max(0) as usize
    }

    fn float(&self, key: &str) -> f64 {
        match self.values[key] {
            Value::Float(v) => v,
            _ => unreachable!("{key} is a float key"),
        }
    }

    fn flag(&self, key: &str) -> bool {
        match self.values[key] {
            Value::Bool(v) => v,
            _ => unreachable!("{key} is a boolean key"),
        }
    }

    fn text(&self, key: &str) -> &str {
        match &self.values[key] {
            Value::Str(v) => v,
            _ => unreachable!("{key} is a string key"),
        }
    }

    pub fn seed(&self) -> u64 {
        self.int("seed") as u64
    }

    pub fn max_steps(&self) -> usize {
        self.uint("sim.max_steps")
    }

    pub fn floorplan(&self) -> FloorplanParams {
        FloorplanParams {
            extent: self.float("scene.extent"),
            corridor_width: self.float("scene.corridor_width"),
            rooms_min: self.uint("scene.rooms_min"),
            rooms_max: self.uint("scene.rooms_max"),
            cell_size: self.float("scene.cell_size"),
        }
    }

    pub fn camera(&self) -> CameraModel {
        CameraModel {
            image_width: self.uint("camera.width"),
            image_height: self.uint("camera.height"),
            hfov: self.float("camera.hfov"),
            wall_height: self.float("camera.wall_height"),
            eye_height: self.float("camera.eye_height"),
            max_depth: self.float("camera.max_depth"),
        }
    }

    pub fn episode(&self) -> EpisodeParams {
        EpisodeParams {
            poisson_radius: self.float("episode.poisson_radius"),
            c_min: self.float("episode.c_min"),
            r_edge: self.float("episode.r_edge"),
            plan_radius: self.float("episode.plan_radius"),
            smooth_clearance: self.float("episode.smooth_clearance"),
            min_geodesic: self.float("episode.min_geodesic"),
            max_rejections: self.uint("episode.max_rejections"),
            camera: self.camera(),
            ..EpisodeParams::default()
        }
    }

    pub fn model(&self) -> StartConfig {
        let cam = self.camera();
        StartConfig {
            image_height: cam.image_height,
            image_width: cam.image_width,
            enc_channels: [self.uint("model.enc_channels_1"), self.uint("model.enc_channels_2")],
            fused_channels: self.uint("model.fused_channels"),
            patch: self.uint("model.patch"),
            d_model: self.uint("model.d_model"),
            spatial_layers: self.uint("model.spatial_layers"),
            spatial_heads: self.uint("model.spatial_heads"),
            temporal_layers: self.uint("model.temporal_layers"),
            temporal_heads: self.uint("model.temporal_heads"),
            history: self.uint("model.history"),
            hint_channels: self.uint("model.hint_channels"),
            hint_width: self.uint("model.hint_width"),
            ffn_mult: self.uint("model.ffn_mult"),
            max_depth: cam.max_depth,
            inputs: InputMode::parse(self.text("model.inputs")).unwrap_or(InputMode::Both),
            spatial_module: self.flag("model.spatial_module"),
            temporal_module: self.flag("model.temporal_module"),
            seed: self.seed(),
        }
    }

    pub fn train(&self) -> TrainConfig {
        let target = self.float("train.target_accuracy");
        TrainConfig {
            lr: self.float("train.lr"),
            batch_size: self.uint("train.batch_size"),
            epochs: self.uint("train.epochs"),
            dagger_iterations: self.uint("train.dagger_iterations"),
            dagger_epochs: self.uint("train.dagger_epochs"),
            beta0: self.float("train.beta0"),
            seed: self.seed(),
            target_accuracy: (target > 0.0).then_some(target),
        }
    }

    /// Checks ranges; errors name the offending key.
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |key: &str, why: &str| Err(Error::Usage(format!("config key `{key}` {why}")));
        for (k, v) in &self.values {
            if let Value::Int(n) = v {
                if *n < 0 {
                    return bad(k, "must be non-negative");
                }
            }
        }
        for key in [
            "scene.extent",
            "scene.corridor_width",
            "scene.cell_size",
            "episode.poisson_radius",
            "episode.c_min",
            "episode.r_edge",
            "episode.plan_radius",
            "episode.smooth_clearance",
            "camera.hfov",
            "camera.wall_height",
            "camera.eye_height",
            "camera.max_depth",
            "train.lr",
            "train.beta0",
        ] {
            if self.float(key) <= 0.0 {
                return bad(key, "must be positive");
            }
        }
        if self.float("episode.min_geodesic") < 0.0 {
            return bad("episode.min_geodesic", "must be non-negative");
        }
        if self.float("train.beta0") > 1.0 {
            return bad("train.beta0", "must be at most 1");
        }
        if self.uint("scene.rooms_min") > self.uint("scene.rooms_max") {
            return bad("scene.rooms_min", "exceeds scene.rooms_max");
        }
        if InputMode::parse(self.text("model.inputs")).is_none() {
            return bad("model.inputs", "must be one of both, rgb, depth");
        }
        let target = self.float("train.target_accuracy");
        if !(0.0..=1.0).contains(&target) {
            return bad("train.target_accuracy", "must lie in [0, 1] (0 disables early stopping)");
        }
        if let Err(e) = self.camera().validate() {
            return Err(Error::Usage(format!("camera config: {e}")));
        }
        if let Err(e) = self.model().validate() {
            return Err(Error::Usage(format!("model config: {e}")));
        }
        if let Err(e) = self.train().validate() {
            return Err(Error::Usage(format!("train config: {e}")));
        }
        Ok(())
    }
}
