//! The START policy: observation and hint embeddings, spatial transformer
//! with a hint-initialized CLS token, temporal transformer over recent states
//! and the action head.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::hash::fnv1a64;
use crate::metrics::{Policy, PolicyInput};
use crate::nn::{
    layer_norm, linear, transformer_block, xavier_uniform, NnError, ParamStore, Tape, Tensor, Var,
};
use crate::render::{BBox, Frame, Image, HINT_SIZE};
use crate::sim::ActionId;

pub const NUM_ACTIONS: usize = 4;
/// Action-table row used for the current step, whose action is not yet known.
pub const NO_ACTION: usize = 4;
const BOX_FEATURES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputMode {
    Both,
    RgbOnly,
    DepthOnly,
}

impl InputMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InputMode::Both => "both",
            InputMode::RgbOnly => "rgb",
            InputMode::DepthOnly => "depth",
        }
    }

    pub fn parse(s: &str) -> Option<InputMode> {
        match s {
            "both" => Some(InputMode::Both),
            "rgb" => Some(InputMode::RgbOnly),
            "depth" => Some(InputMode::DepthOnly),
            _ => None,
        }
    }

    fn rgb(self) -> bool {
        self != InputMode::DepthOnly
    }

    fn depth(self) -> bool {
        self != InputMode::RgbOnly
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StartConfig {
    pub image_height: usize,
    pub image_width: usize,
    /// Output channels of the two stride-2 convolutions of each encoder.
    pub enc_channels: [usize; 2],
    pub fused_channels: usize,
    pub patch: usize,
    pub d_model: usize,
    pub spatial_layers: usize,
    pub spatial_heads: usize,
    pub temporal_layers: usize,
    pub temporal_heads: usize,
    pub history: usize,
    pub hint_channels: usize,
    pub hint_width: usize,
    pub ffn_mult: usize,
    /// Depth values are divided by this before encoding.
    pub max_depth: f64,
    pub inputs: InputMode,
    /// When off, the hint token is dropped and patches skip the spatial blocks.
    pub spatial_module: bool,
    /// When off, `f_s` is a projection of `[cls_out, s_t]`.
    pub temporal_module: bool,
    pub seed: u64,
}

impl StartConfig {
    pub fn micro() -> Self {
        StartConfig {
            image_height: 64,
            image_width: 64,
            enc_channels: [4, 16],
            fused_channels: 16,
            patch: 4,
            d_model: 64,
            spatial_layers: 2,
            spatial_heads: 2,
            temporal_layers: 2,
            temporal_heads: 2,
            history: 8,
            hint_channels: 8,
            hint_width: 32,
            ffn_mult: 2,
            max_depth: 20.0,
            inputs: InputMode::Both,
            spatial_module: true,
            temporal_module: true,
            seed: 0,
        }
    }

    /// Width 768 with 6 layers and 6 heads in both transformers.
    pub fn full() -> Self {
        StartConfig {
            image_height: 224,
            image_width: 224,
            enc_channels: [64, 128],
            fused_channels: 128,
            patch: 8,
            d_model: 768,
            spatial_layers: 6,
            spatial_heads: 6,
            temporal_layers: 6,
            temporal_heads: 6,
            history: 8,
            hint_channels: 32,
            hint_width: 2048,
            ffn_mult: 4,
            ..StartConfig::micro()
        }
    }

    /// Temporal module off, no history.
    pub fn spatial_only(mut self) -> Self {
        self.temporal_module = false;
        self.history = 0;
        self
    }

    /// Spatial module off: no hint token, no spatial blocks.
    pub fn temporal_only(mut self) -> Self {
        self.spatial_module = false;
        self
    }

    pub fn with_inputs(mut self, inputs: InputMode) -> Self {
        self.inputs = inputs;
        self
    }

    /// Encoder output resolution `(H_o, W_o)`.
    pub fn encoder_hw(&self) -> (usize, usize) {
        let h = self.image_height.div_ceil(2).div_ceil(2);
        let w = self.image_width.div_ceil(2).div_ceil(2);
        (h, w)
    }

    pub fn num_patches(&self) -> usize {
        let (h, w) = self.encoder_hw();
        h * w / (self.patch * self.patch)
    }

    pub fn spatial_seq_len(&self) -> usize {
        self.num_patches() + usize::from(self.spatial_module)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::Config(m));
        let positive = [
            ("image_height", self.image_height),
            ("image_width", self.image_width),
            ("enc_channels[0]", self.enc_channels[0]),
            ("enc_channels[1]", self.enc_channels[1]),
            ("fused_channels", self.fused_channels),
            ("patch", self.patch),
            ("d_model", self.d_model),
            ("spatial_heads", self.spatial_heads),
            ("temporal_heads", self.temporal_heads),
            ("hint_channels", self.hint_channels),
            ("hint_width", self.hint_width),
            ("ffn_mult", self.ffn_mult),
        ];
        for (k, v) in positive {
            if v == 0 {
                return bad(format!("{k} must be positive"));
            }
        }
        let (ho, wo) = self.encoder_hw();
        if ho % self.patch != 0 || wo % self.patch != 0 {
            return bad(format!(
                "encoder output {ho}x{wo} is not tiled by {p}x{p} patches",
                p = self.patch
            ));
        }
        if self.d_model % self.spatial_heads != 0 || self.d_model % self.temporal_heads != 0 {
            return bad(format!(
                "d_model {} not divisible by heads ({}, {})",
                self.d_model, self.spatial_heads, self.temporal_heads
            ));
        }
        if !(self.max_depth > 0.0 && self.max_depth.is_finite()) {
            return bad("max_depth must be positive".to_string());
        }
        if !self.temporal_module && self.history != 0 {
            return bad("history must be 0 when the temporal module is off".to_string());
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(&k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    fn entries(&self) -> Vec<(String, String)> {
        let kv = |k: &str, v: String| (k.to_string(), v);
        vec![
            kv("image_height", self.image_height.to_string()),
            kv("image_width", self.image_width.to_string()),
            kv("enc_channels_1", self.enc_channels[0].to_string()),
            kv("enc_channels_2", self.enc_channels[1].to_string()),
            kv("fused_channels", self.fused_channels.to_string()),
            kv("patch", self.patch.to_string()),
            kv("d_model", self.d_model.to_string()),
            kv("spatial_layers", self.spatial_layers.to_string()),
            kv("spatial_heads", self.spatial_heads.to_string()),
            kv("temporal_layers", self.temporal_layers.to_string()),
            kv("temporal_heads", self.temporal_heads.to_string()),
            kv("history", self.history.to_string()),
            kv("hint_channels", self.hint_channels.to_string()),
            kv("hint_width", self.hint_width.to_string()),
            kv("ffn_mult", self.ffn_mult.to_string()),
            kv("max_depth", format!("{:?}", self.max_depth)),
            kv("inputs", self.inputs.as_str().to_string()),
            kv("spatial_module", self.spatial_module.to_string()),
            kv("temporal_module", self.temporal_module.to_string()),
            kv("seed", self.seed.to_string()),
        ]
    }

    /// Parses `key = value` lines as written by `to_text`; every key is required.
    pub fn from_text(text: &str) -> Result<Self, NnError> {
        let mut cfg = StartConfig::micro();
        let mut seen = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| NnError::Config(format!("malformed line `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            let num = || {
                v.parse::<usize>()
                    .map_err(|_| NnError::Config(format!("{k}: `{v}` is not an integer")))
            };
            let flag = || {
                v.parse::<bool>()
                    .map_err(|_| NnError::Config(format!("{k}: `{v}` is not a boolean")))
            };
            match k {
                "image_height" => cfg.image_height = num()?,
                "image_width" => cfg.image_width = num()?,
                "enc_channels_1" => cfg.enc_channels[0] = num()?,
                "enc_channels_2" => cfg.enc_channels[1] = num()?,
                "fused_channels" => cfg.fused_channels = num()?,
                "patch" => cfg.patch = num()?,
                "d_model" => cfg.d_model = num()?,
                "spatial_layers" => cfg.spatial_layers = num()?,
                "spatial_heads" => cfg.spatial_heads = num()?,
                "temporal_layers" => cfg.temporal_layers = num()?,
                "temporal_heads" => cfg.temporal_heads = num()?,
                "history" => cfg.history = num()?,
                "hint_channels" => cfg.hint_channels = num()?,
                "hint_width" => cfg.hint_width = num()?,
                "ffn_mult" => cfg.ffn_mult = num()?,
                "max_depth" => {
                    cfg.max_depth = v
                        .parse()
                        .map_err(|_| NnError::Config(format!("max_depth: `{v}` is not a number")))?
                }
                "inputs" => {
                    cfg.inputs = InputMode::parse(v)
                        .ok_or_else(|| NnError::Config(format!("inputs: unknown mode `{v}`")))?
                }
                "spatial_module" => cfg.spatial_module = flag()?,
                "temporal_module" => cfg.temporal_module = flag()?,
                "seed" => cfg.seed = v.parse().map_err(|_| NnError::Config(format!("seed: `{v}`")))?,
                _ => return Err(NnError::Config(format!("unknown model key `{k}`"))),
            }
            seen.push(k.to_string());
        }
        for (k, _) in cfg.entries() {
            if !seen.contains(&k) {
                return Err(NnError::Config(format!("missing model key `{k}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hash of the architecture (everything except the seed).
    pub fn config_hash(&self) -> u64 {
        let mut text = String::new();
        for (k, v) in self.entries() {
            if k != "seed" {
                text.push_str(&format!("{k}={v};"));
            }
        }
        fnv1a64(text.as_bytes())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Xavier(usize, usize),
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    init: Init,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct Specs(Vec<ParamSpec>);

impl Specs {
    fn add(&mut self, name: String, shape: &[usize], init: Init) {
        self.0.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            init,
        });
    }

    fn matrix(&mut self, name: &str, i: usize, o: usize) {
        self.add(format!("{name}.w"), &[i, o], Init::Xavier(i, o));
    }

    fn linear(&mut self, name: &str, i: usize, o: usize) {
        self.matrix(name, i, o);
        self.add(format!("{name}.b"), &[o], Init::Zeros);
    }

    fn norm(&mut self, name: &str, d: usize) {
        self.add(format!("{name}.gamma"), &[d], Init::Ones);
        self.add(format!("{name}.beta"), &[d], Init::Zeros);
    }

    fn conv(&mut self, name: &str, ci: usize, co: usize) {
        self.add(name.to_string(), &[co, ci, 3, 3], Init::Xavier(ci * 9, co * 9));
    }

    fn block(&mut self, name: &str, d: usize, heads: usize, ffn: usize) {
        let dh = d / heads;
        for h in 0..heads {
            for w in ["wq", "wk", "wv"] {
                self.add(format!("{name}.attn.h{h}.{w}"), &[d, dh], Init::Xavier(d, dh));
            }
        }
        self.add(format!("{name}.attn.wo"), &[d, d], Init::Xavier(d, d));
        self.norm(&format!("{name}.ln1"), d);
        self.matrix(&format!("{name}.ffn1"), d, ffn * d);
        self.matrix(&format!("{name}.ffn2"), ffn * d, d);
        self.norm(&format!("{name}.ln2"), d);
    }
}

/// Names, shapes and initializers of every parameter of `cfg`.
pub fn param_specs(cfg: &StartConfig) -> Vec<ParamSpec> {
    let mut s = Specs(Vec::new());
    let [c1, c2] = cfg.enc_channels;
    let (co, d) = (cfg.fused_channels, cfg.d_model);
    if cfg.inputs.rgb() {
        s.conv("enc_rgb.conv1", 3, c1);
        s.conv("enc_rgb.conv2", c1, c2);
        s.linear("enc_rgb.proj", c2, co);
    }
    if cfg.inputs.depth() {
        s.conv("enc_depth.conv1", 1, c1);
        s.conv("enc_depth.conv2", c1, c2);
        s.linear("enc_depth.proj", c2, co);
    }
    s.norm("obs_ln", co);
    if cfg.spatial_module {
        let hw = HINT_SIZE.div_ceil(2);
        s.conv("hint.conv", 3, cfg.hint_channels);
        s.linear("hint.fc", cfg.hint_channels * hw * hw, cfg.hint_width);
        s.matrix("w_h", cfg.hint_width, d);
        s.norm("ln_h", d);
        s.matrix("w_p", BOX_FEATURES, d);
        s.norm("ln_p", d);
    }
    let n = cfg.num_patches();
    s.linear("patch", cfg.patch * cfg.patch * co, d);
    s.add("spatial_pos".into(), &[n + 1, d], Init::Xavier(n + 1, d));
    if cfg.spatial_module {
        for l in 0..cfg.spatial_layers {
            s.block(&format!("spatial.l{l}"), d, cfg.spatial_heads, cfg.ffn_mult);
        }
    }
    s.matrix("w_spa", d, d);
    s.norm("ln_spa", d);
    s.add("action_table".into(), &[NUM_ACTIONS + 1, d], Init::Xavier(NUM_ACTIONS + 1, d));
    s.matrix("w_a", d, d);
    s.norm("ln_a", d);
    if cfg.temporal_module {
        let k = cfg.history;
        s.add("temporal_pos".into(), &[k + 2, d], Init::Xavier(k + 2, d));
        for l in 0..cfg.temporal_layers {
            s.block(&format!("temporal.l{l}"), d, cfg.temporal_heads, cfg.ffn_mult);
        }
    } else {
        s.linear("bypass", 2 * d, d);
    }
    // zero head: a fresh model predicts the uniform distribution
    s.add("head.w".into(), &[d, NUM_ACTIONS], Init::Zeros);
    s.add("head.b".into(), &[NUM_ACTIONS], Init::Zeros);
    s.0
}

/// Model inputs for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// `[3, H, W]` in [0, 1].
    pub rgb: Tensor,
    /// `[1, H, W]`, depth divided by `max_depth` and clamped to [0, 1].
    pub depth: Tensor,
    /// `[3, 16, 16]` crop and its box, or `None` when no hint is visible.
    pub hint: Option<(Tensor, BBox)>,
}

fn chw(img: &Image, scale: f64) -> Tensor {
    let (w, h, c) = (img.width, img.height, img.channels);
    let mut t = Tensor::zeros(&[c, h, w]);
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                t.data[(k * h + y) * w + x] = (img.get(x, y, k) * scale).clamp(0.0, 1.0);
            }
        }
    }
    t
}

impl Observation {
    pub fn from_frame(frame: &Frame, cfg: &StartConfig) -> Result<Self, NnError> {
        let (h, w) = (cfg.image_height, cfg.image_width);
        if frame.rgb.width != w || frame.rgb.height != h || frame.depth.width != w || frame.depth.height != h {
            return Err(NnError::Input(format!(
                "frame is {}x{}, model expects {w}x{h}",
                frame.rgb.width, frame.rgb.height
            )));
        }
        let hint = match &frame.hint {
            Some(hint) => Some((chw(&hint.crop, 1.0), hint.bbox)),
            None => None,
        };
        Ok(Observation {
            rgb: chw(&frame.rgb, 1.0),
            depth: chw(&frame.depth, 1.0 / cfg.max_depth),
            hint,
        })
    }
}

/// Box features `[x_min/W, y_min/H, x_max/W, y_max/H, w*h/(W*H)]`; the
/// sentinel box maps to zeros.
pub fn box_features(bbox: BBox, width: usize, height: usize) -> Result<[f64; 5], NnError> {
    if bbox.is_sentinel() {
        return Ok([0.0; 5]);
    }
    if !bbox.within(width, height) {
        return Err(NnError::Input(format!("box {bbox:?} outside {width}x{height} image")));
    }
    let (w, h) = (width as f64, height as f64);
    Ok([
        bbox.x_min as f64 / w,
        bbox.y_min as f64 / h,
        bbox.x_max as f64 / w,
        bbox.y_max as f64 / h,
        (bbox.width() as f64 * bbox.height() as f64) / (w * h),
    ])
}

/// Tape values produced for one step.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub f_spa: Var,
    pub cls: Var,
    pub state: Var,
    pub f_s: Var,
    pub probs: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StartModel {
    pub cfg: StartConfig,
    pub params: ParamStore,
}

impl StartModel {
    pub fn new(cfg: StartConfig) -> Result<Self, NnError> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        for spec in param_specs(&cfg) {
            let t = match spec.init {
                Init::Xavier(i, o) => xavier_uniform(&spec.shape, i, o, cfg.seed, &spec.name),
                Init::Zeros => Tensor::zeros(&spec.shape),
                Init::Ones => Tensor::full(&spec.shape, 1.0),
            };
            params.add(spec.name, t)?;
        }
        Ok(StartModel { cfg, params })
    }

    fn encoder(&self, t: &mut Tape, x: Var, prefix: &str) -> Result<Var, NnError> {
        let k1 = t.p(&format!("{prefix}.conv1"));
        let k2 = t.p(&format!("{prefix}.conv2"));
        let a = t.conv2d(x, k1)?;
        let a = t.gelu(a);
        let b = t.conv2d(a, k2)?;
        let b = t.gelu(b);
        let (c, h, w) = {
            let s = &t.value(b).shape;
            (s[0], s[1], s[2])
        };
        let flat = t.reshape(b, &[c, h * w])?;
        let hwc = t.transpose(flat)?;
        linear(t, hwc, &format!("{prefix}.proj"))
    }

    /// `v_o` in channels-last layout `[H_o * W_o, C_o]`.
    pub fn encode_observation(&self, t: &mut Tape, rgb: Var, depth: Var) -> Result<Var, NnError> {
        let (h, w) = (self.cfg.image_height, self.cfg.image_width);
        if t.value(rgb).shape != [3, h, w] || t.value(depth).shape != [1, h, w] {
            return Err(NnError::Shape(format!(
                "observation shapes {:?}, {:?}; expected [3, {h}, {w}], [1, {h}, {w}]",
                t.value(rgb).shape,
                t.value(depth).shape
            )));
        }
        let sum = match self.cfg.inputs {
            InputMode::Both => {
                let r = self.encoder(t, rgb, "enc_rgb")?;
                let d = self.encoder(t, depth, "enc_depth")?;
                t.add(r, d)?
            }
            InputMode::RgbOnly => self.encoder(t, rgb, "enc_rgb")?,
            InputMode::DepthOnly => self.encoder(t, depth, "enc_depth")?,
        };
        layer_norm(t, sum, "obs_ln")
    }

    /// `f^h` for a crop (zeros when absent).
    fn hint_feature(&self, t: &mut Tape, crop: Option<&Tensor>) -> Result<Var, NnError> {
        let hw = HINT_SIZE.div_ceil(2);
        let n = self.cfg.hint_channels * hw * hw;
        let flat = match crop {
            Some(c) => {
                if c.shape != [3, HINT_SIZE, HINT_SIZE] {
                    return Err(NnError::Shape(format!("hint crop shape {:?}", c.shape)));
                }
                let x = t.input(c.clone());
                let k = t.p("hint.conv");
                let y = t.conv2d(x, k)?;
                let y = t.gelu(y);
                t.reshape(y, &[1, n])?
            }
            // conv and GeLU of a zero crop are exactly zero
            None => t.input(Tensor::zeros(&[1, n])),
        };
        let f = linear(t, flat, "hint.fc")?;
        Ok(t.gelu(f))
    }

    /// `v_h = LN(f^h W^h) + LN(f^b W^p)` as `[1, D]`.
    pub fn encode_hint(&self, t: &mut Tape, hint: Option<(&Tensor, BBox)>) -> Result<Var, NnError> {
        let fb = match hint {
            Some((_, bbox)) => box_features(bbox, self.cfg.image_width, self.cfg.image_height)?,
            None => [0.0; 5],
        };
        let fh = self.hint_feature(t, hint.map(|h| h.0))?;
        let a = linear(t, fh, "w_h")?;
        let a = layer_norm(t, a, "ln_h")?;
        let fbv = t.input(Tensor::from_vec(&[1, BOX_FEATURES], fb.to_vec())?);
        let b = linear(t, fbv, "w_p")?;
        let b = layer_norm(t, b, "ln_p")?;
        t.add(a, b)
    }

    fn patchify(&self, t: &mut Tape, v_o: Var) -> Result<Var, NnError> {
        let (ho, wo) = self.cfg.encoder_hw();
        let (p, c) = (self.cfg.patch, self.cfg.fused_channels);
        let (ph, pw) = (ho / p, wo / p);
        let mut idx = Vec::with_capacity(ho * wo * c);
        for py in 0..ph {
            for px in 0..pw {
                for dy in 0..p {
                    for dx in 0..p {
                        let row = (py * p + dy) * wo + px * p + dx;
                        idx.extend((0..c).map(|k| row * c + k));
                    }
                }
            }
        }
        t.gather(v_o, idx, &[ph * pw, p * p * c])
    }

    /// Returns `(f_spa [N, D], cls_out [1, D])`. `v_h` is ignored when the
    /// spatial module is off.
    pub fn spatial_forward(&self, t: &mut Tape, v_o: Var, v_h: Option<Var>) -> Result<(Var, Var), NnError> {
        let n = self.cfg.num_patches();
        let patches = self.patchify(t, v_o)?;
        let e = linear(t, patches, "patch")?;
        let pos = t.p("spatial_pos");
        if !self.cfg.spatial_module {
            let rows = t.slice_rows(pos, 1, n)?;
            let f = t.add(e, rows)?;
            let cls = t.mean_rows(f);
            return Ok((f, cls));
        }
        let v_h = v_h.ok_or_else(|| NnError::Input("spatial module needs a hint embedding".into()))?;
        let seq = t.concat(&[v_h, e], true)?;
        let mut x = t.add(seq, pos)?;
        for l in 0..self.cfg.spatial_layers {
            x = transformer_block(t, x, &format!("spatial.l{l}"), self.cfg.spatial_heads)?;
        }
        let cls = t.slice_rows(x, 0, 1)?;
        let f = t.slice_rows(x, 1, n)?;
        Ok((f, cls))
    }

    /// `s = LN(mean(f_spa) W^spa) + LN(e^a W^a)`; `action` is an action index
    /// or `NO_ACTION`.
    pub fn make_state(&self, t: &mut Tape, f_spa: Var, action: usize) -> Result<Var, NnError> {
        if action > NO_ACTION {
            return Err(NnError::Input(format!("action index {action}")));
        }
        let e = t.mean_rows(f_spa);
        let a = linear(t, e, "w_spa")?;
        let a = layer_norm(t, a, "ln_spa")?;
        let table = t.p("action_table");
        let ea = t.slice_rows(table, action, 1)?;
        let b = linear(t, ea, "w_a")?;
        let b = layer_norm(t, b, "ln_a")?;
        t.add(a, b)
    }

    /// Sequence `[cls, history.., s_t]` through the temporal blocks; returns
    /// the output at the last position as `[1, D]`.
    pub fn temporal_forward(&self, t: &mut Tape, cls: Var, history: &[Var], s_t: Var) -> Result<Var, NnError> {
        if !self.cfg.temporal_module {
            let x = t.concat(&[cls, s_t], false)?;
            return linear(t, x, "bypass");
        }
        let k = self.cfg.history;
        let m = history.len();
        if m > k {
            return Err(NnError::Input(format!("history of {m} exceeds window {k}")));
        }
        let mut parts = Vec::with_capacity(m + 2);
        parts.push(cls);
        parts.extend_from_slice(history);
        parts.push(s_t);
        let seq = t.concat(&parts, true)?;
        let d = self.cfg.d_model;
        let pos = t.p("temporal_pos");
        // right-aligned: the current state always takes the last row
        let rows = core::iter::once(0).chain(k + 1 - m..=k + 1);
        let idx: Vec<usize> = rows.flat_map(|r| r * d..(r + 1) * d).collect();
        let pos_rows = t.gather(pos, idx, &[m + 2, d])?;
        let mut x = t.add(seq, pos_rows)?;
        for l in 0..self.cfg.temporal_layers {
            x = transformer_block(t, x, &format!("temporal.l{l}"), self.cfg.temporal_heads)?;
        }
        t.slice_rows(x, m + 1, 1)
    }

    /// Softmax of `f_s W^s + b` as `[1, 4]`.
    pub fn action_distribution(&self, t: &mut Tape, f_s: Var) -> Result<Var, NnError> {
        let logits = linear(t, f_s, "head")?;
        Ok(t.softmax(logits))
    }

    /// Full pipeline for one step given the states of the history window.
    pub fn forward_step(&self, t: &mut Tape, obs: &Observation, history: &[Var]) -> Result<StepVars, NnError> {
        let rgb = t.input(obs.rgb.clone());
        let depth = t.input(obs.depth.clone());
        let v_o = self.encode_observation(t, rgb, depth)?;
        let v_h = if self.cfg.spatial_module {
            Some(self.encode_hint(t, obs.hint.as_ref().map(|(c, b)| (c, *b)))?)
        } else {
            None
        };
        let (f_spa, cls) = self.spatial_forward(t, v_o, v_h)?;
        let state = self.make_state(t, f_spa, NO_ACTION)?;
        let f_s = self.temporal_forward(t, cls, history, state)?;
        let probs = self.action_distribution(t, f_s)?;
        Ok(StepVars {
            f_spa,
            cls,
            state,
            f_s,
            probs,
        })
    }

    /// Teacher-forced unroll: step `i` sees the states built from the
    /// observations and given actions of the previous `k` steps.
    pub fn unroll(&self, t: &mut Tape, obs: &[Observation], actions: &[ActionId]) -> Result<Vec<StepVars>, NnError> {
        if obs.len() != actions.len() {
            return Err(NnError::Input(format!(
                "{} observations but {} actions",
                obs.len(),
                actions.len()
            )));
        }
        let k = self.cfg.history;
        let mut states: VecDeque<Var> = VecDeque::with_capacity(k + 1);
        let mut out = Vec::with_capacity(obs.len());
        for (o, a) in obs.iter().zip(actions) {
            let hist: Vec<Var> = states.iter().copied().collect();
            let sv = self.forward_step(t, o, &hist)?;
            if k > 0 {
                let s = self.make_state(t, sv.f_spa, a.index())?;
                states.push_back(s);
                if states.len() > k {
                    states.pop_front();
                }
            }
            out.push(sv);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryEntry {
    pub f_spa: Tensor,
    pub action: ActionId,
}

/// The most recent `capacity` (spatial features, action) pairs, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryBuffer {
    capacity: usize,
    entries: VecDeque<HistoryEntry>,
}

impl HistoryBuffer {
    pub fn new(capacity: usize) -> Self {
        HistoryBuffer {
            capacity,
            entries: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn push(&mut self, f_spa: Tensor, action: ActionId) {
        if self.capacity == 0 {
            return;
        }
        self.entries.push_back(HistoryEntry { f_spa, action });
        if self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &HistoryEntry> {
        self.entries.iter()
    }
}

/// Greedy argmax, lowest index on ties.
pub fn greedy(p: &[f64; NUM_ACTIONS]) -> ActionId {
    let mut best = 0;
    for i in 1..NUM_ACTIONS {
        if p[i] > p[best] {
            best = i;
        }
    }
    ActionId::ALL[best]
}

/// Inverse-CDF draw from `p`.
pub fn sample(p: &[f64; NUM_ACTIONS], rng: &mut ChaCha8Rng) -> ActionId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return ActionId::ALL[i];
        }
    }
    ActionId::ALL[p.iter().rposition(|&q| q > 0.0).unwrap_or(0)]
}

pub enum Decode {
    Greedy,
    Sample(ChaCha8Rng),
}

/// One step's model output.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: [f64; NUM_ACTIONS],
    pub f_spa: Tensor,
}

/// The START model as a `Policy`, owning its history buffer.
pub struct StartPolicy {
    model: StartModel,
    history: HistoryBuffer,
    decode: Decode,
    label: String,
    last_error: Option<NnError>,
}

impl StartPolicy {
    pub fn new(model: StartModel, decode: Decode) -> Self {
        let history = HistoryBuffer::new(model.cfg.history);
        StartPolicy {
            model,
            history,
            decode,
            label: "start".into(),
            last_error: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn model(&self) -> &StartModel {
        &self.model
    }

    pub fn into_model(self) -> StartModel {
        self.model
    }

    pub fn history(&self) -> &HistoryBuffer {
        &self.history
    }

    /// Error that made the last `act` fall back to `Stop`, if any.
    pub fn last_error(&self) -> Option<&NnError> {
        self.last_error.as_ref()
    }

    /// Action distribution for `frame` given the current history.
    pub fn predict(&self, frame: &Frame) -> Result<Prediction, NnError> {
        let obs = Observation::from_frame(frame, &self.model.cfg)?;
        let mut t = Tape::new(&self.model.params);
        let mut states = Vec::with_capacity(self.history.len());
        for e in self.history.iter() {
            let f = t.input(e.f_spa.clone());
            states.push(self.model.make_state(&mut t, f, e.action.index())?);
        }
        let sv = self.model.forward_step(&mut t, &obs, &states)?;
        let p = &t.value(sv.probs).data;
        Ok(Prediction {
            probs: [p[0], p[1], p[2], p[3]],
            f_spa: t.value(sv.f_spa).clone(),
        })
    }

    /// Records the action taken after `prediction`.
    pub fn commit(&mut self, prediction: Prediction, action: ActionId) {
        self.history.push(prediction.f_spa, action);
    }

    pub fn choose(&mut self, probs: &[f64; NUM_ACTIONS]) -> ActionId {
        match &mut self.decode {
            Decode::Greedy => greedy(probs),
            Decode::Sample(rng) => sample(probs, rng),
        }
    }
}

impl Policy for StartPolicy {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn reset(&mut self) {
        self.history.clear();
        self.last_error = None;
    }

    fn act(&mut self, input: &PolicyInput<'_>) -> ActionId {
        match self.predict(input.frame) {
            Ok(pred) => {
                let a = self.choose(&pred.probs);
                self.commit(pred, a);
                a
            }
            Err(e) => {
                self.last_error = Some(e);
                ActionId::Stop
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash;

    fn tiny() -> StartConfig {
        StartConfig {
            image_height: 16,
            image_width: 16,
            enc_channels: [2, 3],
            fused_channels: 4,
            patch: 2,
            d_model: 8,
            spatial_layers: 1,
            spatial_heads: 2,
            temporal_layers: 1,
            temporal_heads: 2,
            history: 3,
            hint_channels: 2,
            hint_width: 4,
            ffn_mult: 2,
            ..StartConfig::micro()
        }
    }

    fn rand_obs(cfg: &StartConfig, seed: u64, hint: bool) -> Observation {
        let mut rng = hash::stream(seed, "obs", 0);
        let (h, w) = (cfg.image_height, cfg.image_width);
        let mut r = |shape: &[usize]| {
            let mut t = Tensor::zeros(shape);
            t.data.iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
            t
        };
        let rgb = r(&[3, h, w]);
        let depth = r(&[1, h, w]);
        let crop = r(&[3, HINT_SIZE, HINT_SIZE]);
        Observation {
            rgb,
            depth,
            hint: hint.then(|| {
                (crop, BBox {
                    x_min: 2,
                    y_min: 3,
                    x_max: 9,
                    y_max: 7,
                })
            }),
        }
    }

    fn randomize(model: &mut StartModel, seed: u64) {
        let mut rng = hash::stream(seed, "params", 0);
        for p in model.params.iter_mut() {
            p.value.data.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
    }

    #[test]
    fn box_features_arithmetic() {
        let full = BBox {
            x_min: 0,
            y_min: 0,
            x_max: 64,
            y_max: 64,
        };
        assert_eq!(box_features(full, 64, 64).unwrap(), [0.0, 0.0, 1.0, 1.0, 1.0]);
        let mid = BBox {
            x_min: 16,
            y_min: 16,
            x_max: 48,
            y_max: 48,
        };
        assert_eq!(box_features(mid, 64, 64).unwrap(), [0.25, 0.25, 0.75, 0.75, 0.25]);
        assert_eq!(box_features(BBox::SENTINEL, 64, 64).unwrap(), [0.0; 5]);
        let out = BBox {
            x_min: 10,
            y_min: 0,
            x_max: 70,
            y_max: 5,
        };
        assert!(box_features(out, 64, 64).is_err());
    }

    #[test]
    fn micro_shapes() {
        let cfg = StartConfig::micro();
        assert_eq!(cfg.encoder_hw(), (16, 16));
        assert_eq!(cfg.num_patches(), 16);
        assert_eq!(cfg.spatial_seq_len(), 17);
        let m = StartModel::new(cfg.clone()).unwrap();
        let mut t = Tape::new(&m.params);
        let obs = rand_obs(&cfg, 1, true);
        let (r, d) = (t.input(obs.rgb.clone()), t.input(obs.depth.clone()));
        let v_o = m.encode_observation(&mut t, r, d).unwrap();
        assert_eq!(t.value(v_o).shape, vec![16 * 16, 16]);
        let sv = m.forward_step(&mut t, &obs, &[]).unwrap();
        assert_eq!(t.value(sv.f_spa).shape, vec![16, 64]);
        assert_eq!(t.value(sv.cls).shape, vec![1, 64]);
        assert_eq!(t.value(sv.state).shape, vec![1, 64]);
        assert_eq!(t.value(sv.probs).data, vec![0.25; 4]);
    }

    #[test]
    fn full_config_is_constructible() {
        let cfg = StartConfig::full();
        cfg.validate().unwrap();
        assert_eq!((cfg.d_model, cfg.spatial_layers, cfg.spatial_heads), (768, 6, 6));
        let n: usize = param_specs(&cfg).iter().map(|s| s.len()).sum();
        assert!(n > 50_000_000, "{n}");
    }

    #[test]
    fn config_text_round_trip() {
        let cfg = StartConfig::micro().temporal_only().with_inputs(InputMode::RgbOnly);
        let back = StartConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.config_hash(), cfg.config_hash());
        assert_ne!(cfg.config_hash(), StartConfig::micro().config_hash());
        let mut reseeded = cfg.clone();
        reseeded.seed = 99;
        assert_eq!(reseeded.config_hash(), cfg.config_hash());
        assert!(StartConfig::from_text("bogus = 1\n").is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = StartConfig::micro();
        c.spatial_heads = 3;
        assert!(matches!(StartModel::new(c), Err(NnError::Config(_))));
        let mut c = StartConfig::micro();
        c.patch = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_input_observation_is_beta() {
        let cfg = tiny();
        let mut m = StartModel::new(cfg.clone()).unwrap();
        let id = m.params.id("obs_ln.beta").unwrap();
        m.params.get_mut(id).value = Tensor::from_vec(&[4], vec![0.1, -0.2, 0.3, 0.4]).unwrap();
        // zero input gives per-location constant projection bias, which LN maps to beta
        let mut t = Tape::new(&m.params);
        let r = t.input(Tensor::zeros(&[3, 16, 16]));
        let d = t.input(Tensor::zeros(&[1, 16, 16]));
        let v = m.encode_observation(&mut t, r, d).unwrap();
        for row in t.value(v).data.chunks(4) {
            assert_eq!(row, &[0.1, -0.2, 0.3, 0.4]);
        }
    }

    #[test]
    fn encoders_are_distinct() {
        let cfg = tiny();
        let m = StartModel::new(cfg.clone()).unwrap();
        let obs = rand_obs(&cfg, 2, false);
        let mut t = Tape::new(&m.params);
        // feed the depth image as every RGB channel and vice versa
        let gray = Tensor::from_vec(&[3, 16, 16], obs.depth.data.repeat(3)).unwrap();
        let one = Tensor::from_vec(&[1, 16, 16], obs.rgb.data[..256].to_vec()).unwrap();
        let (a, b) = (t.input(gray.clone()), t.input(obs.depth.clone()));
        let (c, d) = (t.input(obs.rgb.clone()), t.input(one));
        let x = m.encode_observation(&mut t, a, b).unwrap();
        let y = m.encode_observation(&mut t, c, d).unwrap();
        assert_ne!(t.value(x).data, t.value(y).data);
    }

    #[test]
    fn absent_hint_uses_zero_box() {
        let cfg = tiny();
        let mut m = StartModel::new(cfg).unwrap();
        randomize(&mut m, 3);
        let mut t = Tape::new(&m.params);
        let v = m.encode_hint(&mut t, None).unwrap();
        // manual: LN(gelu(b_fc) W_h) + LN(0 W_p)
        let b = t.p("hint.fc.b");
        let g = t.gelu(b);
        let g = t.reshape(g, &[1, 4]).unwrap();
        let a = linear(&mut t, g, "w_h").unwrap();
        let a = layer_norm(&mut t, a, "ln_h").unwrap();
        let z = t.input(Tensor::zeros(&[1, 5]));
        let zb = linear(&mut t, z, "w_p").unwrap();
        let zb = layer_norm(&mut t, zb, "ln_p").unwrap();
        let e = t.add(a, zb).unwrap();
        assert_eq!(t.value(v).data, t.value(e).data);
    }

    #[test]
    fn cls_identity_with_empty_stack() {
        let mut cfg = tiny();
        cfg.spatial_layers = 0;
        let mut m = StartModel::new(cfg.clone()).unwrap();
        randomize(&mut m, 4);
        let obs = rand_obs(&cfg, 5, true);
        let mut t = Tape::new(&m.params);
        let (r, d) = (t.input(obs.rgb.clone()), t.input(obs.depth.clone()));
        let v_o = m.encode_observation(&mut t, r, d).unwrap();
        let (c, b) = obs.hint.as_ref().unwrap();
        let v_h = m.encode_hint(&mut t, Some((c, *b))).unwrap();
        let (f, cls) = m.spatial_forward(&mut t, v_o, Some(v_h)).unwrap();
        let pos = &m.params.get(m.params.id("spatial_pos").unwrap()).value;
        let expect: Vec<f64> = t.value(v_h).data.iter().zip(pos.row(0)).map(|(a, b)| a + b).collect();
        assert_eq!(t.value(cls).data, expect);
        // patches are the projected patches plus rows 1..
        let patches = m.patchify(&mut t, v_o).unwrap();
        let e = linear(&mut t, patches, "patch").unwrap();
        let n = cfg.num_patches();
        for i in 0..n {
            for j in 0..8 {
                let want = t.value(e).data[i * 8 + j] + pos.data[(i + 1) * 8 + j];
                assert_eq!(t.value(f).data[i * 8 + j], want);
            }
        }
    }

    #[test]
    fn make_state_properties() {
        let cfg = tiny();
        let mut m = StartModel::new(cfg).unwrap();
        randomize(&mut m, 6);
        let mut t = Tape::new(&m.params);
        let row: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        let same = t.input(Tensor::from_vec(&[5, 8], row.repeat(5)).unwrap());
        let one = t.input(Tensor::from_vec(&[1, 8], row).unwrap());
        let a = m.make_state(&mut t, same, 1).unwrap();
        let b = m.make_state(&mut t, one, 1).unwrap();
        for (x, y) in t.value(a).data.iter().zip(&t.value(b).data) {
            assert!((x - y).abs() < 1e-12);
        }
        let c = m.make_state(&mut t, one, 2).unwrap();
        assert_ne!(t.value(b).data, t.value(c).data);
        assert_eq!(t.value(c).shape, vec![1, 8]);
        assert!(m.make_state(&mut t, one, 5).is_err());
    }

    #[test]
    fn temporal_sequence_and_order() {
        let cfg = tiny();
        let mut m = StartModel::new(cfg.clone()).unwrap();
        randomize(&mut m, 7);
        let mut t = Tape::new(&m.params);
        let obs: Vec<Observation> = (0..3).map(|i| rand_obs(&cfg, 10 + i, i == 1)).collect();
        let mut states = Vec::new();
        for (i, o) in obs.iter().enumerate() {
            let sv = m.forward_step(&mut t, o, &[]).unwrap();
            states.push(m.make_state(&mut t, sv.f_spa, i % 4).unwrap());
        }
        let cur = m.forward_step(&mut t, &obs[0], &[]).unwrap();
        let a = m.temporal_forward(&mut t, cur.cls, &[states[0], states[1]], cur.state).unwrap();
        let b = m.temporal_forward(&mut t, cur.cls, &[states[1], states[0]], cur.state).unwrap();
        assert_ne!(t.value(a).data, t.value(b).data);
        assert!(m.temporal_forward(&mut t, cur.cls, &[states[0]; 4], cur.state).is_err());
    }

    #[test]
    fn head_distribution() {
        let cfg = tiny();
        let mut m = StartModel::new(cfg).unwrap();
        let mut t = Tape::new(&m.params);
        let f = t.input(Tensor::full(&[1, 8], 0.7));
        let p = m.action_distribution(&mut t, f).unwrap();
        assert_eq!(t.value(p).data, vec![0.25; 4]);
        randomize(&mut m, 8);
        let mut t = Tape::new(&m.params);
        let f = t.input(Tensor::full(&[1, 8], 0.7));
        let p = m.action_distribution(&mut t, f).unwrap();
        let s: f64 = t.value(p).data.iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn greedy_ties_to_forward() {
        assert_eq!(greedy(&[0.25; 4]), ActionId::Forward);
        assert_eq!(greedy(&[0.1, 0.4, 0.4, 0.1]), ActionId::Left);
        let mut rng = hash::stream(0, "s", 0);
        assert_eq!(sample(&[0.0, 0.0, 1.0, 0.0], &mut rng), ActionId::Right);
    }

    #[test]
    fn history_discipline() {
        let mut h = HistoryBuffer::new(3);
        for i in 0..5 {
            h.push(Tensor::scalar(i as f64), ActionId::Forward);
            assert_eq!(h.len(), (i + 1).min(3));
        }
        let first: Vec<f64> = h.iter().map(|e| e.f_spa.data[0]).collect();
        assert_eq!(first, vec![2.0, 3.0, 4.0]);
        h.clear();
        assert!(h.is_empty());
        let mut z = HistoryBuffer::new(0);
        z.push(Tensor::scalar(1.0), ActionId::Left);
        assert!(z.is_empty());
    }

    #[test]
    fn ablations_produce_distributions() {
        for cfg in [
            tiny().spatial_only(),
            tiny().temporal_only(),
            tiny().with_inputs(InputMode::RgbOnly),
            tiny().with_inputs(InputMode::DepthOnly),
        ] {
            let mut m = StartModel::new(cfg.clone()).unwrap();
            randomize(&mut m, 9);
            let mut t = Tape::new(&m.params);
            let obs: Vec<Observation> = (0..4).map(|i| rand_obs(&cfg, i, i % 2 == 0)).collect();
            let acts = [ActionId::Forward, ActionId::Left, ActionId::Left, ActionId::Stop];
            for sv in m.unroll(&mut t, &obs, &acts).unwrap() {
                let p = &t.value(sv.probs).data;
                assert!(p.iter().all(|v| *v > 0.0));
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn unroll_matches_policy_steps() {
        let cfg = tiny();
        let mut m = StartModel::new(cfg.clone()).unwrap();
        randomize(&mut m, 11);
        let obs: Vec<Observation> = (0..5).map(|i| rand_obs(&cfg, 20 + i, i == 2)).collect();
        let acts = [ActionId::Forward, ActionId::Right, ActionId::Forward, ActionId::Forward, ActionId::Left];
        let mut t = Tape::new(&m.params);
        let unrolled: Vec<Vec<f64>> = m
            .unroll(&mut t, &obs, &acts)
            .unwrap()
            .iter()
            .map(|s| t.value(s.probs).data.clone())
            .collect();
        // step-by-step with a history buffer of constants
        let mut hist = HistoryBuffer::new(cfg.history);
        for (i, o) in obs.iter().enumerate() {
            let mut t = Tape::new(&m.params);
            let mut states = Vec::new();
            for e in hist.iter() {
                let f = t.input(e.f_spa.clone());
                states.push(m.make_state(&mut t, f, e.action.index()).unwrap());
            }
            let sv = m.forward_step(&mut t, o, &states).unwrap();
            assert_eq!(t.value(sv.probs).data, unrolled[i]);
            assert_eq!(states.len() + 2, i.min(cfg.history) + 2);
            hist.push(t.value(sv.f_spa).clone(), acts[i]);
        }
    }
}
