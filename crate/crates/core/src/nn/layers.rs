use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::tape::{ParamStore, Tape, Var};
use super::tensor::Tensor;
use super::NnError;
use crate::{hash, math};

pub const LN_EPS: f64 = 1e-5;

/// Glorot uniform matrix, seeded by `(seed, name)`.
pub fn xavier_uniform(shape: &[usize], fan_in: usize, fan_out: usize, seed: u64, name: &str) -> Tensor {
    let a = math::sqrt(6.0 / (fan_in + fan_out) as f64);
    let mut rng = hash::stream(seed, name, 0);
    let mut t = Tensor::zeros(shape);
    for v in &mut t.data {
        *v = rng.random_range(-a..a);
    }
    t
}

/// Adds `{name}.w` `[n_in, n_out]` and optionally a zero `{name}.b`.
pub fn init_linear(
    store: &mut ParamStore,
    name: &str,
    n_in: usize,
    n_out: usize,
    bias: bool,
    seed: u64,
) -> Result<(), NnError> {
    let wn = format!("{name}.w");
    store.add(wn.clone(), xavier_uniform(&[n_in, n_out], n_in, n_out, seed, &wn))?;
    if bias {
        store.add(format!("{name}.b"), Tensor::zeros(&[n_out]))?;
    }
    Ok(())
}

pub fn init_layer_norm(store: &mut ParamStore, name: &str, d: usize) -> Result<(), NnError> {
    store.add(format!("{name}.gamma"), Tensor::full(&[d], 1.0))?;
    store.add(format!("{name}.beta"), Tensor::zeros(&[d]))?;
    Ok(())
}

/// Per-head `wq`, `wk`, `wv` of shape `[d, d/heads]` plus the output `wo`.
pub fn init_mhsa(store: &mut ParamStore, name: &str, d: usize, heads: usize, seed: u64) -> Result<(), NnError> {
    if heads == 0 || d % heads != 0 {
        return Err(NnError::Config(format!("width {d} not divisible by {heads} heads")));
    }
    let dh = d / heads;
    for h in 0..heads {
        for w in ["wq", "wk", "wv"] {
            let n = format!("{name}.h{h}.{w}");
            store.add(n.clone(), xavier_uniform(&[d, dh], d, dh, seed, &n))?;
        }
    }
    let n = format!("{name}.wo");
    store.add(n.clone(), xavier_uniform(&[d, d], d, d, seed, &n))?;
    Ok(())
}

/// Attention sublayer, two layer norms and a bias-free feed-forward of
/// width `ffn_mult * d`.
pub fn init_block(
    store: &mut ParamStore,
    name: &str,
    d: usize,
    heads: usize,
    ffn_mult: usize,
    seed: u64,
) -> Result<(), NnError> {
    init_mhsa(store, &format!("{name}.attn"), d, heads, seed)?;
    init_layer_norm(store, &format!("{name}.ln1"), d)?;
    init_linear(store, &format!("{name}.ffn1"), d, ffn_mult * d, false, seed)?;
    init_linear(store, &format!("{name}.ffn2"), ffn_mult * d, d, false, seed)?;
    init_layer_norm(store, &format!("{name}.ln2"), d)?;
    Ok(())
}

/// `x @ {name}.w (+ {name}.b)`; the bias is used when it exists.
pub fn linear(tape: &mut Tape, x: Var, name: &str) -> Result<Var, NnError> {
    let w = tape.p(&format!("{name}.w"));
    let bn = format!("{name}.b");
    let b = tape.store().id(&bn).map(|id| tape.param(id));
    tape.linear(x, w, b)
}

pub fn layer_norm(tape: &mut Tape, x: Var, name: &str) -> Result<Var, NnError> {
    let g = tape.p(&format!("{name}.gamma"));
    let b = tape.p(&format!("{name}.beta"));
    tape.layer_norm(x, g, b, LN_EPS)
}

pub struct MhsaOut {
    pub out: Var,
    /// Per-head `[T, T]` attention weights.
    pub attn: Vec<Var>,
}

pub fn mhsa(tape: &mut Tape, x: Var, name: &str, heads: usize) -> Result<MhsaOut, NnError> {
    let d = tape.value(x).cols();
    if heads == 0 || d % heads != 0 {
        return Err(NnError::Config(format!("width {d} not divisible by {heads} heads")));
    }
    let scale = 1.0 / math::sqrt((d / heads) as f64);
    let mut outs = Vec::with_capacity(heads);
    let mut attn = Vec::with_capacity(heads);
    for h in 0..heads {
        let wq = tape.p(&format!("{name}.h{h}.wq"));
        let wk = tape.p(&format!("{name}.h{h}.wk"));
        let wv = tape.p(&format!("{name}.h{h}.wv"));
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        let s = tape.matmul_nt(q, k)?;
        let s = tape.scale(s, scale);
        let a = tape.softmax(s);
        outs.push(tape.matmul(a, v)?);
        attn.push(a);
    }
    let cat = if heads == 1 { outs[0] } else { tape.concat(&outs, false)? };
    let wo = tape.p(&format!("{name}.wo"));
    let out = tape.matmul(cat, wo)?;
    Ok(MhsaOut { out, attn })
}

/// Post-norm block: `H = LN(MHSA(x) + x)`, `out = LN(H + GeLU(H W1) W2)`.
pub fn transformer_block(tape: &mut Tape, x: Var, name: &str, heads: usize) -> Result<Var, NnError> {
    let a = mhsa(tape, x, &format!("{name}.attn"), heads)?.out;
    let r = tape.add(a, x)?;
    let h = layer_norm(tape, r, &format!("{name}.ln1"))?;
    let f = linear(tape, h, &format!("{name}.ffn1"))?;
    let f = tape.gelu(f);
    let f = linear(tape, f, &format!("{name}.ffn2"))?;
    let r = tape.add(h, f)?;
    layer_norm(tape, r, &format!("{name}.ln2"))
}
