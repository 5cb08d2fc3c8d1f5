use alloc::vec::Vec;

use rand::Rng;

use super::tape::{Gradients, ParamId, ParamStore, Tape, Var};
use super::NnError;
use crate::hash;

const MAX_COORDS: usize = 200;

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-8)
}

fn eval<F>(store: &ParamStore, f: &F) -> Result<f64, NnError>
where
    F: Fn(&mut Tape) -> Result<Var, NnError>,
{
    let mut t = Tape::new(store);
    let l = f(&mut t)?;
    Ok(t.value(l).data[0])
}

pub fn analytic_grads<F>(store: &ParamStore, f: F) -> Result<Gradients, NnError>
where
    F: Fn(&mut Tape) -> Result<Var, NnError>,
{
    let mut t = Tape::new(store);
    let l = f(&mut t)?;
    if t.value(l).len() != 1 {
        return Err(NnError::Shape(alloc::format!(
            "grad_check needs a scalar, got {:?}",
            t.value(l).shape
        )));
    }
    Ok(t.backward(l))
}

/// Central difference of the scalar forward with respect to one coordinate.
pub fn numeric_grad<F>(store: &mut ParamStore, f: &F, id: ParamId, idx: usize, h: f64) -> Result<f64, NnError>
where
    F: Fn(&mut Tape) -> Result<Var, NnError>,
{
    let orig = store.get(id).value.data[idx];
    store.get_mut(id).value.data[idx] = orig + h;
    let up = eval(store, f);
    store.get_mut(id).value.data[idx] = orig - h;
    let down = eval(store, f);
    store.get_mut(id).value.data[idx] = orig;
    Ok((up? - down?) / (2.0 * h))
}

/// Maximum relative error between `analytic` and central differences over at
/// most 200 seeded coordinates per parameter.
pub fn grad_check_against<F>(
    store: &mut ParamStore,
    analytic: &Gradients,
    h: f64,
    seed: u64,
    f: F,
) -> Result<f64, NnError>
where
    F: Fn(&mut Tape) -> Result<Var, NnError>,
{
    let mut worst: f64 = 0.0;
    for p in 0..store.len() {
        let id = ParamId(p);
        let n = store.get(id).value.len();
        let g = analytic.0.iter().find(|(q, _)| *q == id).map(|(_, g)| g.as_slice());
        for idx in coordinates(n, seed, p as u64) {
            let a = g.map_or(0.0, |g| g[idx]);
            let num = numeric_grad(store, &f, id, idx, h)?;
            worst = worst.max(relative_error(a, num));
        }
    }
    Ok(worst)
}

pub fn grad_check<F>(store: &mut ParamStore, h: f64, seed: u64, f: F) -> Result<f64, NnError>
where
    F: Fn(&mut Tape) -> Result<Var, NnError>,
{
    let g = analytic_grads(store, &f)?;
    grad_check_against(store, &g, h, seed, f)
}

fn coordinates(n: usize, seed: u64, param: u64) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    if n <= MAX_COORDS {
        return all;
    }
    let mut rng = hash::stream(seed, "grad-check", param);
    for k in 0..MAX_COORDS {
        let j = rng.random_range(k..n);
        all.swap(k, j);
    }
    all.truncate(MAX_COORDS);
    all.sort_unstable();
    all
}
