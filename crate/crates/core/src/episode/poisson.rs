use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::EpisodeError;
use crate::hash::stream;
use crate::math::{self, Vec2};
use crate::scene::{SceneMap, AGENT_RADIUS, CONTACT_EPS};

const ATTEMPTS: usize = 30;

/// Bridson dart throwing over points with clearance at least `c_min`.
///
/// When the active list drains, eligible cell centers not yet within `r`
/// of a sample seed a new front, so every clearance-connected pocket is
/// covered.
pub fn poisson_sample(
    scene: &SceneMap,
    r: f64,
    c_min: f64,
    seed: u64,
) -> Result<Vec<Vec2>, EpisodeError> {
    if !(r > 0.0) {
        return Err(EpisodeError::InvalidParam("poisson radius must be positive"));
    }
    if !(c_min >= AGENT_RADIUS - CONTACT_EPS) {
        return Err(EpisodeError::InvalidParam("c_min must be at least the agent radius"));
    }
    let eligible = |p: Vec2| scene.in_bounds(p) && scene.point_clearance(p, c_min) >= c_min;
    let mut seeds: Vec<Vec2> = Vec::new();
    for j in 0..scene.height {
        for i in 0..scene.width {
            let c = scene.cell_center(i, j);
            if !scene.occupied(i as isize, j as isize) && eligible(c) {
                seeds.push(c);
            }
        }
    }
    if seeds.is_empty() {
        return Err(EpisodeError::NoEligibleCell);
    }

    let mut rng = stream(seed, "poisson", 0);
    let mut bg = Background::new(scene.extent(), r);
    let mut samples: Vec<Vec2> = Vec::new();
    let mut active: Vec<usize> = Vec::new();

    let first = seeds[rng.random_range(0..seeds.len())];
    bg.insert(first, samples.len());
    active.push(samples.len());
    samples.push(first);

    let mut sweep = 0usize;
    loop {
        while !active.is_empty() {
            let slot = rng.random_range(0..active.len());
            let centre = samples[active[slot]];
            let mut placed = false;
            for _ in 0..ATTEMPTS {
                let a = rng.random_range(0.0..math::TAU);
                let d = rng.random_range(r..2.0 * r);
                let p = centre + Vec2::from_angle(a) * d;
                if !eligible(p) || bg.has_within(&samples, p, r) {
                    continue;
                }
                bg.insert(p, samples.len());
                active.push(samples.len());
                samples.push(p);
                placed = true;
                break;
            }
            if !placed {
                active.swap_remove(slot);
            }
        }
        // restart from the next uncovered eligible cell, if any
        let mut restarted = false;
        while sweep < seeds.len() {
            let c = seeds[sweep];
            sweep += 1;
            if !bg.has_within(&samples, c, r) {
                bg.insert(c, samples.len());
                active.push(samples.len());
                samples.push(c);
                restarted = true;
                break;
            }
        }
        if !restarted {
            break;
        }
    }
    Ok(samples)
}

/// Uniform bucket grid with cell side `r`, so neighbours within `r` lie in
/// the surrounding 3x3 block.
struct Background {
    side: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<usize>>,
}

impl Background {
    fn new(extent: Vec2, r: f64) -> Self {
        let nx = (math::ceil(extent.x / r) as usize).max(1);
        let ny = (math::ceil(extent.y / r) as usize).max(1);
        Background {
            side: r,
            nx,
            ny,
            cells: vec![Vec::new(); nx * ny],
        }
    }

    fn key(&self, p: Vec2) -> (usize, usize) {
        let i = (math::floor(p.x / self.side).max(0.0) as usize).min(self.nx - 1);
        let j = (math::floor(p.y / self.side).max(0.0) as usize).min(self.ny - 1);
        (i, j)
    }

    fn insert(&mut self, p: Vec2, idx: usize) {
        let (i, j) = self.key(p);
        self.cells[j * self.nx + i].push(idx);
    }

    fn has_within(&self, samples: &[Vec2], p: Vec2, r: f64) -> bool {
        let (i, j) = self.key(p);
        for jj in j.saturating_sub(1)..=(j + 1).min(self.ny - 1) {
            for ii in i.saturating_sub(1)..=(i + 1).min(self.nx - 1) {
                if self.cells[jj * self.nx + ii]
                    .iter()
                    .any(|&k| samples[k].dist(p) < r)
                {
                    return true;
                }
            }
        }
        false
    }
}
