use alloc::vec;
use alloc::vec::Vec;

use super::SceneMap;
use crate::math;

// Large finite stand-in for "no obstacle" that keeps parabola
// intersections free of inf - inf.
const FAR: f64 = 1e20;

/// Euclidean distance from every cell center to the nearest occupied cell
/// center, in meters. Occupied cells hold 0.
///
/// Exact separable transform over squared cell distances (lower envelope of
/// parabolas per row, then per column).
pub fn clearance_field(scene: &SceneMap) -> Vec<f64> {
    let (w, h) = (scene.width, scene.height);
    let mut grid: Vec<f64> = scene
        .occupancy()
        .iter()
        .map(|&o| if o { 0.0 } else { FAR })
        .collect();

    let n = w.max(h);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];

    for j in 0..h {
        f[..w].copy_from_slice(&grid[j * w..(j + 1) * w]);
        edt_1d(&f[..w], &mut d[..w], &mut v, &mut z);
        grid[j * w..(j + 1) * w].copy_from_slice(&d[..w]);
    }
    for i in 0..w {
        for j in 0..h {
            f[j] = grid[j * w + i];
        }
        edt_1d(&f[..h], &mut d[..h], &mut v, &mut z);
        for j in 0..h {
            grid[j * w + i] = d[j];
        }
    }

    let cs = scene.cell_size;
    grid.iter()
        .map(|&d2| {
            if d2 >= FAR {
                f64::INFINITY
            } else {
                math::sqrt(d2) * cs
            }
        })
        .collect()
}

fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        let mut s;
        loop {
            let p = v[k];
            let pf = p as f64;
            s = ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf);
            // z[0] is -inf, so this never underflows k
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for q in 0..n {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = v[k] as f64;
        let dq = f[v[k]] + (qf - p) * (qf - p);
        d[q] = dq.min(FAR);
    }
}
