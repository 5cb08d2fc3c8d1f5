use super::{SceneMap, CONTACT_EPS};
use crate::math::{self, point_segment_dist, Vec2};

/// True iff the capsule of `radius` swept from `a` to `b` touches no
/// occupied cell.
///
/// With `radius == 0` this is a closed segment/cell test, so grazing a cell
/// corner counts as blocked (supercover semantics). With a positive radius,
/// a capsule exactly tangent to a wall is still free.
pub fn line_of_sight(scene: &SceneMap, a: Vec2, b: Vec2, radius: f64) -> bool {
    // Evaluate in a canonical endpoint order so the result is symmetric
    // bit-for-bit.
    let (a, b) = if (b.x, b.y) < (a.x, a.y) { (b, a) } else { (a, b) };
    let cs = scene.cell_size;
    let r = radius.max(0.0);
    let lo = Vec2::new(a.x.min(b.x) - r, a.y.min(b.y) - r);
    let hi = Vec2::new(a.x.max(b.x) + r, a.y.max(b.y) + r);
    let i0 = math::floor(lo.x / cs) as isize - 1;
    let j0 = math::floor(lo.y / cs) as isize - 1;
    let i1 = math::floor(hi.x / cs) as isize + 1;
    let j1 = math::floor(hi.y / cs) as isize + 1;
    for j in j0..=j1 {
        for i in i0..=i1 {
            if !scene.occupied(i, j) {
                continue;
            }
            let bmin = Vec2::new(i as f64 * cs, j as f64 * cs);
            let bmax = Vec2::new(bmin.x + cs, bmin.y + cs);
            if segment_hits_box(a, b, bmin, bmax) {
                return false;
            }
            if r > 0.0 && segment_box_dist(a, b, bmin, bmax) < r - CONTACT_EPS {
                return false;
            }
        }
    }
    true
}

/// Closed segment vs closed box (Liang-Barsky clip).
fn segment_hits_box(a: Vec2, b: Vec2, bmin: Vec2, bmax: Vec2) -> bool {
    let d = b - a;
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for (p, q) in [
        (-d.x, a.x - bmin.x),
        (d.x, bmax.x - a.x),
        (-d.y, a.y - bmin.y),
        (d.y, bmax.y - a.y),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
        } else {
            let t = q / p;
            if p < 0.0 {
                if t > t1 {
                    return false;
                }
                if t > t0 {
                    t0 = t;
                }
            } else {
                if t < t0 {
                    return false;
                }
                if t < t1 {
                    t1 = t;
                }
            }
        }
    }
    t0 <= t1
}

/// Distance between a segment and a box that it does not intersect. For two
/// disjoint convex polygons the minimum is attained at a vertex of one of them.
fn segment_box_dist(a: Vec2, b: Vec2, bmin: Vec2, bmax: Vec2) -> f64 {
    let point_box = |p: Vec2| {
        let dx = (bmin.x - p.x).max(p.x - bmax.x).max(0.0);
        let dy = (bmin.y - p.y).max(p.y - bmax.y).max(0.0);
        math::hypot(dx, dy)
    };
    let corners = [
        bmin,
        Vec2::new(bmax.x, bmin.y),
        bmax,
        Vec2::new(bmin.x, bmax.y),
    ];
    corners
        .iter()
        .map(|&c| point_segment_dist(c, a, b))
        .fold(point_box(a).min(point_box(b)), f64::min)
}
