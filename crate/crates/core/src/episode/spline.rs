use alloc::vec::Vec;

use crate::math::{self, Vec2};
use crate::scene::{SceneMap, AGENT_RADIUS};

/// Target arc-length spacing of smoothed path points, meters.
pub const PATH_SPACING: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct SmoothPath {
    pub points: Vec<Vec2>,
    pub tangents: Vec<Vec2>,
    /// Indices of spline segments replaced by straight lines.
    pub fallback_segments: Vec<usize>,
}

impl SmoothPath {
    /// Cumulative arc length at every point.
    pub fn arc_lengths(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.points.len());
        let mut acc = 0.0;
        for (k, p) in self.points.iter().enumerate() {
            if k > 0 {
                acc += p.dist(self.points[k - 1]);
            }
            s.push(acc);
        }
        s
    }

    pub fn length(&self) -> f64 {
        self.arc_lengths().last().copied().unwrap_or(0.0)
    }

    /// Path made from precomputed points; tangents are recomputed.
    pub fn from_points(points: Vec<Vec2>) -> Self {
        let tangents = tangents_of(&points);
        SmoothPath {
            points,
            tangents,
            fallback_segments: Vec::new(),
        }
    }
}

/// Centripetal Catmull-Rom through `waypoints` with duplicated endpoints,
/// resampled by arc length. Segments that pass closer than the agent radius
/// to occupancy fall back to the straight chord.
pub fn smooth_path(scene: &SceneMap, waypoints: &[Vec2]) -> SmoothPath {
    smooth_path_with_clearance(scene, waypoints, AGENT_RADIUS)
}

/// As `smooth_path` with an explicit (at least agent-sized) fallback clearance.
pub fn smooth_path_with_clearance(
    scene: &SceneMap,
    waypoints: &[Vec2],
    min_clearance: f64,
) -> SmoothPath {
    let min_clearance = min_clearance.max(AGENT_RADIUS);
    let wp: Vec<Vec2> = {
        let mut v: Vec<Vec2> = Vec::with_capacity(waypoints.len());
        for &p in waypoints {
            if v.last().is_none_or(|q: &Vec2| q.dist(p) > 1e-12) {
                v.push(p);
            }
        }
        v
    };
    if wp.len() < 2 {
        return SmoothPath::from_points(wp);
    }

    let mut dense: Vec<Vec2> = Vec::new();
    let mut fallback = Vec::new();
    dense.push(wp[0]);
    for k in 0..wp.len() - 1 {
        let p0 = if k == 0 { wp[0] } else { wp[k - 1] };
        let p1 = wp[k];
        let p2 = wp[k + 1];
        let p3 = if k + 2 < wp.len() { wp[k + 2] } else { p2 };
        let m = (math::ceil(p1.dist(p2) / 0.005) as usize).max(8);
        let curve: Vec<Vec2> = (1..=m)
            .map(|q| catmull_rom(p0, p1, p2, p3, q as f64 / m as f64))
            .collect();
        let clear = curve
            .iter()
            .all(|&p| scene.point_clearance(p, min_clearance + 0.1) >= min_clearance);
        if clear {
            dense.extend(curve);
        } else {
            fallback.push(k);
            dense.extend((1..=m).map(|q| p1 + (p2 - p1) * (q as f64 / m as f64)));
        }
    }

    let points = resample(&dense, PATH_SPACING);
    let tangents = tangents_of(&points);
    SmoothPath {
        points,
        tangents,
        fallback_segments: fallback,
    }
}

/// Centripetal (alpha = 1/2) segment between `p1` and `p2` in Hermite form.
fn catmull_rom(p0: Vec2, p1: Vec2, p2: Vec2, p3: Vec2, s: f64) -> Vec2 {
    let knot = |a: Vec2, b: Vec2| math::sqrt(a.dist(b));
    let d0 = knot(p0, p1);
    let d1 = knot(p1, p2);
    let d2 = knot(p2, p3);
    let chord = p2 - p1;
    let m1 = if d0 == 0.0 {
        chord
    } else {
        ((p1 - p0) * (1.0 / d0) - (p2 - p0) * (1.0 / (d0 + d1)) + chord * (1.0 / d1)) * d1
    };
    let m2 = if d2 == 0.0 {
        chord
    } else {
        (chord * (1.0 / d1) - (p3 - p1) * (1.0 / (d1 + d2)) + (p3 - p2) * (1.0 / d2)) * d1
    };
    let s2 = s * s;
    let s3 = s2 * s;
    p1 * (2.0 * s3 - 3.0 * s2 + 1.0)
        + m1 * (s3 - 2.0 * s2 + s)
        + p2 * (-2.0 * s3 + 3.0 * s2)
        + m2 * (s3 - s2)
}

/// Points at equal arc-length spacing (`L / round(L / spacing)`) along the
/// polyline, endpoints included. `poly` must be nonempty.
pub fn resample(poly: &[Vec2], spacing: f64) -> Vec<Vec2> {
    if poly.len() < 2 {
        return poly.to_vec();
    }
    let mut cum = Vec::with_capacity(poly.len());
    let mut acc = 0.0;
    cum.push(0.0);
    for w in poly.windows(2) {
        acc += w[0].dist(w[1]);
        cum.push(acc);
    }
    let total = acc;
    let n = (math::round(total / spacing) as usize).max(1);
    let mut out = Vec::with_capacity(n + 1);
    let mut seg = 0;
    for q in 0..=n {
        if q == n {
            out.push(*poly.last().unwrap());
            break;
        }
        let s = total * q as f64 / n as f64;
        while seg + 1 < cum.len() - 1 && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let f = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
        out.push(poly[seg] + (poly[seg + 1] - poly[seg]) * f);
    }
    out
}

fn tangents_of(points: &[Vec2]) -> Vec<Vec2> {
    let n = points.len();
    (0..n)
        .map(|k| {
            if n < 2 {
                return Vec2::new(1.0, 0.0);
            }
            let a = points[k.saturating_sub(1)];
            let b = points[(k + 1).min(n - 1)];
            (b - a).normalized()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::point_segment_dist;
    use alloc::string::String;
    use alloc::vec;

    fn open(n: usize) -> SceneMap {
        let rows: Vec<String> = (0..n)
            .map(|j| {
                (0..n)
                    .map(|i| if i == 0 || j == 0 || i == n - 1 || j == n - 1 { '#' } else { '.' })
                    .collect()
            })
            .collect();
        let refs: Vec<&str> = rows.iter().map(|r| r.as_str()).collect();
        SceneMap::from_ascii("open", 0.1, &refs).unwrap()
    }

    fn check_spacing(p: &SmoothPath) {
        for w in p.points.windows(2) {
            let d = w[0].dist(w[1]);
            assert!((0.025..=0.075).contains(&d), "spacing {d}");
        }
    }

    #[test]
    fn collinear_is_straight() {
        let s = open(60);
        let p = smooth_path(&s, &[Vec2::new(1.0, 1.0), Vec2::new(4.0, 1.0)]);
        check_spacing(&p);
        for t in &p.tangents {
            assert!((t.x - 1.0).abs() < 1e-12 && t.y.abs() < 1e-12);
        }
        for q in &p.points {
            assert!((q.y - 1.0).abs() < 1e-12);
        }
        assert!((p.length() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn corner_is_rounded_but_close() {
        let s = open(60);
        let wp = [Vec2::new(1.0, 1.0), Vec2::new(2.0, 1.0), Vec2::new(2.0, 2.0)];
        let p = smooth_path(&s, &wp);
        check_spacing(&p);
        assert!(p.fallback_segments.is_empty());
        let dev = p
            .points
            .iter()
            .map(|q| point_segment_dist(*q, wp[0], wp[1]).min(point_segment_dist(*q, wp[1], wp[2])))
            .fold(0.0, f64::max);
        assert!(dev > 0.0 && dev < 0.5, "deviation {dev}");
        // the spline interpolates the corner, so it cannot be shorter than the polyline
        assert!(p.length() >= 2.0 - 1e-9);
        assert!(p.length() < 2.0 * 1.05, "length {}", p.length());
        assert_eq!(p.points[0], wp[0]);
        assert_eq!(*p.points.last().unwrap(), wp[2]);
    }

    #[test]
    fn tight_corner_falls_back() {
        // L-shaped corridor whose inner corner is at (1.0, 1.0)
        let rows: Vec<String> = (0..30)
            .map(|j| {
                (0..30)
                    .map(|i| {
                        let free = (j >= 6 && j < 10 && i >= 1 && i < 29) || (i >= 6 && i < 10 && j >= 6 && j < 29);
                        if free && i > 0 && j > 0 && i < 29 && j < 29 { '.' } else { '#' }
                    })
                    .collect()
            })
            .collect();
        let refs: Vec<&str> = rows.iter().map(|r| r.as_str()).collect();
        let s = SceneMap::from_ascii("l", 0.1, &refs).unwrap();
        let wp = [Vec2::new(2.5, 0.8), Vec2::new(0.8, 0.8), Vec2::new(0.8, 2.5)];
        let p = smooth_path(&s, &wp);
        assert!(!p.fallback_segments.is_empty());
        for q in &p.points {
            assert!(s.point_clearance(*q, 1.0) >= AGENT_RADIUS - 1e-9);
        }
        // fallen-back path stays on the polyline
        for q in &p.points {
            let d = point_segment_dist(*q, wp[0], wp[1]).min(point_segment_dist(*q, wp[1], wp[2]));
            assert!(d < 1e-9);
        }
    }

    #[test]
    fn resample_hits_endpoints() {
        let pts = resample(&[Vec2::new(0.0, 0.0), Vec2::new(0.12, 0.0)], 0.05);
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[2], Vec2::new(0.12, 0.0));
        let _ = vec![0];
    }
}
