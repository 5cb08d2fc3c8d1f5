//! Procedural floorplans: axis-aligned corridors forming a tree (with an
//! optional loop), an optional open hall, and rectangular rooms with doors.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{Goal, SceneError, SceneMap, Sign, AGENT_RADIUS};
use crate::hash::stream;
use crate::math::{self, Vec2, PI};

#[derive(Clone, Debug, PartialEq)]
pub struct FloorplanParams {
    /// Side length of the square site, meters.
    pub extent: f64,
    pub corridor_width: f64,
    pub rooms_min: usize,
    pub rooms_max: usize,
    pub cell_size: f64,
}

impl Default for FloorplanParams {
    fn default() -> Self {
        FloorplanParams {
            extent: 20.0,
            corridor_width: 2.0,
            rooms_min: 2,
            rooms_max: 6,
            cell_size: 0.1,
        }
    }
}

/// Half-open cell rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Rect {
    x0: i64,
    y0: i64,
    x1: i64,
    y1: i64,
}

impl Rect {
    fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    fn intersect(&self, o: &Rect) -> Option<Rect> {
        let r = Rect::new(
            self.x0.max(o.x0),
            self.y0.max(o.y0),
            self.x1.min(o.x1),
            self.y1.min(o.y1),
        );
        (r.x0 < r.x1 && r.y0 < r.y1).then_some(r)
    }

    fn grow(&self, m: i64) -> Rect {
        Rect::new(self.x0 - m, self.y0 - m, self.x1 + m, self.y1 + m)
    }

    fn is_horizontal(&self) -> bool {
        self.x1 - self.x0 >= self.y1 - self.y0
    }
}

struct Grid {
    n: i64,
    occ: Vec<bool>,
}

impl Grid {
    fn carve(&mut self, r: &Rect) {
        for j in r.y0.max(0)..r.y1.min(self.n) {
            for i in r.x0.max(0)..r.x1.min(self.n) {
                self.occ[(j * self.n + i) as usize] = false;
            }
        }
    }

    fn occupied(&self, i: i64, j: i64) -> bool {
        if i < 0 || j < 0 || i >= self.n || j >= self.n {
            return true;
        }
        self.occ[(j * self.n + i) as usize]
    }

    fn all_occupied(&self, r: &Rect) -> bool {
        (r.y0..r.y1).all(|j| (r.x0..r.x1).all(|i| self.occupied(i, j)))
    }
}

const WALL: i64 = 2;

/// Generates a closed, single-component floorplan deterministically from
/// `seed`.
pub fn gen_floorplan(seed: u64, params: &FloorplanParams) -> Result<SceneMap, SceneError> {
    let cs = params.cell_size;
    if !(cs > 0.0 && cs.is_finite()) {
        return Err(SceneError::Generation("cell_size must be positive".into()));
    }
    if !(params.extent.is_finite() && params.corridor_width.is_finite()) {
        return Err(SceneError::Generation("extent and corridor_width must be finite".into()));
    }
    let wall_m = WALL as f64 * cs;
    if params.corridor_width + 2.0 * wall_m > params.extent {
        return Err(SceneError::Generation(format!(
            "corridor does not fit: corridor_width {} m exceeds extent {} m",
            params.corridor_width, params.extent
        )));
    }
    let min_corridor = 3.0 * 2.0 * AGENT_RADIUS;
    if params.corridor_width < min_corridor - 1e-9 {
        return Err(SceneError::Generation(format!(
            "corridor_width {} m is below 3 agent diameters ({min_corridor} m)",
            params.corridor_width
        )));
    }
    if params.extent < 10.0 {
        return Err(SceneError::Generation(format!(
            "extent {} m is below the 10 m minimum",
            params.extent
        )));
    }
    if params.rooms_min < 2 || params.rooms_min > params.rooms_max {
        return Err(SceneError::Generation(format!(
            "room count range [{}, {}] must satisfy 2 <= rooms_min <= rooms_max",
            params.rooms_min, params.rooms_max
        )));
    }

    let mut last = None;
    for attempt in 0..LAYOUT_ATTEMPTS {
        match layout(seed, params, attempt) {
            Err(SceneError::Generation(msg)) if msg.starts_with("rooms cannot fit") => last = Some(msg),
            other => return other,
        }
    }
    Err(SceneError::Generation(last.unwrap_or_default()))
}

/// Layouts tried per seed before giving up on placing `rooms_min` rooms.
const LAYOUT_ATTEMPTS: u64 = 16;

fn layout(seed: u64, params: &FloorplanParams, attempt: u64) -> Result<SceneMap, SceneError> {
    let cs = params.cell_size;
    let n = math::round(params.extent / cs) as i64;
    let cw = math::round(params.corridor_width / cs) as i64;
    let m_cells = |meters: f64| math::round(meters / cs) as i64;
    let mut rng = stream(seed, "floorplan", attempt);
    let mut grid = Grid {
        n,
        occ: vec![true; (n * n) as usize],
    };

    // Main east-west corridor in the middle third.
    let lo = n / 3;
    let hi = (2 * n / 3 - cw).max(lo + 1);
    let my = rng.random_range(lo..hi);
    let main = Rect::new(WALL, my, n - WALL, my + cw);
    let mut corridors = vec![main];

    // North/south branches, one per slot.
    let slots: i64 = if n >= m_cells(18.0) { 3 } else { 2 };
    let slot_w = (n - 2 * WALL) / slots;
    let mut up_branches = Vec::new();
    let mut down_branches = Vec::new();
    for s in 0..slots {
        let centre = WALL + s * slot_w + slot_w / 2;
        let jitter = (slot_w / 4 - cw / 2).max(0);
        let bx = (centre - cw / 2 + rng.random_range(-jitter..=jitter)).clamp(WALL, n - WALL - cw);
        let dir = rng.random_range(0..10);
        let (y0, y1) = match dir {
            0..=3 => (my, n - WALL),
            4..=7 => (WALL, my + cw),
            _ => (WALL, n - WALL),
        };
        let b = Rect::new(bx, y0, bx + cw, y1);
        if y1 == n - WALL {
            up_branches.push(b);
        }
        if y0 == WALL {
            down_branches.push(b);
        }
        corridors.push(b);
    }

    // Optional loop along the top or bottom edge joining two branches.
    if rng.random_bool(0.5) {
        let (set, top) = if up_branches.len() >= 2 {
            (&up_branches, true)
        } else {
            (&down_branches, false)
        };
        if set.len() >= 2 {
            let a = set[0];
            let b = set[set.len() - 1];
            let y0 = if top { n - WALL - cw } else { WALL };
            corridors.push(Rect::new(a.x0, y0, b.x1, y0 + cw));
        }
    }
    for c in &corridors {
        grid.carve(c);
    }

    // Junctions between horizontal and vertical corridors.
    let mut junctions = Vec::new();
    for (k, a) in corridors.iter().enumerate() {
        for b in &corridors[k + 1..] {
            if a.is_horizontal() != b.is_horizontal() {
                if let Some(j) = a.intersect(b) {
                    junctions.push(j);
                }
            }
        }
    }

    // Optional open hall around one junction.
    let mut decision_rects = junctions.clone();
    if !junctions.is_empty() && rng.random_bool(0.5) {
        let j = junctions[rng.random_range(0..junctions.len())];
        let side = rng.random_range(m_cells(5.0)..=m_cells(7.0));
        let cx = (j.x0 + j.x1) / 2;
        let cy = (j.y0 + j.y1) / 2;
        let hall = Rect::new(
            (cx - side / 2).max(WALL),
            (cy - side / 2).max(WALL),
            (cx + side / 2).min(n - WALL),
            (cy + side / 2).min(n - WALL),
        );
        grid.carve(&hall);
        decision_rects.retain(|r| r.intersect(&hall).is_none());
        decision_rects.push(hall);
    }

    // Signs go up before rooms so that no door is cut through a sign's wall.
    let placed = place_signs(&grid, &decision_rects, cs);
    let reserved: Vec<Rect> = placed.iter().map(|(_, strip)| strip.grow(1)).collect();

    // Rooms attached to corridors through a door.
    let target = rng.random_range(params.rooms_min..=params.rooms_max);
    let door = m_cells(1.2).max(1);
    let (room_lo, room_hi) = (m_cells(2.5), m_cells(4.5));
    let mut rooms: Vec<Rect> = Vec::new();
    for attempt in 0..1500 {
        if rooms.len() >= target {
            break;
        }
        // tight sites fall back to small rooms
        let (lo, hi) = if attempt < 800 {
            (room_lo, room_hi)
        } else {
            (m_cells(2.0), m_cells(3.0))
        };
        let c = corridors[rng.random_range(0..corridors.len())];
        let rw = rng.random_range(lo..=hi);
        let rh = rng.random_range(lo..=hi);
        let positive_side = rng.random_bool(0.5);
        let (room, door_rect) = if c.is_horizontal() {
            let x0 = rng.random_range(c.x0 - rw / 2..c.x1 - rw / 2);
            let (y0, y1) = if positive_side {
                (c.y1 + WALL, c.y1 + WALL + rh)
            } else {
                (c.y0 - WALL - rh, c.y0 - WALL)
            };
            let room = Rect::new(x0, y0, x0 + rw, y1);
            let lo = room.x0.max(c.x0) + 1;
            let hi = room.x1.min(c.x1) - door - 1;
            if hi < lo {
                continue;
            }
            let dx = rng.random_range(lo..=hi);
            let door_rect = if positive_side {
                Rect::new(dx, c.y1, dx + door, room.y0)
            } else {
                Rect::new(dx, room.y1, dx + door, c.y0)
            };
            (room, door_rect)
        } else {
            let y0 = rng.random_range(c.y0 - rh / 2..c.y1 - rh / 2);
            let (x0, x1) = if positive_side {
                (c.x1 + WALL, c.x1 + WALL + rw)
            } else {
                (c.x0 - WALL - rw, c.x0 - WALL)
            };
            let room = Rect::new(x0, y0, x1, y0 + rh);
            let lo = room.y0.max(c.y0) + 1;
            let hi = room.y1.min(c.y1) - door - 1;
            if hi < lo {
                continue;
            }
            let dy = rng.random_range(lo..=hi);
            let door_rect = if positive_side {
                Rect::new(c.x1, dy, room.x0, dy + door)
            } else {
                Rect::new(room.x1, dy, c.x0, dy + door)
            };
            (room, door_rect)
        };
        if room.x0 < WALL || room.y0 < WALL || room.x1 > n - WALL || room.y1 > n - WALL {
            continue;
        }
        if !grid.all_occupied(&room.grow(WALL)) {
            continue;
        }
        // the door must not open onto a junction wall or another room
        if !grid.all_occupied(&door_rect) {
            continue;
        }
        let grown = room.grow(WALL);
        if reserved
            .iter()
            .any(|r| r.intersect(&door_rect).is_some() || r.intersect(&grown).is_some())
        {
            continue;
        }
        grid.carve(&room);
        grid.carve(&door_rect);
        rooms.push(room);
    }
    if rooms.len() < params.rooms_min {
        return Err(SceneError::Generation(format!(
            "rooms cannot fit: placed {} of rooms_min {} after {LAYOUT_ATTEMPTS} layouts",
            rooms.len(),
            params.rooms_min
        )));
    }

    let goals: Vec<Goal> = rooms
        .iter()
        .enumerate()
        .map(|(k, r)| Goal {
            goal_id: format!("goal_{k}"),
            position: Vec2::new(
                (r.x0 + r.x1) as f64 * 0.5 * cs,
                (r.y0 + r.y1) as f64 * 0.5 * cs,
            ),
        })
        .collect();

    let signs = placed.into_iter().map(|(s, _)| s).collect();

    SceneMap::new(
        format!("scene_{seed}"),
        cs,
        n as usize,
        n as usize,
        grid.occ,
        signs,
        goals,
    )
}

/// One sign on the middle of every wall face bounding a decision rectangle,
/// paired with the wall strip it hangs on.
fn place_signs(grid: &Grid, rects: &[Rect], cs: f64) -> Vec<(Sign, Rect)> {
    let half = math::ceil(0.35 / cs) as i64;
    let mut signs: Vec<(Sign, Rect)> = Vec::new();
    for r in rects {
        let mx = (r.x0 + r.x1) / 2;
        let my = (r.y0 + r.y1) / 2;
        let mid_x = (r.x0 + r.x1) as f64 * 0.5 * cs;
        let mid_y = (r.y0 + r.y1) as f64 * 0.5 * cs;
        let faces = [
            // outside strip, sign position, normal
            (
                Rect::new(mx - half, r.y0 - 1, mx + half, r.y0),
                Vec2::new(mid_x, r.y0 as f64 * cs),
                PI / 2.0,
            ),
            (
                Rect::new(mx - half, r.y1, mx + half, r.y1 + 1),
                Vec2::new(mid_x, r.y1 as f64 * cs),
                3.0 * PI / 2.0,
            ),
            (
                Rect::new(r.x0 - 1, my - half, r.x0, my + half),
                Vec2::new(r.x0 as f64 * cs, mid_y),
                0.0,
            ),
            (
                Rect::new(r.x1, my - half, r.x1 + 1, my + half),
                Vec2::new(r.x1 as f64 * cs, mid_y),
                PI,
            ),
        ];
        for (strip, pos, normal) in faces {
            // the free side of the face must also be free across the quad
            let inner = match normal {
                n if n == 0.0 => Rect::new(strip.x1, strip.y0, strip.x1 + 1, strip.y1),
                n if n == PI => Rect::new(strip.x0 - 1, strip.y0, strip.x0, strip.y1),
                n if n == PI / 2.0 => Rect::new(strip.x0, strip.y1, strip.x1, strip.y1 + 1),
                _ => Rect::new(strip.x0, strip.y0 - 1, strip.x1, strip.y0),
            };
            let inner_free =
                (inner.y0..inner.y1).all(|j| (inner.x0..inner.x1).all(|i| !grid.occupied(i, j)));
            if !grid.all_occupied(&strip) || !inner_free {
                continue;
            }
            if signs.iter().any(|(s, _)| s.position.dist(pos) < 1e-9) {
                continue;
            }
            signs.push((Sign::new(format!("sign_{}", signs.len()), pos, normal), strip));
        }
    }
    signs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_one_is_connected() {
        let s = gen_floorplan(
            1,
            &FloorplanParams {
                extent: 20.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(s.free_components(), 1);
        assert!(s.goals.len() >= 2);
        assert!(!s.signs.is_empty());
    }

    #[test]
    fn deterministic() {
        let p = FloorplanParams::default();
        assert_eq!(gen_floorplan(9, &p).unwrap(), gen_floorplan(9, &p).unwrap());
    }

    #[test]
    fn corridor_does_not_fit() {
        let err = gen_floorplan(
            1,
            &FloorplanParams {
                extent: 1.0,
                corridor_width: 2.0,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(format!("{err}").contains("corridor does not fit"));
    }

    #[test]
    fn narrow_corridor_rejected() {
        let err = gen_floorplan(
            1,
            &FloorplanParams {
                corridor_width: 1.0,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(format!("{err}").contains("corridor_width"));
    }

    #[test]
    fn too_many_rooms_reports_constraint() {
        let err = gen_floorplan(
            1,
            &FloorplanParams {
                extent: 10.0,
                rooms_min: 40,
                rooms_max: 40,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(format!("{err}").contains("rooms cannot fit"));
    }

    #[test]
    fn hundred_seeds_pass_invariants() {
        let p = FloorplanParams::default();
        for seed in 0..100 {
            let s = gen_floorplan(seed, &p).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            s.validate().unwrap();
            assert_eq!(s.free_components(), 1, "seed {seed}");
            assert!(s.goals.len() >= 2);
        }
    }

    #[test]
    fn small_extents_generate() {
        for extent in [10.0, 12.0, 14.0] {
            let p = FloorplanParams {
                extent,
                ..Default::default()
            };
            for seed in 0..40 {
                let s = gen_floorplan(seed, &p).unwrap_or_else(|e| panic!("extent {extent} seed {seed}: {e}"));
                assert_eq!(s.free_components(), 1);
                assert!(s.goals.len() >= 2);
            }
        }
    }
}
