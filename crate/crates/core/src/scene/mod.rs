//! World representation: occupancy grid, signage, goals and geometric queries.

mod clearance;
mod floorplan;
mod los;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::math::{self, wrap_angle, Vec2};

pub use clearance::clearance_field;
pub use floorplan::{gen_floorplan, FloorplanParams};
pub use los::line_of_sight;

/// Radius of the agent's collision disk, meters.
pub const AGENT_RADIUS: f64 = 0.2;

/// Slack applied to every clearance comparison so that a capsule exactly
/// tangent to a wall counts as free.
pub const CONTACT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("invalid scene field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("floorplan generation failed: {0}")]
    Generation(String),
}

impl SceneError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SceneError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ArrowDir {
    Left,
    Straight,
    Right,
}

impl ArrowDir {
    pub const ALL: [ArrowDir; 3] = [ArrowDir::Left, ArrowDir::Straight, ArrowDir::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            ArrowDir::Left => "left",
            ArrowDir::Straight => "straight",
            ArrowDir::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Option<ArrowDir> {
        match s {
            "left" => Some(ArrowDir::Left),
            "straight" => Some(ArrowDir::Straight),
            "right" => Some(ArrowDir::Right),
            _ => None,
        }
    }

    /// 9x9 glyph, row 0 at the top of the sign. `true` pixels are inked.
    pub fn glyph(self) -> &'static [[bool; 9]; 9] {
        match self {
            ArrowDir::Left => &GLYPH_LEFT,
            ArrowDir::Straight => &GLYPH_STRAIGHT,
            ArrowDir::Right => &GLYPH_RIGHT,
        }
    }
}

const fn glyph_from(rows: [&str; 9]) -> [[bool; 9]; 9] {
    let mut out = [[false; 9]; 9];
    let mut r = 0;
    while r < 9 {
        let bytes = rows[r].as_bytes();
        let mut c = 0;
        while c < 9 {
            out[r][c] = bytes[c] == b'#';
            c += 1;
        }
        r += 1;
    }
    out
}

const GLYPH_LEFT: [[bool; 9]; 9] = glyph_from([
    ".........",
    "...#.....",
    "..##.....",
    ".########",
    "#########",
    ".########",
    "..##.....",
    "...#.....",
    ".........",
]);

const GLYPH_RIGHT: [[bool; 9]; 9] = glyph_from([
    ".........",
    ".....#...",
    ".....##..",
    "########.",
    "#########",
    "########.",
    ".....##..",
    ".....#...",
    ".........",
]);

const GLYPH_STRAIGHT: [[bool; 9]; 9] = glyph_from([
    "....#....",
    "...###...",
    "..#####..",
    ".#######.",
    "...###...",
    "...###...",
    "...###...",
    "...###...",
    "...###...",
]);

#[derive(Clone, Debug, PartialEq)]
pub struct Goal {
    pub goal_id: String,
    pub position: Vec2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sign {
    pub sign_id: String,
    /// Point on a wall face, meters.
    pub position: Vec2,
    /// Direction the sign faces (into free space), radians.
    pub normal: f64,
    pub arrows: BTreeMap<String, ArrowDir>,
    pub quad_width: f64,
    pub mount_height_frac: f64,
}

impl Sign {
    pub fn new(sign_id: impl Into<String>, position: Vec2, normal: f64) -> Self {
        Sign {
            sign_id: sign_id.into(),
            position,
            normal: wrap_angle(normal),
            arrows: BTreeMap::new(),
            quad_width: 0.5,
            mount_height_frac: 0.6,
        }
    }

    pub fn normal_vec(&self) -> Vec2 {
        Vec2::from_angle(self.normal)
    }
}

/// Agent pose. `theta` is kept in `[0, 2π)`; 0 faces +x, counterclockwise positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    x: f64,
    y: f64,
    theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn at(p: Vec2, theta: f64) -> Self {
        Pose::new(p.x, p.y, theta)
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn heading(&self) -> Vec2 {
        Vec2::from_angle(self.theta)
    }

    pub fn set_position(&mut self, p: Vec2) {
        self.x = p.x;
        self.y = p.y;
    }

    pub fn rotate(&mut self, dtheta: f64) {
        self.theta = wrap_angle(self.theta + dtheta);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneMap {
    pub scene_id: String,
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    occupancy: Vec<bool>,
    pub signs: Vec<Sign>,
    pub goals: Vec<Goal>,
}

impl SceneMap {
    /// Builds a scene and checks every invariant.
    pub fn new(
        scene_id: impl Into<String>,
        cell_size: f64,
        width: usize,
        height: usize,
        occupancy: Vec<bool>,
        signs: Vec<Sign>,
        goals: Vec<Goal>,
    ) -> Result<Self, SceneError> {
        let scene = SceneMap {
            scene_id: scene_id.into(),
            cell_size,
            width,
            height,
            occupancy,
            signs,
            goals,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Occupancy-only scene with no signs or goals. Border cells are forced
    /// occupied.
    pub fn from_grid(
        scene_id: impl Into<String>,
        cell_size: f64,
        width: usize,
        height: usize,
        mut occupancy: Vec<bool>,
    ) -> Result<Self, SceneError> {
        if occupancy.len() == width * height {
            for i in 0..width {
                occupancy[i] = true;
                occupancy[(height - 1) * width + i] = true;
            }
            for j in 0..height {
                occupancy[j * width] = true;
                occupancy[j * width + width - 1] = true;
            }
        }
        SceneMap::new(
            scene_id,
            cell_size,
            width,
            height,
            occupancy,
            Vec::new(),
            Vec::new(),
        )
    }

    /// Parses rows of `#` (occupied) and `.` (free); row 0 is y = 0.
    pub fn from_ascii(
        scene_id: impl Into<String>,
        cell_size: f64,
        rows: &[&str],
    ) -> Result<Self, SceneError> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut occupancy = Vec::with_capacity(width * height);
        for (j, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(SceneError::invalid(
                    "occupancy",
                    format!("row {j} has length {} (expected {width})", row.len()),
                ));
            }
            for ch in row.bytes() {
                match ch {
                    b'#' => occupancy.push(true),
                    b'.' => occupancy.push(false),
                    other => {
                        return Err(SceneError::invalid(
                            "occupancy",
                            format!("unexpected character {:?} in row {j}", other as char),
                        ))
                    }
                }
            }
        }
        SceneMap::new(
            scene_id,
            cell_size,
            width,
            height,
            occupancy,
            Vec::new(),
            Vec::new(),
        )
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.width == 0 || self.height == 0 {
            return Err(SceneError::invalid("width", "width*height must be positive"));
        }
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(SceneError::invalid("cell_size", "must be positive and finite"));
        }
        if self.occupancy.len() != self.width * self.height {
            return Err(SceneError::invalid(
                "occupancy",
                format!(
                    "has {} cells, expected {}",
                    self.occupancy.len(),
                    self.width * self.height
                ),
            ));
        }
        for i in 0..self.width {
            if !self.occupied(i as isize, 0) || !self.occupied(i as isize, self.height as isize - 1)
            {
                return Err(SceneError::invalid("occupancy", "border cells must be occupied"));
            }
        }
        for j in 0..self.height {
            if !self.occupied(0, j as isize) || !self.occupied(self.width as isize - 1, j as isize)
            {
                return Err(SceneError::invalid("occupancy", "border cells must be occupied"));
            }
        }
        for (k, g) in self.goals.iter().enumerate() {
            if self.goals[..k].iter().any(|o| o.goal_id == g.goal_id) {
                return Err(SceneError::invalid(
                    "goals",
                    format!("duplicate goal_id {}", g.goal_id),
                ));
            }
            if !g.position.is_finite() || !self.is_free(g.position) {
                return Err(SceneError::invalid(
                    "goals",
                    format!("goal {} is not in free space", g.goal_id),
                ));
            }
            if self.point_clearance(g.position, AGENT_RADIUS) < AGENT_RADIUS - CONTACT_EPS {
                return Err(SceneError::invalid(
                    "goals",
                    format!("goal {} has clearance below the agent radius", g.goal_id),
                ));
            }
        }
        let eps = self.cell_size * 1e-3;
        for (k, s) in self.signs.iter().enumerate() {
            if self.signs[..k].iter().any(|o| o.sign_id == s.sign_id) {
                return Err(SceneError::invalid(
                    "signs",
                    format!("duplicate sign_id {}", s.sign_id),
                ));
            }
            if !s.position.is_finite() || !s.normal.is_finite() {
                return Err(SceneError::invalid(
                    "signs",
                    format!("sign {} has non-finite geometry", s.sign_id),
                ));
            }
            let n = s.normal_vec();
            if !self.is_free(s.position + n * eps) || self.is_free(s.position - n * eps) {
                return Err(SceneError::invalid(
                    "signs",
                    format!(
                        "sign {} must sit on a wall face with its normal into free space",
                        s.sign_id
                    ),
                ));
            }
            if !(s.quad_width > 0.0) || !(0.0..=1.0).contains(&s.mount_height_frac) {
                return Err(SceneError::invalid(
                    "signs",
                    format!("sign {} has invalid quad geometry", s.sign_id),
                ));
            }
            for goal_id in s.arrows.keys() {
                if self.goal(goal_id).is_none() {
                    return Err(SceneError::invalid(
                        "signs",
                        format!("sign {} references unknown goal {goal_id}", s.sign_id),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    /// Occupancy of cell `(i, j)`; anything outside the grid counts as occupied.
    #[inline]
    pub fn occupied(&self, i: isize, j: isize) -> bool {
        if i < 0 || j < 0 || i >= self.width as isize || j >= self.height as isize {
            return true;
        }
        self.occupancy[j as usize * self.width + i as usize]
    }

    #[inline]
    pub fn cell_of(&self, p: Vec2) -> (isize, isize) {
        (
            math::floor(p.x / self.cell_size) as isize,
            math::floor(p.y / self.cell_size) as isize,
        )
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(
            (i as f64 + 0.5) * self.cell_size,
            (j as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn extent(&self) -> Vec2 {
        Vec2::new(
            self.width as f64 * self.cell_size,
            self.height as f64 * self.cell_size,
        )
    }

    pub fn in_bounds(&self, p: Vec2) -> bool {
        let e = self.extent();
        p.x >= 0.0 && p.y >= 0.0 && p.x <= e.x && p.y <= e.y
    }

    pub fn is_free(&self, p: Vec2) -> bool {
        let (i, j) = self.cell_of(p);
        !self.occupied(i, j)
    }

    /// Distance from `p` to the nearest occupied cell square, capped at `cap`.
    pub fn point_clearance(&self, p: Vec2, cap: f64) -> f64 {
        let cs = self.cell_size;
        let (ci, cj) = self.cell_of(p);
        if self.occupied(ci, cj) {
            return 0.0;
        }
        let k = math::ceil(cap / cs) as isize + 1;
        let mut best = cap;
        for j in (cj - k)..=(cj + k) {
            for i in (ci - k)..=(ci + k) {
                if !self.occupied(i, j) {
                    continue;
                }
                let x0 = i as f64 * cs;
                let y0 = j as f64 * cs;
                let dx = (x0 - p.x).max(p.x - (x0 + cs)).max(0.0);
                let dy = (y0 - p.y).max(p.y - (y0 + cs)).max(0.0);
                let d = math::hypot(dx, dy);
                if d < best {
                    best = d;
                }
            }
        }
        best
    }

    /// True iff a disk of radius `r` at `p` touches no occupied cell.
    pub fn disk_free(&self, p: Vec2, r: f64) -> bool {
        self.in_bounds(p) && self.point_clearance(p, r + 1.0) >= r - CONTACT_EPS
    }

    pub fn goal(&self, goal_id: &str) -> Option<&Goal> {
        self.goals.iter().find(|g| g.goal_id == goal_id)
    }

    pub fn sign(&self, sign_id: &str) -> Option<&Sign> {
        self.signs.iter().find(|s| s.sign_id == sign_id)
    }

    /// Copy of this scene in which `goal_id` arrows are replaced by
    /// `arrows` (pairs of sign id and direction). Other goals are untouched.
    pub fn with_goal_arrows(&self, goal_id: &str, arrows: &BTreeMap<String, ArrowDir>) -> SceneMap {
        let mut out = self.clone();
        for s in &mut out.signs {
            s.arrows.remove(goal_id);
            if let Some(&d) = arrows.get(&s.sign_id) {
                s.arrows.insert(goal_id.into(), d);
            }
        }
        out
    }

    /// Number of 4-connected components of free cells.
    pub fn free_components(&self) -> usize {
        let mut seen = alloc::vec![false; self.occupancy.len()];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..self.occupancy.len() {
            if self.occupancy[start] || seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(c) = stack.pop() {
                let (i, j) = ((c % self.width) as isize, (c / self.width) as isize);
                for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                    let (ni, nj) = (i + di, j + dj);
                    if self.occupied(ni, nj) {
                        continue;
                    }
                    let n = nj as usize * self.width + ni as usize;
                    if !seen[n] {
                        seen[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        count
    }
}
