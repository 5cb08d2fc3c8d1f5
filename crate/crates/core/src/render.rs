//! Egocentric 2.5D column raycaster with sign projection and hint crops.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{self, angle_diff, Vec2};
use crate::scene::{line_of_sight, ArrowDir, Pose, SceneMap, Sign};

/// Side length of the square hint crop.
pub const HINT_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error("pose ({x}, {y}) is inside an occupied cell")]
    PoseInCollision { x: f64, y: f64 },
    #[error("unknown goal_id {0}")]
    UnknownGoal(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(&'static str),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub image_width: usize,
    pub image_height: usize,
    pub hfov: f64,
    pub wall_height: f64,
    pub eye_height: f64,
    pub max_depth: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            image_width: 64,
            image_height: 64,
            hfov: math::PI / 2.0,
            wall_height: 2.5,
            eye_height: 1.25,
            max_depth: 20.0,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.image_width == 0 || self.image_height == 0 {
            return Err(RenderError::InvalidCamera("image size must be positive"));
        }
        if !(self.hfov > 0.0 && self.hfov < math::PI) {
            return Err(RenderError::InvalidCamera("hfov must lie in (0, pi)"));
        }
        if !(self.wall_height > 0.0 && self.eye_height > 0.0 && self.max_depth > 0.0) {
            return Err(RenderError::InvalidCamera("heights and max_depth must be positive"));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        self.image_width as f64 * 0.5 / math::tan(self.hfov * 0.5)
    }

    /// Ray angle of column `c` relative to the heading.
    pub fn column_angle(&self, c: usize) -> f64 {
        self.hfov * (0.5 - (c as f64 + 0.5) / self.image_width as f64)
    }

    /// Continuous screen column of a bearing (inverse of `column_angle`).
    pub fn bearing_to_x(&self, bearing: f64) -> f64 {
        self.image_width as f64 * (0.5 - bearing / self.hfov)
    }
}

/// Row-major `height x width x channels` image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.idx(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.idx(x, y, c);
        self.data[i] = v;
    }

    pub fn set_px(&mut self, x: usize, y: usize, px: [f64; 3]) {
        let i = self.idx(x, y, 0);
        self.data[i..i + 3].copy_from_slice(&px);
    }
}

/// Integer pixel box, half-open: columns `x_min..x_max`, rows `y_min..y_max`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BBox {
    pub x_min: i32,
    pub y_min: i32,
    pub x_max: i32,
    pub y_max: i32,
}

impl BBox {
    /// Stand-in for "no hint" in model inputs.
    pub const SENTINEL: BBox = BBox {
        x_min: -1,
        y_min: -1,
        x_max: -1,
        y_max: -1,
    };

    pub fn is_sentinel(&self) -> bool {
        *self == BBox::SENTINEL
    }

    pub fn width(&self) -> i32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> i32 {
        self.y_max - self.y_min
    }

    pub fn center_x(&self) -> f64 {
        (self.x_min + self.x_max) as f64 * 0.5
    }

    pub fn within(&self, width: usize, height: usize) -> bool {
        0 <= self.x_min
            && self.x_min < self.x_max
            && self.x_max <= width as i32
            && 0 <= self.y_min
            && self.y_min < self.y_max
            && self.y_max <= height as i32
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hint {
    /// `HINT_SIZE x HINT_SIZE x 3`.
    pub crop: Image,
    pub bbox: BBox,
    pub dir: ArrowDir,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub rgb: Image,
    pub depth: Image,
    pub hint: Option<Hint>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HintQuery {
    pub goal_id: String,
    pub max_hint_distance: f64,
    pub max_face_angle: f64,
}

impl HintQuery {
    pub fn new(goal_id: impl Into<String>) -> Self {
        HintQuery {
            goal_id: goal_id.into(),
            max_hint_distance: 5.0,
            max_face_angle: math::PI / 3.0,
        }
    }
}

const FLOOR: [f64; 3] = [0.25, 0.25, 0.25];
const CEILING: [f64; 3] = [0.8, 0.8, 0.8];
// keyed on the outward normal of the hit face: +x, -x, +y, -y
const WALL_PALETTE: [[f64; 3]; 4] = [
    [0.75, 0.35, 0.30],
    [0.30, 0.65, 0.35],
    [0.30, 0.40, 0.75],
    [0.70, 0.65, 0.30],
];

struct Hit {
    dist: f64,
    face: usize,
}

/// Grid DDA from `origin` along unit direction `dir`.
fn cast(scene: &SceneMap, origin: Vec2, dir: Vec2, max_dist: f64) -> Option<Hit> {
    let cs = scene.cell_size;
    let (mut i, mut j) = scene.cell_of(origin);
    let (step_i, mut t_max_x, t_dx) = if dir.x > 0.0 {
        (1, ((i + 1) as f64 * cs - origin.x) / dir.x, cs / dir.x)
    } else if dir.x < 0.0 {
        (-1, (i as f64 * cs - origin.x) / dir.x, -cs / dir.x)
    } else {
        (0, f64::INFINITY, f64::INFINITY)
    };
    let (step_j, mut t_max_y, t_dy) = if dir.y > 0.0 {
        (1, ((j + 1) as f64 * cs - origin.y) / dir.y, cs / dir.y)
    } else if dir.y < 0.0 {
        (-1, (j as f64 * cs - origin.y) / dir.y, -cs / dir.y)
    } else {
        (0, f64::INFINITY, f64::INFINITY)
    };
    loop {
        let (t, face);
        if t_max_x < t_max_y {
            t = t_max_x;
            i += step_i;
            t_max_x += t_dx;
            face = if step_i > 0 { 1 } else { 0 };
        } else {
            t = t_max_y;
            j += step_j;
            t_max_y += t_dy;
            face = if step_j > 0 { 3 } else { 2 };
        }
        if t > max_dist {
            return None;
        }
        if scene.occupied(i, j) {
            return Some(Hit { dist: t, face });
        }
    }
}

/// Renders RGB and depth at `pose`; no signs are drawn.
pub fn render(scene: &SceneMap, pose: &Pose, cam: &CameraModel) -> Result<Frame, RenderError> {
    cam.validate()?;
    let origin = pose.position();
    if !scene.is_free(origin) {
        return Err(RenderError::PoseInCollision {
            x: pose.x(),
            y: pose.y(),
        });
    }
    let (w, h) = (cam.image_width, cam.image_height);
    let mut rgb = Image::new(w, h, 3);
    let mut depth = Image::new(w, h, 1);
    let focal = cam.focal();
    let horizon = h as f64 * 0.5;
    for c in 0..w {
        let rel = cam.column_angle(c);
        let dir = Vec2::from_angle(pose.theta() + rel);
        let hit = cast(scene, origin, dir, cam.max_depth / math::cos(rel).max(1e-6));
        let (d, slice) = match hit {
            Some(hit) => {
                let d = (hit.dist * math::cos(rel)).clamp(0.0, cam.max_depth);
                // Horizon sits at eye height; with the default eye at half the
                // wall height the slice is centered on it.
                let top = horizon - focal * (cam.wall_height - cam.eye_height) / d;
                let bottom = horizon + focal * cam.eye_height / d;
                (d, Some((top, bottom, WALL_PALETTE[hit.face])))
            }
            None => (cam.max_depth, None),
        };
        for r in 0..h {
            depth.set(c, r, 0, d);
            let yc = r as f64 + 0.5;
            let px = match slice {
                Some((top, bottom, color)) if yc >= top && yc < bottom => color,
                _ if yc < horizon => CEILING,
                _ => FLOOR,
            };
            rgb.set_px(c, r, px);
        }
    }
    Ok(Frame {
        rgb,
        depth,
        hint: None,
    })
}

/// Screen-space box of `sign` if it is close enough, inside the horizontal
/// field of view, unoccluded and facing the agent.
pub fn project_sign(
    scene: &SceneMap,
    pose: &Pose,
    cam: &CameraModel,
    sign: &Sign,
    q: &HintQuery,
) -> Option<BBox> {
    let eye = pose.position();
    let centre = sign.position;
    let to_sign = centre - eye;
    if to_sign.norm() > q.max_hint_distance {
        return None;
    }
    if angle_diff(to_sign.angle(), pose.theta()).abs() > cam.hfov * 0.5 {
        return None;
    }
    let normal = sign.normal_vec();
    // the quad center lies on the wall face; test visibility just in front of it
    let probe = centre + normal * (scene.cell_size * 0.1);
    if !line_of_sight(scene, eye, probe, 0.0) {
        return None;
    }
    let back = eye - centre;
    let facing = math::atan2(normal.cross(back), normal.dot(back)).abs();
    if facing > q.max_face_angle {
        return None;
    }

    let heading = pose.heading();
    let left = heading.perp();
    let along = normal.perp() * (sign.quad_width * 0.5);
    let mid_h = sign.mount_height_frac * cam.wall_height;
    let half_h = sign.quad_width * 0.5;
    let focal = cam.focal();
    let horizon = cam.image_height as f64 * 0.5;
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for p in [centre + along, centre - along] {
        let rel = p - eye;
        let z = rel.dot(heading);
        if z <= 1e-3 {
            return None;
        }
        let sx = cam.bearing_to_x(math::atan2(rel.dot(left), z));
        x0 = x0.min(sx);
        x1 = x1.max(sx);
        for hgt in [mid_h - half_h, mid_h + half_h] {
            let sy = horizon - focal * (hgt - cam.eye_height) / z;
            y0 = y0.min(sy);
            y1 = y1.max(sy);
        }
    }
    let (w, h) = (cam.image_width as f64, cam.image_height as f64);
    let bbox = BBox {
        x_min: math::floor(x0.clamp(0.0, w)) as i32,
        y_min: math::floor(y0.clamp(0.0, h)) as i32,
        x_max: math::ceil(x1.clamp(0.0, w)) as i32,
        y_max: math::ceil(y1.clamp(0.0, h)) as i32,
    };
    bbox.within(cam.image_width, cam.image_height).then_some(bbox)
}

/// The visible sign carrying an arrow for `q.goal_id` nearest to the agent.
pub fn select_hint(
    scene: &SceneMap,
    pose: &Pose,
    cam: &CameraModel,
    q: &HintQuery,
) -> Result<Option<(usize, BBox, ArrowDir)>, RenderError> {
    if scene.goal(&q.goal_id).is_none() {
        return Err(RenderError::UnknownGoal(q.goal_id.clone()));
    }
    let eye = pose.position();
    let mut best: Option<(f64, usize, BBox, ArrowDir)> = None;
    for (k, sign) in scene.signs.iter().enumerate() {
        let Some(&dir) = sign.arrows.get(&q.goal_id) else {
            continue;
        };
        let Some(bbox) = project_sign(scene, pose, cam, sign, q) else {
            continue;
        };
        let d = eye.dist(sign.position);
        if best.as_ref().is_none_or(|b| d < b.0) {
            best = Some((d, k, bbox, dir));
        }
    }
    Ok(best.map(|(_, k, b, d)| (k, b, d)))
}

fn draw_sign(rgb: &mut Image, bbox: BBox, dir: ArrowDir) {
    let glyph = dir.glyph();
    let (bw, bh) = (bbox.width() as usize, bbox.height() as usize);
    for py in 0..bh {
        let gy = py * 9 / bh;
        for px in 0..bw {
            let gx = px * 9 / bw;
            let v = if glyph[gy][gx] { 0.0 } else { 1.0 };
            rgb.set_px(
                bbox.x_min as usize + px,
                bbox.y_min as usize + py,
                [v, v, v],
            );
        }
    }
}

/// Nearest-neighbour resample of the `bbox` region of `rgb` to the crop size.
pub fn crop_hint(rgb: &Image, bbox: BBox) -> Image {
    let mut crop = Image::new(HINT_SIZE, HINT_SIZE, 3);
    let (bw, bh) = (bbox.width() as f64, bbox.height() as f64);
    for v in 0..HINT_SIZE {
        let sy = bbox.y_min as usize + math::floor((v as f64 + 0.5) * bh / HINT_SIZE as f64) as usize;
        for u in 0..HINT_SIZE {
            let sx =
                bbox.x_min as usize + math::floor((u as f64 + 0.5) * bw / HINT_SIZE as f64) as usize;
            for c in 0..3 {
                crop.set(u, v, c, rgb.get(sx, sy, c));
            }
        }
    }
    crop
}

/// Renders the frame and, if a sign for the queried goal is visible, draws
/// it and attaches the hint crop.
pub fn render_with_hint(
    scene: &SceneMap,
    pose: &Pose,
    cam: &CameraModel,
    q: &HintQuery,
) -> Result<Frame, RenderError> {
    let selected = select_hint(scene, pose, cam, q)?;
    let mut frame = render(scene, pose, cam)?;
    if let Some((_, bbox, dir)) = selected {
        draw_sign(&mut frame.rgb, bbox, dir);
        frame.hint = Some(Hint {
            crop: crop_hint(&frame.rgb, bbox),
            bbox,
            dir,
        });
    }
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Goal, SceneMap, Sign};
    use alloc::string::String;

    /// `n x n` meters square room at 0.1 m cells.
    fn square_room(n_cells: usize) -> SceneMap {
        let rows: Vec<String> = (0..n_cells)
            .map(|j| {
                (0..n_cells)
                    .map(|i| {
                        if i == 0 || j == 0 || i == n_cells - 1 || j == n_cells - 1 {
                            '#'
                        } else {
                            '.'
                        }
                    })
                    .collect()
            })
            .collect();
        let refs: Vec<&str> = rows.iter().map(|r| r.as_str()).collect();
        SceneMap::from_ascii("sq", 0.1, &refs).unwrap()
    }

    fn with_sign(mut s: SceneMap, pos: Vec2, normal: f64, dir: ArrowDir) -> SceneMap {
        s.goals.push(Goal {
            goal_id: "g".into(),
            position: Vec2::new(1.0, 1.0),
        });
        let mut sign = Sign::new("s", pos, normal);
        sign.arrows.insert("g".into(), dir);
        s.signs.push(sign);
        s.validate().unwrap();
        s
    }

    #[test]
    fn depth_to_facing_wall() {
        // free interior spans [0.1, 10.1); wall face at x = 10.1
        let s = square_room(102);
        let cam = CameraModel::default();
        let pose = Pose::new(5.1, 5.05, 0.0);
        let f = render(&s, &pose, &cam).unwrap();
        let mid = cam.image_width / 2;
        let d = f.depth.get(mid, 32, 0);
        // analytic: column ray at small angle a hits the face at 5.0 / cos(a), perp = 5.0
        assert!((d - 5.0).abs() <= 0.1, "depth {d}");
    }

    #[test]
    fn no_hit_is_max_depth() {
        let s = square_room(302);
        let cam = CameraModel {
            max_depth: 3.0,
            ..Default::default()
        };
        let f = render(&s, &Pose::new(15.0, 15.0, 0.3), &cam).unwrap();
        assert!(f.depth.data.iter().all(|&d| d == 3.0));
        assert!(f.depth.data.iter().all(|&d| (0.0..=3.0).contains(&d)));
    }

    #[test]
    fn render_is_deterministic() {
        let s = square_room(60);
        let cam = CameraModel::default();
        let p = Pose::new(2.0, 3.0, 1.0);
        assert_eq!(render(&s, &p, &cam).unwrap(), render(&s, &p, &cam).unwrap());
    }

    #[test]
    fn pose_in_wall_errors() {
        let s = square_room(20);
        let err = render(&s, &Pose::new(0.05, 0.05, 0.0), &CameraModel::default()).unwrap_err();
        assert!(matches!(err, RenderError::PoseInCollision { .. }));
    }

    #[test]
    fn depth_drops_by_step_when_approaching() {
        let s = square_room(102);
        let cam = CameraModel::default();
        let d0 = render(&s, &Pose::new(5.0, 5.05, 0.0), &cam).unwrap().depth.get(32, 0, 0);
        let d1 = render(&s, &Pose::new(5.25, 5.05, 0.0), &cam).unwrap().depth.get(32, 0, 0);
        assert!(d1 < d0);
        assert!(((d0 - d1) - 0.25).abs() <= 0.1);
    }

    fn facing_sign_scene() -> SceneMap {
        // sign on the east wall face (x = 10.1) facing -x
        with_sign(square_room(102), Vec2::new(10.1, 5.05), math::PI, ArrowDir::Left)
    }

    #[test]
    fn sign_ahead_is_centered_and_shrinks_with_distance() {
        let s = facing_sign_scene();
        let cam = CameraModel::default();
        let q = HintQuery::new("g");
        let near = project_sign(&s, &Pose::new(7.1, 5.05, 0.0), &cam, &s.signs[0], &q).unwrap();
        let far = project_sign(&s, &Pose::new(5.6, 5.05, 0.0), &cam, &s.signs[0], &q).unwrap();
        assert!((near.center_x() - 32.0).abs() <= 2.0, "{near:?}");
        assert!(near.width() > far.width());
        assert!(near.within(64, 64));
    }

    #[test]
    fn sign_behind_is_invisible() {
        let s = facing_sign_scene();
        let q = HintQuery::new("g");
        let p = Pose::new(7.1, 5.05, math::PI);
        assert!(project_sign(&s, &p, &CameraModel::default(), &s.signs[0], &q).is_none());
    }

    #[test]
    fn occluded_sign_is_invisible() {
        let mut s = facing_sign_scene();
        // wall segment between agent and sign
        let w = s.width;
        let mut occ = s.occupancy().to_vec();
        for j in 40..60 {
            occ[j * w + 85] = true;
        }
        s = SceneMap::new("occ", 0.1, w, s.height, occ, s.signs.clone(), s.goals.clone()).unwrap();
        let q = HintQuery::new("g");
        let p = Pose::new(7.1, 5.05, 0.0);
        assert!(project_sign(&s, &p, &CameraModel::default(), &s.signs[0], &q).is_none());
    }

    #[test]
    fn hint_absent_without_goal_sign() {
        let mut s = facing_sign_scene();
        s.goals.push(Goal {
            goal_id: "other".into(),
            position: Vec2::new(2.0, 2.0),
        });
        let f = render_with_hint(
            &s,
            &Pose::new(7.1, 5.05, 0.0),
            &CameraModel::default(),
            &HintQuery::new("other"),
        )
        .unwrap();
        assert!(f.hint.is_none());
        let err = render_with_hint(
            &s,
            &Pose::new(7.1, 5.05, 0.0),
            &CameraModel::default(),
            &HintQuery::new("missing"),
        )
        .unwrap_err();
        assert_eq!(err, RenderError::UnknownGoal("missing".into()));
    }

    #[test]
    fn hint_crop_matches_frame_pixels() {
        let s = facing_sign_scene();
        let cam = CameraModel::default();
        let f = render_with_hint(&s, &Pose::new(7.6, 5.05, 0.0), &cam, &HintQuery::new("g")).unwrap();
        let hint = f.hint.as_ref().unwrap();
        assert_eq!(hint.dir, ArrowDir::Left);
        assert!(hint.bbox.within(64, 64));
        // independent recomputation of the nearest-neighbour crop
        let b = hint.bbox;
        for v in 0..HINT_SIZE {
            for u in 0..HINT_SIZE {
                let sx = b.x_min as usize + (2 * u + 1) * b.width() as usize / (2 * HINT_SIZE);
                let sy = b.y_min as usize + (2 * v + 1) * b.height() as usize / (2 * HINT_SIZE);
                for c in 0..3 {
                    assert_eq!(hint.crop.get(u, v, c), f.rgb.get(sx, sy, c));
                }
            }
        }
        // the sign area contains both ink and background
        let inked = hint.crop.data.iter().filter(|&&v| v == 0.0).count();
        assert!(inked > 0 && inked < hint.crop.data.len());
    }

    #[test]
    fn nearest_sign_wins() {
        let mut s = facing_sign_scene();
        // second sign further away on the same wall line, different arrow
        let mut far = Sign::new("far", Vec2::new(10.1, 5.45), math::PI);
        far.arrows.insert("g".into(), ArrowDir::Right);
        s.signs.push(far);
        s.validate().unwrap();
        let cam = CameraModel::default();
        let p = Pose::new(8.1, 5.05, 0.0);
        let (k, _, dir) = select_hint(&s, &p, &cam, &HintQuery::new("g")).unwrap().unwrap();
        assert_eq!(k, 0);
        assert_eq!(dir, ArrowDir::Left);
        let p2 = Pose::new(8.1, 5.85, 0.0);
        let (k2, _, _) = select_hint(&s, &p2, &cam, &HintQuery::new("g")).unwrap().unwrap();
        assert_eq!(k2, 1);
    }
}
