//! Labyrinth geometry: walls, holes, the corner path, and the constraint
//! primitives both MPC layers are built on.
//!
//! Walls are axis-aligned boxes approximated by a superellipse with exponent
//! 4 once inflated by the ball radius; holes are discs constrained through
//! the squared distance of the ball center to the hole center. Obstacle
//! lookups return fixed-arity sets (padded by repetition) so the NLP
//! constraint stack never changes dimension between solves.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::Vec2;

/// Exponent of the wall superellipse.
pub const SUPERELLIPSE_EXPONENT: i32 = 4;

/// Far-away stand-in obstacle used to pad lookups on sparse layouts; its
/// constraints are trivially satisfied anywhere on the plate.
const SENTINEL_DISTANCE: f64 = 1.0e3;

/// Axis-aligned wall. `half_len_x` / `half_len_y` are the half-extents along
/// the plate axes; the longer one is the wall's long axis (there is no
/// rotation field).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wall {
    pub center: Vec2,
    pub half_len_x: f64,
    pub half_len_y: f64,
}

impl Wall {
    pub fn new(center: Vec2, half_len_x: f64, half_len_y: f64) -> Self {
        Self {
            center,
            half_len_x,
            half_len_y,
        }
    }

    /// End points of the wall on its long axis (ties resolve to the x axis).
    pub fn endpoints(&self) -> (Vec2, Vec2) {
        if self.half_len_x >= self.half_len_y {
            (
                self.center - Vec2::new(self.half_len_x, 0.0),
                self.center + Vec2::new(self.half_len_x, 0.0),
            )
        } else {
            (
                self.center - Vec2::new(0.0, self.half_len_y),
                self.center + Vec2::new(0.0, self.half_len_y),
            )
        }
    }

    /// True if `p` lies inside the rectangle inflated by `margin`.
    pub fn contains_inflated(&self, p: Vec2, margin: f64) -> bool {
        (p.x - self.center.x).abs() <= self.half_len_x + margin
            && (p.y - self.center.y).abs() <= self.half_len_y + margin
    }

    /// Euclidean distance from `p` to the rectangle inflated by `margin`
    /// (zero inside).
    pub fn distance_inflated(&self, p: Vec2, margin: f64) -> f64 {
        let dx = ((p.x - self.center.x).abs() - (self.half_len_x + margin)).max(0.0);
        let dy = ((p.y - self.center.y).abs() - (self.half_len_y + margin)).max(0.0);
        (dx * dx + dy * dy).sqrt()
    }

    /// Nearest point on the boundary of the rectangle inflated by `margin`,
    /// together with the inward unit normal (pointing into the wall) at that
    /// point. For `p` inside, the nearest boundary point along the shallowest
    /// penetration axis is used.
    pub fn nearest_boundary_point(&self, p: Vec2, margin: f64) -> (Vec2, Vec2) {
        let hx = self.half_len_x + margin;
        let hy = self.half_len_y + margin;
        let d = p - self.center;
        let inside = d.x.abs() <= hx && d.y.abs() <= hy;
        if !inside {
            let q = Vec2::new(d.x.clamp(-hx, hx), d.y.clamp(-hy, hy));
            let out = d - q;
            let n = out.norm();
            let inward = if n > 0.0 { -out / n } else { Vec2::new(0.0, -1.0) };
            (self.center + q, inward)
        } else {
            // Exit along the axis with the smallest remaining distance.
            let ex = hx - d.x.abs();
            let ey = hy - d.y.abs();
            if ex <= ey {
                let sx = if d.x >= 0.0 { 1.0 } else { -1.0 };
                let q = Vec2::new(sx * hx, d.y);
                (self.center + q, Vec2::new(-sx, 0.0))
            } else {
                let sy = if d.y >= 0.0 { 1.0 } else { -1.0 };
                let q = Vec2::new(d.x, sy * hy);
                (self.center + q, Vec2::new(0.0, -sy))
            }
        }
    }
}

/// Circular hole. `path_index` is the ordinal position along the canonical
/// route for holes that sit on it (used by the distance metric), `None` for
/// off-route holes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hole {
    pub center: Vec2,
    pub radius: f64,
    pub path_index: Option<usize>,
}

impl Hole {
    pub fn new(center: Vec2, radius: f64) -> Self {
        Self {
            center,
            radius,
            path_index: None,
        }
    }
}

/// Value of the inflated-wall superellipse at `ball_pos`:
///
/// ((x_b - x_w)/(hx + r_ball))^4 + ((y_b - y_w)/(hy + r_ball))^4
///
/// The ball center is outside the inflated wall iff the value is >= 1.
pub fn superellipse_value(ball_pos: Vec2, wall: &Wall, r_ball: f64) -> f64 {
    let dx = (ball_pos.x - wall.center.x) / (wall.half_len_x + r_ball);
    let dy = (ball_pos.y - wall.center.y) / (wall.half_len_y + r_ball);
    dx.powi(SUPERELLIPSE_EXPONENT) + dy.powi(SUPERELLIPSE_EXPONENT)
}

/// Analytic gradient of [`superellipse_value`] with respect to the ball
/// position.
pub fn superellipse_gradient(ball_pos: Vec2, wall: &Wall, r_ball: f64) -> Vec2 {
    let ax = wall.half_len_x + r_ball;
    let ay = wall.half_len_y + r_ball;
    let dx = (ball_pos.x - wall.center.x) / ax;
    let dy = (ball_pos.y - wall.center.y) / ay;
    Vec2::new(4.0 * dx.powi(3) / ax, 4.0 * dy.powi(3) / ay)
}

/// Diagonal of the (diagonal) Hessian of [`superellipse_value`].
pub fn superellipse_hessian_diag(ball_pos: Vec2, wall: &Wall, r_ball: f64) -> Vec2 {
    let ax = wall.half_len_x + r_ball;
    let ay = wall.half_len_y + r_ball;
    let dx = (ball_pos.x - wall.center.x) / ax;
    let dy = (ball_pos.y - wall.center.y) / ay;
    Vec2::new(12.0 * dx.powi(2) / (ax * ax), 12.0 * dy.powi(2) / (ay * ay))
}

/// Squared distance of the ball center to the hole center; the hole is
/// avoided iff the value is >= radius^2.
pub fn hole_constraint_value(ball_pos: Vec2, hole: &Hole) -> f64 {
    (ball_pos - hole.center).norm_squared()
}

/// Gradient of [`hole_constraint_value`] with respect to the ball position.
pub fn hole_constraint_gradient(ball_pos: Vec2, hole: &Hole) -> Vec2 {
    2.0 * (ball_pos - hole.center)
}

fn sentinel_hole() -> Hole {
    Hole::new(Vec2::new(SENTINEL_DISTANCE, SENTINEL_DISTANCE), 1.0e-3)
}

fn sentinel_wall() -> Wall {
    Wall::new(Vec2::new(SENTINEL_DISTANCE, SENTINEL_DISTANCE), 1.0e-3, 1.0e-3)
}

/// Select the `n` entries of `items` closest to `p` (center distance given by
/// `dist`), ties broken by declaration order, padded by repeating the
/// farthest selected entry up to fixed arity. An empty input yields `n`
/// copies of `sentinel`.
fn select_nearest<T: Copy>(items: &[T], p: Vec2, n: usize, dist: impl Fn(&T) -> f64, sentinel: T) -> Vec<T> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| dist(&items[a]).total_cmp(&dist(&items[b])).then(a.cmp(&b)));
    let mut out: Vec<T> = order.iter().take(n).map(|&i| items[i]).collect();
    let pad = *out.last().unwrap_or(&sentinel);
    out.resize(n, pad);
    let _ = p;
    out
}

/// The `n_holes` holes and `n_walls` walls with the smallest center distance
/// to `ball_pos`, fixed arity (see module docs for the padding rule).
pub fn nearest_obstacles(
    ball_pos: Vec2,
    layout: &LabyrinthLayout,
    n_holes: usize,
    n_walls: usize,
) -> (Vec<Hole>, Vec<Wall>) {
    let holes = select_nearest(
        &layout.holes,
        ball_pos,
        n_holes,
        |h| (h.center - ball_pos).norm(),
        sentinel_hole(),
    );
    let walls = select_nearest(
        &layout.walls,
        ball_pos,
        n_walls,
        |w| (w.center - ball_pos).norm(),
        sentinel_wall(),
    );
    (holes, walls)
}

/// The `j` nearest point obstacles for the soft obstacle cost: hole centers
/// plus the two long-axis end points of each wall, same tie/padding rules as
/// [`nearest_obstacles`].
pub fn nearest_cost_obstacles(ball_pos: Vec2, layout: &LabyrinthLayout, j: usize) -> Vec<Vec2> {
    let mut candidates: Vec<Vec2> = Vec::with_capacity(layout.holes.len() + 2 * layout.walls.len());
    candidates.extend(layout.holes.iter().map(|h| h.center));
    for w in &layout.walls {
        let (a, b) = w.endpoints();
        candidates.push(a);
        candidates.push(b);
    }
    select_nearest(
        &candidates,
        ball_pos,
        j,
        |c| (*c - ball_pos).norm(),
        Vec2::new(SENTINEL_DISTANCE, SENTINEL_DISTANCE),
    )
}

/// Ordered corner path through the labyrinth; consecutive corners differ in
/// exactly one coordinate. First entry is the start, last is the goal.
#[derive(Debug, Clone, PartialEq)]
pub struct CornerPath {
    pub corners: Vec<Vec2>,
}

impl CornerPath {
    pub fn new(corners: Vec<Vec2>) -> Self {
        Self { corners }
    }

    pub fn start(&self) -> Vec2 {
        self.corners[0]
    }

    pub fn goal(&self) -> Vec2 {
        *self.corners.last().expect("corner path is never empty")
    }

    /// Path with the traversal direction reversed.
    pub fn reversed(&self) -> Self {
        let mut corners = self.corners.clone();
        corners.reverse();
        Self { corners }
    }

    /// Cumulative arc length at each corner; last entry is the total length.
    pub fn cumulative_lengths(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.corners.len());
        out.push(0.0);
        for w in self.corners.windows(2) {
            acc += (w[1] - w[0]).norm();
            out.push(acc);
        }
        out
    }

    pub fn total_length(&self) -> f64 {
        *self.cumulative_lengths().last().unwrap()
    }

    /// Arc-length position of the point on the polyline nearest to `p`
    /// (smallest arc length wins on exact distance ties).
    pub fn project(&self, p: Vec2) -> f64 {
        let cum = self.cumulative_lengths();
        let mut best = (f64::INFINITY, 0.0);
        for (i, w) in self.corners.windows(2).enumerate() {
            let seg = w[1] - w[0];
            let len2 = seg.norm_squared();
            let t = if len2 > 0.0 {
                ((p - w[0]).dot(&seg) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = w[0] + seg * t;
            let d = (p - q).norm();
            if d < best.0 {
                best = (d, cum[i] + seg.norm() * t);
            }
        }
        best.1
    }

    /// Point at arc-length `s` along the path (clamped to the ends).
    pub fn point_at(&self, s: f64) -> Vec2 {
        let cum = self.cumulative_lengths();
        let total = *cum.last().unwrap();
        let s = s.clamp(0.0, total);
        for (i, w) in self.corners.windows(2).enumerate() {
            if s <= cum[i + 1] || i + 2 == self.corners.len() {
                let seg_len = cum[i + 1] - cum[i];
                let t = if seg_len > 0.0 { (s - cum[i]) / seg_len } else { 0.0 };
                return w[0] + (w[1] - w[0]) * t.clamp(0.0, 1.0);
            }
        }
        self.goal()
    }
}

/// Violated-invariant diagnostics for [`LabyrinthLayout::validate`].
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LayoutError {
    #[error("ball radius must be positive (got {0})")]
    BallRadius(f64),
    #[error("frame half-extents must be positive (got {0} x {1})")]
    Frame(f64, f64),
    #[error("wall {index}: half-extents must be positive")]
    WallExtent { index: usize },
    #[error("wall {index}: center outside the frame")]
    WallOutsideFrame { index: usize },
    #[error("hole {index}: radius must be positive (got {radius})")]
    HoleRadius { index: usize, radius: f64 },
    #[error("hole {index}: center outside the frame")]
    HoleOutsideFrame { index: usize },
    #[error("holes {a} and {b} share path_index {path_index}")]
    DuplicatePathIndex { a: usize, b: usize, path_index: usize },
    #[error("corner path needs at least 2 corners (got {0})")]
    PathTooShort(usize),
    #[error("corner path segment {index} is not axis-aligned")]
    PathNotPerpendicular { index: usize },
    #[error("corner {index} outside the frame")]
    CornerOutsideFrame { index: usize },
    #[error("corner {corner} too close to hole {hole}")]
    CornerInHole { corner: usize, hole: usize },
    #[error("corner {corner} inside inflated wall {wall}")]
    CornerInWall { corner: usize, wall: usize },
}

/// Immutable world description shared by the simulator and both MPC layers.
///
/// `x_frame` / `y_frame` are the half-extents of the region reachable by the
/// *ball center*; the physical wooden frame sits `r_ball` further out.
#[derive(Debug, Clone, PartialEq)]
pub struct LabyrinthLayout {
    pub walls: Vec<Wall>,
    pub holes: Vec<Hole>,
    pub x_frame: f64,
    pub y_frame: f64,
    pub corner_path: CornerPath,
    pub r_ball: f64,
}

impl LabyrinthLayout {
    /// Check every layout invariant; returns the first violation found.
    pub fn validate(&self) -> Result<(), LayoutError> {
        if !(self.r_ball > 0.0) {
            return Err(LayoutError::BallRadius(self.r_ball));
        }
        if !(self.x_frame > 0.0 && self.y_frame > 0.0) {
            return Err(LayoutError::Frame(self.x_frame, self.y_frame));
        }
        for (i, w) in self.walls.iter().enumerate() {
            if !(w.half_len_x > 0.0 && w.half_len_y > 0.0) {
                return Err(LayoutError::WallExtent { index: i });
            }
            if w.center.x.abs() > self.x_frame || w.center.y.abs() > self.y_frame {
                return Err(LayoutError::WallOutsideFrame { index: i });
            }
        }
        for (i, h) in self.holes.iter().enumerate() {
            if !(h.radius > 0.0) {
                return Err(LayoutError::HoleRadius {
                    index: i,
                    radius: h.radius,
                });
            }
            if h.center.x.abs() > self.x_frame || h.center.y.abs() > self.y_frame {
                return Err(LayoutError::HoleOutsideFrame { index: i });
            }
        }
        for (i, a) in self.holes.iter().enumerate() {
            for (j, b) in self.holes.iter().enumerate().skip(i + 1) {
                if let (Some(pa), Some(pb)) = (a.path_index, b.path_index) {
                    if pa == pb {
                        return Err(LayoutError::DuplicatePathIndex {
                            a: i,
                            b: j,
                            path_index: pa,
                        });
                    }
                }
            }
        }
        let corners = &self.corner_path.corners;
        if corners.len() < 2 {
            return Err(LayoutError::PathTooShort(corners.len()));
        }
        for (i, w) in corners.windows(2).enumerate() {
            let dx = (w[1].x - w[0].x).abs();
            let dy = (w[1].y - w[0].y).abs();
            let x_moves = dx > 0.0;
            let y_moves = dy > 0.0;
            if x_moves == y_moves {
                return Err(LayoutError::PathNotPerpendicular { index: i });
            }
        }
        for (ci, c) in corners.iter().enumerate() {
            if c.x.abs() > self.x_frame || c.y.abs() > self.y_frame {
                return Err(LayoutError::CornerOutsideFrame { index: ci });
            }
            for (hi, h) in self.holes.iter().enumerate() {
                if (c - h.center).norm() < h.radius + self.r_ball {
                    return Err(LayoutError::CornerInHole { corner: ci, hole: hi });
                }
            }
            for (wi, w) in self.walls.iter().enumerate() {
                if superellipse_value(*c, w, self.r_ball) < 1.0 {
                    return Err(LayoutError::CornerInWall { corner: ci, wall: wi });
                }
            }
        }
        Ok(())
    }
}
