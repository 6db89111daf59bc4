//! The seven tans, their poses on the 100x100 board, and solving traces.
//!
//! Canonical pieces live in "tan units" where a small triangle's leg is 1.
//! A pose places a piece's centroid on an integer board point after an
//! optional mirror (x -> -x about the centroid) and a rotation by
//! `rot * 15` degrees about the centroid; the board scale is
//! [`GRID_PER_UNIT`] grid units per tan unit.

mod generate;
pub mod polygon;
mod validate;

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitmap::{self, BinaryImage, BitmapError, WorldBox};

pub use generate::{generate_corpus, generate_trace, puzzle_solution_state, GenerateError, PUZZLE_NAMES};
pub use polygon::Point;
pub use validate::{validate_trace, ValidateOptions, ValidationReport, Violation, ViolationKind};

/// Board side in grid points; coordinates are in `[0, BOARD_SIZE)`.
pub const BOARD_SIZE: i32 = 100;
/// Rotation steps per full turn (15 degrees each).
pub const ROTATION_STEPS: i32 = 24;
/// Grid units per tan unit. Chosen so that the square dissection has
/// integer centroids: its side is 24 grid units.
pub const GRID_PER_UNIT: f64 = 6.0 * SQRT_2;
/// Area of the assembled square in tan units.
pub const SQUARE_AREA: f64 = 8.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("pose field {field} = {value} is out of range")]
    OutOfRange { field: &'static str, value: i32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TanKind {
    LargeTriangle,
    MediumTriangle,
    SmallTriangle,
    Square,
    Parallelogram,
}

/// Piece order used by every board state: two large triangles, the medium
/// triangle, two small triangles, the square, the parallelogram.
pub const TAN_SET: [TanKind; 7] = [
    TanKind::LargeTriangle,
    TanKind::LargeTriangle,
    TanKind::MediumTriangle,
    TanKind::SmallTriangle,
    TanKind::SmallTriangle,
    TanKind::Square,
    TanKind::Parallelogram,
];

#[derive(Clone, Debug, PartialEq)]
pub struct Tan {
    pub kind: TanKind,
    /// Counter-clockwise vertices in tan units. Triangles have their right
    /// angle at the origin with legs along +x and +y.
    pub polygon: Vec<Point>,
}

impl Tan {
    pub fn of(kind: TanKind) -> Self {
        let p = Point::new;
        let polygon = match kind {
            TanKind::LargeTriangle => vec![p(0.0, 0.0), p(2.0, 0.0), p(0.0, 2.0)],
            TanKind::MediumTriangle => vec![p(0.0, 0.0), p(SQRT_2, 0.0), p(0.0, SQRT_2)],
            TanKind::SmallTriangle => vec![p(0.0, 0.0), p(1.0, 0.0), p(0.0, 1.0)],
            TanKind::Square => vec![p(0.0, 0.0), p(1.0, 0.0), p(1.0, 1.0), p(0.0, 1.0)],
            TanKind::Parallelogram => vec![
                p(0.0, 0.0),
                p(SQRT_2, 0.0),
                p(SQRT_2 + FRAC_1_SQRT_2, FRAC_1_SQRT_2),
                p(FRAC_1_SQRT_2, FRAC_1_SQRT_2),
            ],
        };
        Self { kind, polygon }
    }

    pub fn area(&self) -> f64 {
        polygon::area(&self.polygon)
    }

    pub fn centroid(&self) -> Point {
        polygon::centroid(&self.polygon)
    }
}

/// The seven canonical pieces in [`TAN_SET`] order.
pub fn canonical_tans() -> Vec<Tan> {
    TAN_SET.iter().map(|&k| Tan::of(k)).collect()
}

/// Smallest piece area in board units (a small triangle).
pub fn smallest_piece_area() -> f64 {
    Tan::of(TanKind::SmallTriangle).area() * GRID_PER_UNIT * GRID_PER_UNIT
}

/// Pairwise overlap allowed between placed pieces: 1% of the smallest piece.
pub fn overlap_tolerance() -> f64 {
    0.01 * smallest_piece_area()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TanPose {
    pub x: i32,
    pub y: i32,
    pub rot: i32,
    pub flip: bool,
    #[serde(default = "default_placed")]
    pub placed: bool,
}

fn default_placed() -> bool {
    true
}

impl TanPose {
    pub fn new(x: i32, y: i32, rot: i32, flip: bool) -> Self {
        Self { x, y, rot, flip, placed: true }
    }

    pub fn check(&self) -> Result<(), GeometryError> {
        let in_board = |v: i32| (0..BOARD_SIZE).contains(&v);
        if !in_board(self.x) {
            return Err(GeometryError::OutOfRange { field: "x", value: self.x });
        }
        if !in_board(self.y) {
            return Err(GeometryError::OutOfRange { field: "y", value: self.y });
        }
        if !(0..ROTATION_STEPS).contains(&self.rot) {
            return Err(GeometryError::OutOfRange { field: "rot", value: self.rot });
        }
        Ok(())
    }
}

/// Places `tan` on the board: mirror, rotate about the centroid, scale to
/// grid units and move the centroid to `(pose.x, pose.y)`.
pub fn apply_pose(tan: &Tan, pose: &TanPose) -> Result<Vec<Point>, GeometryError> {
    pose.check()?;
    Ok(place(tan, pose.rot, pose.flip, Point::new(f64::from(pose.x), f64::from(pose.y))))
}

/// Unchecked placement at an arbitrary (possibly fractional) centre.
pub(crate) fn place(tan: &Tan, rot: i32, flip: bool, center: Point) -> Vec<Point> {
    let c = tan.centroid();
    let angle = f64::from(rot.rem_euclid(ROTATION_STEPS)) * PI / 12.0;
    let mut out: Vec<Point> = tan
        .polygon
        .iter()
        .map(|&v| {
            let mut local = v - c;
            if flip {
                local.x = -local.x;
            }
            local.rotated(angle) * GRID_PER_UNIT + center
        })
        .collect();
    if flip {
        out.reverse();
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoardState {
    pub poses: [TanPose; 7],
}

impl BoardState {
    /// Board polygons of the placed pieces, skipping poses that fail range checks.
    pub fn placed_polygons(&self) -> Vec<Vec<Point>> {
        self.poses
            .iter()
            .zip(TAN_SET)
            .filter(|(p, _)| p.placed)
            .filter_map(|(p, k)| apply_pose(&Tan::of(k), p).ok())
            .collect()
    }

    pub fn placed_count(&self) -> usize {
        self.poses.iter().filter(|p| p.placed).count()
    }
}

/// The classic square dissection, centred on the board.
///
/// In units of 6 grid points the square spans `[0, 4]^2`: large triangles
/// on the bottom and left, the medium triangle in the top-right corner, the
/// square diamond at `(3, 2)`, small triangles at `(11/3, 1)` and
/// `(2, 8/3)`, the parallelogram along the top-left edge.
pub fn canonical_square_config() -> BoardState {
    const OFFSET: i32 = 38;
    let pose = |x: i32, y: i32, rot: i32, flip: bool| TanPose::new(OFFSET + x, OFFSET + y, rot, flip);
    BoardState {
        poses: [
            pose(12, 4, 15, false),
            pose(4, 12, 9, false),
            pose(20, 20, 12, false),
            pose(22, 6, 21, false),
            pose(12, 16, 3, false),
            pose(18, 12, 3, false),
            pose(9, 21, 0, true),
        ],
    }
}

/// Square board region covered by the canonical square config.
pub fn canonical_square_box() -> WorldBox {
    WorldBox::new(38.0, 38.0, 62.0, 62.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Every tan is visible throughout; scattered pieces move into place.
    A,
    /// Only tans already moved into place are visible.
    B,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub puzzle_name: String,
    pub variant: Variant,
    pub steps: Vec<BoardState>,
    pub embedding_key: String,
}

impl SolveTrace {
    /// A square world box around every placed piece of every step, with a
    /// 5% margin. All frames of a trace share it.
    pub fn world_box(&self) -> WorldBox {
        let polys: Vec<Vec<Point>> = self.steps.iter().flat_map(|s| s.placed_polygons()).collect();
        match WorldBox::bounding(polys.iter().flatten()) {
            Some(b) => {
                let sq = b.squared();
                sq.expanded(0.05 * sq.width().max(1.0))
            }
            None => WorldBox::new(0.0, 0.0, f64::from(BOARD_SIZE), f64::from(BOARD_SIZE)),
        }
    }

    /// Rasterizes every step into a `side x side` image.
    pub fn render(&self, side: usize) -> Result<Vec<BinaryImage>, BitmapError> {
        let world = self.world_box();
        self.steps
            .iter()
            .map(|s| bitmap::rasterize(&s.placed_polygons(), side, side, world))
            .collect()
    }
}
