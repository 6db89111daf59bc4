//! Seeded procedural solving traces.
//!
//! A silhouette is grown piece by piece: each new tan is rotated so one of
//! its edges lies flush against an edge of an already-placed tan, then its
//! centroid is snapped to the nearest grid point that keeps the overlap
//! under a quarter of the validation tolerance. Each puzzle name fixes one
//! silhouette; a trace picks a name, scatters the pieces and moves them, in
//! placement order, into that silhouette.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use thiserror::Error;

use super::polygon::{convex_intersection_area, Point};
use super::{
    overlap_tolerance, place, BoardState, SolveTrace, Tan, TanPose, Variant, BOARD_SIZE, ROTATION_STEPS,
    TAN_SET,
};
use crate::seeding::{self, Rng};

/// Names given to generated silhouettes; they key the word-embedding table.
pub const PUZZLE_NAMES: &[&str] = &[
    "bird", "cat", "swan", "rabbit", "fox", "horse", "fish", "boat", "sail boat", "house", "candle", "letter m",
    "runner", "dancer", "tree", "bridge", "rocket", "turtle", "camel", "goose", "dog", "kettle", "arrow", "crane",
];

#[derive(Debug, Error, PartialEq)]
pub enum GenerateError {
    #[error("n_steps must be at least 2, got {0}")]
    TooFewSteps(usize),
    #[error("variant {variant:?} traces have at most {max} steps, got {requested}")]
    TooManySteps { variant: Variant, max: usize, requested: usize },
    #[error("tan placement failed after {attempts} attempts (seed {seed})")]
    Placement { seed: u64, attempts: usize },
}

const MAX_FOOTPRINT: f64 = 64.0;
const SCATTER_MARGIN: f64 = 30.0;
const RESTARTS: usize = 20;

/// Builds a solving trace with `n_steps` snapshots.
///
/// Variant A snapshots come from the 8 states "0..=7 tans moved" with every
/// tan visible; variant B from the 7 states "1..=7 tans moved" showing only
/// moved tans. Snapshots are sampled evenly and always include the last
/// state, so variant B with `n_steps = 7` has exactly `k` tans at step `k`.
pub fn generate_trace(seed: u64, variant: Variant, n_steps: usize) -> Result<SolveTrace, GenerateError> {
    if n_steps < 2 {
        return Err(GenerateError::TooFewSteps(n_steps));
    }
    let available = match variant {
        Variant::A => 8,
        Variant::B => 7,
    };
    if n_steps > available {
        return Err(GenerateError::TooManySteps { variant, max: available, requested: n_steps });
    }
    let mut rng = seeding::rng(seed);
    let name = PUZZLE_NAMES[rng.random_range(0..PUZZLE_NAMES.len())].to_string();

    let (order, solution) = puzzle_solution(&name).ok_or(GenerateError::Placement { seed, attempts: RESTARTS })?;
    let scattered = (0..RESTARTS)
        .find_map(|_| scatter(&mut rng, &solution))
        .ok_or(GenerateError::Placement { seed, attempts: RESTARTS })?;

    let state_after = |moved: usize| {
        let mut poses = scattered;
        for &i in &order[..moved] {
            poses[i] = solution[i];
        }
        if variant == Variant::B {
            for (slot, pose) in poses.iter_mut().enumerate() {
                pose.placed = order[..moved].contains(&slot);
            }
        }
        BoardState { poses }
    };
    let first = if variant == Variant::A { 0 } else { 1 };
    let span = 7 - first;
    let steps = (0..n_steps)
        .map(|j| {
            let moved = first + ((j * span) as f64 / (n_steps - 1) as f64).round() as usize;
            state_after(moved)
        })
        .collect();
    Ok(SolveTrace { embedding_key: name.clone(), puzzle_name: name, variant, steps })
}

/// `count` traces alternating variants A and B, with lengths cycling
/// through every allowed value.
pub fn generate_corpus(count: usize, seed: u64) -> Result<Vec<SolveTrace>, GenerateError> {
    (0..count)
        .map(|i| {
            let (variant, n) = if i % 2 == 0 { (Variant::A, 2 + (i / 2) % 7) } else { (Variant::B, 2 + (i / 2) % 6) };
            generate_trace(seeding::derive(seed, i as u64), variant, n)
        })
        .collect()
}

/// The solved board of a named puzzle, every tan placed.
pub fn puzzle_solution_state(name: &str) -> Option<BoardState> {
    puzzle_solution(name).map(|(_, poses)| BoardState { poses })
}

/// The placement order and silhouette belonging to a puzzle name.
fn puzzle_solution(name: &str) -> Option<(Vec<usize>, [TanPose; 7])> {
    let mut rng = seeding::rng(seeding::derive(seeding::hash_str(name), 0x9a2));
    (0..RESTARTS).find_map(|_| grow_solution(&mut rng))
}

fn inside_board(poly: &[Point]) -> bool {
    let hi = f64::from(BOARD_SIZE - 1);
    poly.iter().all(|p| p.x >= 0.0 && p.y >= 0.0 && p.x <= hi && p.y <= hi)
}

fn fits(poly: &[Point], others: &[Vec<Point>]) -> bool {
    let tol = overlap_tolerance() / 4.0;
    inside_board(poly) && others.iter().all(|o| convex_intersection_area(poly, o) <= tol)
}

fn edge_angle(a: Point, b: Point) -> f64 {
    (b.y - a.y).atan2(b.x - a.x)
}

fn same_angle(a: f64, b: f64) -> bool {
    let d = (a - b).rem_euclid(2.0 * PI);
    d < 1e-6 || 2.0 * PI - d < 1e-6
}

/// Returns the placement order and final poses, or `None` when a piece
/// could not be attached.
fn grow_solution(rng: &mut Rng) -> Option<(Vec<usize>, [TanPose; 7])> {
    let mut order: Vec<usize> = (0..7).collect();
    order.shuffle(rng);
    let center = BOARD_SIZE / 2;
    let mut poses = [TanPose::new(center, center, 0, false); 7];
    let mut placed: Vec<Vec<Point>> = Vec::with_capacity(7);

    let first = order[0];
    poses[first] = TanPose::new(center, center, rng.random_range(0..ROTATION_STEPS), rng.random_bool(0.5));
    placed.push(place(&Tan::of(TAN_SET[first]), poses[first].rot, poses[first].flip, pt(center, center)));

    for &slot in &order[1..] {
        let tan = Tan::of(TAN_SET[slot]);
        let pose = (0..200).find_map(|_| attach(rng, &tan, &placed))?;
        placed.push(place(&tan, pose.rot, pose.flip, pt(pose.x, pose.y)));
        poses[slot] = pose;
    }
    Some((order, poses))
}

fn pt(x: i32, y: i32) -> Point {
    Point::new(f64::from(x), f64::from(y))
}

fn attach(rng: &mut Rng, tan: &Tan, placed: &[Vec<Point>]) -> Option<TanPose> {
    let target = &placed[rng.random_range(0..placed.len())];
    let i = rng.random_range(0..target.len());
    let (a, b) = (target[i], target[(i + 1) % target.len()]);
    let want = edge_angle(a, b) + PI;
    let flip = rng.random_bool(0.5);

    // Candidate centres that put a piece edge flush against a -> b.
    let mut candidates: Vec<(i32, Point)> = Vec::new();
    for rot in 0..ROTATION_STEPS {
        let local = place(tan, rot, flip, Point::default());
        for j in 0..local.len() {
            let (c, d) = (local[j], local[(j + 1) % local.len()]);
            if !same_angle(edge_angle(c, d), want) {
                continue;
            }
            let mid_ab = (a + b) * 0.5;
            let mid_cd = (c + d) * 0.5;
            for shift in [b - c, a - d, mid_ab - mid_cd] {
                candidates.push((rot, shift));
            }
        }
    }
    if candidates.is_empty() {
        return None;
    }
    let (rot, ideal) = candidates[rng.random_range(0..candidates.len())];

    let mut grid: Vec<(f64, i32, i32)> = Vec::new();
    let (bx, by) = (ideal.x.floor() as i32, ideal.y.floor() as i32);
    for dx in -1..=2 {
        for dy in -1..=2 {
            let (x, y) = (bx + dx, by + dy);
            grid.push((pt(x, y).dist(ideal), x, y));
        }
    }
    grid.sort_by(|p, q| p.0.total_cmp(&q.0));
    for (dist, x, y) in grid {
        if dist > 1.5 {
            break;
        }
        let poly = place(tan, rot, flip, pt(x, y));
        if !fits(&poly, placed) {
            continue;
        }
        let mut all: Vec<&Point> = placed.iter().flatten().collect();
        all.extend(poly.iter());
        let bb = crate::bitmap::WorldBox::bounding(all.into_iter())?;
        if bb.width().max(bb.height()) > MAX_FOOTPRINT {
            continue;
        }
        return Some(TanPose::new(x, y, rot, flip));
    }
    None
}

/// Scattered starting poses around the silhouette, clear of it and of each other.
fn scatter(rng: &mut Rng, solution: &[TanPose; 7]) -> Option<[TanPose; 7]> {
    let mut blocked: Vec<Vec<Point>> = solution
        .iter()
        .zip(TAN_SET)
        .map(|(p, k)| place(&Tan::of(k), p.rot, p.flip, pt(p.x, p.y)))
        .collect();
    let bb = crate::bitmap::WorldBox::bounding(blocked.iter().flatten())?.expanded(SCATTER_MARGIN);
    let lo_x = bb.x0.max(0.0) as i32;
    let hi_x = bb.x1.min(f64::from(BOARD_SIZE - 1)) as i32;
    let lo_y = bb.y0.max(0.0) as i32;
    let hi_y = bb.y1.min(f64::from(BOARD_SIZE - 1)) as i32;
    let mut out = *solution;
    for (slot, kind) in TAN_SET.iter().enumerate() {
        let tan = Tan::of(*kind);
        let pose = (0..500).find_map(|_| {
            let pose = TanPose::new(
                rng.random_range(lo_x..=hi_x),
                rng.random_range(lo_y..=hi_y),
                rng.random_range(0..ROTATION_STEPS),
                rng.random_bool(0.5),
            );
            let poly = place(&tan, pose.rot, pose.flip, pt(pose.x, pose.y));
            fits(&poly, &blocked).then_some((pose, poly))
        })?;
        blocked.push(pose.1);
        out[slot] = pose.0;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::validate_trace;

    #[test]
    fn variant_b_reveals_one_tan_per_step() {
        for seed in 0..10 {
            let t = generate_trace(seed, Variant::B, 7).unwrap();
            assert_eq!(t.steps.len(), 7);
            for (k, s) in t.steps.iter().enumerate() {
                assert_eq!(s.placed_count(), k + 1);
            }
        }
    }

    #[test]
    fn variant_a_keeps_all_tans_visible() {
        let t = generate_trace(4, Variant::A, 8).unwrap();
        assert!(t.steps.iter().all(|s| s.placed_count() == 7));
        assert_ne!(t.steps[0], t.steps[7]);
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate_trace(99, Variant::A, 5).unwrap(), generate_trace(99, Variant::A, 5).unwrap());
        assert_ne!(generate_trace(99, Variant::A, 5).unwrap(), generate_trace(100, Variant::A, 5).unwrap());
    }

    #[test]
    fn step_count_bounds() {
        assert_eq!(generate_trace(0, Variant::A, 1), Err(GenerateError::TooFewSteps(1)));
        assert!(matches!(generate_trace(0, Variant::B, 8), Err(GenerateError::TooManySteps { .. })));
    }

    #[test]
    fn generated_traces_validate() {
        for seed in 0..40 {
            for (variant, n) in [(Variant::A, 8), (Variant::B, 7), (Variant::A, 3)] {
                let t = generate_trace(seed, variant, n).unwrap();
                let report = validate_trace(&t, &Default::default());
                assert!(report.is_valid(), "seed {seed}: {report:?}");
            }
        }
    }
}
