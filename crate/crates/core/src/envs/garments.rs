use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{EnvError, ExpertTrajectory};
use crate::bitmap::{self, BinaryImage, FoldAxis, FoldDirection, Orientation, WorldBox};
use crate::geometry::Point;
use crate::nn::INPUT_SIDE;
use crate::seeding::{self, Rng};

/// Garments live in `[0, 28]^2`, mirror-symmetric about `x = 13`, which is
/// the pixel boundary of the middle vertical fold axis.
pub const GARMENT_WORLD: WorldBox = WorldBox { x0: 0.0, y0: 0.0, x1: 28.0, y1: 28.0 };
const AXIS_X: f64 = 13.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GarmentCategory {
    Dress,
    LongShirt,
    TShirt,
    Trousers,
    ShortPants,
    Skirt,
    Vest,
}

impl GarmentCategory {
    pub const TRAINING: [GarmentCategory; 6] = [
        GarmentCategory::Dress,
        GarmentCategory::LongShirt,
        GarmentCategory::TShirt,
        GarmentCategory::Trousers,
        GarmentCategory::ShortPants,
        GarmentCategory::Skirt,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            GarmentCategory::Dress => "dress",
            GarmentCategory::LongShirt => "long shirt",
            GarmentCategory::TShirt => "t-shirt",
            GarmentCategory::Trousers => "trousers",
            GarmentCategory::ShortPants => "short pants",
            GarmentCategory::Skirt => "skirt",
            GarmentCategory::Vest => "vest",
        }
    }

    /// Scripted folds: orientation, direction, and where the fold should
    /// fall as a fraction of the current silhouette extent.
    fn script(&self) -> &'static [(Orientation, FoldDirection, f64)] {
        use FoldDirection::*;
        use Orientation::*;
        match self {
            GarmentCategory::TShirt => &[(Vertical, LowOntoHigh, 0.3), (Vertical, HighOntoLow, 0.55), (Horizontal, HighOntoLow, 0.5)],
            GarmentCategory::LongShirt => &[
                (Vertical, LowOntoHigh, 0.3),
                (Vertical, HighOntoLow, 0.55),
                (Horizontal, HighOntoLow, 0.5),
                (Horizontal, HighOntoLow, 0.5),
            ],
            GarmentCategory::Dress | GarmentCategory::Trousers | GarmentCategory::Vest => {
                &[(Vertical, LowOntoHigh, 0.5), (Horizontal, HighOntoLow, 0.5), (Horizontal, HighOntoLow, 0.5)]
            }
            GarmentCategory::ShortPants | GarmentCategory::Skirt => {
                &[(Vertical, LowOntoHigh, 0.5), (Horizontal, HighOntoLow, 0.5)]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Garment {
    pub name: String,
    pub category: GarmentCategory,
    pub silhouette: Vec<Point>,
}

impl Garment {
    pub fn render(&self) -> BinaryImage {
        bitmap::rasterize(&[self.silhouette.clone()], INPUT_SIDE, INPUT_SIDE, GARMENT_WORLD)
            .expect("garment world box is valid")
    }
}

/// Mirrors a right-half outline (`dx >= 0`, top to bottom) about the axis.
fn mirrored(half: &[(f64, f64)]) -> Vec<Point> {
    let mut poly: Vec<Point> = half.iter().map(|&(dx, y)| Point::new(AXIS_X + dx, y)).collect();
    poly.extend(half.iter().rev().filter(|(dx, _)| *dx > 0.0).map(|&(dx, y)| Point::new(AXIS_X - dx, y)));
    poly
}

fn outline(category: GarmentCategory, rng: &mut Rng) -> Vec<(f64, f64)> {
    let mut u = |a: f64, b: f64| rng.random_range(a..b);
    match category {
        GarmentCategory::TShirt => {
            let top = u(23.0, 25.5);
            let (neck, shoulder, sleeve, bottom) = (u(2.0, 3.0), u(5.0, 6.5), u(9.5, 11.5), u(4.0, 7.0));
            vec![
                (0.0, top - 1.5),
                (neck, top),
                (shoulder, top),
                (sleeve, top - 2.0),
                (sleeve - 1.5, top - 6.0),
                (shoulder, top - 5.0),
                (shoulder, bottom),
                (0.0, bottom),
            ]
        }
        GarmentCategory::LongShirt => {
            let top = u(24.0, 26.0);
            let (neck, shoulder, cuff, bottom) = (u(2.0, 3.0), u(5.0, 6.0), u(10.5, 12.0), u(2.0, 4.5));
            vec![
                (0.0, top - 1.5),
                (neck, top),
                (shoulder, top),
                (shoulder + 2.0, top - 1.0),
                (cuff, bottom + 3.0),
                (cuff - 2.5, bottom + 2.0),
                (shoulder, top - 7.0),
                (shoulder, bottom),
                (0.0, bottom),
            ]
        }
        GarmentCategory::Dress => {
            let top = u(24.0, 26.0);
            let (neck, strap, hem, bottom) = (u(1.5, 2.5), u(3.5, 4.5), u(8.5, 11.5), u(2.0, 4.0));
            vec![(0.0, top - 2.0), (neck, top), (strap, top), (strap, top - 5.0), (hem, bottom), (0.0, bottom)]
        }
        GarmentCategory::Trousers => {
            let top = u(24.0, 26.0);
            let (waist, hem, gap, bottom) = (u(5.0, 6.5), u(5.5, 7.5), u(0.8, 1.6), u(1.5, 3.0));
            vec![(0.0, top), (waist, top), (hem, bottom), (gap, bottom), (0.0, top - u(6.0, 8.0))]
        }
        GarmentCategory::ShortPants => {
            let top = u(20.0, 23.0);
            let (waist, hem, gap) = (u(5.0, 6.5), u(6.5, 8.5), u(0.8, 1.6));
            let bottom = top - u(9.0, 12.0);
            vec![(0.0, top), (waist, top), (hem, bottom), (gap, bottom), (0.0, top - u(5.0, 6.5))]
        }
        GarmentCategory::Skirt => {
            let top = u(20.0, 23.0);
            let (waist, hem) = (u(4.0, 5.5), u(7.5, 10.5));
            vec![(0.0, top), (waist, top), (hem, top - u(10.0, 14.0)), (0.0, top - u(10.0, 14.0))]
        }
        GarmentCategory::Vest => {
            let top = u(23.0, 25.5);
            let (strap, body, bottom) = (u(3.0, 4.0), u(6.0, 7.5), u(4.0, 7.0));
            vec![
                (0.0, top - u(3.5, 5.0)),
                (strap - 1.5, top),
                (strap, top),
                (strap + 0.5, top - 4.0),
                (body, top - 7.0),
                (body, bottom),
                (0.0, bottom),
            ]
        }
    }
}

fn make(category: GarmentCategory, index: usize, rng: &mut Rng) -> Garment {
    let half = outline(category, rng);
    Garment {
        name: format!("{}-{}", category.label().replace(' ', "-"), index),
        category,
        silhouette: mirrored(&half),
    }
}

/// 18 training garments (three per category) and 9 test garments: one more
/// per training category plus three vests.
pub fn generate_garments(seed: u64) -> (Vec<Garment>, Vec<Garment>) {
    let mut rng = seeding::rng(seeding::derive(seed, 0x6a7));
    let mut train = Vec::with_capacity(18);
    for cat in GarmentCategory::TRAINING {
        for i in 0..3 {
            train.push(make(cat, i, &mut rng));
        }
    }
    let mut test = Vec::with_capacity(9);
    for cat in GarmentCategory::TRAINING {
        test.push(make(cat, 3, &mut rng));
    }
    for i in 0..3 {
        test.push(make(GarmentCategory::Vest, i, &mut rng));
    }
    (train, test)
}

/// `(lo, hi)` index range of set pixels along the fold's reflected axis.
fn extent(img: &BinaryImage, orientation: Orientation) -> Option<(usize, usize)> {
    let mut range: Option<(usize, usize)> = None;
    for r in 0..img.height() {
        for c in 0..img.width() {
            if img.get(r, c) {
                let i = if orientation == Orientation::Vertical { c } else { r };
                range = Some(range.map_or((i, i), |(lo, hi)| (lo.min(i), hi.max(i))));
            }
        }
    }
    range
}

/// Runs the category's fold script, placing each fold at the legal,
/// state-changing boundary closest to its target fraction.
pub fn expert_fold_trajectory(garment: &Garment) -> Result<ExpertTrajectory, EnvError> {
    let fail = |reason: String| EnvError::Script { name: garment.name.clone(), reason };
    let mut state = garment.render();
    if state.is_empty() {
        return Err(fail("silhouette rasterizes empty".into()));
    }
    let mut frames = vec![state.clone()];
    for (step, &(orientation, direction, frac)) in garment.category.script().iter().enumerate() {
        let (lo, hi) = extent(&state, orientation).ok_or_else(|| fail("state became empty".into()))?;
        let target = lo as f64 + frac * (hi + 1 - lo) as f64;
        let mut best: Option<(f64, BinaryImage)> = None;
        for k in 1..=10u8 {
            let axis = FoldAxis::new(orientation, k, direction)?;
            let Ok(next) = bitmap::fold(&state, axis) else { continue };
            if next == state {
                continue;
            }
            let d = (axis.boundary(state.height(), state.width()) as f64 - target).abs();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, next));
            }
        }
        let (_, next) = best.ok_or_else(|| fail(format!("no legal fold for scripted step {step}")))?;
        state = next;
        frames.push(state.clone());
    }
    Ok(ExpertTrajectory { name: garment.name.clone(), frames })
}
