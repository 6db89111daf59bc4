//! Property tests for the invariants each module promises.

use proptest::prelude::*;

use tangram_core::bitmap::{self, BinaryImage, FoldAxis, FoldDirection, Orientation, WorldBox};
use tangram_core::envs::{self, Env, FoldEnv, RoomEnv};
use tangram_core::geometry::polygon::{area, Point};
use tangram_core::geometry::{
    apply_pose, generate_trace, overlap_tolerance, validate_trace, Tan, TanPose, ValidateOptions, Variant, BOARD_SIZE,
    TAN_SET,
};
use tangram_core::irl::precision_at_k;
use tangram_core::nn::{Adam, Backbone, Parameterized, Tensor};
use tangram_core::pretrain::{ccl, ccl_minimum, pml};

fn variant() -> impl Strategy<Value = Variant> {
    prop_oneof![Just(Variant::A), Just(Variant::B)]
}

fn trace_args() -> impl Strategy<Value = (u64, Variant, usize)> {
    (any::<u64>(), variant()).prop_flat_map(|(seed, v)| {
        let max: usize = if v == Variant::A { 8 } else { 7 };
        (Just(seed), Just(v), 2usize..=max)
    })
}

fn image(h: usize, w: usize) -> impl Strategy<Value = BinaryImage> {
    proptest::collection::vec(any::<bool>(), h * w).prop_map(move |bits| BinaryImage::from_bits(h, w, bits).unwrap())
}

fn axis() -> impl Strategy<Value = FoldAxis> {
    (0..FoldAxis::COUNT).prop_map(|i| FoldAxis::from_index(i).unwrap())
}

/// Pixel-centre test against a convex polygon of either orientation.
fn inside_convex(poly: &[Point], x: f64, y: f64) -> bool {
    let mut sign = 0.0;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let cross = (b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x);
        if cross != 0.0 {
            if sign * cross < 0.0 {
                return false;
            }
            sign = cross;
        }
    }
    true
}

/// Area covered by two or more polygons, sampled at 512x512 pixel centres
/// over the board.
fn raster_overlap(polys: &[Vec<Point>]) -> f64 {
    const SIDE: usize = 512;
    let cell = f64::from(BOARD_SIZE) / SIDE as f64;
    let mut hits = vec![0u8; SIDE * SIDE];
    for poly in polys {
        let (x0, x1) = poly.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.x), hi.max(p.x)));
        let (y0, y1) = poly.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.y), hi.max(p.y)));
        let range = |lo: f64, hi: f64| {
            let a = ((lo / cell).floor().max(0.0)) as usize;
            let b = ((hi / cell).ceil() as usize).min(SIDE);
            a..b
        };
        for r in range(y0, y1) {
            for c in range(x0, x1) {
                if inside_convex(poly, (c as f64 + 0.5) * cell, (r as f64 + 0.5) * cell) {
                    hits[r * SIDE + c] += 1;
                }
            }
        }
    }
    hits.iter().filter(|&&h| h >= 2).count() as f64 * cell * cell
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn apply_pose_preserves_area(kind in 0..7usize, x in 0..BOARD_SIZE, y in 0..BOARD_SIZE, rot in 0..24i32, flip: bool) {
        let tan = Tan::of(TAN_SET[kind]);
        let a = apply_pose(&tan, &TanPose::new(x, y, rot, flip)).unwrap();
        let at_origin = apply_pose(&tan, &TanPose::new(0, 0, 0, false)).unwrap();
        prop_assert!((area(&a) - area(&at_origin)).abs() < 1e-9);
    }

    #[test]
    fn generation_is_pure_and_validates((seed, v, n) in trace_args()) {
        let t = generate_trace(seed, v, n).unwrap();
        prop_assert_eq!(&t, &generate_trace(seed, v, n).unwrap());
        prop_assert_eq!(t.steps.len(), n);
        let report = validate_trace(&t, &ValidateOptions::default());
        prop_assert!(report.is_valid(), "{:?}", report.violations);
    }

    #[test]
    fn fold_empties_the_moving_side(img in image(28, 28), a in axis()) {
        if let Ok(out) = bitmap::fold(&img, a) {
            let b = a.boundary(28, 28);
            for r in 0..28 {
                for c in 0..28 {
                    let i = if a.orientation == Orientation::Vertical { c } else { r };
                    let moving = match a.direction {
                        FoldDirection::HighOntoLow => i >= b,
                        FoldDirection::LowOntoHigh => i < b,
                    };
                    prop_assert!(!(moving && out.get(r, c)));
                }
            }
        }
    }

    #[test]
    fn fold_is_idempotent(img in image(28, 28), a in axis()) {
        if let Ok(once) = bitmap::fold(&img, a) {
            if let Ok(twice) = bitmap::fold(&once, a) {
                prop_assert_eq!(twice, once);
            }
        }
    }

    #[test]
    fn rasterize_shifts_with_translation(
        pts in proptest::collection::vec((4.0..20.0f64, 4.0..20.0f64), 3..7),
    ) {
        let poly: Vec<Point> = pts.iter().map(|&(x, y)| Point::new(x, y)).collect();
        let world = WorldBox::new(0.0, 0.0, 28.0, 28.0);
        let shifted: Vec<Point> = poly.iter().map(|p| Point::new(p.x + 1.0, p.y)).collect();
        let a = bitmap::rasterize(&[poly], 28, 28, world).unwrap();
        let b = bitmap::rasterize(&[shifted], 28, 28, world).unwrap();
        for r in 0..28 {
            for c in 1..27 {
                prop_assert_eq!(a.get(r, c - 1), b.get(r, c));
            }
        }
    }

    #[test]
    fn ccl_never_below_minimum(scores in proptest::collection::vec(-2.0..3.0f64, 1..12)) {
        prop_assert!(ccl(&scores).unwrap() >= ccl_minimum(scores.len()) - 1e-12);
    }

    #[test]
    fn pml_nonnegative_and_zero_only_on_equality(
        a in proptest::collection::vec(-1.0..1.0f64, 50),
        b in proptest::collection::vec(-1.0..1.0f64, 50),
    ) {
        let d = pml(&a, &b).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d == 0.0, a == b);
        prop_assert_eq!(pml(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn precision_bounds_and_perfect_order(scores in proptest::collection::vec(-1.0..1.0f64, 3..15), k in 1..=3usize) {
        let p = precision_at_k(&scores, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assert_eq!(precision_at_k(&sorted, k).unwrap(), 1.0);
        let cubed: Vec<f64> = scores.iter().map(|x| x * x * x + 3.0 * x).collect();
        prop_assert_eq!(precision_at_k(&cubed, k).unwrap(), p);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generated_traces_overlap_below_tolerance((seed, v, n) in trace_args()) {
        let t = generate_trace(seed, v, n).unwrap();
        for (i, step) in t.steps.iter().enumerate() {
            let overlap = raster_overlap(&step.placed_polygons());
            prop_assert!(overlap < overlap_tolerance(), "step {i}: {overlap} >= {}", overlap_tolerance());
        }
    }

    #[test]
    fn garment_experts_shrink_and_change(seed in 0..1000u64) {
        let (train, test) = envs::generate_garments(seed);
        for g in train.iter().chain(&test) {
            let t = envs::expert_fold_trajectory(g).unwrap();
            for w in t.frames.windows(2) {
                prop_assert_ne!(&w[0], &w[1]);
            }
            prop_assert!(t.frames.last().unwrap().count_ones() <= t.frames[0].count_ones());
        }
    }

    #[test]
    fn room_experts_end_tidy(seed in 0..1000u64, steps in 1..12usize) {
        let (train, _) = envs::generate_rooms(seed);
        let tidy = train[0].scenes.last().unwrap();
        let demo = envs::perturb_room(tidy, steps, seed);
        prop_assert_eq!(demo.scenes.last().unwrap(), tidy);
        for w in demo.trajectory.frames.windows(2) {
            prop_assert_ne!(&w[0], &w[1]);
        }
    }

    #[test]
    fn stepping_is_deterministic(seed in 0..1000u64, action in 0..FoldAxis::COUNT) {
        let (train, _) = envs::generate_garments(seed);
        let img = train[0].render();
        prop_assert_eq!(FoldEnv.step(&img, action), FoldEnv.step(&img, action));
        let (rooms, _) = envs::generate_rooms(seed);
        let scene = &rooms[0].scenes[0];
        let a = action % RoomEnv.num_actions(scene);
        prop_assert_eq!(RoomEnv.step(scene, a), RoomEnv.step(scene, a));
    }

    #[test]
    fn forward_is_pure_and_param_count_stable(seed in 0..1000u64, steps in 1..4usize) {
        let (train, _) = envs::generate_garments(seed);
        let img = train[0].render();
        let mut bb = Backbone::new(seed);
        let first = bb.features(&[&img]).unwrap();
        prop_assert_eq!(&first, &bb.features(&[&img]).unwrap());
        let count = |b: &Backbone| b.named_params().iter().map(|(_, t)| t.numel()).sum::<usize>();
        let mut opt = Adam::new(0.01);
        for _ in 0..steps {
            let grads: Vec<Tensor> = bb.named_params().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
            let mut params: Vec<&mut Tensor> = bb.named_params_mut().into_iter().map(|(_, t)| t).collect();
            opt.step(&mut params, &grads);
        }
        prop_assert_eq!(count(&bb), 111_424);
    }
}

#[test]
fn raster_oracle_measures_overlap() {
    let tan = Tan::of(TAN_SET[0]);
    let a = apply_pose(&tan, &TanPose::new(50, 50, 0, false)).unwrap();
    let full = raster_overlap(&[a.clone(), a.clone()]);
    assert!((full - area(&a)).abs() < 0.02 * area(&a), "{full} vs {}", area(&a));
    let far = apply_pose(&tan, &TanPose::new(10, 10, 0, false)).unwrap();
    assert_eq!(raster_overlap(&[a, far]), 0.0);
}
