//! Shared oracles for the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tangram_core::nn::{Graph, NodeId, Tensor};

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-3;
/// Step for cases that run through the whole backbone: with tens of
/// thousands of ReLU and max-pool units, a window of 1e-4 regularly
/// straddles a kink, while the estimates settle well before 1e-6.
pub const COMPOSITE_FD_STEP: f64 = 1e-6;

pub type Build = Box<dyn Fn(&mut Graph, &[NodeId]) -> NodeId>;

/// One differentiable function of parameter tensors, reduced to a scalar.
pub struct GradCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub build: Build,
    /// Check at most this many coordinates per input (sampled), or all.
    pub max_coords: Option<usize>,
    pub step: f64,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Entries bounded away from zero so ReLU kinks are never straddled.
pub fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Distinct values spaced 0.01 apart so max-pool ties are never straddled.
pub fn distinct(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - n as f64 * 0.005).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(shape.to_vec(), vals).unwrap()
}

fn evaluate(case: &GradCase, inputs: &[Tensor]) -> f64 {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t)).collect();
    let out = (case.build)(&mut g, &ids);
    g.value(out).item()
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Default)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Sampled coordinates rejected because the difference window straddles
    /// a ReLU or max-pool kink.
    pub kinks: usize,
}

/// Function values with coordinate `i` of input `k` moved by `+h` and `-h`.
fn shifted(case: &GradCase, k: usize, i: usize, h: f64) -> (f64, f64) {
    let mut plus = case.inputs.clone();
    plus[k].data_mut()[i] += h;
    let mut minus = case.inputs.clone();
    minus[k].data_mut()[i] -= h;
    (evaluate(case, &plus), evaluate(case, &minus))
}

/// Relative difference; `floor` keeps coordinates that are negligible next
/// to the rest of their tensor from being judged on round-off.
fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares analytic gradients with central differences at the case's step.
///
/// Exhaustive cases check every coordinate. Sampled cases draw coordinates
/// until `max_coords` smooth ones were checked. A coordinate whose forward
/// and backward one-sided slopes disagree by more than half the tolerance
/// has a kink inside the window (a single kink moves the central estimate
/// by at most half that gap) and is redrawn.
pub fn fd_check(case: &GradCase, rng: &mut ChaCha8Rng) -> FdReport {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = case.inputs.iter().map(|t| g.param(t)).collect();
    let out = (case.build)(&mut g, &ids);
    let base = g.value(out).item();
    let grads = g.backward(out).expect("scalar loss");
    let mut report = FdReport::default();
    let h = case.step;
    for (k, (id, input)) in ids.iter().zip(&case.inputs).enumerate() {
        let analytic = grads.get_or_zeros(*id, input.shape());
        let floor = analytic.data().iter().fold(1e-6_f64, |m, v| m.max(1e-4 * v.abs()));
        let mut kinks = 0;
        match case.max_coords {
            Some(m) if m < input.numel() => {
                let mut done = 0;
                while done < m && kinks < 50 * m {
                    let i = rng.random_range(0..input.numel());
                    let (plus, minus) = shifted(case, k, i, h);
                    if rel((plus - base) / h, (base - minus) / h, floor) > FD_TOLERANCE / 2.0 {
                        kinks += 1;
                        report.kinks += 1;
                        continue;
                    }
                    let numeric = (plus - minus) / (2.0 * h);
                    report.max_rel_error = report.max_rel_error.max(rel(analytic.data()[i], numeric, floor));
                    report.checked += 1;
                    done += 1;
                }
            }
            _ => {
                for i in 0..input.numel() {
                    let (plus, minus) = shifted(case, k, i, h);
                    let numeric = (plus - minus) / (2.0 * h);
                    report.max_rel_error = report.max_rel_error.max(rel(analytic.data()[i], numeric, floor));
                    report.checked += 1;
                }
            }
        }
    }
    report
}

/// Reduces any-shaped node to a scalar through fixed random weights, so
/// every output coordinate contributes a distinct gradient.
pub fn weighted_sum(g: &mut Graph, x: NodeId, seed: u64) -> NodeId {
    let shape = g.value(x).shape().to_vec();
    let mut r = rng(seed);
    let w = g.constant(random_tensor(&shape, &mut r));
    let p = g.mul(x, w).unwrap();
    g.sum(p)
}

/// Every primitive op, each wrapped to a scalar.
pub fn op_cases(seed: u64) -> Vec<GradCase> {
    let mut r = rng(seed);
    let mut cases: Vec<GradCase> = Vec::new();
    let mut push = |name, inputs, build: Build| cases.push(GradCase { name, inputs, build, max_coords: None, step: FD_STEP });

    push(
        "conv2d",
        vec![random_tensor(&[2, 2, 5, 4], &mut r), random_tensor(&[3, 2, 3, 3], &mut r), random_tensor(&[3], &mut r)],
        Box::new(move |g, x| {
            let y = g.conv2d(x[0], x[1], x[2]).unwrap();
            weighted_sum(g, y, seed)
        }),
    );
    push(
        "relu",
        vec![away_from_zero(&[3, 4], &mut r)],
        Box::new(move |g, x| {
            let y = g.relu(x[0]);
            weighted_sum(g, y, seed)
        }),
    );
    push(
        "maxpool2",
        vec![distinct(&[2, 2, 5, 5], &mut r)],
        Box::new(move |g, x| {
            let y = g.maxpool2(x[0]).unwrap();
            weighted_sum(g, y, seed)
        }),
    );
    push(
        "reshape",
        vec![random_tensor(&[2, 3, 2], &mut r)],
        Box::new(move |g, x| {
            let y = g.reshape(x[0], &[3, 4]).unwrap();
            weighted_sum(g, y, seed)
        }),
    );
    push(
        "linear",
        vec![random_tensor(&[3, 4], &mut r), random_tensor(&[2, 4], &mut r), random_tensor(&[2], &mut r)],
        Box::new(move |g, x| {
            let y = g.linear(x[0], x[1], x[2]).unwrap();
            weighted_sum(g, y, seed)
        }),
    );
    push(
        "sigmoid",
        vec![random_tensor(&[5], &mut r)],
        Box::new(move |g, x| {
            let y = g.sigmoid(x[0]);
            weighted_sum(g, y, seed)
        }),
    );
    push(
        "add",
        vec![random_tensor(&[4], &mut r), random_tensor(&[4], &mut r)],
        Box::new(move |g, x| {
            let y = g.add(x[0], x[1]).unwrap();
            weighted_sum(g, y, seed)
        }),
    );
    push(
        "sub",
        vec![random_tensor(&[4], &mut r), random_tensor(&[4], &mut r)],
        Box::new(move |g, x| {
            let y = g.sub(x[0], x[1]).unwrap();
            weighted_sum(g, y, seed)
        }),
    );
    push(
        "mul",
        vec![random_tensor(&[4], &mut r), random_tensor(&[4], &mut r)],
        Box::new(move |g, x| {
            let y = g.mul(x[0], x[1]).unwrap();
            weighted_sum(g, y, seed)
        }),
    );
    push(
        "scale",
        vec![random_tensor(&[4], &mut r)],
        Box::new(move |g, x| {
            let y = g.scale(x[0], -2.5);
            weighted_sum(g, y, seed)
        }),
    );
    push(
        "add_scalar",
        vec![random_tensor(&[4], &mut r)],
        Box::new(move |g, x| {
            let y = g.add_scalar(x[0], 0.7);
            let y = g.square(y);
            weighted_sum(g, y, seed)
        }),
    );
    push(
        "square",
        vec![random_tensor(&[4], &mut r)],
        Box::new(move |g, x| {
            let y = g.square(x[0]);
            weighted_sum(g, y, seed)
        }),
    );
    push(
        "log",
        vec![Tensor::from_vec((0..4).map(|_| r.random_range(0.2..2.0)).collect())],
        Box::new(move |g, x| {
            let y = g.log(x[0]);
            weighted_sum(g, y, seed)
        }),
    );
    push(
        "clamp",
        vec![away_from_zero(&[6], &mut r)],
        Box::new(move |g, x| {
            // bounds sit in the value gap (-0.05, 0.05) or beyond the range
            let y = g.clamp(x[0], 0.0, 2.0);
            weighted_sum(g, y, seed)
        }),
    );
    push(
        "sum",
        vec![random_tensor(&[2, 3], &mut r)],
        Box::new(|g, x| {
            let y = g.square(x[0]);
            g.sum(y)
        }),
    );
    push(
        "mean",
        vec![random_tensor(&[2, 3], &mut r)],
        Box::new(|g, x| {
            let y = g.square(x[0]);
            g.mean(y)
        }),
    );
    push(
        "slice_rows",
        vec![random_tensor(&[4, 3], &mut r)],
        Box::new(move |g, x| {
            let y = g.slice_rows(x[0], 1, 3).unwrap();
            weighted_sum(g, y, seed)
        }),
    );
    push(
        "matmul",
        vec![random_tensor(&[3, 4], &mut r), random_tensor(&[4, 2], &mut r)],
        Box::new(move |g, x| {
            let y = g.matmul(x[0], x[1]).unwrap();
            weighted_sum(g, y, seed)
        }),
    );
    push(
        "neg_sq_dists",
        vec![random_tensor(&[3, 4], &mut r), random_tensor(&[2, 4], &mut r)],
        Box::new(move |g, x| {
            let y = g.neg_sq_dists(x[0], x[1]).unwrap();
            weighted_sum(g, y, seed)
        }),
    );
    push(
        "sq_dist",
        vec![random_tensor(&[5], &mut r), random_tensor(&[5], &mut r)],
        Box::new(|g, x| g.sq_dist(x[0], x[1]).unwrap()),
    );
    push(
        "softmax_cross_entropy",
        vec![random_tensor(&[4, 3], &mut r)],
        Box::new(|g, x| g.softmax_cross_entropy(x[0], &[0, 2, 1, 2]).unwrap()),
    );
    push(
        "mean_squared_error",
        vec![random_tensor(&[6], &mut r), random_tensor(&[6], &mut r)],
        Box::new(|g, x| {
            let d = g.sub(x[0], x[1]).unwrap();
            let s = g.square(d);
            g.mean(s)
        }),
    );
    push(
        "ccl",
        vec![Tensor::from_vec((0..5).map(|_| r.random_range(0.0..1.0)).collect())],
        Box::new(|g, x| g.ccl(x[0])),
    );
    cases
}

/// Random binary 28x28 images with about half the pixels set.
pub fn noise_images(count: usize, rng: &mut ChaCha8Rng) -> Vec<tangram_core::BinaryImage> {
    (0..count)
        .map(|_| {
            let bits = (0..28 * 28).map(|_| rng.random_bool(0.5)).collect();
            tangram_core::BinaryImage::from_bits(28, 28, bits).unwrap()
        })
        .collect()
}

/// Score-model parameters with biases moved off zero, so ReLUs on blank
/// patches sit away from their kink.
pub fn score_params(seed: u64) -> Vec<Tensor> {
    use tangram_core::nn::{Parameterized, ScoreModel};
    let mut r = rng(seed ^ 0xb1a5);
    let model = ScoreModel::new(seed);
    model
        .named_params()
        .into_iter()
        .map(|(name, t)| {
            let mut t = t.clone();
            if name.ends_with("bias") {
                t.data_mut().iter_mut().for_each(|v| *v = r.random_range(0.05..0.2));
            }
            t
        })
        .collect()
}

/// The completeness-contrast and puzzle-meaning composites, each checked on
/// sampled coordinates of every parameter tensor.
pub fn composite_cases(seed: u64) -> Vec<GradCase> {
    use tangram_core::nn::{Backbone, BackboneIds, Layer};
    let mut r = rng(seed);
    let frames = noise_images(3, &mut r);
    let ccl_frames = frames.clone();
    let ccl = GradCase {
        name: "ccl_composite",
        inputs: score_params(seed),
        build: Box::new(move |g, x| {
            let bb = BackboneIds::from_ids(&x[..8]);
            let refs: Vec<_> = ccl_frames.iter().collect();
            let f = Backbone::forward_images(g, &bb, &refs).unwrap();
            let z = g.linear(f, x[8], x[9]).unwrap();
            let s = g.sigmoid(z);
            g.ccl(s)
        }),
        max_coords: Some(6),
        step: COMPOSITE_FD_STEP,
    };
    let mut inputs: Vec<Tensor> = score_params(seed).into_iter().take(8).collect();
    let head = Layer::dense(64, 50, seed);
    inputs.push(head.weight);
    inputs.push(head.bias);
    let target = random_tensor(&[1, 50], &mut r);
    let pml = GradCase {
        name: "pml_composite",
        inputs,
        build: Box::new(move |g, x| {
            let bb = BackboneIds::from_ids(&x[..8]);
            let f = Backbone::forward_images(g, &bb, &[&frames[0]]).unwrap();
            let pred = g.linear(f, x[8], x[9]).unwrap();
            let t = g.constant(target.clone());
            g.sq_dist(pred, t).unwrap()
        }),
        max_coords: Some(6),
        step: COMPOSITE_FD_STEP,
    };
    vec![ccl, pml]
}

/// The ME-IRL and GAIL objectives on noise expert and sampled sets.
pub fn irl_cases(seed: u64) -> Vec<GradCase> {
    use tangram_core::irl::{gail_objective, meirl_objective};
    use tangram_core::nn::{BackboneIds, LayerIds, ScoreIds};
    type Objective = fn(
        &mut Graph,
        &ScoreIds,
        &[&tangram_core::BinaryImage],
        &[&tangram_core::BinaryImage],
    ) -> Result<NodeId, tangram_core::irl::IrlError>;
    let mut r = rng(seed ^ 0x1e1);
    let cases: [(&'static str, Objective); 2] = [("meirl_objective", meirl_objective), ("gail_objective", gail_objective)];
    cases
        .into_iter()
        .map(|(name, objective)| {
            let expert = noise_images(2, &mut r);
            let sampled = noise_images(3, &mut r);
            GradCase {
                name,
                inputs: score_params(seed),
                build: Box::new(move |g, x| {
                    let ids = ScoreIds {
                        backbone: BackboneIds::from_ids(&x[..8]),
                        head: LayerIds { weight: x[8], bias: x[9] },
                    };
                    let e: Vec<_> = expert.iter().collect();
                    let s: Vec<_> = sampled.iter().collect();
                    objective(g, &ids, &e, &s).unwrap()
                }),
                max_coords: Some(6),
        step: COMPOSITE_FD_STEP,
            }
        })
        .collect()
}
