//! Aesthetic score learners (score learning, max-entropy IRL, state-only
//! GAIL), greedy rollouts and P@K.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitmap::BinaryImage;
use crate::envs::Env;
use crate::nn::{self, Adam, Graph, GraphError, ModelError, NodeId, ScoreIds, ScoreModel};
use crate::seeding;

const GAIL_CLAMP: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IrlError {
    #[error("no expert trajectories")]
    NoExperts,
    #[error("trajectory {0} has fewer than 2 states")]
    ShortTrajectory(usize),
    #[error("{0} state set is empty")]
    EmptyStates(&'static str),
    #[error("no legal action from the initial state")]
    EmptyPolicy,
    #[error("K = {k} outside 1..={len}")]
    BadK { k: usize, len: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Maps states (as images) to scalar scores; larger means more complete.
pub trait Scorer {
    fn scores(&self, images: &[&BinaryImage]) -> Result<Vec<f64>, IrlError>;
}

impl Scorer for ScoreModel {
    fn scores(&self, images: &[&BinaryImage]) -> Result<Vec<f64>, IrlError> {
        Ok(self.score(images)?)
    }
}

impl<F: Fn(&BinaryImage) -> f64> Scorer for F {
    fn scores(&self, images: &[&BinaryImage]) -> Result<Vec<f64>, IrlError> {
        Ok(images.iter().map(|i| self(i)).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    /// Maximum number of states in a rollout, the initial one included.
    pub horizon: usize,
    pub stop_when_no_improvement: bool,
}

impl RolloutConfig {
    /// Horizon set to the longest expert trajectory.
    pub fn for_experts<S>(experts: &[Vec<S>]) -> Self {
        Self { horizon: experts.iter().map(Vec::len).max().unwrap_or(1).max(1), stop_when_no_improvement: true }
    }
}

/// Greedy policy: take the legal action whose successor scores highest
/// (ties to the lowest action index). Successors that look identical to the
/// current state are skipped. Stops at the horizon, when no action is left,
/// or (if configured) when the best successor does not beat the current
/// state's score.
pub fn greedy_rollout<E: Env>(
    scorer: &impl Scorer,
    env: &E,
    initial: &E::State,
    cfg: &RolloutConfig,
) -> Result<Vec<E::State>, IrlError> {
    let mut states = vec![initial.clone()];
    let mut current_img = env.observe(initial);
    let mut current_score = scorer.scores(&[&current_img])?[0];
    while states.len() < cfg.horizon.max(1) {
        let state = states.last().expect("nonempty");
        let mut candidates = Vec::new();
        for a in 0..env.num_actions(state) {
            if let Some(next) = env.step(state, a) {
                let img = env.observe(&next);
                if img != current_img {
                    candidates.push((next, img));
                }
            }
        }
        if candidates.is_empty() {
            if states.len() == 1 && !cfg.stop_when_no_improvement {
                return Err(IrlError::EmptyPolicy);
            }
            break;
        }
        let imgs: Vec<&BinaryImage> = candidates.iter().map(|(_, i)| i).collect();
        let scores = scorer.scores(&imgs)?;
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        if cfg.stop_when_no_improvement && scores[best] <= current_score {
            break;
        }
        current_score = scores[best];
        let (next, img) = candidates.swap_remove(best);
        current_img = img;
        states.push(next);
    }
    Ok(states)
}

/// `|top-K by score ∩ last K| / K`. Ties rank the later state higher.
pub fn precision_at_k(scores: &[f64], k: usize) -> Result<f64, IrlError> {
    let len = scores.len();
    if k == 0 || k > len {
        return Err(IrlError::BadK { k, len });
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(b.cmp(&a)));
    let hits = order[..k].iter().filter(|&&i| i >= len - k).count();
    Ok(hits as f64 / k as f64)
}

fn batch_mean(g: &mut Graph, ids: &ScoreIds, images: &[&BinaryImage], what: &'static str) -> Result<NodeId, IrlError> {
    if images.is_empty() {
        return Err(IrlError::EmptyStates(what));
    }
    let s = ScoreModel::scores(g, ids, images)?;
    Ok(g.mean(s))
}

/// `mean F(expert) - mean F(sampled)`; ME-IRL ascends this.
pub fn meirl_objective(
    g: &mut Graph,
    ids: &ScoreIds,
    expert: &[&BinaryImage],
    sampled: &[&BinaryImage],
) -> Result<NodeId, IrlError> {
    let e = batch_mean(g, ids, expert, "expert")?;
    let s = batch_mean(g, ids, sampled, "sampled")?;
    Ok(g.sub(e, s)?)
}

/// `mean log D(expert) + mean log(1 - D(sampled))` with `D` clamped to
/// `[1e-6, 1 - 1e-6]`; the discriminator ascends this.
pub fn gail_objective(
    g: &mut Graph,
    ids: &ScoreIds,
    expert: &[&BinaryImage],
    sampled: &[&BinaryImage],
) -> Result<NodeId, IrlError> {
    if expert.is_empty() {
        return Err(IrlError::EmptyStates("expert"));
    }
    if sampled.is_empty() {
        return Err(IrlError::EmptyStates("sampled"));
    }
    let de = ScoreModel::scores(g, ids, expert)?;
    let de = g.clamp(de, GAIL_CLAMP, 1.0 - GAIL_CLAMP);
    let le = g.log(de);
    let le = g.mean(le);
    let ds = ScoreModel::scores(g, ids, sampled)?;
    let ds = g.clamp(ds, GAIL_CLAMP, 1.0 - GAIL_CLAMP);
    let one_minus = g.scale(ds, -1.0);
    let one_minus = g.add_scalar(one_minus, 1.0);
    let ls = g.log(one_minus);
    let ls = g.mean(ls);
    Ok(g.add(le, ls)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sl,
    MeIrl,
    Gail,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Sl, Method::MeIrl, Method::Gail];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Sl => "SL",
            Method::MeIrl => "ME-IRL",
            Method::Gail => "GAIL",
        }
    }
}

/// Ascends `objective` by one Adam step; returns the objective value.
fn ascend(
    model: &mut ScoreModel,
    opt: &mut Adam,
    expert: &[&BinaryImage],
    sampled: &[&BinaryImage],
    objective: fn(&mut Graph, &ScoreIds, &[&BinaryImage], &[&BinaryImage]) -> Result<NodeId, IrlError>,
) -> Result<f64, IrlError> {
    let mut g = Graph::new();
    let ids = model.bind(&mut g);
    let j = objective(&mut g, &ids, expert, sampled)?;
    let value = g.value(j).item();
    let loss = g.scale(j, -1.0);
    let grads = g.backward(loss)?;
    nn::adam_step(model, opt, &grads, &ids.ids());
    Ok(value)
}

pub fn meirl_update(model: &mut ScoreModel, opt: &mut Adam, expert: &[&BinaryImage], sampled: &[&BinaryImage]) -> Result<f64, IrlError> {
    ascend(model, opt, expert, sampled, meirl_objective)
}

pub fn gail_update(model: &mut ScoreModel, opt: &mut Adam, expert: &[&BinaryImage], sampled: &[&BinaryImage]) -> Result<f64, IrlError> {
    ascend(model, opt, expert, sampled, gail_objective)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Epochs for SL, rollout/update rounds for ME-IRL and GAIL.
    pub iterations: usize,
    /// Adam steps per rollout round (ME-IRL, GAIL).
    pub updates_per_iteration: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Sampled states per update, drawn from every distinct state rolled
    /// out so far. Zero uses only the current round's rollouts.
    pub replay_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { iterations: 30, updates_per_iteration: 3, learning_rate: 0.001, seed: 0, replay_batch: 128 }
    }
}

/// Score learning: CCL over each expert trajectory, one Adam step per
/// trajectory, trajectories shuffled per epoch. Returns per-epoch mean CCL.
pub fn train_sl(model: &mut ScoreModel, experts: &[Vec<BinaryImage>], cfg: &TrainConfig) -> Result<Vec<f64>, IrlError> {
    check_experts(experts)?;
    let mut opt = Adam::new(cfg.learning_rate);
    let mut rng = seeding::rng(seeding::derive(cfg.seed, 31));
    let mut order: Vec<usize> = (0..experts.len()).collect();
    let mut log = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let frames: Vec<&BinaryImage> = experts[i].iter().collect();
            let mut g = Graph::new();
            let ids = model.bind(&mut g);
            let s = ScoreModel::scores(&mut g, &ids, &frames)?;
            let loss = g.ccl(s);
            total += g.value(loss).item();
            let grads = g.backward(loss)?;
            nn::adam_step(model, &mut opt, &grads, &ids.ids());
        }
        log.push(total / experts.len() as f64);
    }
    Ok(log)
}

fn check_experts<S>(experts: &[Vec<S>]) -> Result<(), IrlError> {
    if experts.is_empty() {
        return Err(IrlError::NoExperts);
    }
    if let Some(i) = experts.iter().position(|t| t.len() < 2) {
        return Err(IrlError::ShortTrajectory(i));
    }
    Ok(())
}

/// ME-IRL or GAIL: each round rolls out the greedy policy from every
/// expert's initial state under the current model, then takes
/// `updates_per_iteration` Adam steps on expert vs rolled-out states
/// (see [`TrainConfig::replay_batch`]). Returns the objective value
/// after each round.
pub fn train_irl<E: Env>(
    model: &mut ScoreModel,
    method: Method,
    env: &E,
    experts: &[Vec<E::State>],
    cfg: &TrainConfig,
) -> Result<Vec<f64>, IrlError> {
    check_experts(experts)?;
    let update = match method {
        Method::MeIrl => meirl_update,
        Method::Gail => gail_update,
        Method::Sl => {
            let frames: Vec<Vec<BinaryImage>> =
                experts.iter().map(|t| t.iter().map(|s| env.observe(s)).collect()).collect();
            return train_sl(model, &frames, cfg);
        }
    };
    let expert_imgs: Vec<BinaryImage> = experts.iter().flatten().map(|s| env.observe(s)).collect();
    let expert_refs: Vec<&BinaryImage> = expert_imgs.iter().collect();
    let rollout = RolloutConfig::for_experts(experts);
    let mut opt = Adam::new(cfg.learning_rate);
    let mut rng = seeding::rng(seeding::derive(cfg.seed, 37));
    let mut seen: HashSet<BinaryImage> = HashSet::new();
    let mut replay: Vec<BinaryImage> = Vec::new();
    let mut log = Vec::with_capacity(cfg.iterations);
    for round in 0..cfg.iterations {
        let mut sampled = Vec::new();
        for t in experts {
            for s in greedy_rollout(model, env, &t[0], &rollout)? {
                sampled.push(env.observe(&s));
            }
        }
        for img in &sampled {
            if seen.insert(img.clone()) {
                replay.push(img.clone());
            }
        }
        let mut value = 0.0;
        for _ in 0..cfg.updates_per_iteration {
            let batch: Vec<&BinaryImage> = if cfg.replay_batch == 0 {
                sampled.iter().collect()
            } else {
                replay.choose_multiple(&mut rng, cfg.replay_batch).collect()
            };
            value = update(model, &mut opt, &expert_refs, &batch)?;
        }
        log::debug!("{} round {round}: objective {value:.4}, {} sampled, {} replayed", method.label(), sampled.len(), replay.len());
        log.push(value);
    }
    Ok(log)
}

/// Mean P@K of `scorer` over trajectories, for K = 1, 2, 3 (skipping K
/// longer than a trajectory).
pub fn evaluate_precision(scorer: &impl Scorer, trajectories: &[Vec<BinaryImage>]) -> Result<[Vec<f64>; 3], IrlError> {
    let mut out: [Vec<f64>; 3] = Default::default();
    for t in trajectories {
        let refs: Vec<&BinaryImage> = t.iter().collect();
        let scores = scorer.scores(&refs)?;
        for (k, bucket) in out.iter_mut().enumerate() {
            if k < scores.len() {
                bucket.push(precision_at_k(&scores, k + 1)?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::FoldEnv;

    #[test]
    fn precision_hand_example() {
        assert_eq!(precision_at_k(&[0.1, 0.9, 0.3, 0.8], 2).unwrap(), 0.5);
        assert_eq!(precision_at_k(&[0.1, 0.2, 0.3], 3).unwrap(), 1.0);
        assert_eq!(precision_at_k(&[0.3, 0.2, 0.1], 1).unwrap(), 0.0);
        assert!(precision_at_k(&[0.3], 2).is_err());
    }

    #[test]
    fn ties_go_to_the_later_state() {
        assert_eq!(precision_at_k(&[0.5, 0.5, 0.5], 1).unwrap(), 1.0);
    }

    #[test]
    fn constant_scorer_stops_immediately() {
        let mut img = BinaryImage::new(28, 28).unwrap();
        img.set(10, 10, true);
        let cfg = RolloutConfig { horizon: 5, stop_when_no_improvement: true };
        let out = greedy_rollout(&|_: &BinaryImage| 0.5, &FoldEnv, &img, &cfg).unwrap();
        assert_eq!(out, vec![img]);
    }

    #[test]
    fn single_improving_action_is_taken() {
        let mut img = BinaryImage::new(28, 28).unwrap();
        img.set(12, 3, true);
        let target = {
            let mut t = BinaryImage::new(28, 28).unwrap();
            t.set(12, 2, true);
            t
        };
        let scorer = |i: &BinaryImage| if *i == target { 1.0 } else { 0.0 };
        let cfg = RolloutConfig { horizon: 3, stop_when_no_improvement: true };
        let out = greedy_rollout(&scorer, &FoldEnv, &img, &cfg).unwrap();
        assert_eq!(out, vec![img, target]);
    }

    #[test]
    fn empty_policy_without_stop_flag() {
        let img = BinaryImage::new(28, 28).unwrap();
        let cfg = RolloutConfig { horizon: 3, stop_when_no_improvement: false };
        assert!(matches!(greedy_rollout(&|_: &BinaryImage| 0.0, &FoldEnv, &img, &cfg), Err(IrlError::EmptyPolicy)));
    }

    #[test]
    fn identical_sets_give_zero_meirl_gradient() {
        let mut img = BinaryImage::new(28, 28).unwrap();
        for c in 4..20 {
            img.set(8, c, true);
        }
        let model = ScoreModel::new(1);
        let mut g = Graph::new();
        let ids = model.bind(&mut g);
        let j = meirl_objective(&mut g, &ids, &[&img], &[&img]).unwrap();
        let grads = g.backward(j).unwrap();
        for id in ids.ids() {
            assert!(grads.get_or_zeros(id, &[1]).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_iterations_keep_initialization() {
        let (train, _) = crate::envs::generate_garments(0);
        let experts: Vec<Vec<BinaryImage>> =
            train.iter().take(2).map(|g| crate::envs::expert_fold_trajectory(g).unwrap().frames).collect();
        let cfg = TrainConfig { iterations: 0, ..Default::default() };
        for method in Method::ALL {
            let mut m = ScoreModel::new(3);
            train_irl(&mut m, method, &FoldEnv, &experts, &cfg).unwrap();
            assert_eq!(m, ScoreModel::new(3));
        }
    }

    #[test]
    fn updates_move_scores_apart() {
        let mut a = BinaryImage::new(28, 28).unwrap();
        let mut b = BinaryImage::new(28, 28).unwrap();
        for i in 4..24 {
            a.set(i, 6, true);
            b.set(20, i, true);
            b.set(i, i, true);
        }
        for update in [meirl_update, gail_update] {
            let mut m = ScoreModel::new(2);
            let before = m.score(&[&a, &b]).unwrap();
            let mut opt = Adam::new(0.001);
            for _ in 0..5 {
                update(&mut m, &mut opt, &[&a], &[&b]).unwrap();
            }
            let after = m.score(&[&a, &b]).unwrap();
            assert!(after[0] > before[0] && after[1] < before[1], "{before:?} -> {after:?}");
        }
    }

    #[test]
    fn replay_keeps_training_deterministic() {
        let (train, _) = crate::envs::generate_garments(1);
        let experts: Vec<Vec<BinaryImage>> =
            train.iter().take(2).map(|g| crate::envs::expert_fold_trajectory(g).unwrap().frames).collect();
        let cfg = TrainConfig { iterations: 2, updates_per_iteration: 1, replay_batch: 4, ..Default::default() };
        let run = || {
            let mut m = ScoreModel::new(4);
            let log = train_irl(&mut m, Method::Gail, &FoldEnv, &experts, &cfg).unwrap();
            (m, log)
        };
        assert_eq!(run(), run());
    }
}
