//! Completeness-contrast and puzzle-meaning losses, the word-embedding
//! table, and the pre-training loop over solving traces.

use std::collections::HashMap;
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitmap::{BinaryImage, BitmapError};
use crate::geometry::{SolveTrace, Variant};
use crate::nn::{self, Adam, Backbone, Graph, GraphError, ModelError, PretrainModel, Tensor, EMBEDDING_DIM, INPUT_SIDE};
use crate::seeding;

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("completeness scores are empty")]
    EmptyScores,
    #[error("dimension mismatch: {left} vs {right}")]
    Dimension { left: usize, right: usize },
    #[error("line {line}: {msg}")]
    EmbeddingParse { line: usize, msg: String },
    #[error("no embedding for {name:?} (unknown tokens {tokens:?})")]
    UnknownName { name: String, tokens: Vec<String> },
    #[error("config: {0}")]
    Config(String),
    #[error("trace {index}: {source}")]
    Render { index: usize, source: BitmapError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Raw CCL over a score sequence; zero-length input evaluates the boundary
/// term `(0 - 1)^2`.
pub(crate) fn ccl_value(scores: &[f64]) -> f64 {
    let mut prev = 0.0;
    let mut total = 0.0;
    for &s in scores {
        total += (prev - s) * (prev - s);
        prev = s;
    }
    total + (prev - 1.0) * (prev - 1.0)
}

pub(crate) fn ccl_grad(scores: &[f64]) -> Vec<f64> {
    let n = scores.len();
    (0..n)
        .map(|i| {
            let before = if i == 0 { 0.0 } else { scores[i - 1] };
            let after = if i + 1 == n { 1.0 } else { scores[i + 1] };
            2.0 * (scores[i] - before) - 2.0 * (after - scores[i])
        })
        .collect()
}

/// Completeness contrast loss
/// `(0 - f_1)^2 + sum_t (f_t - f_{t+1})^2 + (f_n - 1)^2`.
pub fn ccl(scores: &[f64]) -> Result<f64, PretrainError> {
    if scores.is_empty() {
        return Err(PretrainError::EmptyScores);
    }
    Ok(ccl_value(scores))
}

/// Value CCL reaches at its minimum, where `f_i = i / (n + 1)`.
pub fn ccl_minimum(n: usize) -> f64 {
    1.0 / (n as f64 + 1.0)
}

/// Puzzle meaning loss: squared Euclidean distance.
pub fn pml(pred: &[f64], target: &[f64]) -> Result<f64, PretrainError> {
    if pred.len() != target.len() {
        return Err(PretrainError::Dimension { left: pred.len(), right: target.len() });
    }
    Ok(pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Fraction of step pairs `i < j` scored strictly increasing.
pub fn ordering_accuracy(scores: &[f64]) -> f64 {
    let n = scores.len();
    if n < 2 {
        return 1.0;
    }
    let mut good = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if scores[i] < scores[j] {
                good += 1;
            }
        }
    }
    good as f64 / (n * (n - 1) / 2) as f64
}

/// Word vectors keyed by lower-case token.
#[derive(Clone, Debug, Default)]
pub struct EmbeddingTable {
    vectors: HashMap<String, Vec<f64>>,
    fallback_seed: Option<u64>,
}

/// A pattern name's vector and any tokens that fell back to a random vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub vector: Vec<f64>,
    pub fallback_tokens: Vec<String>,
}

fn tokens(name: &str) -> Vec<String> {
    name.split(|c: char| c.is_whitespace() || c == '_' || c == '-')
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl EmbeddingTable {
    /// Parses `token v1 .. v50` lines; blank lines are skipped.
    pub fn parse(reader: impl BufRead) -> Result<Self, PretrainError> {
        let mut vectors = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let vector = parts
                .map(|p| p.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| PretrainError::EmbeddingParse { line: i + 1, msg: e.to_string() })?;
            if vector.len() != EMBEDDING_DIM {
                return Err(PretrainError::EmbeddingParse {
                    line: i + 1,
                    msg: format!("expected {EMBEDDING_DIM} values, found {}", vector.len()),
                });
            }
            vectors.insert(token.to_lowercase(), vector);
        }
        Ok(Self { vectors, fallback_seed: None })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, PretrainError> {
        Self::parse(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Unknown tokens resolve to a unit vector seeded by `seed` and the token.
    pub fn with_fallback(mut self, seed: u64) -> Self {
        self.fallback_seed = Some(seed);
        self
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, token: &str, vector: Vec<f64>) -> Result<(), PretrainError> {
        if vector.len() != EMBEDDING_DIM {
            return Err(PretrainError::Dimension { left: vector.len(), right: EMBEDDING_DIM });
        }
        self.vectors.insert(token.to_lowercase(), vector);
        Ok(())
    }

    fn fallback_vector(seed: u64, token: &str) -> Vec<f64> {
        let mut rng = seeding::rng(seeding::derive(seed, seeding::hash_str(token)));
        let v: Vec<f64> = (0..EMBEDDING_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect()
    }

    /// Mean of the token vectors of a (possibly multi-word) name.
    pub fn resolve(&self, name: &str) -> Result<Resolved, PretrainError> {
        let toks = tokens(name);
        let missing: Vec<String> = toks.iter().filter(|t| !self.vectors.contains_key(*t)).cloned().collect();
        if toks.is_empty() || (!missing.is_empty() && self.fallback_seed.is_none()) {
            return Err(PretrainError::UnknownName { name: name.to_string(), tokens: missing });
        }
        let mut mean = vec![0.0; EMBEDDING_DIM];
        for t in &toks {
            let v = match self.vectors.get(t) {
                Some(v) => v.clone(),
                None => Self::fallback_vector(self.fallback_seed.unwrap_or_default(), t),
            };
            mean.iter_mut().zip(&v).for_each(|(m, x)| *m += x / toks.len() as f64);
        }
        Ok(Resolved { vector: mean, fallback_tokens: missing })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub ccl_weight: f64,
    pub pml_weight: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub pml_on_variant_a: bool,
    pub pml_on_variant_b: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            ccl_weight: 0.8,
            pml_weight: 0.2,
            epochs: 10,
            learning_rate: 0.001,
            seed: 0,
            pml_on_variant_a: true,
            pml_on_variant_b: true,
        }
    }
}

impl PretrainConfig {
    pub fn check(&self) -> Result<(), PretrainError> {
        if (self.ccl_weight + self.pml_weight - 1.0).abs() > 1e-9 {
            return Err(PretrainError::Config(format!(
                "loss weights must sum to 1, got {} + {}",
                self.ccl_weight, self.pml_weight
            )));
        }
        if self.ccl_weight < 0.0 || self.pml_weight < 0.0 {
            return Err(PretrainError::Config("loss weights must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub ccl: f64,
    pub pml: f64,
    pub total: f64,
}

/// Per-epoch means over traces.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossLog {
    pub epochs: Vec<EpochLoss>,
}

impl LossLog {
    pub fn to_text(&self) -> String {
        let mut s = String::from("epoch\tccl\tpml\ttotal\n");
        for e in &self.epochs {
            s.push_str(&format!("{}\t{:.6}\t{:.6}\t{:.6}\n", e.epoch, e.ccl, e.pml, e.total));
        }
        s
    }
}

/// A trace ready for training: rendered frames and its meaning target.
#[derive(Clone, Debug)]
pub struct PreparedTrace {
    pub frames: Vec<BinaryImage>,
    pub target: Vec<f64>,
    pub variant: Variant,
}

pub struct PretrainOutcome {
    pub model: PretrainModel,
    pub log: LossLog,
    /// Tokens that fell back to random vectors, deduplicated.
    pub fallback_tokens: Vec<String>,
}

/// Renders frames and resolves names; any unresolvable name fails here,
/// before training starts.
pub fn prepare(traces: &[SolveTrace], embeddings: &EmbeddingTable) -> Result<(Vec<PreparedTrace>, Vec<String>), PretrainError> {
    let mut fallback = Vec::new();
    let mut out = Vec::with_capacity(traces.len());
    for (index, t) in traces.iter().enumerate() {
        let key = if t.embedding_key.is_empty() { &t.puzzle_name } else { &t.embedding_key };
        let resolved = embeddings.resolve(key)?;
        for tok in resolved.fallback_tokens {
            if !fallback.contains(&tok) {
                fallback.push(tok);
            }
        }
        let frames = t.render(INPUT_SIDE).map_err(|source| PretrainError::Render { index, source })?;
        out.push(PreparedTrace { frames, target: resolved.vector, variant: t.variant });
    }
    Ok((out, fallback))
}

/// Loss terms of one trace on a fresh graph; returns `(graph, ids, ccl, pml, total)`.
fn trace_loss(
    model: &PretrainModel,
    trace: &PreparedTrace,
    cfg: &PretrainConfig,
) -> Result<(Graph, Vec<nn::NodeId>, f64, f64, nn::NodeId), PretrainError> {
    let mut g = Graph::new();
    let score_ids = model.score.bind(&mut g);
    let meaning = model.meaning.bind(&mut g);
    let frames: Vec<&BinaryImage> = trace.frames.iter().collect();
    let n = frames.len();
    let feats = Backbone::forward_images(&mut g, &score_ids.backbone, &frames)?;
    let z = g.linear(feats, score_ids.head.weight, score_ids.head.bias)?;
    let s = g.sigmoid(z);
    let c = g.ccl(s);
    let mut total = g.scale(c, cfg.ccl_weight);
    let use_pml = match trace.variant {
        Variant::A => cfg.pml_on_variant_a,
        Variant::B => cfg.pml_on_variant_b,
    };
    let mut pml_value = 0.0;
    if use_pml {
        let last = g.slice_rows(feats, n - 1, n)?;
        let pred = g.linear(last, meaning.weight, meaning.bias)?;
        let target = g.constant(Tensor::new(vec![1, EMBEDDING_DIM], trace.target.clone()).expect("embedding shape"));
        let p = g.sq_dist(pred, target)?;
        pml_value = g.value(p).item();
        let weighted = g.scale(p, cfg.pml_weight);
        total = g.add(total, weighted)?;
    }
    let ccl_value = g.value(c).item();
    let mut ids = score_ids.ids();
    ids.extend(meaning.ids());
    Ok((g, ids, ccl_value, pml_value, total))
}

/// Trains completeness and meaning heads jointly with the backbone, one
/// trace per Adam step, traces shuffled each epoch.
pub fn pretrain(
    traces: &[SolveTrace],
    embeddings: &EmbeddingTable,
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome, PretrainError> {
    cfg.check()?;
    let (prepared, fallback_tokens) = prepare(traces, embeddings)?;
    let (model, log) = pretrain_prepared(&prepared, cfg, PretrainModel::new(cfg.seed))?;
    Ok(PretrainOutcome { model, log, fallback_tokens })
}

pub fn pretrain_prepared(
    prepared: &[PreparedTrace],
    cfg: &PretrainConfig,
    mut model: PretrainModel,
) -> Result<(PretrainModel, LossLog), PretrainError> {
    cfg.check()?;
    let mut opt = Adam::new(cfg.learning_rate);
    let mut rng = seeding::rng(seeding::derive(cfg.seed, 17));
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut log = LossLog::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sc, mut sp, mut st) = (0.0, 0.0, 0.0);
        for &i in &order {
            let (g, ids, c, p, total) = trace_loss(&model, &prepared[i], cfg)?;
            sc += c;
            sp += p;
            st += g.value(total).item();
            let grads = g.backward(total)?;
            nn::adam_step(&mut model, &mut opt, &grads, &ids);
        }
        let n = prepared.len().max(1) as f64;
        let entry = EpochLoss { epoch, ccl: sc / n, pml: sp / n, total: st / n };
        log::info!("pretrain epoch {epoch}: ccl {:.4} pml {:.4} total {:.4}", entry.ccl, entry.pml, entry.total);
        log.epochs.push(entry);
    }
    Ok((model, log))
}
