use thiserror::Error;

use super::graph::{Graph, GraphError, NodeId};
use super::kernels::{self, ConvDims};
use super::tensor::{images_to_tensor, Tensor};
use crate::bitmap::BinaryImage;
use crate::seeding;

/// Input side length every model expects.
pub const INPUT_SIDE: usize = 28;
/// Width of the backbone feature vector.
pub const FEATURE_DIM: usize = 64;
/// Word-embedding dimension targeted by the meaning head.
pub const EMBEDDING_DIM: usize = 50;

const CONV_LAYERS: usize = 4;
const KERNEL: usize = 3;
const INFERENCE_CHUNK: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("expected {expected}x{expected} input, got {height}x{width}")]
    InputSize { expected: usize, height: usize, width: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Anything that owns named trainable tensors.
pub trait Parameterized {
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.named_params_mut().into_iter().map(|(_, t)| t).collect()
    }
}

fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut seeding::Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape, bound, rng)
}

/// Weight and bias of one affine layer (conv or dense).
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Graph handles for a bound [`Layer`].
#[derive(Clone, Copy, Debug)]
pub struct LayerIds {
    pub weight: NodeId,
    pub bias: NodeId,
}

impl Layer {
    /// Dense layer `inp -> out`, weight stored `[out, inp]`.
    pub fn dense(inp: usize, out: usize, seed: u64) -> Self {
        let mut rng = seeding::rng(seed);
        Self { weight: glorot(&[out, inp], inp, out, &mut rng), bias: Tensor::zeros(&[out]) }
    }

    pub fn dense_zeros(inp: usize, out: usize) -> Self {
        Self { weight: Tensor::zeros(&[out, inp]), bias: Tensor::zeros(&[out]) }
    }

    fn conv(inp: usize, out: usize, rng: &mut seeding::Rng) -> Self {
        let k2 = KERNEL * KERNEL;
        Self {
            weight: glorot(&[out, inp, KERNEL, KERNEL], inp * k2, out * k2, rng),
            bias: Tensor::zeros(&[out]),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.bias.numel()
    }

    pub fn bind(&self, g: &mut Graph) -> LayerIds {
        LayerIds { weight: g.param(&self.weight), bias: g.param(&self.bias) }
    }

    /// Binds as constants, so no gradient flows into this layer.
    pub fn bind_frozen(&self, g: &mut Graph) -> LayerIds {
        LayerIds { weight: g.constant(self.weight.clone()), bias: g.constant(self.bias.clone()) }
    }

    /// No-grad dense application to `x: [B, in]`.
    pub fn apply(&self, x: &Tensor) -> Tensor {
        let (b, inp) = (x.shape()[0], x.shape()[1]);
        let out = kernels::linear_forward(x.data(), b, inp, self.weight.data(), self.bias.data());
        Tensor::new(vec![b, self.out_dim()], out).expect("linear output shape")
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }
}

impl LayerIds {
    pub fn ids(&self) -> [NodeId; 2] {
        [self.weight, self.bias]
    }
}

/// Four 3x3 conv layers of 64 channels, each followed by ReLU and 2x2
/// max-pooling: `1x28x28 -> 64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    layers: Vec<Layer>,
}

#[derive(Clone, Debug)]
pub struct BackboneIds(Vec<LayerIds>);

impl BackboneIds {
    /// Rebuilds handles from ids laid out as [`BackboneIds::ids`] returns them.
    pub fn from_ids(ids: &[NodeId]) -> Self {
        assert_eq!(ids.len(), 2 * CONV_LAYERS, "backbone has {} tensors", 2 * CONV_LAYERS);
        Self(ids.chunks(2).map(|c| LayerIds { weight: c[0], bias: c[1] }).collect())
    }

    pub fn ids(&self) -> Vec<NodeId> {
        self.0.iter().flat_map(LayerIds::ids).collect()
    }
}

impl Backbone {
    pub fn new(seed: u64) -> Self {
        let mut rng = seeding::rng(seed);
        let layers = (0..CONV_LAYERS)
            .map(|i| Layer::conv(if i == 0 { 1 } else { FEATURE_DIM }, FEATURE_DIM, &mut rng))
            .collect();
        Self { layers }
    }

    pub fn zeros() -> Self {
        let mut b = Self::new(0);
        for t in b.params_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        b
    }

    pub fn bind(&self, g: &mut Graph) -> BackboneIds {
        BackboneIds(self.layers.iter().map(|l| l.bind(g)).collect())
    }

    pub fn bind_frozen(&self, g: &mut Graph) -> BackboneIds {
        BackboneIds(self.layers.iter().map(|l| l.bind_frozen(g)).collect())
    }

    /// Graph forward of `x: [B, 1, 28, 28]` to `[B, 64]`.
    pub fn forward(g: &mut Graph, ids: &BackboneIds, x: NodeId) -> Result<NodeId, ModelError> {
        let s = g.value(x).shape().to_vec();
        if s.len() != 4 || s[2] != INPUT_SIDE || s[3] != INPUT_SIDE {
            return Err(ModelError::InputSize {
                expected: INPUT_SIDE,
                height: s.get(2).copied().unwrap_or(0),
                width: s.get(3).copied().unwrap_or(0),
            });
        }
        let mut h = x;
        for layer in &ids.0 {
            h = g.conv2d(h, layer.weight, layer.bias)?;
            h = g.relu(h);
            h = g.maxpool2(h)?;
        }
        Ok(g.reshape(h, &[s[0], FEATURE_DIM])?)
    }

    /// Convenience: images as a constant input, forward through bound ids.
    pub fn forward_images(g: &mut Graph, ids: &BackboneIds, images: &[&BinaryImage]) -> Result<NodeId, ModelError> {
        check_images(images.iter().copied())?;
        let x = g.constant(images_to_tensor(images.iter().copied()));
        Self::forward(g, ids, x)
    }

    /// No-grad features `[B, 64]`, evaluated in fixed-size chunks.
    pub fn features(&self, images: &[&BinaryImage]) -> Result<Tensor, ModelError> {
        check_images(images.iter().copied())?;
        let mut out = Vec::with_capacity(images.len() * FEATURE_DIM);
        for chunk in images.chunks(INFERENCE_CHUNK) {
            let mut x = images_to_tensor(chunk.iter().copied()).into_data();
            let (mut c, mut side) = (1, INPUT_SIDE);
            for layer in &self.layers {
                let d = ConvDims { channels: c, height: side, width: side, out_channels: FEATURE_DIM, kernel: KERNEL };
                let y = kernels::conv2d_forward(&x, chunk.len(), d, layer.weight.data(), layer.bias.data());
                let y = kernels::relu(&y);
                x = kernels::maxpool2_forward(&y, chunk.len() * FEATURE_DIM, side, side).0;
                c = FEATURE_DIM;
                side /= 2;
            }
            out.extend(x);
        }
        Ok(Tensor::new(vec![images.len(), FEATURE_DIM], out).expect("feature shape"))
    }
}

fn check_images<'a>(images: impl IntoIterator<Item = &'a BinaryImage>) -> Result<(), ModelError> {
    for img in images {
        if img.height() != INPUT_SIDE || img.width() != INPUT_SIDE {
            return Err(ModelError::InputSize { expected: INPUT_SIDE, height: img.height(), width: img.width() });
        }
    }
    Ok(())
}

impl Parameterized for Backbone {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            l.named(&format!("backbone.conv{i}"), &mut out);
        }
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.named_mut(&format!("backbone.conv{i}"), &mut out);
        }
        out
    }
}

/// Backbone plus a single logistic output; the completeness scorer and every
/// IRL score function share this shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreModel {
    pub backbone: Backbone,
    pub head: Layer,
}

#[derive(Clone, Debug)]
pub struct ScoreIds {
    pub backbone: BackboneIds,
    pub head: LayerIds,
}

impl ScoreIds {
    pub fn ids(&self) -> Vec<NodeId> {
        let mut v = self.backbone.ids();
        v.extend(self.head.ids());
        v
    }
}

impl ScoreModel {
    pub fn new(seed: u64) -> Self {
        Self {
            backbone: Backbone::new(seeding::derive(seed, 0)),
            head: Layer::dense(FEATURE_DIM, 1, seeding::derive(seed, 1)),
        }
    }

    pub fn with_backbone(backbone: Backbone, seed: u64) -> Self {
        Self { backbone, head: Layer::dense(FEATURE_DIM, 1, seeding::derive(seed, 1)) }
    }

    pub fn bind(&self, g: &mut Graph) -> ScoreIds {
        ScoreIds { backbone: self.backbone.bind(g), head: self.head.bind(g) }
    }

    /// Pre-sigmoid logits `[B, 1]`.
    pub fn logits(g: &mut Graph, ids: &ScoreIds, images: &[&BinaryImage]) -> Result<NodeId, ModelError> {
        let f = Backbone::forward_images(g, &ids.backbone, images)?;
        Ok(g.linear(f, ids.head.weight, ids.head.bias)?)
    }

    /// Scores in `(0, 1)`, shape `[B, 1]`.
    pub fn scores(g: &mut Graph, ids: &ScoreIds, images: &[&BinaryImage]) -> Result<NodeId, ModelError> {
        let z = Self::logits(g, ids, images)?;
        Ok(g.sigmoid(z))
    }

    /// No-grad scores.
    pub fn score(&self, images: &[&BinaryImage]) -> Result<Vec<f64>, ModelError> {
        let f = self.backbone.features(images)?;
        Ok(self.head.apply(&f).data().iter().map(|&z| kernels::sigmoid(z)).collect())
    }
}

impl Parameterized for ScoreModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.backbone.named_params();
        self.head.named("score_head", &mut out);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.backbone.named_params_mut();
        self.head.named_mut("score_head", &mut out);
        out
    }
}

/// Backbone with a dense N-way classification head.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub backbone: Backbone,
    pub head: Layer,
}

impl Classifier {
    pub fn new(backbone: Backbone, classes: usize, seed: u64) -> Self {
        Self { backbone, head: Layer::dense(FEATURE_DIM, classes, seed) }
    }
}

impl Parameterized for Classifier {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.backbone.named_params();
        self.head.named("class_head", &mut out);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.backbone.named_params_mut();
        self.head.named_mut("class_head", &mut out);
        out
    }
}

/// Completeness scorer plus the 50-d meaning head used in pre-training.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainModel {
    pub score: ScoreModel,
    pub meaning: Layer,
}

impl PretrainModel {
    pub fn new(seed: u64) -> Self {
        Self { score: ScoreModel::new(seed), meaning: Layer::dense(FEATURE_DIM, EMBEDDING_DIM, seeding::derive(seed, 2)) }
    }
}

impl Parameterized for PretrainModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.score.named_params();
        self.meaning.named("meaning_head", &mut out);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.score.named_params_mut();
        self.meaning.named_mut("meaning_head", &mut out);
        out
    }
}
