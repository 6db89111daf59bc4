//! N-way-K-shot episodes, frozen-feature logistic probing, ANIL,
//! first-order MAML and prototypical networks.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitmap::BinaryImage;
use crate::geometry::Point;
use crate::nn::{
    self, Adam, Backbone, BackboneIds, Classifier, Graph, GraphError, Layer, LayerIds, ModelError, NodeId,
    Parameterized, Tensor, INPUT_SIDE,
};
use crate::seeding;

/// Full-batch gradient-descent steps for the logistic probe.
pub const PROBE_STEPS: usize = 100;
/// Step size of the logistic probe.
pub const PROBE_LR: f64 = 0.5;

const STROKE_RADIUS: f64 = 1.2;
const MIN_GLYPH_DISTANCE: usize = 60;

#[derive(Debug, Error)]
pub enum FewShotError {
    #[error("need {needed} classes with at least {per_class} samples, dataset has {available}")]
    NotEnoughClasses { needed: usize, per_class: usize, available: usize },
    #[error("episode needs at least one way and one shot")]
    EmptyEpisode,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("no classes found under {0}")]
    NoClasses(PathBuf),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlyphClass {
    pub name: String,
    pub images: Vec<BinaryImage>,
}

/// Labeled 28x28 binary images grouped by class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlyphDataset {
    pub classes: Vec<GlyphClass>,
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len2 = ab.x * ab.x + ab.y * ab.y;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

fn draw_strokes(strokes: &[Vec<Point>]) -> BinaryImage {
    let mut img = BinaryImage::new(INPUT_SIDE, INPUT_SIDE).expect("nonzero size");
    for r in 0..INPUT_SIDE {
        for c in 0..INPUT_SIDE {
            let p = Point::new(c as f64 + 0.5, r as f64 + 0.5);
            let hit = strokes
                .iter()
                .any(|s| s.windows(2).any(|w| segment_distance(p, w[0], w[1]) <= STROKE_RADIUS));
            if hit {
                img.set(r, c, true);
            }
        }
    }
    img
}

fn base_glyph(rng: &mut seeding::Rng) -> Vec<Vec<Point>> {
    (0..rng.random_range(2..=4))
        .map(|_| {
            (0..rng.random_range(2..=4))
                .map(|_| Point::new(rng.random_range(5.0..23.0), rng.random_range(5.0..23.0)))
                .collect()
        })
        .collect()
}

/// Per-sample distortion of a class's base glyph.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlyphStyle {
    /// Maximum per-vertex offset in pixels.
    pub vertex_jitter: f64,
    /// Maximum whole-glyph offset in pixels.
    pub shift: f64,
    /// Maximum rotation about the image centre, radians.
    pub rotation: f64,
    /// Maximum relative change of scale.
    pub scale: f64,
}

impl Default for GlyphStyle {
    fn default() -> Self {
        Self { vertex_jitter: 1.25, shift: 1.5, rotation: 0.1, scale: 0.05 }
    }
}

fn symmetric(rng: &mut seeding::Rng, max: f64) -> f64 {
    if max > 0.0 { rng.random_range(-max..max) } else { 0.0 }
}

fn distorted(base: &[Vec<Point>], style: &GlyphStyle, rng: &mut seeding::Rng) -> Vec<Vec<Point>> {
    let centre = Point::new(INPUT_SIDE as f64 / 2.0, INPUT_SIDE as f64 / 2.0);
    let angle = symmetric(rng, style.rotation);
    let scale = 1.0 + symmetric(rng, style.scale);
    let shift = Point::new(symmetric(rng, style.shift), symmetric(rng, style.shift));
    base.iter()
        .map(|s| {
            s.iter()
                .map(|&p| {
                    let jitter = Point::new(symmetric(rng, style.vertex_jitter), symmetric(rng, style.vertex_jitter));
                    centre + (p - centre).rotated(angle) * scale + shift + jitter
                })
                .collect()
        })
        .collect()
}

fn hamming(a: &BinaryImage, b: &BinaryImage) -> usize {
    a.bits().iter().zip(b.bits()).filter(|(x, y)| x != y).count()
}

impl GlyphDataset {
    /// `classes` seeded stroke glyphs, each drawn `per_class` times under
    /// the default [`GlyphStyle`].
    pub fn synthetic(classes: usize, per_class: usize, seed: u64) -> Self {
        Self::synthetic_with(GlyphStyle::default(), classes, per_class, seed)
    }

    pub fn synthetic_with(style: GlyphStyle, classes: usize, per_class: usize, seed: u64) -> Self {
        let mut rng = seeding::rng(seeding::derive(seed, 0x91f));
        let mut bases: Vec<(Vec<Vec<Point>>, BinaryImage)> = Vec::with_capacity(classes);
        while bases.len() < classes {
            let strokes = base_glyph(&mut rng);
            let img = draw_strokes(&strokes);
            if bases.iter().all(|(_, other)| hamming(&img, other) >= MIN_GLYPH_DISTANCE) {
                bases.push((strokes, img));
            }
        }
        let classes = bases
            .iter()
            .enumerate()
            .map(|(i, (strokes, _))| GlyphClass {
                name: format!("glyph-{i}"),
                images: (0..per_class).map(|_| draw_strokes(&distorted(strokes, &style, &mut rng))).collect(),
            })
            .collect();
        Self { classes }
    }

    /// Splits off classes from `at` onward, e.g. into meta-train and
    /// held-out classes.
    pub fn split(mut self, at: usize) -> (Self, Self) {
        let rest = self.classes.split_off(at.min(self.classes.len()));
        (self, Self { classes: rest })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Reads `root/<class>/<sample>` files: plain or raw portable graymaps
    /// (`P2`/`P5`), otherwise rows of `0`/`1` characters. Pixels at or above
    /// half intensity are set; images are resized to 28x28 by nearest
    /// neighbour.
    pub fn load_folder(root: &Path) -> Result<Self, FewShotError> {
        fn io(path: &Path) -> impl FnOnce(std::io::Error) -> FewShotError + '_ {
            move |source| FewShotError::Io { path: path.to_path_buf(), source }
        }
        let mut dirs: Vec<PathBuf> = fs::read_dir(root)
            .map_err(io(root))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        let mut classes = Vec::with_capacity(dirs.len());
        for dir in dirs {
            let mut files: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(io(&dir))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            let mut images = Vec::with_capacity(files.len());
            for file in &files {
                let bytes = fs::read(file).map_err(io(file))?;
                let (h, w, ink) = decode_frame(&bytes)
                    .map_err(|reason| FewShotError::Parse { path: file.clone(), reason })?;
                images.push(resize_nearest(h, w, &ink));
            }
            let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            if images.len() < 2 {
                log::warn!("class {name} has {} sample(s)", images.len());
            }
            classes.push(GlyphClass { name, images });
        }
        if classes.is_empty() {
            return Err(FewShotError::NoClasses(root.to_path_buf()));
        }
        Ok(Self { classes })
    }
}

/// Loads a class-per-directory image folder; see [`GlyphDataset::load_folder`].
pub fn load_image_folder(root: &Path) -> Result<GlyphDataset, FewShotError> {
    GlyphDataset::load_folder(root)
}

/// Height, width and thresholded pixels of a graymap or 0/1 text frame.
fn decode_frame(bytes: &[u8]) -> Result<(usize, usize, Vec<bool>), String> {
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        return decode_pgm(bytes);
    }
    let text = std::str::from_utf8(bytes).map_err(|_| "not a graymap or 0/1 text".to_string())?;
    let rows: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let width = rows.first().map_or(0, |r| r.len());
    if width == 0 {
        return Err("empty frame".into());
    }
    let mut ink = Vec::with_capacity(rows.len() * width);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(format!("row {} has {} columns, expected {width}", i + 1, row.len()));
        }
        for ch in row.chars() {
            match ch {
                '0' => ink.push(false),
                '1' => ink.push(true),
                other => return Err(format!("row {}: unexpected character {other:?}", i + 1)),
            }
        }
    }
    Ok((rows.len(), width, ink))
}

fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<bool>), String> {
    let binary = bytes[1] == b'5';
    let mut pos = 2;
    let mut header = [0usize; 3];
    for field in header.iter_mut() {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed graymap header")?;
    }
    let [width, height, maxval] = header;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(format!("bad graymap header {width}x{height} max {maxval}"));
    }
    let n = width * height;
    let values: Vec<usize> = if binary {
        let data = &bytes[pos + 1..];
        let wide = maxval > 255;
        let need = if wide { 2 * n } else { n };
        if data.len() < need {
            return Err(format!("expected {need} data bytes, found {}", data.len()));
        }
        if wide {
            data.chunks(2).take(n).map(|c| usize::from(c[0]) << 8 | usize::from(c[1])).collect()
        } else {
            data[..n].iter().map(|&b| usize::from(b)).collect()
        }
    } else {
        let text = std::str::from_utf8(&bytes[pos..]).map_err(|_| "non-ASCII graymap body")?;
        let v: Vec<usize> = text
            .split_ascii_whitespace()
            .take(n)
            .map(|t| t.parse().map_err(|_| format!("bad sample {t:?}")))
            .collect::<Result<_, _>>()?;
        if v.len() < n {
            return Err(format!("expected {n} samples, found {}", v.len()));
        }
        v
    };
    Ok((height, width, values.iter().map(|&v| 2 * v >= maxval).collect()))
}

fn resize_nearest(h: usize, w: usize, ink: &[bool]) -> BinaryImage {
    let mut img = BinaryImage::new(INPUT_SIDE, INPUT_SIDE).expect("nonzero size");
    for r in 0..INPUT_SIDE {
        for c in 0..INPUT_SIDE {
            let (sr, sc) = (r * h / INPUT_SIDE, c * w / INPUT_SIDE);
            img.set(r, c, ink[sr * w + sc]);
        }
    }
    img
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledImage {
    pub image: BinaryImage,
    pub label: usize,
}

/// An N-way-K-shot task: labels index `classes`, which holds dataset class
/// indices. Support and query are class-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub classes: Vec<usize>,
    pub support: Vec<LabeledImage>,
    pub query: Vec<LabeledImage>,
}

impl Episode {
    pub fn support_images(&self) -> Vec<&BinaryImage> {
        self.support.iter().map(|l| &l.image).collect()
    }

    pub fn query_images(&self) -> Vec<&BinaryImage> {
        self.query.iter().map(|l| &l.image).collect()
    }

    pub fn support_labels(&self) -> Vec<usize> {
        self.support.iter().map(|l| l.label).collect()
    }

    pub fn query_labels(&self) -> Vec<usize> {
        self.query.iter().map(|l| l.label).collect()
    }
}

/// Draws `ways` classes among those with at least `shots + queries`
/// samples, then disjoint support and query samples, all without
/// replacement.
pub fn sample_episode(
    dataset: &GlyphDataset,
    ways: usize,
    shots: usize,
    queries: usize,
    seed: u64,
) -> Result<Episode, FewShotError> {
    if ways == 0 || shots == 0 {
        return Err(FewShotError::EmptyEpisode);
    }
    let per_class = shots + queries;
    let eligible: Vec<usize> =
        (0..dataset.classes.len()).filter(|&c| dataset.classes[c].images.len() >= per_class).collect();
    if eligible.len() < ways {
        return Err(FewShotError::NotEnoughClasses { needed: ways, per_class, available: eligible.len() });
    }
    let mut rng = seeding::rng(seed);
    let classes: Vec<usize> = eligible.choose_multiple(&mut rng, ways).copied().collect();
    let mut support = Vec::with_capacity(ways * shots);
    let mut query = Vec::with_capacity(ways * queries);
    for (label, &c) in classes.iter().enumerate() {
        let images = &dataset.classes[c].images;
        let mut idx: Vec<usize> = (0..images.len()).collect();
        idx.shuffle(&mut rng);
        support.extend(idx[..shots].iter().map(|&i| LabeledImage { image: images[i].clone(), label }));
        query.extend(idx[shots..per_class].iter().map(|&i| LabeledImage { image: images[i].clone(), label }));
    }
    Ok(Episode { ways, shots, queries, classes, support, query })
}

/// Fraction of rows of `logits: [B, N]` whose argmax (lowest index on ties)
/// equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let n = logits.shape()[1];
    let hits = logits
        .data()
        .chunks(n)
        .zip(labels)
        .filter(|(row, &label)| {
            let best = row.iter().enumerate().fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
            best == label
        })
        .count();
    hits as f64 / labels.len().max(1) as f64
}

/// Plain gradient descent on the softmax cross-entropy of a dense head over
/// fixed features. Returns the adapted head.
fn fit_head(head: &Layer, features: &Tensor, labels: &[usize], steps: usize, lr: f64) -> Result<Layer, FewShotError> {
    let mut head = head.clone();
    for _ in 0..steps {
        let mut g = Graph::new();
        let x = g.constant(features.clone());
        let ids = head.bind(&mut g);
        let logits = g.linear(x, ids.weight, ids.bias)?;
        let loss = g.softmax_cross_entropy(logits, labels)?;
        let grads = g.backward(loss)?;
        let mut dw = grads.get_or_zeros(ids.weight, head.weight.shape());
        let mut db = grads.get_or_zeros(ids.bias, head.bias.shape());
        dw.scale_assign(-lr);
        db.scale_assign(-lr);
        head.weight.add_assign(&dw);
        head.bias.add_assign(&db);
    }
    Ok(head)
}

/// Fits an N-way logistic-regression head on frozen support features
/// (zero init, `steps` full-batch steps of size [`PROBE_LR`]) and returns
/// query accuracy.
pub fn logistic_probe(backbone: &Backbone, episode: &Episode, steps: usize) -> Result<f64, FewShotError> {
    let support = backbone.features(&episode.support_images())?;
    let query = backbone.features(&episode.query_images())?;
    probe_features(&support, &episode.support_labels(), &query, &episode.query_labels(), episode.ways, steps)
}

/// [`logistic_probe`] on precomputed features.
pub fn probe_features(
    support: &Tensor,
    support_labels: &[usize],
    query: &Tensor,
    query_labels: &[usize],
    ways: usize,
    steps: usize,
) -> Result<f64, FewShotError> {
    let dim = support.shape()[1];
    let head = fit_head(&Layer::dense_zeros(dim, ways), support, support_labels, steps, PROBE_LR)?;
    Ok(accuracy(&head.apply(query), query_labels))
}

/// Where each episode's inner loop starts the classifier head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInit {
    /// Zeros every episode; only the backbone is meta-learned.
    Zero,
    /// A meta-learned head, updated by the outer loop like the backbone.
    Learned,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    pub episodes: usize,
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub inner_steps: usize,
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub head_init: HeadInit,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            episodes: 500,
            ways: 5,
            shots: 5,
            queries: 5,
            inner_steps: 5,
            inner_lr: 0.01,
            outer_lr: 0.001,
            head_init: HeadInit::Zero,
            seed: 0,
        }
    }
}

impl MetaConfig {
    fn episode(&self, dataset: &GlyphDataset, index: usize) -> Result<Episode, FewShotError> {
        sample_episode(dataset, self.ways, self.shots, self.queries, seeding::derive(self.seed, 0x3e7a + index as u64))
    }

    fn initial_head(&self, model: &Classifier) -> Layer {
        match self.head_init {
            HeadInit::Zero => Layer::dense_zeros(model.head.weight.shape()[1], model.head.out_dim()),
            HeadInit::Learned => model.head.clone(),
        }
    }
}

fn class_logits(g: &mut Graph, bb: &BackboneIds, head: &LayerIds, images: &[&BinaryImage]) -> Result<NodeId, FewShotError> {
    let f = Backbone::forward_images(g, bb, images)?;
    Ok(g.linear(f, head.weight, head.bias)?)
}

/// Query loss at `adapted`, with its gradient applied by Adam to the
/// meta-parameters: the backbone, plus the head when it is meta-learned.
fn outer_step(
    model: &mut Classifier,
    adapted: &Classifier,
    episode: &Episode,
    opt: &mut Adam,
    head_init: HeadInit,
) -> Result<f64, FewShotError> {
    let mut g = Graph::new();
    let bb = adapted.backbone.bind(&mut g);
    let head = adapted.head.bind(&mut g);
    let logits = class_logits(&mut g, &bb, &head, &episode.query_images())?;
    let loss = g.softmax_cross_entropy(logits, &episode.query_labels())?;
    let value = g.value(loss).item();
    let grads = g.backward(loss)?;
    match head_init {
        HeadInit::Zero => nn::adam_step(&mut model.backbone, opt, &grads, &bb.ids()),
        HeadInit::Learned => {
            let mut ids = bb.ids();
            ids.extend(head.ids());
            nn::adam_step(model, opt, &grads, &ids);
        }
    }
    Ok(value)
}

/// ANIL inner loop: adapts only the head on the episode's support features.
pub fn anil_adapt(model: &Classifier, episode: &Episode, cfg: &MetaConfig) -> Result<Layer, FewShotError> {
    let features = model.backbone.features(&episode.support_images())?;
    fit_head(&cfg.initial_head(model), &features, &episode.support_labels(), cfg.inner_steps, cfg.inner_lr)
}

/// Query accuracy after ANIL adaptation.
pub fn anil_evaluate(model: &Classifier, episode: &Episode, cfg: &MetaConfig) -> Result<f64, FewShotError> {
    let head = anil_adapt(model, episode, cfg)?;
    let query = model.backbone.features(&episode.query_images())?;
    Ok(accuracy(&head.apply(&query), &episode.query_labels()))
}

/// First-order ANIL. Each episode adapts the head on support features, then
/// one Adam step follows the query-loss gradient taken at the adapted head.
/// Returns per-episode query losses.
pub fn anil_meta_train(model: &mut Classifier, dataset: &GlyphDataset, cfg: &MetaConfig) -> Result<Vec<f64>, FewShotError> {
    let mut opt = Adam::new(cfg.outer_lr);
    let mut log = Vec::with_capacity(cfg.episodes);
    for i in 0..cfg.episodes {
        let episode = cfg.episode(dataset, i)?;
        let adapted = Classifier { backbone: model.backbone.clone(), head: anil_adapt(model, &episode, cfg)? };
        log.push(outer_step(model, &adapted, &episode, &mut opt, cfg.head_init)?);
    }
    Ok(log)
}

fn support_step(model: &mut Classifier, episode: &Episode, lr: f64) -> Result<f64, FewShotError> {
    let mut g = Graph::new();
    let bb = model.backbone.bind(&mut g);
    let head = model.head.bind(&mut g);
    let logits = class_logits(&mut g, &bb, &head, &episode.support_images())?;
    let loss = g.softmax_cross_entropy(logits, &episode.support_labels())?;
    let value = g.value(loss).item();
    let grads = g.backward(loss)?;
    let mut ids = bb.ids();
    ids.extend(head.ids());
    for (p, id) in model.params_mut().into_iter().zip(ids) {
        let mut step = grads.get_or_zeros(id, p.shape());
        step.scale_assign(-lr);
        p.add_assign(&step);
    }
    Ok(value)
}

/// Full-network inner loop: `inner_steps` SGD steps on the support loss.
/// Returns the adapted copy and the support loss before each step.
pub fn fomaml_adapt(model: &Classifier, episode: &Episode, cfg: &MetaConfig) -> Result<(Classifier, Vec<f64>), FewShotError> {
    let mut adapted = Classifier { backbone: model.backbone.clone(), head: cfg.initial_head(model) };
    let mut losses = Vec::with_capacity(cfg.inner_steps);
    for _ in 0..cfg.inner_steps {
        losses.push(support_step(&mut adapted, episode, cfg.inner_lr)?);
    }
    Ok((adapted, losses))
}

pub fn fomaml_evaluate(model: &Classifier, episode: &Episode, cfg: &MetaConfig) -> Result<f64, FewShotError> {
    let (adapted, _) = fomaml_adapt(model, episode, cfg)?;
    let query = adapted.backbone.features(&episode.query_images())?;
    Ok(accuracy(&adapted.head.apply(&query), &episode.query_labels()))
}

/// First-order MAML: the query-loss gradient at the adapted parameters is
/// applied to the meta-parameters by Adam. Returns per-episode query losses.
pub fn fomaml_meta_train(model: &mut Classifier, dataset: &GlyphDataset, cfg: &MetaConfig) -> Result<Vec<f64>, FewShotError> {
    let mut opt = Adam::new(cfg.outer_lr);
    let mut log = Vec::with_capacity(cfg.episodes);
    for i in 0..cfg.episodes {
        let episode = cfg.episode(dataset, i)?;
        let (adapted, _) = fomaml_adapt(model, &episode, cfg)?;
        log.push(outer_step(model, &adapted, &episode, &mut opt, cfg.head_init)?);
    }
    Ok(log)
}

/// `[N, N*K]` matrix averaging class-major support rows into prototypes.
fn prototype_matrix(ways: usize, shots: usize) -> Tensor {
    let mut m = Tensor::zeros(&[ways, ways * shots]);
    for c in 0..ways {
        for s in 0..shots {
            m.data_mut()[c * ways * shots + c * shots + s] = 1.0 / shots as f64;
        }
    }
    m
}

/// Prototypical-network episode: prototypes are mean support embeddings,
/// queries are scored by negative squared Euclidean distance. Returns the
/// cross-entropy node and query accuracy.
pub fn protonet_episode_loss(g: &mut Graph, bb: &BackboneIds, episode: &Episode) -> Result<(NodeId, f64), FewShotError> {
    let mut images = episode.support_images();
    images.extend(episode.query_images());
    let f = Backbone::forward_images(g, bb, &images)?;
    let ns = episode.support.len();
    let support = g.slice_rows(f, 0, ns)?;
    let query = g.slice_rows(f, ns, images.len())?;
    protonet_loss_on(g, support, query, episode)
}

/// The prototypical loss on embeddings already in the graph.
pub fn protonet_loss_on(
    g: &mut Graph,
    support: NodeId,
    query: NodeId,
    episode: &Episode,
) -> Result<(NodeId, f64), FewShotError> {
    let avg = g.constant(prototype_matrix(episode.ways, episode.shots));
    let protos = g.matmul(avg, support)?;
    let logits = g.neg_sq_dists(query, protos)?;
    let labels = episode.query_labels();
    let acc = accuracy(g.value(logits), &labels);
    Ok((g.softmax_cross_entropy(logits, &labels)?, acc))
}

/// No-grad prototypical query accuracy.
pub fn protonet_evaluate(backbone: &Backbone, episode: &Episode) -> Result<f64, FewShotError> {
    let mut g = Graph::new();
    let support = g.constant(backbone.features(&episode.support_images())?);
    let query = g.constant(backbone.features(&episode.query_images())?);
    Ok(protonet_loss_on(&mut g, support, query, episode)?.1)
}

/// One Adam step on the backbone per episode. Returns per-episode losses.
pub fn protonet_meta_train(backbone: &mut Backbone, dataset: &GlyphDataset, cfg: &MetaConfig) -> Result<Vec<f64>, FewShotError> {
    let mut opt = Adam::new(cfg.outer_lr);
    let mut log = Vec::with_capacity(cfg.episodes);
    for i in 0..cfg.episodes {
        let episode = cfg.episode(dataset, i)?;
        let mut g = Graph::new();
        let bb = backbone.bind(&mut g);
        let (loss, _) = protonet_episode_loss(&mut g, &bb, &episode)?;
        log.push(g.value(loss).item());
        let grads = g.backward(loss)?;
        nn::adam_step(backbone, &mut opt, &grads, &bb.ids());
    }
    Ok(log)
}

/// Few-shot learners compared in the report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FewShotMethod {
    Probe,
    Anil,
    Fomaml,
    Protonet,
}

impl FewShotMethod {
    pub const ALL: [FewShotMethod; 4] =
        [FewShotMethod::Probe, FewShotMethod::Anil, FewShotMethod::Fomaml, FewShotMethod::Protonet];

    pub fn label(&self) -> &'static str {
        match self {
            FewShotMethod::Probe => "logistic probe",
            FewShotMethod::Anil => "ANIL",
            FewShotMethod::Fomaml => "FO-MAML",
            FewShotMethod::Protonet => "ProtoNet",
        }
    }
}

/// Meta-trains (except for the probe) from `backbone` on `train`, then
/// returns query accuracy on `eval_episodes` episodes from `test`.
pub fn run_method(
    method: FewShotMethod,
    backbone: &Backbone,
    train: &GlyphDataset,
    test: &GlyphDataset,
    eval_episodes: usize,
    cfg: &MetaConfig,
) -> Result<Vec<f64>, FewShotError> {
    let eval_seed = |i: usize| seeding::derive(cfg.seed, 0xe7a1 + i as u64);
    let episodes: Vec<Episode> = (0..eval_episodes)
        .map(|i| sample_episode(test, cfg.ways, cfg.shots, cfg.queries, eval_seed(i)))
        .collect::<Result<_, _>>()?;
    match method {
        FewShotMethod::Probe => episodes.iter().map(|e| logistic_probe(backbone, e, PROBE_STEPS)).collect(),
        FewShotMethod::Anil | FewShotMethod::Fomaml => {
            let mut model = Classifier::new(backbone.clone(), cfg.ways, seeding::derive(cfg.seed, 1));
            if method == FewShotMethod::Anil {
                anil_meta_train(&mut model, train, cfg)?;
                episodes.iter().map(|e| anil_evaluate(&model, e, cfg)).collect()
            } else {
                fomaml_meta_train(&mut model, train, cfg)?;
                episodes.iter().map(|e| fomaml_evaluate(&model, e, cfg)).collect()
            }
        }
        FewShotMethod::Protonet => {
            let mut bb = backbone.clone();
            protonet_meta_train(&mut bb, train, cfg)?;
            episodes.iter().map(|e| protonet_evaluate(&bb, e)).collect()
        }
    }
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}
