//! Experiment runners shared by the CLI and the acceptance suite, and the
//! tab-separated tables they print.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitmap::BinaryImage;
use crate::envs::{self, EnvError, FoldEnv, RoomEnv};
use crate::fewshot::{self, FewShotError, FewShotMethod, GlyphDataset, MetaConfig};
use crate::irl::{self, IrlError, Method, TrainConfig};
use crate::nn::{Backbone, ScoreModel};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Irl(#[from] IrlError),
    #[error(transparent)]
    FewShot(#[from] FewShotError),
    #[error("{ways}-way episodes need {ways} held-out classes, dataset has {available}")]
    TooFewClasses { ways: usize, available: usize },
}

/// A plain-text table rendered as tab-separated lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_tsv(&self) -> String {
        let mut s = self.header.join("\t");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join("\t"));
            s.push('\n');
        }
        s
    }

    /// Inverse of [`Table::to_tsv`].
    pub fn from_tsv(text: &str) -> Self {
        let mut lines = text.lines().map(|l| l.split('\t').map(str::to_string).collect::<Vec<_>>());
        let header = lines.next().unwrap_or_default();
        Self { header, rows: lines.collect() }
    }
}

pub fn fmt_mean_sd(values: &[f64]) -> String {
    let (m, sd) = fewshot::mean_sd(values);
    format!("{m:.3} ± {sd:.3}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IrlTask {
    Folding,
    Room,
}

/// P@1..P@3 values pooled over trajectories (and seeds, when merged).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrecisionRow {
    pub train: [Vec<f64>; 3],
    pub test: [Vec<f64>; 3],
}

impl PrecisionRow {
    fn merge(&mut self, other: PrecisionRow) {
        for k in 0..3 {
            self.train[k].extend(&other.train[k]);
            self.test[k].extend(&other.test[k]);
        }
    }
}

fn frames(trajectories: &[envs::ExpertTrajectory]) -> Vec<Vec<BinaryImage>> {
    trajectories.iter().map(|t| t.frames.clone()).collect()
}

/// Trains one score model on the task's training demonstrations for
/// `data_seed` and evaluates P@K on its train and test trajectories.
pub fn irl_run(
    task: IrlTask,
    method: Method,
    pretrained: Option<&Backbone>,
    cfg: &TrainConfig,
    data_seed: u64,
) -> Result<(ScoreModel, PrecisionRow), ReportError> {
    let mut model = match pretrained {
        Some(bb) => ScoreModel::with_backbone(bb.clone(), cfg.seed),
        None => ScoreModel::new(cfg.seed),
    };
    let (train, test) = match task {
        IrlTask::Folding => {
            let (train, test) = envs::generate_garments(data_seed);
            let train = train.iter().map(envs::expert_fold_trajectory).collect::<Result<Vec<_>, _>>()?;
            let test = test.iter().map(envs::expert_fold_trajectory).collect::<Result<Vec<_>, _>>()?;
            irl::train_irl(&mut model, method, &FoldEnv, &frames(&train), cfg)?;
            (frames(&train), frames(&test))
        }
        IrlTask::Room => {
            let (train, test) = envs::generate_rooms(data_seed);
            let scenes: Vec<_> = train.iter().map(|d| d.scenes.clone()).collect();
            irl::train_irl(&mut model, method, &RoomEnv, &scenes, cfg)?;
            let pick = |d: &[envs::RoomDemo]| d.iter().map(|d| d.trajectory.frames.clone()).collect::<Vec<_>>();
            (pick(&train), pick(&test))
        }
    };
    let row = PrecisionRow { train: irl::evaluate_precision(&model, &train)?, test: irl::evaluate_precision(&model, &test)? };
    Ok((model, row))
}

/// One row per method and backbone initialisation (random first, then
/// pretrained when given), P@K pooled over `seeds`.
pub fn irl_matrix(
    task: IrlTask,
    methods: &[Method],
    pretrained: Option<&Backbone>,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<Table, ReportError> {
    let mut table = Table::new(&["method", "pretrained", "train P@1", "train P@2", "train P@3", "test P@1", "test P@2", "test P@3"]);
    let inits: Vec<Option<&Backbone>> = match pretrained {
        Some(bb) => vec![None, Some(bb)],
        None => vec![None],
    };
    for &method in methods {
        for init in &inits {
            let mut pooled = PrecisionRow::default();
            for &seed in seeds {
                let run_cfg = TrainConfig { seed, ..*cfg };
                let (_, row) = irl_run(task, method, *init, &run_cfg, seed)?;
                pooled.merge(row);
            }
            let mut cells = vec![method.label().to_string(), init.is_some().to_string()];
            cells.extend(pooled.train.iter().chain(&pooled.test).map(|v| fmt_mean_sd(v)));
            table.push(cells);
        }
    }
    Ok(table)
}

/// Glyph corpus used by the few-shot report: `classes` synthetic classes,
/// the first `train_classes` for meta-training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlyphCorpus {
    pub classes: usize,
    pub per_class: usize,
    pub train_classes: usize,
}

impl Default for GlyphCorpus {
    fn default() -> Self {
        Self { classes: 100, per_class: 20, train_classes: 70 }
    }
}

impl GlyphCorpus {
    pub fn build(&self, seed: u64) -> (GlyphDataset, GlyphDataset) {
        GlyphDataset::synthetic(self.classes, self.per_class, seed).split(self.train_classes)
    }
}

/// Meta-training and held-out classes for one seed.
pub struct SeededSplit {
    pub seed: u64,
    pub train: GlyphDataset,
    pub test: GlyphDataset,
}

impl GlyphCorpus {
    pub fn splits(&self, seeds: &[u64]) -> Vec<SeededSplit> {
        seeds
            .iter()
            .map(|&seed| {
                let (train, test) = self.build(seed);
                SeededSplit { seed, train, test }
            })
            .collect()
    }
}

/// Accuracy table over (ways, shots) settings, methods and backbone
/// initialisations; each cell pools `eval_episodes` episodes from every split.
pub fn fewshot_table(
    methods: &[FewShotMethod],
    backbones: &[(&str, &Backbone)],
    settings: &[(usize, usize)],
    splits: &[SeededSplit],
    eval_episodes: usize,
    cfg: &MetaConfig,
) -> Result<Table, ReportError> {
    let mut table = Table::new(&["method", "backbone", "N", "K", "accuracy"]);
    for &(ways, shots) in settings {
        if let Some(available) = splits.iter().map(|s| s.test.len()).filter(|&n| n < ways).min() {
            return Err(ReportError::TooFewClasses { ways, available });
        }
        for &method in methods {
            for &(label, backbone) in backbones {
                let mut acc = Vec::new();
                for split in splits {
                    let run = MetaConfig { ways, shots, seed: split.seed, ..*cfg };
                    acc.extend(fewshot::run_method(method, backbone, &split.train, &split.test, eval_episodes, &run)?);
                }
                table.push(vec![method.label().into(), label.into(), ways.to_string(), shots.to_string(), fmt_mean_sd(&acc)]);
            }
        }
    }
    Ok(table)
}
