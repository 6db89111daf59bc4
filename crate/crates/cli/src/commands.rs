use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use tangram_core::envs::{self, ExpertTrajectory};
use tangram_core::fewshot::GlyphDataset;
use tangram_core::geometry::{generate_corpus, validate_trace, SolveTrace, ValidateOptions, ValidationReport};
use tangram_core::irl::{Method, TrainConfig};
use tangram_core::nn::Backbone;
use tangram_core::pretrain::{self, EmbeddingTable};
use tangram_core::report::{self, IrlTask, PrecisionRow, SeededSplit, Table};
use tangram_core::trace::{TraceDocument, TraceKind};

use crate::config::RunConfig;
use crate::{files, CliError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerateKind {
    Tangram,
    Folding,
    Room,
}

fn write_split(out: &Path, split: &str, kind: TraceKind, trajectories: &[ExpertTrajectory]) -> Result<(), CliError> {
    for t in trajectories {
        let doc = TraceDocument::from_trajectory(kind, t);
        files::write_trace(&out.join(split).join(format!("{}-{}.json", kind.label(), t.name)), &doc)?;
    }
    Ok(())
}

/// Writes trace documents under `out`. Tangram traces go directly into
/// `out`; folding and room trajectories into `out/train` and `out/test`.
pub fn generate(kind: GenerateKind, count: usize, seed: u64, out: &Path) -> Result<String, CliError> {
    match kind {
        GenerateKind::Tangram => {
            let traces = generate_corpus(count, seed)?;
            for (i, t) in traces.iter().enumerate() {
                let report = validate_trace(t, &ValidateOptions::default());
                if !report.is_valid() {
                    return Err(CliError::Invalid(format!("generated trace {i} failed validation: {:?}", report.violations)));
                }
                files::write_trace(&out.join(format!("tangram-{i:04}.json")), &TraceDocument::from_solve_trace(t))?;
            }
            Ok(format!("tangram\t{}\n", traces.len()))
        }
        GenerateKind::Folding => {
            let (train, test) = envs::generate_garments(seed);
            let expert = |g: &[envs::Garment]| g.iter().map(envs::expert_fold_trajectory).collect::<Result<Vec<_>, _>>();
            let (train, test) = (
                expert(&train).map_err(|e| CliError::Invalid(e.to_string()))?,
                expert(&test).map_err(|e| CliError::Invalid(e.to_string()))?,
            );
            write_split(out, "train", TraceKind::Folding, &train)?;
            write_split(out, "test", TraceKind::Folding, &test)?;
            Ok(format!("folding train\t{}\nfolding test\t{}\n", train.len(), test.len()))
        }
        GenerateKind::Room => {
            let (train, test) = envs::generate_rooms(seed);
            let pick = |d: &[envs::RoomDemo]| d.iter().map(|d| d.trajectory.clone()).collect::<Vec<_>>();
            write_split(out, "train", TraceKind::Room, &pick(&train))?;
            write_split(out, "test", TraceKind::Room, &pick(&test))?;
            Ok(format!("room train\t{}\nroom test\t{}\n", train.len(), test.len()))
        }
    }
}

/// Validates one trace document; tangram documents also go through the
/// geometric checks.
pub fn check_document(doc: &TraceDocument) -> Result<ValidationReport, CliError> {
    match doc.kind {
        TraceKind::Tangram => {
            let trace = doc.to_solve_trace().map_err(|e| CliError::Invalid(e.to_string()))?;
            Ok(validate_trace(&trace, &ValidateOptions::default()))
        }
        TraceKind::Folding | TraceKind::Room => Ok(ValidationReport::default()),
    }
}

/// Checks every file; fails with the itemized report when any is invalid.
pub fn validate(paths: &[PathBuf]) -> Result<String, CliError> {
    let mut text = String::new();
    let mut failed = 0;
    for path in paths {
        let outcome = files::read_trace(path).and_then(|doc| check_document(&doc));
        match outcome {
            Ok(report) if report.is_valid() => writeln!(text, "{}\tok", path.display()).unwrap(),
            Ok(report) => {
                failed += 1;
                for v in &report.violations {
                    let step = v.step.map_or("-".to_string(), |s| s.to_string());
                    writeln!(text, "{}\tstep {step}\t{:?}\t{}", path.display(), v.kind, v.message).unwrap();
                }
            }
            Err(CliError::Io { path, source }) => return Err(CliError::Io { path, source }),
            Err(e) => {
                failed += 1;
                writeln!(text, "{}\t{e}", path.display()).unwrap();
            }
        }
    }
    if failed > 0 {
        return Err(CliError::Invalid(format!("{text}{failed} of {} traces invalid", paths.len())));
    }
    Ok(text)
}

/// Loads and validates every tangram trace in `dir`.
pub fn load_tangram_traces(dir: &Path) -> Result<Vec<SolveTrace>, CliError> {
    let paths = files::trace_files(dir)?;
    if paths.is_empty() {
        return Err(CliError::Invalid(format!("no trace documents in {}", dir.display())));
    }
    validate(&paths)?;
    paths
        .iter()
        .map(|p| {
            files::read_trace(p)?.to_solve_trace().map_err(|source| CliError::Trace { path: p.clone(), source })
        })
        .collect()
}

pub const WEIGHTS_FILE: &str = "pretrained.tgrm";
pub const LOSS_LOG_FILE: &str = "loss.tsv";

/// Pre-trains on the configured trace directory and writes the weights
/// and the per-epoch loss log into `out`.
pub fn pretrain(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    cfg.validate()?;
    let dir = cfg.paths.traces.as_ref().ok_or_else(|| CliError::Invalid("pretrain needs a trace directory".into()))?;
    let traces = load_tangram_traces(dir)?;
    let embeddings = match &cfg.paths.embeddings {
        Some(p) => EmbeddingTable::load(p).map_err(|e| match e {
            pretrain::PretrainError::Io(source) => CliError::Io { path: p.clone(), source },
            other => CliError::Invalid(format!("{}: {other}", p.display())),
        })?,
        None => EmbeddingTable::default(),
    }
    .with_fallback(cfg.seed);
    let run = pretrain::PretrainConfig { seed: cfg.seed, ..cfg.pretrain.clone() };
    let outcome = pretrain::pretrain(&traces, &embeddings, &run)?;
    files::save_weights(&out.join(WEIGHTS_FILE), &outcome.model)?;
    files::write_atomic(&out.join(LOSS_LOG_FILE), outcome.log.to_text().as_bytes())?;
    let mut text = format!("traces\t{}\nepochs\t{}\n", traces.len(), outcome.log.epochs.len());
    if !outcome.fallback_tokens.is_empty() {
        writeln!(text, "fallback embeddings\t{}", outcome.fallback_tokens.join(",")).unwrap();
    }
    Ok(text)
}

fn precision_cells(row: &PrecisionRow) -> Vec<String> {
    row.train.iter().chain(&row.test).map(|v| report::fmt_mean_sd(v)).collect()
}

pub struct IrlRequest<'a> {
    pub method: Option<Method>,
    pub task: IrlTask,
    pub matrix: bool,
    pub pretrained_weights: Option<&'a Path>,
}

/// One method (or, in matrix mode, every method with and without the
/// pretrained backbone) trained over the configured seeds. Writes the
/// table to `out/irl-<task>.tsv` and, outside matrix mode, the first seed's
/// score model to `out/score-<method>.tgrm`.
pub fn train_irl(cfg: &RunConfig, req: &IrlRequest, out: &Path) -> Result<String, CliError> {
    cfg.validate()?;
    let weights = req.pretrained_weights.map(Path::to_path_buf).or_else(|| cfg.paths.weights.clone());
    let pretrained = weights.as_deref().map(files::load_backbone).transpose()?;
    let seeds = cfg.seeds();
    let table = if req.matrix {
        let bb = pretrained.as_ref().ok_or_else(|| CliError::Invalid("matrix mode needs --pretrained-weights".into()))?;
        report::irl_matrix(req.task, &Method::ALL, Some(bb), &cfg.irl, &seeds)?
    } else {
        let method = req.method.ok_or_else(|| CliError::Invalid("choose --method or --matrix".into()))?;
        let mut table = Table::new(&["method", "pretrained", "train P@1", "train P@2", "train P@3", "test P@1", "test P@2", "test P@3"]);
        let mut pooled = PrecisionRow::default();
        for (i, &seed) in seeds.iter().enumerate() {
            let run = TrainConfig { seed, ..cfg.irl };
            let (model, row) = report::irl_run(req.task, method, pretrained.as_ref(), &run, seed)?;
            if i == 0 {
                let name = format!("score-{}.tgrm", method.label().to_lowercase());
                files::save_weights(&out.join(name), &model)?;
            }
            for k in 0..3 {
                pooled.train[k].extend(&row.train[k]);
                pooled.test[k].extend(&row.test[k]);
            }
        }
        let mut cells = vec![method.label().to_string(), pretrained.is_some().to_string()];
        cells.extend(precision_cells(&pooled));
        table.push(cells);
        table
    };
    let task = match req.task {
        IrlTask::Folding => "folding",
        IrlTask::Room => "room",
    };
    let text = table.to_tsv();
    files::write_atomic(&out.join(format!("irl-{task}.tsv")), text.as_bytes())?;
    Ok(text)
}

pub const FEWSHOT_FILE: &str = "fewshot.tsv";

/// Few-shot accuracies for every configured method and setting, always
/// with a random-init row and with a `tangram` row when weights are given.
pub fn fewshot(cfg: &RunConfig, pretrained_weights: Option<&Path>, out: &Path) -> Result<String, CliError> {
    cfg.validate()?;
    let fs = &cfg.fewshot;
    let weights = pretrained_weights.map(Path::to_path_buf).or_else(|| cfg.paths.weights.clone());
    let pretrained = weights.as_deref().map(files::load_backbone).transpose()?;
    let random = Backbone::new(cfg.seed);
    let mut backbones: Vec<(&str, &Backbone)> = vec![("random", &random)];
    if let Some(bb) = &pretrained {
        backbones.push(("tangram", bb));
    }
    let seeds = cfg.seeds();
    let splits = match &cfg.paths.glyph_folder {
        Some(dir) => {
            let ds = GlyphDataset::load_folder(dir).map_err(|e| CliError::Invalid(e.to_string()))?;
            let (train, test) = ds.split(fs.glyphs.train_classes);
            seeds.iter().map(|&seed| SeededSplit { seed, train: train.clone(), test: test.clone() }).collect()
        }
        None => fs.glyphs.splits(&seeds),
    };
    let table = report::fewshot_table(&fs.methods, &backbones, &fs.settings, &splits, fs.eval_episodes, &fs.meta)?;
    let text = table.to_tsv();
    files::write_atomic(&out.join(FEWSHOT_FILE), text.as_bytes())?;
    Ok(text)
}
