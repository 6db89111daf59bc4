use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tangram_cli::config::RunConfig;
use tangram_cli::{files, EXIT_INVALID, EXIT_IO};
use tangram_core::geometry::{generate_trace, Variant};
use tangram_core::report::Table;
use tangram_core::trace::TraceDocument;

fn tangram(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tangram")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_tangram_writes_valid_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = tangram(&["generate", "tangram", "--count", "200", "--seed", "3", "--out", path(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let traces = files::trace_files(dir.path()).unwrap();
    assert_eq!(traces.len(), 200);
    let args: Vec<&str> = std::iter::once("validate").chain(traces.iter().map(|p| path(p))).collect();
    let out = tangram(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn generate_folding_and_room_counts() {
    let dir = tempfile::tempdir().unwrap();
    for (kind, train, test) in [("folding", 18, 9), ("room", 30, 10)] {
        let root = dir.path().join(kind);
        assert_eq!(code(&tangram(&["generate", kind, "--out", path(&root)])), 0);
        assert_eq!(files::trace_files(&root.join("train")).unwrap().len(), train);
        assert_eq!(files::trace_files(&root.join("test")).unwrap().len(), test);
        for p in files::trace_files(&root.join("test")).unwrap() {
            let doc = files::read_trace(&p).unwrap();
            assert!(doc.to_trajectory().unwrap().len() >= 2);
        }
    }
}

#[test]
fn trace_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let trace = generate_trace(11, Variant::B, 7).unwrap();
    let doc = TraceDocument::from_solve_trace(&trace);
    let p = dir.path().join("t.json");
    files::write_trace(&p, &doc).unwrap();
    let back = files::read_trace(&p).unwrap();
    assert_eq!(back, doc);
    assert_eq!(back.to_solve_trace().unwrap(), trace);
}

#[test]
fn config_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.json");
    assert_eq!(code(&tangram(&["--seed", "9", "init-config", "--out", path(&p)])), 0);
    let cfg = RunConfig::load(&p).unwrap();
    assert_eq!(cfg, RunConfig { seed: 9, ..RunConfig::default() });
    assert_eq!(cfg.seed_count, 5);
    assert_eq!(cfg.to_json(), fs::read_to_string(&p).unwrap());
}

fn write_config(dir: &Path, json: &str) -> String {
    let p = dir.join("cfg.json");
    fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn pretrain_is_reproducible_and_weights_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces");
    assert_eq!(code(&tangram(&["generate", "tangram", "--count", "8", "--out", path(&traces)])), 0);
    let cfg = write_config(dir.path(), r#"{"pretrain": {"epochs": 2}}"#);
    let mut weights = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = tangram(&["--config", &cfg, "--seed", "4", "pretrain", "--traces", path(&traces), "--out", path(&out_dir)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let log = fs::read_to_string(out_dir.join("loss.tsv")).unwrap();
        assert_eq!(log.lines().count(), 3);
        weights.push(fs::read(out_dir.join("pretrained.tgrm")).unwrap());
    }
    assert_eq!(weights[0], weights[1]);

    let records = files::read_weights(&dir.path().join("a/pretrained.tgrm")).unwrap();
    let mut rewritten = Vec::new();
    tangram_core::nn::weights::write_weights(&mut rewritten, records.iter().map(|r| (r.name.as_str(), &r.tensor))).unwrap();
    assert_eq!(rewritten, weights[0]);
    let bb = files::load_backbone(&dir.path().join("a/pretrained.tgrm")).unwrap();
    assert_ne!(bb, tangram_core::nn::Backbone::zeros());
}

#[test]
fn pretrain_rejects_invalid_traces() {
    let dir = tempfile::tempdir().unwrap();
    let mut trace = generate_trace(1, Variant::A, 3).unwrap();
    trace.steps[1].poses[0].rot = 24;
    files::write_trace(&dir.path().join("bad.json"), &TraceDocument::from_solve_trace(&trace)).unwrap();
    let out = tangram(&["pretrain", "--traces", path(dir.path()), "--out", path(&dir.path().join("w"))]);
    assert_eq!(code(&out), EXIT_INVALID);
    assert!(String::from_utf8_lossy(&out.stderr).contains("OutOfRange"));
    assert!(!dir.path().join("w").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut trace = generate_trace(2, Variant::A, 4).unwrap();
    let good = dir.path().join("good.json");
    files::write_trace(&good, &TraceDocument::from_solve_trace(&trace)).unwrap();
    assert_eq!(code(&tangram(&["validate", path(&good)])), 0);

    trace.steps[2].poses[3].rot = 24;
    let bad = dir.path().join("bad.json");
    files::write_trace(&bad, &TraceDocument::from_solve_trace(&trace)).unwrap();
    let out = tangram(&["validate", path(&good), path(&bad)]);
    assert_eq!(code(&out), EXIT_INVALID);
    assert!(String::from_utf8_lossy(&out.stderr).contains("step 2"));

    let garbled = dir.path().join("garbled.json");
    fs::write(&garbled, "{\"schema_version\": 1").unwrap();
    assert_eq!(code(&tangram(&["validate", path(&garbled)])), EXIT_INVALID);
    assert_eq!(code(&tangram(&["validate", path(&dir.path().join("missing.json"))])), EXIT_IO);
    assert_eq!(code(&tangram(&["generate", "tangram", "--count", "1", "--out", path(&good.join("sub"))])), EXIT_IO);
    assert_eq!(code(&tangram(&["frobnicate"])), EXIT_INVALID);
}

fn mean_of(cell: &str) -> f64 {
    cell.split(' ').next().unwrap().parse().unwrap()
}

#[test]
fn irl_matrix_has_six_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"seed_count": 1, "irl": {"iterations": 1, "updates_per_iteration": 1, "replay_batch": 8}}"#,
    );
    let weights = dir.path().join("w.tgrm");
    files::save_weights(&weights, &tangram_core::nn::Backbone::new(5)).unwrap();

    let out = tangram(&["--config", &cfg, "train-irl", "--matrix", "--out", path(dir.path())]);
    assert_eq!(code(&out), EXIT_INVALID);
    let out = tangram(&["--config", &cfg, "train-irl", "--matrix", "--pretrained-weights", path(&dir.path().join("nope.tgrm")), "--out", path(dir.path())]);
    assert_eq!(code(&out), EXIT_IO);

    let out = tangram(&["--config", &cfg, "train-irl", "--matrix", "--pretrained-weights", path(&weights), "--out", path(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = Table::from_tsv(&fs::read_to_string(dir.path().join("irl-folding.tsv")).unwrap());
    assert_eq!(table.header[2..], ["train P@1", "train P@2", "train P@3", "test P@1", "test P@2", "test P@3"]);
    assert_eq!(table.rows.len(), 6);
    for row in &table.rows {
        for cell in &row[2..] {
            assert!((0.0..=1.0).contains(&mean_of(cell)), "{cell}");
        }
    }
    assert_eq!(table.rows.iter().filter(|r| r[1] == "true").count(), 3);
}

#[test]
fn single_irl_run_saves_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"seed_count": 1, "irl": {"iterations": 1}}"#);
    let out = tangram(&["--config", &cfg, "train-irl", "--method", "sl", "--out", path(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("score-sl.tgrm").exists());
    let table = Table::from_tsv(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0][..2], ["SL", "false"]);
}

#[test]
fn fewshot_report_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"seed_count": 1,
            "fewshot": {"eval_episodes": 2, "meta": {"episodes": 1},
                        "glyphs": {"classes": 40, "per_class": 10, "train_classes": 20}}}"#,
    );
    let weights = dir.path().join("w.tgrm");
    files::save_weights(&weights, &tangram_core::nn::Backbone::new(5)).unwrap();
    let out = tangram(&["--config", &cfg, "fewshot", "--pretrained-weights", path(&weights), "--out", path(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = Table::from_tsv(&fs::read_to_string(dir.path().join("fewshot.tsv")).unwrap());
    assert_eq!(table.header, ["method", "backbone", "N", "K", "accuracy"]);
    assert_eq!(table.rows.len(), 4 * 2 * 2);
    for setting in [["5", "5"], ["20", "5"]] {
        assert!(table.rows.iter().any(|r| r[2..4] == setting && r[1] == "random"));
    }
    for row in &table.rows {
        assert!((0.0..=1.0).contains(&mean_of(&row[4])));
    }
}
