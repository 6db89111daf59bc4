//! Atomic writes and loaders for the files the CLI exchanges.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use tangram_core::nn::weights::{self, WeightRecord};
use tangram_core::nn::{Backbone, Parameterized};
use tangram_core::trace::TraceDocument;

use crate::CliError;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Writes `bytes` to a temporary file next to `path`, then renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn read_trace(path: &Path) -> Result<TraceDocument, CliError> {
    TraceDocument::from_json(&read_text(path)?).map_err(|source| CliError::Trace { path: path.to_path_buf(), source })
}

pub fn write_trace(path: &Path, doc: &TraceDocument) -> Result<(), CliError> {
    write_atomic(path, doc.to_json().as_bytes())
}

/// `*.json` files directly inside `dir`, sorted by name.
pub fn trace_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    out.sort();
    Ok(out)
}

pub fn save_weights(path: &Path, model: &impl Parameterized) -> Result<(), CliError> {
    let mut bytes = Vec::new();
    weights::save_model(&mut bytes, model).map_err(|source| CliError::Weights { path: path.to_path_buf(), source })?;
    write_atomic(path, &bytes)
}

pub fn read_weights(path: &Path) -> Result<Vec<WeightRecord>, CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    weights::read_weights(bytes.as_slice()).map_err(|source| CliError::Weights { path: path.to_path_buf(), source })
}

/// The feature extractor stored in a weights file written by `pretrain`
/// or `train-irl`.
pub fn load_backbone(path: &Path) -> Result<Backbone, CliError> {
    let records = read_weights(path)?;
    let mut bb = Backbone::zeros();
    weights::load_into(&mut bb, &records, "backbone.").map_err(|source| CliError::Weights { path: path.to_path_buf(), source })?;
    Ok(bb)
}
