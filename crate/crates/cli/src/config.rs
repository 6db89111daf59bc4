use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use tangram_core::fewshot::{FewShotMethod, MetaConfig};
use tangram_core::irl::TrainConfig;
use tangram_core::pretrain::PretrainConfig;
use tangram_core::report::GlyphCorpus;

use crate::{files, CliError};

/// Every tunable of a run, stored as JSON. Missing fields take defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Base seed; reports average over `seed_count` consecutive seeds.
    pub seed: u64,
    pub seed_count: usize,
    pub tangram_traces: usize,
    pub pretrain: PretrainConfig,
    pub irl: TrainConfig,
    pub fewshot: FewShotConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seed_count: 5,
            tangram_traces: 200,
            pretrain: PretrainConfig::default(),
            irl: TrainConfig::default(),
            fewshot: FewShotConfig::default(),
            paths: Paths::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FewShotConfig {
    pub meta: MetaConfig,
    pub eval_episodes: usize,
    /// `(ways, shots)` pairs.
    pub settings: Vec<(usize, usize)>,
    pub methods: Vec<FewShotMethod>,
    pub glyphs: GlyphCorpus,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        Self {
            meta: MetaConfig::default(),
            eval_episodes: 100,
            settings: vec![(5, 5), (20, 5)],
            methods: FewShotMethod::ALL.to_vec(),
            glyphs: GlyphCorpus::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory of tangram trace documents for pre-training.
    pub traces: Option<PathBuf>,
    /// Word-vector text file.
    pub embeddings: Option<PathBuf>,
    /// Pretrained TGRM weights.
    pub weights: Option<PathBuf>,
    /// Image-folder dataset (one subdirectory per class) replacing the
    /// synthetic glyphs.
    pub glyph_folder: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = files::read_text(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs serialize")
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.seed_count as u64).map(|i| self.seed + i).collect()
    }

    /// Checks value ranges and that every referenced path exists.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.seed_count == 0 {
            return Err(CliError::Invalid("seed_count must be at least 1".into()));
        }
        self.pretrain.check()?;
        let p = &self.paths;
        for path in [&p.traces, &p.embeddings, &p.weights, &p.glyph_folder].into_iter().flatten() {
            if !path.exists() {
                return Err(CliError::Invalid(format!("configured path {} does not exist", path.display())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_takes_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"seed": 7, "irl": {"iterations": 2}}"#).unwrap();
        assert_eq!(cfg.seeds(), vec![7, 8, 9, 10, 11]);
        assert_eq!(cfg.irl.iterations, 2);
        assert_eq!(cfg.irl.learning_rate, 0.001);
        assert_eq!(cfg.fewshot.settings, vec![(5, 5), (20, 5)]);
    }

    #[test]
    fn unknown_fields_and_missing_paths_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sede": 1}"#).is_err());
        let mut cfg = RunConfig::default();
        cfg.paths.weights = Some("/nonexistent/w.tgrm".into());
        assert!(matches!(cfg.validate(), Err(CliError::Invalid(_))));
    }
}
