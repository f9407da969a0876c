use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::corpus::SquareMode;
use crate::eval::{ClassifierSpec, Regime};
use crate::gan::Hyperparameters;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Preprocess,
    Train,
    Generate,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Preprocess, Stage::Train, Stage::Generate, Stage::Evaluate];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Preprocess => "preprocess",
            Stage::Train => "train",
            Stage::Generate => "generate",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| PipelineError::InvalidStageSet(format!("unknown stage {s:?}")))
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Procedural toy corpus as a dataset source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySource {
    pub n: usize,
    pub n_classes: u32,
    #[serde(default)]
    pub seed: u64,
}

/// Where data comes from. `preprocess` reads one of `source_dir`, `archive`
/// or `toy`; later stages may instead read already-split archives.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Image tree; with `labeled`, one subdirectory per class.
    pub source_dir: Option<PathBuf>,
    #[serde(default)]
    pub labeled: bool,
    /// A packaged archive to re-split.
    pub archive: Option<PathBuf>,
    pub toy: Option<ToySource>,
    /// Packaged training split, used when `preprocess` is not selected.
    pub train_archive: Option<PathBuf>,
    /// Packaged evaluation split, used when `preprocess` is not selected.
    pub eval_archive: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub square_mode: SquareMode,
    pub resolution: usize,
    pub test_fraction: f64,
    pub split_seed: u64,
    /// Keep only these classes, relabelled to their position in the list.
    pub keep_classes: Option<Vec<u32>>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { square_mode: SquareMode::PadToMax, resolution: 32, test_fraction: 0.2, split_seed: 0, keep_classes: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    /// Checkpoint to sample from when `train` is not selected.
    pub checkpoint: Option<PathBuf>,
    pub n_per_class: usize,
    pub seed: u64,
    /// Side of the square inspection mosaic; 0 disables it.
    pub grid_side: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { checkpoint: None, n_per_class: 256, seed: 0, grid_side: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    /// Synthetic archive to evaluate when `generate` is not selected.
    pub synthetic_archive: Option<PathBuf>,
    pub classifiers: Vec<ClassifierSpec>,
    pub regimes: Vec<Regime>,
    pub seed: u64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            synthetic_archive: None,
            classifiers: vec![ClassifierSpec::logreg(), ClassifierSpec::convnet()],
            regimes: Regime::ALL.to_vec(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub run_name: String,
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default)]
    pub generate: GenerateConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
}

impl PipelineConfig {
    /// Parse TOML text; relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| {
            if e.message().starts_with("unknown field") {
                PipelineError::UnknownKey(e.message().to_string())
            } else {
                PipelineError::Parse(e.to_string())
            }
        })?;
        cfg.resolve_paths(base_dir);
        cfg.normalize_stages();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Replace the stage selection, then revalidate.
    pub fn with_stages(mut self, stages: Vec<Stage>) -> Result<Self> {
        self.stages = stages;
        self.normalize_stages();
        self.validate()?;
        Ok(self)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let d = &mut self.dataset;
        for p in [&mut d.source_dir, &mut d.archive, &mut d.train_archive, &mut d.eval_archive, &mut self.generate.checkpoint, &mut self.evaluate.synthetic_archive]
            .into_iter()
            .flatten()
        {
            *p = base.join(&*p);
        }
    }

    fn normalize_stages(&mut self) {
        self.stages.sort();
        self.stages.dedup();
    }

    pub fn selects(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(PipelineError::InvalidStageSet(m));
        if self.run_name.is_empty() || self.run_name.contains(['/', '\\']) || self.run_name.starts_with('.') {
            return Err(PipelineError::InvalidConfig(format!("run_name {:?} is not a plain directory name", self.run_name)));
        }
        if self.stages.is_empty() {
            return invalid("no stages selected".into());
        }
        let d = &self.dataset;
        if self.selects(Stage::Preprocess) {
            let sources = [d.source_dir.is_some(), d.archive.is_some(), d.toy.is_some()].iter().filter(|&&b| b).count();
            if sources != 1 {
                return invalid(format!("preprocess needs exactly one of dataset.source_dir, dataset.archive, dataset.toy (got {sources})"));
            }
            let f = self.preprocess.test_fraction;
            if !(f > 0.0 && f < 1.0) {
                return Err(PipelineError::InvalidConfig(format!("preprocess.test_fraction {f} must be in (0, 1)")));
            }
        }
        let have_train_data = self.selects(Stage::Preprocess) || d.train_archive.is_some();
        let have_eval_data = self.selects(Stage::Preprocess) || d.eval_archive.is_some();
        if self.selects(Stage::Train) && !have_train_data {
            return invalid("train needs the preprocess stage or dataset.train_archive".into());
        }
        if self.selects(Stage::Generate) && !self.selects(Stage::Train) && self.generate.checkpoint.is_none() {
            return invalid("generate needs the train stage or generate.checkpoint".into());
        }
        if self.selects(Stage::Evaluate) {
            if !have_train_data || !have_eval_data {
                return invalid("evaluate needs the preprocess stage or dataset.train_archive and dataset.eval_archive".into());
            }
            if !self.selects(Stage::Generate) && self.evaluate.synthetic_archive.is_none() {
                return invalid("evaluate needs the generate stage or evaluate.synthetic_archive".into());
            }
        }
        if self.generate.n_per_class == 0 {
            return Err(PipelineError::InvalidConfig("generate.n_per_class must be >= 1".into()));
        }
        self.hyperparameters.validate().map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<PipelineConfig> {
        PipelineConfig::from_toml(s, Path::new("/cfg"))
    }

    #[test]
    fn stage_selection_rules() {
        let cfg = parse("run_name = \"a\"\nstages = [\"train\", \"preprocess\"]\n[dataset]\ntoy = { n = 10, n_classes = 2 }\n").unwrap();
        assert_eq!(cfg.stages, [Stage::Preprocess, Stage::Train]);
        let cfg = parse("run_name = \"a\"\nstages = [\"generate\"]\n[generate]\ncheckpoint = \"ck/final.ckpt\"\n").unwrap();
        assert_eq!(cfg.generate.checkpoint.as_deref(), Some(Path::new("/cfg/ck/final.ckpt")));
        assert!(matches!(parse("run_name = \"a\"\nstages = [\"train\"]\n"), Err(PipelineError::InvalidStageSet(_))));
        assert!(matches!(parse("run_name = \"a\"\nstages = []\n"), Err(PipelineError::InvalidStageSet(_))));
        assert!(matches!(
            parse("run_name = \"a\"\nstages = [\"evaluate\"]\n[dataset]\ntrain_archive = \"t.zip\"\neval_archive = \"e.zip\"\n"),
            Err(PipelineError::InvalidStageSet(_))
        ));
    }

    #[test]
    fn unknown_keys_are_errors() {
        let e = parse("run_name = \"a\"\nstages = [\"generate\"]\ncolour = 1\n[generate]\ncheckpoint = \"x\"\n");
        assert!(matches!(e, Err(PipelineError::UnknownKey(_))), "{e:?}");
        let e = parse("run_name = \"a\"\nstages = [\"generate\"]\n[generate]\ncheckpoint = \"x\"\nseeds = 3\n");
        assert!(matches!(e, Err(PipelineError::UnknownKey(_))), "{e:?}");
        let e = parse("run_name = \"a\"\nstages = [\"generate\"]\n[hyperparameters]\ngama = 1.0\n[generate]\ncheckpoint = \"x\"\n");
        assert!(matches!(e, Err(PipelineError::UnknownKey(_))), "{e:?}");
        assert!(matches!(parse("run_name = \"a\"\nstages = [\"upload\"]\n"), Err(PipelineError::Parse(_))));
    }

    #[test]
    fn defaults_are_filled() {
        let cfg = parse("run_name = \"a\"\nstages = [\"preprocess\"]\n[dataset]\ntoy = { n = 10, n_classes = 1 }\n").unwrap();
        assert_eq!(cfg.preprocess, PreprocessConfig::default());
        assert_eq!(cfg.hyperparameters, Hyperparameters::default());
        assert_eq!(cfg.evaluate.regimes, Regime::ALL);
        assert!(matches!(parse("run_name = \"../x\"\nstages = [\"preprocess\"]\n"), Err(PipelineError::InvalidConfig(_))));
    }
}
