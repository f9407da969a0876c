//! Stage orchestrator: preprocess, train, generate and evaluate under one
//! run directory `<runs_root>/<run_name>/`.

mod config;

pub use config::{DatasetConfig, EvaluateConfig, GenerateConfig, PipelineConfig, PreprocessConfig, Stage, ToySource};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    filter_labels, generate_toy_corpus, ingest_dir, package_dataset, read_dataset, resize_pow2, split_dataset, to_square,
    write_atomic, ImageRecord, SplitSpec,
};
use crate::eval::{run_regime, write_gan_train_test};
use crate::experiments::inspection_grid;
use crate::fid::{compute_fid, desk_extractor, FidReport};
use crate::gan::{train_set, TrainOptions, TrainSet, TrainingCheckpoint};
use crate::synthesis::emit_synthetic_dataset;

/// Environment variable overriding the runs root.
pub const RUNS_DIR_ENV: &str = "GIST_RUNS_DIR";
pub const MANIFEST_FILE: &str = "manifest.json";

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown config key: {0}")]
    UnknownKey(String),
    #[error("invalid stage set: {0}")]
    InvalidStageSet(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: BoxError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// `$GIST_RUNS_DIR`, else `./runs`.
pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Complete,
    Failed,
    /// Complete in an earlier invocation and left untouched under `--resume`.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: StageStatus,
    /// Paths relative to the run directory.
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// `manifest.json` of a run directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_name: String,
    pub stages: BTreeMap<Stage, StageRecord>,
    pub final_fid: Option<f64>,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Option<Self>> {
        match std::fs::read(run_dir.join(MANIFEST_FILE)) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn save(&self, run_dir: &Path) -> Result<()> {
        write_atomic(&run_dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    fn is_complete(&self, stage: Stage, run_dir: &Path) -> bool {
        self.stages.get(&stage).is_some_and(|r| {
            matches!(r.status, StageStatus::Complete | StageStatus::Skipped)
                && r.outputs.iter().all(|o| run_dir.join(o).exists())
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub stages: Vec<(Stage, StageStatus)>,
    pub outputs: Vec<PathBuf>,
    pub final_fid: Option<f64>,
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    dir: &'a Path,
    final_fid: Option<f64>,
}

impl Ctx<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn train_archive(&self) -> PathBuf {
        if self.cfg.selects(Stage::Preprocess) {
            self.path("dataset/train.zip")
        } else {
            self.cfg.dataset.train_archive.clone().expect("validated")
        }
    }

    fn eval_archive(&self) -> PathBuf {
        if self.cfg.selects(Stage::Preprocess) {
            self.path("dataset/eval.zip")
        } else {
            self.cfg.dataset.eval_archive.clone().expect("validated")
        }
    }

    fn checkpoint(&self) -> PathBuf {
        if self.cfg.selects(Stage::Train) {
            self.path("checkpoints/final.ckpt")
        } else {
            self.cfg.generate.checkpoint.clone().expect("validated")
        }
    }

    fn synthetic_archive(&self) -> PathBuf {
        if self.cfg.selects(Stage::Generate) {
            self.path("samples/synthetic.zip")
        } else {
            self.cfg.evaluate.synthetic_archive.clone().expect("validated")
        }
    }

    fn run(&mut self, stage: Stage) -> std::result::Result<Vec<&'static str>, BoxError> {
        match stage {
            Stage::Preprocess => self.preprocess(),
            Stage::Train => self.train(),
            Stage::Generate => self.generate(),
            Stage::Evaluate => self.evaluate(),
        }
    }

    fn preprocess(&mut self) -> std::result::Result<Vec<&'static str>, BoxError> {
        let (d, p) = (&self.cfg.dataset, &self.cfg.preprocess);
        let mut class_names = Vec::new();
        let raw: Vec<ImageRecord> = if let Some(toy) = &d.toy {
            generate_toy_corpus(toy.n, p.resolution, toy.n_classes, toy.seed)
        } else if let Some(dir) = &d.source_dir {
            let ingested = ingest_dir(dir, d.labeled)?;
            class_names = ingested.class_names;
            ingested.records
        } else {
            read_dataset(d.archive.as_ref().expect("validated"))?.0
        };
        let mut records = raw
            .iter()
            .map(|r| {
                let mut out = resize_pow2(&to_square(r, p.square_mode), p.resolution)?;
                out.pixels = out.pixels.quantize_u8();
                Ok(out)
            })
            .collect::<std::result::Result<Vec<_>, crate::corpus::CorpusError>>()?;
        if let Some(keep) = &p.keep_classes {
            records = filter_labels(&records, keep);
            if !class_names.is_empty() {
                class_names = keep.iter().filter_map(|&c| class_names.get(c as usize).cloned()).collect();
            }
        }
        let (train, eval) = split_dataset(&records, SplitSpec { test_fraction: p.test_fraction, seed: p.split_seed })?;
        package_dataset(&train, &self.path("dataset/train.zip"))?;
        package_dataset(&eval, &self.path("dataset/eval.zip"))?;
        let mut outputs = vec!["dataset/train.zip", "dataset/eval.zip"];
        if !class_names.is_empty() {
            write_atomic(&self.path("dataset/classes.json"), &serde_json::to_vec_pretty(&class_names)?)?;
            outputs.push("dataset/classes.json");
        }
        Ok(outputs)
    }

    fn train(&mut self) -> std::result::Result<Vec<&'static str>, BoxError> {
        let (records, _) = read_dataset(&self.train_archive())?;
        let set = TrainSet::from_records(&records)?;
        let ck_dir = self.path("checkpoints");
        if ck_dir.exists() {
            for e in std::fs::read_dir(&ck_dir)? {
                let p = e?.path();
                if p.extension().is_some_and(|x| x == "ckpt") {
                    std::fs::remove_file(p)?;
                }
            }
        }
        let ck = train_set(&set, &self.cfg.hyperparameters, TrainOptions::default(), &ck_dir)?;
        ck.save(&self.path("checkpoints/final.ckpt"))?;
        std::fs::create_dir_all(self.path("logs"))?;
        for f in ["metrics.csv", "fid.csv"] {
            std::fs::rename(ck_dir.join(f), self.path("logs").join(f))?;
        }
        self.final_fid = ck.fid_values().last().copied();
        Ok(vec!["checkpoints/final.ckpt", "logs/metrics.csv", "logs/fid.csv"])
    }

    fn generate(&mut self) -> std::result::Result<Vec<&'static str>, BoxError> {
        let g = &self.cfg.generate;
        let ck = TrainingCheckpoint::load(&self.checkpoint())?;
        emit_synthetic_dataset(&ck, g.n_per_class, g.seed, &self.path("samples/synthetic.zip"))?;
        let mut outputs = vec!["samples/synthetic.zip"];
        let n = g.grid_side * g.grid_side;
        if n > 0 {
            inspection_grid(&ck, n, g.seed, &self.path("samples/grid.png"))?;
            outputs.push("samples/grid.png");
        }
        Ok(outputs)
    }

    fn evaluate(&mut self) -> std::result::Result<Vec<&'static str>, BoxError> {
        let e = &self.cfg.evaluate;
        let (real_train, _) = read_dataset(&self.train_archive())?;
        let (real_eval, _) = read_dataset(&self.eval_archive())?;
        let (synth, synth_meta) = read_dataset(&self.synthetic_archive())?;
        let px = |rs: &[ImageRecord]| rs.iter().map(|r| r.pixels.clone()).collect::<Vec<_>>();
        let report = compute_fid(&px(&real_train), &px(&synth), &desk_extractor(synth_meta.resolution))?;
        write_atomic(&self.path("eval/fid.csv"), format!("{}\n{}\n", FidReport::CSV_HEADER, report.csv_row()).as_bytes())?;
        self.final_fid = Some(report.fid);
        let mut outputs = vec!["eval/fid.csv"];
        if real_train.iter().all(|r| r.label.is_some()) && synth.iter().all(|r| r.label.is_some()) {
            let mut reports = Vec::new();
            for spec in &e.classifiers {
                for &regime in &e.regimes {
                    reports.push(run_regime(&real_train, &real_eval, Some(&synth), regime, spec, e.seed)?);
                }
            }
            write_gan_train_test(&reports, &self.path("eval/gan_train_test.csv"))?;
            write_atomic(&self.path("eval/reports.json"), &serde_json::to_vec_pretty(&reports)?)?;
            outputs.extend(["eval/gan_train_test.csv", "eval/reports.json"]);
        } else {
            log::warn!("unlabeled data: skipping the classifier protocol");
        }
        Ok(outputs)
    }
}

/// Run the selected stages in canonical order under `runs_root/<run_name>`.
///
/// With `resume`, stages recorded complete in the manifest (with all
/// outputs present) are skipped until the first stage that has to run;
/// every stage after that runs again. The manifest is rewritten after each
/// stage, and a failing stage aborts the run.
pub fn run_pipeline(cfg: &PipelineConfig, runs_root: &Path, resume: bool) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = runs_root.join(&cfg.run_name);
    for sub in ["dataset", "checkpoints", "samples", "eval", "logs"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    let mut manifest = RunManifest::load(&dir)?.unwrap_or_default();
    manifest.run_name = cfg.run_name.clone();
    let mut ctx = Ctx { cfg, dir: &dir, final_fid: None };
    let mut summary = RunSummary { run_dir: dir.clone(), stages: Vec::new(), outputs: Vec::new(), final_fid: None };
    let mut reran = false;
    for &stage in &cfg.stages {
        if resume && !reran && manifest.is_complete(stage, &dir) {
            log::info!("stage {stage}: complete, skipping");
            let rec = manifest.stages.get_mut(&stage).expect("complete");
            rec.status = StageStatus::Skipped;
            summary.outputs.extend(rec.outputs.iter().map(|o| dir.join(o)));
            summary.stages.push((stage, StageStatus::Skipped));
            continue;
        }
        reran = true;
        log::info!("stage {stage}: running");
        match ctx.run(stage) {
            Ok(outputs) => {
                summary.outputs.extend(outputs.iter().map(|o| dir.join(o)));
                let outputs = outputs.into_iter().map(String::from).collect();
                manifest.stages.insert(stage, StageRecord { status: StageStatus::Complete, outputs, error: None });
                summary.stages.push((stage, StageStatus::Complete));
                if ctx.final_fid.is_some() {
                    manifest.final_fid = ctx.final_fid;
                }
                manifest.save(&dir)?;
            }
            Err(source) => {
                let record = StageRecord { status: StageStatus::Failed, outputs: vec![], error: Some(source.to_string()) };
                manifest.stages.insert(stage, record);
                manifest.save(&dir)?;
                return Err(PipelineError::Stage { stage, source });
            }
        }
    }
    manifest.save(&dir)?;
    summary.final_fid = manifest.final_fid;
    Ok(summary)
}
