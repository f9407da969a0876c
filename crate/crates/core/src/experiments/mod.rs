//! Experiment sweeps over dataset size, hyperparameter grids and transfer
//! from a base checkpoint, plus CSV reports and an inspection mosaic.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{encode_png, read_dataset, write_atomic, CorpusError, ImageRecord, Raster};
use crate::gan::{train_set, GanError, Hyperparameters, TrainOptions, TrainSet, TrainingCheckpoint, HYPERPARAMETER_NAMES};
use crate::rng;
use crate::synthesis::{generate, SynthesisError};

/// Largest mosaic [`inspection_grid`] accepts.
pub const MAX_GRID_IMAGES: usize = 64;

/// Stream id of the subset permutation.
const SUBSET_STREAM: u64 = 11;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("sweep size {size} exceeds the dataset ({available} images)")]
    SizeExceedsDataset { size: usize, available: usize },
    #[error("unknown hyperparameter {0:?}")]
    UnknownHyperparameter(String),
    #[error("dataset resolution {dataset} does not match checkpoint resolution {checkpoint}")]
    ResolutionMismatch { dataset: usize, checkpoint: usize },
    #[error("sweep table is empty")]
    EmptyTable,
    #[error("{0} is not a perfect square")]
    NotPerfectSquare(usize),
    #[error("inspection grid holds at most {MAX_GRID_IMAGES} images, got {0}")]
    GridTooLarge(usize),
    #[error("invalid sweep spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Size,
    Grid,
    Transfer,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Size => "size",
            SweepKind::Grid => "grid",
            SweepKind::Transfer => "transfer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub kind: SweepKind,
    #[serde(default)]
    pub sizes: Vec<usize>,
    #[serde(default)]
    pub grid: BTreeMap<String, Vec<f64>>,
    /// Path of the checkpoint a transfer sweep resumes from.
    #[serde(default)]
    pub base_checkpoint: Option<PathBuf>,
    pub budget_kimg: u64,
    #[serde(default)]
    pub seed: u64,
    /// Training runs per sweep point; run `r` trains with `hp.seed + r`.
    #[serde(default = "one")]
    pub repeats: usize,
}

fn one() -> usize {
    1
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ExperimentError::InvalidSpec(m.to_string()));
        if self.budget_kimg == 0 {
            return bad("budget_kimg must be >= 1");
        }
        if self.repeats == 0 {
            return bad("repeats must be >= 1");
        }
        match self.kind {
            SweepKind::Size | SweepKind::Transfer => {
                if self.sizes.is_empty() || self.sizes[0] == 0 {
                    return bad("sizes must be nonempty and positive");
                }
                if self.sizes.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("sizes must be strictly increasing");
                }
            }
            SweepKind::Grid => {
                if let Some(k) = self.grid.keys().find(|k| !HYPERPARAMETER_NAMES.contains(&k.as_str())) {
                    return Err(ExperimentError::UnknownHyperparameter(k.clone()));
                }
                if let Some((k, _)) = self.grid.iter().find(|(_, v)| v.is_empty()) {
                    return bad(&format!("grid values for {k} are empty"));
                }
            }
        }
        if self.kind == SweepKind::Transfer && self.base_checkpoint.is_none() {
            return bad("transfer sweeps need base_checkpoint");
        }
        Ok(())
    }
}

/// One training run of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub run_id: String,
    /// Sweep point: the subset size, or `name=value` pairs joined by `;`.
    pub knob: String,
    pub repeat: usize,
    pub budget_kimg: u64,
    pub fid_history: Vec<(f64, f64)>,
    pub parent_checkpoint: Option<String>,
}

impl SweepRun {
    pub fn converged_fid_min(&self) -> f64 {
        self.fid_history.iter().map(|p| p.1).fold(f64::INFINITY, f64::min)
    }

    pub fn final_fid(&self) -> f64 {
        self.fid_history.last().map_or(f64::NAN, |p| p.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub kind: SweepKind,
    pub runs: Vec<SweepRun>,
}

impl SweepTable {
    /// Runs at `knob`, in repeat order.
    pub fn runs_at<'a>(&'a self, knob: &'a str) -> impl Iterator<Item = &'a SweepRun> + 'a {
        self.runs.iter().filter(move |r| r.knob == knob)
    }
}

/// Indices of the size-`size` subset: a prefix of one seeded permutation,
/// so subsets for increasing sizes are nested.
pub fn nested_subset(n: usize, size: usize, seed: u64) -> Result<Vec<usize>> {
    if size > n {
        return Err(ExperimentError::SizeExceedsDataset { size, available: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, SUBSET_STREAM));
    idx.truncate(size);
    Ok(idx)
}

fn budgeted(hp: &Hyperparameters, budget_kimg: u64, repeat: usize) -> Hyperparameters {
    Hyperparameters {
        total_kimg: budget_kimg,
        snapshot_kimg: hp.snapshot_kimg.min(budget_kimg),
        seed: hp.seed + repeat as u64,
        ..hp.clone()
    }
}

fn run_one(
    set: &TrainSet,
    hp: &Hyperparameters,
    opts: TrainOptions,
    out_dir: &Path,
    run_id: String,
    knob: String,
    repeat: usize,
) -> Result<SweepRun> {
    log::info!("sweep run {run_id}");
    let ck = train_set(set, hp, opts, &out_dir.join("runs").join(&run_id))?;
    Ok(SweepRun {
        run_id,
        knob,
        repeat,
        budget_kimg: hp.total_kimg,
        fid_history: ck.fid_history,
        parent_checkpoint: ck.parent_checkpoint,
    })
}

fn subsets(dataset: &[ImageRecord], spec: &SweepSpec) -> Result<Vec<(usize, Vec<ImageRecord>)>> {
    let max = *spec.sizes.iter().max().ok_or_else(|| ExperimentError::InvalidSpec("no sizes".into()))?;
    let order = nested_subset(dataset.len(), max, spec.seed)?;
    Ok(spec.sizes.iter().map(|&s| (s, order[..s].iter().map(|&i| dataset[i].clone()).collect())).collect())
}

fn rasters(dataset: &[ImageRecord]) -> Vec<Raster> {
    dataset.iter().map(|r| r.pixels.clone()).collect()
}

/// Train from scratch on nested subsets of `dataset`. Every run's FID
/// monitor compares against the full dataset so curves share one reference.
pub fn size_sweep(dataset: &[ImageRecord], spec: &SweepSpec, hp: &Hyperparameters, out_dir: &Path) -> Result<SweepTable> {
    spec.validate()?;
    let reference = rasters(dataset);
    let mut runs = Vec::new();
    for (size, subset) in subsets(dataset, spec)? {
        let set = TrainSet::from_records(&subset)?;
        for r in 0..spec.repeats {
            let opts = TrainOptions { fid_reference: Some(&reference), ..Default::default() };
            let hp = budgeted(hp, spec.budget_kimg, r);
            runs.push(run_one(&set, &hp, opts, out_dir, format!("size-{size}-r{r}"), size.to_string(), r)?);
        }
    }
    Ok(SweepTable { kind: SweepKind::Size, runs })
}

/// Cartesian product of the grid in key order; an empty grid yields the single base point.
pub fn grid_points(grid: &BTreeMap<String, Vec<f64>>) -> Vec<Vec<(String, f64)>> {
    let mut points: Vec<Vec<(String, f64)>> = vec![vec![]];
    for (name, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push((name.clone(), v));
                    q
                })
            })
            .collect();
    }
    points
}

fn point_label(point: &[(String, f64)]) -> String {
    if point.is_empty() {
        return "base".into();
    }
    point.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

/// One run per grid point, each overriding `base_hp`.
pub fn grid_sweep(dataset: &[ImageRecord], spec: &SweepSpec, base_hp: &Hyperparameters, out_dir: &Path) -> Result<SweepTable> {
    spec.validate()?;
    let set = TrainSet::from_records(dataset)?;
    let mut runs = Vec::new();
    for (i, point) in grid_points(&spec.grid).into_iter().enumerate() {
        let mut hp = base_hp.clone();
        for (k, v) in &point {
            hp.set(k, *v)?;
        }
        let label = point_label(&point);
        for r in 0..spec.repeats {
            let hp = budgeted(&hp, spec.budget_kimg, r);
            let id = format!("grid-{i:03}-r{r}");
            runs.push(run_one(&set, &hp, TrainOptions::default(), out_dir, id, label.clone(), r)?);
        }
    }
    Ok(SweepTable { kind: SweepKind::Grid, runs })
}

/// Resume `base` on nested subsets of `dataset`, `budget_kimg` further kimg each.
pub fn transfer_sweep(
    base: &TrainingCheckpoint,
    dataset: &[ImageRecord],
    spec: &SweepSpec,
    hp: &Hyperparameters,
    out_dir: &Path,
) -> Result<SweepTable> {
    spec.validate()?;
    if let Some(res) = dataset.first().and_then(ImageRecord::resolution) {
        if res != base.resolution() {
            return Err(ExperimentError::ResolutionMismatch { dataset: res, checkpoint: base.resolution() });
        }
    }
    let reference = rasters(dataset);
    let mut runs = Vec::new();
    for (size, subset) in subsets(dataset, spec)? {
        let set = TrainSet::from_records(&subset)?;
        for r in 0..spec.repeats {
            let opts = TrainOptions { resume_from: Some(base), fid_reference: Some(&reference), ..Default::default() };
            let hp = budgeted(hp, spec.budget_kimg, r);
            let id = format!("transfer-{size}-r{r}");
            runs.push(run_one(&set, &hp, opts, out_dir, id, size.to_string(), r)?);
        }
    }
    Ok(SweepTable { kind: SweepKind::Transfer, runs })
}

pub const SWEEP_HEADER: &str = "run_id,kind,knob,budget_kimg,converged_fid_min,final_fid";
pub const SUMMARY_HEADER: &str = "knob,n_runs,mean_converged_fid_min,std_converged_fid_min,mean_final_fid,std_final_fid";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Write `sweep.csv`, `sweep_summary.csv` (mean and sample std over repeats
/// per knob) and `curves/<run_id>.csv` under `out_dir`. Returns the paths written.
pub fn emit_report(table: &SweepTable, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if table.runs.is_empty() {
        return Err(ExperimentError::EmptyTable);
    }
    let mut written = Vec::new();
    let mut sweep = format!("{SWEEP_HEADER}\n");
    let mut knobs: Vec<&str> = Vec::new();
    for run in &table.runs {
        let _ = writeln!(
            sweep,
            "{},{},{},{},{},{}",
            csv_field(&run.run_id),
            table.kind.name(),
            csv_field(&run.knob),
            run.budget_kimg,
            run.converged_fid_min(),
            run.final_fid()
        );
        if !knobs.contains(&run.knob.as_str()) {
            knobs.push(&run.knob);
        }
        let mut curve = String::from("kimg,fid\n");
        for (kimg, fid) in &run.fid_history {
            let _ = writeln!(curve, "{kimg},{fid}");
        }
        let path = out_dir.join("curves").join(format!("{}.csv", run.run_id));
        write_atomic(&path, curve.as_bytes())?;
        written.push(path);
    }
    let mut summary = format!("{SUMMARY_HEADER}\n");
    for knob in knobs {
        let runs: Vec<&SweepRun> = table.runs_at(knob).collect();
        let (mc, sc) = mean_std(&runs.iter().map(|r| r.converged_fid_min()).collect::<Vec<_>>());
        let (mf, sf) = mean_std(&runs.iter().map(|r| r.final_fid()).collect::<Vec<_>>());
        let _ = writeln!(summary, "{},{},{mc},{sc},{mf},{sf}", csv_field(knob), runs.len());
    }
    for (name, body) in [("sweep.csv", sweep), ("sweep_summary.csv", summary)] {
        let path = out_dir.join(name);
        write_atomic(&path, body.as_bytes())?;
        written.insert(0, path);
    }
    Ok(written)
}

/// Tile `n` generated images (seeds `seed..seed + n`, classes round-robin
/// for conditional checkpoints) into a `sqrt(n) x sqrt(n)` PNG mosaic.
pub fn inspection_grid(checkpoint: &TrainingCheckpoint, n: usize, seed: u64, out_path: &Path) -> Result<Raster> {
    let side = (n as f64).sqrt().round() as usize;
    if n == 0 || side * side != n {
        return Err(ExperimentError::NotPerfectSquare(n));
    }
    if n > MAX_GRID_IMAGES {
        return Err(ExperimentError::GridTooLarge(n));
    }
    let k = checkpoint.n_classes();
    let res = checkpoint.resolution();
    let mut mosaic = Raster::filled(side * res, side * res, 0.0);
    for i in 0..n {
        let class = (k > 0).then(|| (i % k) as u32);
        let img = generate(checkpoint, &[seed + i as u64], class)?.remove(0).pixels;
        let (ox, oy) = ((i % side) * res, (i / side) * res);
        for y in 0..res {
            for x in 0..res {
                mosaic.set(ox + x, oy + y, img.get(x, y));
            }
        }
    }
    write_atomic(out_path, &encode_png(&mosaic)?)?;
    Ok(mosaic)
}

/// A sweep described in one TOML file. Relative paths resolve against the
/// file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    /// Packaged dataset archive.
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    pub sweep: SweepSpec,
}

impl SweepFile {
    pub fn load(path: &Path) -> Result<Self> {
        let mut f: SweepFile = toml::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        f.dataset = base.join(&f.dataset);
        f.out_dir = base.join(&f.out_dir);
        if let Some(ck) = &f.sweep.base_checkpoint {
            f.sweep.base_checkpoint = Some(base.join(ck));
        }
        f.sweep.validate()?;
        f.hyperparameters.validate()?;
        Ok(f)
    }

    /// Run the sweep and write its report into `out_dir`.
    pub fn run(&self) -> Result<SweepTable> {
        let (records, _) = read_dataset(&self.dataset)?;
        let hp = &self.hyperparameters;
        let table = match self.sweep.kind {
            SweepKind::Size => size_sweep(&records, &self.sweep, hp, &self.out_dir)?,
            SweepKind::Grid => grid_sweep(&records, &self.sweep, hp, &self.out_dir)?,
            SweepKind::Transfer => {
                let path = self.sweep.base_checkpoint.as_ref().expect("validated");
                let base = TrainingCheckpoint::load(path)?;
                transfer_sweep(&base, &records, &self.sweep, hp, &self.out_dir)?
            }
        };
        emit_report(&table, &self.out_dir)?;
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(kind: SweepKind) -> SweepSpec {
        SweepSpec { kind, sizes: vec![], grid: BTreeMap::new(), base_checkpoint: None, budget_kimg: 1, seed: 0, repeats: 1 }
    }

    #[test]
    fn grid_cardinality() {
        let mut g = BTreeMap::new();
        assert_eq!(grid_points(&g), vec![vec![]]);
        g.insert("gamma".to_string(), vec![0.1, 1.0]);
        assert_eq!(grid_points(&g).len(), 2);
        g.insert("batch_size".to_string(), vec![16.0, 32.0]);
        g.insert("gamma".to_string(), vec![1.0]);
        let pts = grid_points(&g);
        assert_eq!(pts.len(), 2);
        assert!(pts.iter().all(|p| p.contains(&("gamma".to_string(), 1.0))));
        assert_eq!(point_label(&pts[0]), "batch_size=16;gamma=1");
    }

    #[test]
    fn spec_validation() {
        let mut s = spec(SweepKind::Grid);
        s.grid.insert("learning_rate".into(), vec![1.0]);
        assert!(matches!(s.validate(), Err(ExperimentError::UnknownHyperparameter(k)) if k == "learning_rate"));
        let mut s = spec(SweepKind::Size);
        s.sizes = vec![200, 50];
        assert!(s.validate().is_err());
        let mut s = spec(SweepKind::Transfer);
        s.sizes = vec![10];
        assert!(s.validate().is_err());
        s.base_checkpoint = Some("base.ckpt".into());
        s.validate().unwrap();
    }

    #[test]
    fn oversized_subset() {
        assert!(matches!(nested_subset(80, 100, 0), Err(ExperimentError::SizeExceedsDataset { size: 100, available: 80 })));
    }

    #[test]
    fn report_rows_and_curves() {
        let run = |id: &str, knob: &str, h: Vec<(f64, f64)>| SweepRun {
            run_id: id.into(),
            knob: knob.into(),
            repeat: 0,
            budget_kimg: 2,
            fid_history: h,
            parent_checkpoint: None,
        };
        let table = SweepTable {
            kind: SweepKind::Size,
            runs: vec![run("size-50-r0", "50", vec![(0.0, 9.0), (1.0, 3.0), (2.0, 4.0)]), run("size-200-r0", "200", vec![(0.0, 8.0)])],
        };
        let dir = tempfile::tempdir().unwrap();
        emit_report(&table, dir.path()).unwrap();
        let sweep = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(sweep, format!("{SWEEP_HEADER}\nsize-50-r0,size,50,2,3,4\nsize-200-r0,size,200,2,8,8\n"));
        let curve = std::fs::read_to_string(dir.path().join("curves/size-50-r0.csv")).unwrap();
        assert_eq!(curve, "kimg,fid\n0,9\n1,3\n2,4\n");
        assert!(dir.path().join("sweep_summary.csv").exists());
        let first = std::fs::read(dir.path().join("sweep.csv")).unwrap();
        emit_report(&table, dir.path()).unwrap();
        assert_eq!(std::fs::read(dir.path().join("sweep.csv")).unwrap(), first);
        assert!(matches!(emit_report(&SweepTable { kind: SweepKind::Grid, runs: vec![] }, dir.path()), Err(ExperimentError::EmptyTable)));
    }

    #[test]
    fn summary_statistics() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn subsets_are_nested_prefixes(n in 1usize..300, a in 0usize..300, b in 0usize..300, seed in any::<u64>()) {
            let (s, t) = (a.min(b) % (n + 1), a.max(b) % (n + 1));
            let (s, t) = (s.min(t), s.max(t));
            let small = nested_subset(n, s, seed).unwrap();
            let large = nested_subset(n, t, seed).unwrap();
            prop_assert_eq!(&large[..s], &small[..]);
            let mut uniq = large.clone();
            uniq.sort();
            uniq.dedup();
            prop_assert_eq!(uniq.len(), t);
        }

        #[test]
        fn grid_run_count_is_product(lens in proptest::collection::vec(1usize..4, 0..4)) {
            let grid: BTreeMap<String, Vec<f64>> =
                lens.iter().enumerate().map(|(i, &l)| (HYPERPARAMETER_NAMES[i].to_string(), (0..l).map(|v| v as f64).collect())).collect();
            prop_assert_eq!(grid_points(&grid).len(), lens.iter().product::<usize>());
        }
    }
}
