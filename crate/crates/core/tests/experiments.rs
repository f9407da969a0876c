use std::collections::BTreeMap;

use gist_core::corpus::{generate_toy_corpus, package_dataset, read_dataset};
use gist_core::experiments::{
    emit_report, grid_sweep, inspection_grid, size_sweep, transfer_sweep, ExperimentError, SweepFile, SweepKind, SweepSpec,
};
use gist_core::gan::{train_set, Hyperparameters, TrainOptions, TrainSet};
use gist_core::synthesis::generate;

fn small_hp() -> Hyperparameters {
    Hyperparameters {
        total_kimg: 1,
        snapshot_kimg: 1,
        batch_size: 16,
        latent_dim: 8,
        width: 4,
        max_channels: 8,
        fid_n_gen: 64,
        r1_interval: 4,
        ..Default::default()
    }
}

fn spec(kind: SweepKind) -> SweepSpec {
    SweepSpec { kind, sizes: vec![], grid: BTreeMap::new(), base_checkpoint: None, budget_kimg: 1, seed: 3, repeats: 1 }
}

#[test]
fn size_sweep_rows_match_their_curves() {
    let data = generate_toy_corpus(120, 32, 2, 1);
    let dir = tempfile::tempdir().unwrap();
    let s = SweepSpec { sizes: vec![40, 100], ..spec(SweepKind::Size) };
    let table = size_sweep(&data, &s, &small_hp(), dir.path()).unwrap();
    assert_eq!(table.runs.len(), 2);
    emit_report(&table, dir.path()).unwrap();
    let sweep = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<&str> = sweep.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for (row, run) in rows.iter().zip(&table.runs) {
        let curve = std::fs::read_to_string(dir.path().join(format!("curves/{}.csv", run.run_id))).unwrap();
        let last_fid = curve.lines().last().unwrap().split(',').nth(1).unwrap();
        assert_eq!(row.rsplit(',').next().unwrap(), last_fid);
        assert!(run.converged_fid_min() <= run.final_fid());
    }
    let over = SweepSpec { sizes: vec![500], ..spec(SweepKind::Size) };
    assert!(matches!(size_sweep(&data, &over, &small_hp(), dir.path()), Err(ExperimentError::SizeExceedsDataset { .. })));
}

#[test]
fn grid_sweep_runs_every_point() {
    let data = generate_toy_corpus(40, 32, 1, 1);
    let dir = tempfile::tempdir().unwrap();
    let mut s = spec(SweepKind::Grid);
    s.grid.insert("gamma".into(), vec![0.1, 1.0]);
    let table = grid_sweep(&data, &s, &small_hp(), dir.path()).unwrap();
    let knobs: Vec<&str> = table.runs.iter().map(|r| r.knob.as_str()).collect();
    assert_eq!(knobs, ["gamma=0.1", "gamma=1"]);
    let empty = grid_sweep(&data, &spec(SweepKind::Grid), &small_hp(), dir.path()).unwrap();
    assert_eq!(empty.runs.len(), 1);
    assert_eq!(empty.runs[0].knob, "base");
}

#[test]
fn transfer_sweep_resumes_from_base() {
    let data = generate_toy_corpus(60, 32, 1, 1);
    let dir = tempfile::tempdir().unwrap();
    let base = train_set(&TrainSet::from_records(&data).unwrap(), &small_hp(), TrainOptions::default(), &dir.path().join("base")).unwrap();
    let s = SweepSpec { sizes: vec![30, 60], base_checkpoint: Some("unused".into()), ..spec(SweepKind::Transfer) };
    let table = transfer_sweep(&base, &data, &s, &small_hp(), &dir.path().join("sweep")).unwrap();
    for run in &table.runs {
        assert_eq!(run.parent_checkpoint.as_deref(), Some(base.reference().as_str()));
        assert_eq!(&run.fid_history[..base.fid_history.len()], &base.fid_history[..]);
        assert!(run.fid_history.windows(2).all(|w| w[0].0 < w[1].0));
    }
    let big = generate_toy_corpus(60, 64, 1, 1);
    assert!(matches!(
        transfer_sweep(&base, &big, &s, &small_hp(), dir.path()),
        Err(ExperimentError::ResolutionMismatch { dataset: 64, checkpoint: 32 })
    ));
}

#[test]
fn inspection_grid_tiles_generated_images() {
    let data = generate_toy_corpus(40, 32, 2, 1);
    let dir = tempfile::tempdir().unwrap();
    let ck = train_set(&TrainSet::from_records(&data).unwrap(), &small_hp(), TrainOptions::default(), dir.path()).unwrap();
    let mosaic = inspection_grid(&ck, 16, 5, &dir.path().join("grid.png")).unwrap();
    assert_eq!((mosaic.width(), mosaic.height()), (128, 128));
    let tile = generate(&ck, &[5 + 6], Some(0)).unwrap().remove(0).pixels;
    assert_eq!(mosaic.get(2 * 32 + 3, 32 + 7), tile.get(3, 7));
    let single = inspection_grid(&ck, 1, 9, &dir.path().join("one.png")).unwrap();
    assert_eq!(single, generate(&ck, &[9], Some(0)).unwrap().remove(0).pixels);
    let png = image::open(dir.path().join("grid.png")).unwrap();
    assert_eq!((png.width(), png.height()), (128, 128));
    assert!(matches!(inspection_grid(&ck, 15, 0, &dir.path().join("x.png")), Err(ExperimentError::NotPerfectSquare(15))));
    assert!(matches!(inspection_grid(&ck, 81, 0, &dir.path().join("x.png")), Err(ExperimentError::GridTooLarge(81))));
}

#[test]
fn sweep_file_runs_end_to_end_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    package_dataset(&generate_toy_corpus(50, 32, 1, 2), &dir.path().join("toy.zip")).unwrap();
    let toml = r#"
dataset = "toy.zip"
out_dir = "out"
[hyperparameters]
batch_size = 16
latent_dim = 8
width = 4
max_channels = 8
fid_n_gen = 64
r1_interval = 4
snapshot_kimg = 1
[sweep]
kind = "size"
sizes = [20, 50]
budget_kimg = 1
"#;
    std::fs::write(dir.path().join("sweep.toml"), toml).unwrap();
    let f = SweepFile::load(&dir.path().join("sweep.toml")).unwrap();
    assert_eq!(read_dataset(&f.dataset).unwrap().0.len(), 50);
    f.run().unwrap();
    let first = std::fs::read(dir.path().join("out/sweep.csv")).unwrap();
    let curve = std::fs::read(dir.path().join("out/curves/size-20-r0.csv")).unwrap();
    f.run().unwrap();
    assert_eq!(std::fs::read(dir.path().join("out/sweep.csv")).unwrap(), first);
    assert_eq!(std::fs::read(dir.path().join("out/curves/size-20-r0.csv")).unwrap(), curve);
    std::fs::write(dir.path().join("bad.toml"), format!("{toml}\nextra = 1\n")).unwrap();
    assert!(SweepFile::load(&dir.path().join("bad.toml")).is_err());
}
