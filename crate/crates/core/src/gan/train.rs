use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::checkpoint::TrainingCheckpoint;
use super::loss::{d_loss_and_grad, g_loss_and_grad, LatentBatch, R1Config, RealBatch};
use super::model::{Critic, Synthesizer};
use super::networks::{init_networks, ArchConfig, Generator};
use super::{GanError, Hyperparameters, Result};
use crate::corpus::{class_count, read_dataset, Augmentation, DatasetArchive, ImageRecord, Raster};
use crate::fid::{desk_extractor, features, fit_gaussian, frechet_distance, GaussianMoments};
use crate::nn::{Adam, AdamConfig};
use crate::rng;

const SAMPLER_STREAM: u64 = 1 << 32;
const FID_STREAM: u64 = 2 << 32;
const GEN_CHUNK: usize = 256;

/// Training images held in network units (`[-1, 1]`).
#[derive(Debug, Clone)]
pub struct TrainSet {
    images: Vec<f64>,
    labels: Option<Vec<u32>>,
    rasters: Vec<Raster>,
    resolution: usize,
    n_classes: usize,
}

impl TrainSet {
    pub fn from_records(records: &[ImageRecord]) -> Result<Self> {
        let first = records.first().ok_or(GanError::EmptyDataset)?;
        let resolution = first.resolution().ok_or(GanError::ResolutionMismatch { dataset: 0, network: 0 })?;
        let mut images = Vec::with_capacity(records.len() * resolution * resolution);
        let mut rasters = Vec::with_capacity(records.len());
        for r in records {
            if r.resolution() != Some(resolution) {
                return Err(GanError::ResolutionMismatch { dataset: r.pixels.width(), network: resolution });
            }
            images.extend(r.pixels.data().iter().map(|v| 2.0 * v - 1.0));
            rasters.push(r.pixels.clone());
        }
        let n_classes = class_count(records);
        let labels = if n_classes > 0 {
            Some(records.iter().map(|r| r.label.ok_or(GanError::PartialLabels)).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        Ok(Self { images, labels, rasters, resolution, n_classes })
    }

    pub fn len(&self) -> usize {
        self.rasters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rasters.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn rasters(&self) -> &[Raster] {
        &self.rasters
    }
}

/// Optional knobs of [`train_set`].
#[derive(Default, Clone, Copy)]
pub struct TrainOptions<'a> {
    pub resume_from: Option<&'a TrainingCheckpoint>,
    /// Images the FID monitor compares against; defaults to the training set.
    pub fid_reference: Option<&'a [Raster]>,
    pub augmentation: Option<&'a dyn Augmentation>,
}

/// Train on a packaged dataset. See [`train_set`].
pub fn train(
    dataset: &DatasetArchive,
    hp: &Hyperparameters,
    resume_from: Option<&TrainingCheckpoint>,
    run_dir: &Path,
) -> Result<TrainingCheckpoint> {
    let (records, _) = read_dataset(&dataset.path)?;
    let set = TrainSet::from_records(&records)?;
    train_set(&set, hp, TrainOptions { resume_from, ..Default::default() }, run_dir)
}

/// Alternating discriminator/generator Adam steps with lazy R1.
///
/// Writes into `run_dir`: `metrics.csv` (one row per step), `fid.csv` and a
/// `snapshot-<kimg>.ckpt` at every `snapshot_kimg` boundary plus one at the
/// end. A fresh run also snapshots its initialization at kimg 0 and truncates
/// the logs; a resumed run appends to them and records the parent checkpoint.
pub fn train_set(set: &TrainSet, hp: &Hyperparameters, opts: TrainOptions, run_dir: &Path) -> Result<TrainingCheckpoint> {
    hp.validate()?;
    if set.is_empty() {
        return Err(GanError::EmptyDataset);
    }
    let mut hp = hp.clone();
    let (mut g, mut d, start_images, mut fid_history, parent) = match opts.resume_from {
        Some(ck) => {
            if ck.resolution() != set.resolution {
                return Err(GanError::ResolutionMismatch { dataset: set.resolution, network: ck.resolution() });
            }
            if ck.n_classes() != set.n_classes {
                return Err(GanError::ClassMismatch { dataset: set.n_classes, network: ck.n_classes() });
            }
            let a = ck.arch();
            if (hp.latent_dim, hp.width, hp.max_channels) != (a.latent_dim, a.width, a.max_channels) {
                log::warn!("architecture settings come from the resumed checkpoint");
                (hp.latent_dim, hp.width, hp.max_channels) = (a.latent_dim, a.width, a.max_channels);
            }
            (ck.generator.clone(), ck.discriminator.clone(), ck.images_seen, ck.fid_history.clone(), Some(ck.reference()))
        }
        None => {
            let arch = ArchConfig::new(set.resolution, set.n_classes, hp.latent_dim, hp.width, hp.max_channels)?;
            let (g, d) = init_networks(arch, hp.seed)?;
            (g, d, 0, Vec::new(), None)
        }
    };
    std::fs::create_dir_all(run_dir)?;
    let fresh = opts.resume_from.is_none();
    let mut metrics = open_log(&run_dir.join("metrics.csv"), fresh, "step,kimg,d_loss,g_loss,r1_penalty")?;
    let mut fid_log = open_log(&run_dir.join("fid.csv"), fresh, "kimg,fid")?;

    let monitor = FidMonitor::new(opts.fid_reference.unwrap_or(&set.rasters), &hp, set.n_classes)?;
    let mut sampler = if hp.deterministic {
        rng::stream(hp.seed, SAMPLER_STREAM + start_images)
    } else {
        rng::seeded(rand::rng().random())
    };
    let mut adam_d = Adam::new(AdamConfig::new(hp.lr_d));
    let mut adam_g = Adam::new(AdamConfig::new(hp.lr_g));
    let r1 = R1Config { gamma: hp.gamma, interval: hp.r1_interval };
    let pixels = set.resolution * set.resolution;
    let bs = hp.batch_size;

    let snapshot = |g: &Generator,
                        d: &super::networks::Discriminator,
                        images: u64,
                        history: &mut Vec<(f64, f64)>,
                        fid_log: &mut BufWriter<File>|
     -> Result<TrainingCheckpoint> {
        let kimg = images as f64 / 1000.0;
        let fid = monitor.fid(g)?;
        history.push((kimg, fid));
        writeln!(fid_log, "{kimg},{fid}")?;
        fid_log.flush()?;
        let ck = TrainingCheckpoint {
            generator: g.clone(),
            discriminator: d.clone(),
            images_seen: images,
            fid_history: history.clone(),
            hyperparameters: hp.clone(),
            parent_checkpoint: parent.clone(),
            origin: None,
        };
        let path = run_dir.join(format!("snapshot-{:06}.ckpt", images / 1000));
        ck.save(&path)?;
        log::info!("snapshot {} fid {fid:.3}", path.display());
        Ok(ck)
    };

    let mut last = if fresh { Some(snapshot(&g, &d, 0, &mut fid_history, &mut fid_log)?) } else { None };
    let target = start_images + hp.total_kimg * 1000;
    let every = hp.snapshot_kimg * 1000;
    let mut next_snapshot = start_images + every;
    let mut images = start_images;
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut step = 0usize;
    let mut real = RealBatch { images: Vec::with_capacity(bs * pixels), n: bs, labels: None };

    while images < target {
        real.images.clear();
        let mut real_labels = set.labels.as_ref().map(|_| Vec::with_capacity(bs));
        for _ in 0..bs {
            if cursor == order.len() {
                order = (0..set.len()).collect();
                order.shuffle(&mut sampler);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            let img = &set.images[i * pixels..(i + 1) * pixels];
            real.images.extend_from_slice(img);
            if let Some(aug) = opts.augmentation {
                let start = real.images.len() - pixels;
                aug.apply(&mut real.images[start..], set.resolution, &mut sampler);
            }
            if let (Some(out), Some(l)) = (real_labels.as_mut(), &set.labels) {
                out.push(l[i]);
            }
        }
        real.labels = real_labels;

        let z = LatentBatch::sample(bs, hp.latent_dim, real.labels.clone(), &mut sampler);
        let apply_r1 = step.is_multiple_of(hp.r1_interval);
        let dl = d_loss_and_grad(&d, &g, &real, &z, r1, apply_r1)?;
        adam_d.step(d.params_mut(), &dl.grads);

        let fake_labels = set.labels.as_ref().map(|l| (0..bs).map(|_| l[sampler.random_range(0..l.len())]).collect());
        let z = LatentBatch::sample(bs, hp.latent_dim, fake_labels, &mut sampler);
        let gl = g_loss_and_grad(&d, &g, &z)?;
        adam_g.step(g.params_mut(), &gl.grads);

        step += 1;
        images += bs as u64;
        let pen = dl.r1_penalty.map(|p| p.to_string()).unwrap_or_default();
        writeln!(metrics, "{step},{},{},{},{pen}", images as f64 / 1000.0, dl.total, gl.total)?;
        if !dl.total.is_finite() || !gl.total.is_finite() {
            metrics.flush()?;
            return Err(GanError::Diverged { step });
        }

        if images >= next_snapshot || images >= target {
            while next_snapshot <= images {
                next_snapshot += every;
            }
            metrics.flush()?;
            last = Some(snapshot(&g, &d, images, &mut fid_history, &mut fid_log)?);
        }
    }
    metrics.flush()?;
    match last {
        Some(ck) => Ok(ck),
        // resumed with a zero budget; nothing new to record
        None => Ok(opts.resume_from.cloned().expect("resumed run")),
    }
}

fn open_log(path: &Path, truncate: bool, header: &str) -> Result<BufWriter<File>> {
    let write_header = truncate || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = if truncate {
        File::create(path)?
    } else {
        OpenOptions::new().create(true).append(true).open(path)?
    };
    let mut w = BufWriter::new(file);
    if write_header {
        writeln!(w, "{header}")?;
    }
    Ok(w)
}

/// FID of the generator against fixed reference moments, using a fixed set
/// of latents so successive snapshots are comparable.
struct FidMonitor {
    reference: GaussianMoments,
    latents: LatentBatch,
    resolution: usize,
}

impl FidMonitor {
    fn new(reference: &[Raster], hp: &Hyperparameters, n_classes: usize) -> Result<Self> {
        let resolution = reference[0].width();
        let extractor = desk_extractor(resolution);
        let reference = fit_gaussian(&features(reference, &extractor))?;
        let n = hp.fid_n_gen;
        let labels = (n_classes > 0).then(|| (0..n).map(|i| (i % n_classes) as u32).collect());
        let latents = LatentBatch::sample(n, hp.latent_dim, labels, &mut rng::stream(hp.seed, FID_STREAM));
        Ok(Self { reference, latents, resolution })
    }

    fn fid(&self, g: &Generator) -> Result<f64> {
        let imgs = render(g, &self.latents, self.resolution);
        let extractor = desk_extractor(self.resolution);
        let m = fit_gaussian(&features(&imgs, &extractor))?;
        Ok(frechet_distance(&self.reference, &m)?)
    }
}

/// Generator outputs mapped from `[-1, 1]` to `[0, 1]` rasters.
pub(crate) fn render(g: &Generator, z: &LatentBatch, resolution: usize) -> Vec<Raster> {
    let pixels = resolution * resolution;
    let mut out = Vec::with_capacity(z.n);
    for start in (0..z.n).step_by(GEN_CHUNK) {
        let m = GEN_CHUNK.min(z.n - start);
        let zs = &z.z[start * z.dim..(start + m) * z.dim];
        let ls = z.labels.as_ref().map(|l| &l[start..start + m]);
        let t = g.synthesize(zs, ls, m);
        for img in g.output(&t).chunks_exact(pixels) {
            out.push(Raster::new(resolution, resolution, img.iter().map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0)).collect()));
        }
    }
    out
}
