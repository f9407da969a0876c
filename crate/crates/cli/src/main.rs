use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use gist_blindtest::ServiceConfig;
use gist_core::corpus::{encode_png, read_dataset};
use gist_core::experiments::SweepFile;
use gist_core::fid::{compute_fid, desk_extractor};
use gist_core::pipeline::{run_pipeline, runs_root, PipelineConfig, Stage};
use gist_core::synthesis::generate;
use gist_core::TrainingCheckpoint;

#[derive(Parser)]
#[command(name = "gist", version, about = "Train, sample and evaluate GANs on grayscale image corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run pipeline stages from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset of preprocess,train,generate,evaluate.
        #[arg(long, value_delimiter = ',')]
        stages: Option<Vec<String>>,
        /// Skip stages already complete in the run manifest.
        #[arg(long)]
        resume: bool,
    },
    /// Write one PNG per seed from a checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Seeds as a list of values and ranges, e.g. `0-9,42`.
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        class: Option<u32>,
        #[arg(long)]
        outdir: PathBuf,
    },
    /// FID between two packaged archives under the desk extractor.
    Fid {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        gen: PathBuf,
    },
    /// Run an experiment sweep described in a TOML file.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Blind-test service commands.
    Blindtest {
        #[command(subcommand)]
        command: BlindtestCommand,
    },
}

#[derive(Subcommand)]
enum BlindtestCommand {
    /// Serve the blind-test HTTP API.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Parse `1,4-6,9` into `[1, 4, 5, 6, 9]`.
fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
                if a > b {
                    bail!("empty seed range {part}");
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().with_context(|| format!("bad seed {part:?}"))?),
        }
    }
    if out.is_empty() {
        bail!("no seeds given");
    }
    Ok(out)
}

fn cmd_run(config: &Path, stages: Option<Vec<String>>, resume: bool) -> Result<()> {
    let mut cfg = PipelineConfig::load(config)?;
    if let Some(stages) = stages {
        cfg = cfg.with_stages(stages.iter().map(|s| Stage::parse(s)).collect::<Result<_, _>>()?)?;
    }
    let summary = run_pipeline(&cfg, &runs_root(), resume)?;
    println!("run_dir={}", summary.run_dir.display());
    for (stage, status) in &summary.stages {
        println!("stage {stage}: {status:?}");
    }
    if let Some(fid) = summary.final_fid {
        println!("final_fid={fid:.6}");
    }
    Ok(())
}

fn cmd_generate(checkpoint: &Path, seeds: &str, class: Option<u32>, outdir: &Path) -> Result<()> {
    let ck = TrainingCheckpoint::load(checkpoint)?;
    let images = generate(&ck, &parse_seeds(seeds)?, class)?;
    std::fs::create_dir_all(outdir)?;
    for img in &images {
        std::fs::write(outdir.join(format!("{}.png", img.id)), encode_png(&img.pixels)?)?;
    }
    println!("wrote {} images to {}", images.len(), outdir.display());
    Ok(())
}

fn cmd_fid(real: &Path, gen: &Path) -> Result<()> {
    let (real, meta) = read_dataset(real)?;
    let (gen, gen_meta) = read_dataset(gen)?;
    if meta.resolution != gen_meta.resolution {
        bail!("archives differ in resolution: {} vs {}", meta.resolution, gen_meta.resolution);
    }
    let px = |v: Vec<gist_core::ImageRecord>| v.into_iter().map(|r| r.pixels).collect::<Vec<_>>();
    let report = compute_fid(&px(real), &px(gen), &desk_extractor(meta.resolution))?;
    println!("{}", report.to_record());
    Ok(())
}

fn cmd_sweep(spec: &Path) -> Result<()> {
    let file = SweepFile::load(spec)?;
    let table = file.run()?;
    println!("{} runs, report in {}", table.runs.len(), file.out_dir.display());
    Ok(())
}

fn cmd_serve(config: &Path) -> Result<()> {
    let cfg = ServiceConfig::load(config)?;
    tokio::runtime::Runtime::new()?.block_on(gist_blindtest::serve(&cfg))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, stages, resume } => cmd_run(&config, stages, resume),
        Command::Generate { checkpoint, seeds, class, outdir } => cmd_generate(&checkpoint, &seeds, class, &outdir),
        Command::Fid { real, gen } => cmd_fid(&real, &gen),
        Command::Sweep { spec } => cmd_sweep(&spec),
        Command::Blindtest { command: BlindtestCommand::Serve { config } } => cmd_serve(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1,4-6, 9").unwrap(), [1, 4, 5, 6, 9]);
        assert_eq!(parse_seeds("7").unwrap(), [7]);
        assert!(parse_seeds("5-3").is_err());
        assert!(parse_seeds("").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn cli_shape() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
