use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dmd_coherence::config::ExperimentConfig;
use dmd_coherence::error::{Error, Result};
use dmd_coherence::pipeline::{self, RunOptions, StitchFitSummary, MANIFEST_FILE, RESULTS_DIR};

/// Spatial-coherence measurement with a DMD Hartmann sensor: simulate frames,
/// calibrate spots, reconstruct pairwise coherence and fit the source size.
#[derive(Parser)]
#[command(name = "dmd-coherence", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate calibration and pair frames for the configured plan.
    Simulate(RunArgs),
    /// Locate the spot of every calibration frame.
    Calibrate(ManifestArgs),
    /// Reconstruct the coherence matrix of every plan pair.
    Reconstruct(ManifestArgs),
    /// Stitch pair results into one matrix and fit the core diameter.
    StitchFit(ResultsArgs),
    /// All of the above in one output directory.
    RunAll(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write expected counts instead of Poisson samples.
    #[arg(long)]
    no_noise: bool,
}

#[derive(Args)]
struct ManifestArgs {
    /// Manifest file, or the directory holding it.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct ResultsArgs {
    #[arg(long)]
    results: PathBuf,
}

impl RunArgs {
    fn load(&self) -> Result<(ExperimentConfig, RunOptions)> {
        let config = ExperimentConfig::read(&self.config)?;
        let options = RunOptions {
            seed: self.seed,
            workers: self.workers,
            noise: !self.no_noise,
            out: self.out.clone(),
        };
        Ok((config, options))
    }
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

fn report_stitch(summary: &StitchFitSummary) {
    let s = &summary.stitched;
    println!(
        "stitched {n}x{n}: projection distance {:.3e}{}, max |Im J| {:.3e}",
        s.psd_projection_distance,
        if s.inconsistent { " (inconsistent)" } else { "" },
        s.max_imaginary,
        n = s.intensities.len()
    );
    if let Some(fit) = &summary.fit {
        println!(
            "core diameter {:.1} um, rss {:.3e}",
            fit.fit.core_diameter * 1e6,
            fit.fit.rss
        );
    }
}

fn non_converged(pairs: &[(usize, usize)]) -> Result<()> {
    if pairs.is_empty() {
        return Ok(());
    }
    let list: Vec<String> = pairs.iter().map(|(i, j)| format!("({i}, {j})")).collect();
    Err(Error::NonConvergence(format!(
        "likelihood iteration hit its cap for pairs {}",
        list.join(" ")
    )))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => {
            let (config, options) = args.load()?;
            let manifest = pipeline::cmd_simulate(&config, &options)?;
            println!("wrote {}", manifest.display());
        }
        Command::Calibrate(args) => {
            let spots = pipeline::cmd_calibrate(&manifest_path(&args.manifest), args.workers)?;
            for s in spots {
                println!(
                    "point {}: spot at {:.4} um, sin(alpha) {:.3e}",
                    s.point,
                    s.estimate.refined_position * 1e6,
                    s.estimate.deflection_sin
                );
            }
        }
        Command::Reconstruct(args) => {
            let summary = pipeline::cmd_reconstruct(&manifest_path(&args.manifest), args.workers)?;
            for r in &summary.records {
                println!("pair ({}, {}): |mu| {:.4}", r.i, r.j, r.coherence);
            }
            non_converged(&summary.non_converged)?;
        }
        Command::StitchFit(args) => {
            let results = if args.results.join(pipeline::INDEX_FILE).exists() {
                args.results
            } else {
                args.results.join(RESULTS_DIR)
            };
            report_stitch(&pipeline::cmd_stitch_fit(&results)?);
        }
        Command::RunAll(args) => {
            let (config, options) = args.load()?;
            let summary = pipeline::run_all(&config, &options)?;
            for r in &summary.reconstruct.records {
                println!("pair ({}, {}): |mu| {:.4}", r.i, r.j, r.coherence);
            }
            report_stitch(&summary.stitch_fit);
            println!("artifacts in {}", summary.out.display());
            non_converged(&summary.reconstruct.non_converged)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {message}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
