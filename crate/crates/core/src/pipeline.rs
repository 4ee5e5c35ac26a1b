//! File-based protocol stages behind the command-line tool.
//!
//! Output layout of one run:
//!
//! ```text
//! <out>/manifest.json            simulated frames and the config that made them
//! <out>/cal_<i>.frame            single-aperture frames, one per plan point
//! <out>/pair_<i>_<j>.frame       two-aperture frames, one per plan pair
//! <out>/spots.json               calibration results
//! <out>/results/index.json       what stitch-fit needs besides the pair files
//! <out>/results/pair_<i>_<j>.json
//! <out>/results/stitched.json, coherence.csv, fit.json, fit_samples.csv
//! ```
//!
//! Every artifact depends only on the config and seed: work items are processed
//! on a bounded pool but collected in plan order, and nothing time- or
//! machine-dependent is written.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::assembly::{fit_core_diameter, plan_pairs, stitch, vcz_mu, CoreFit, StitchOptions, StitchedMatrix};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::frame::DetectorFrame;
use crate::instrument::{derive_seed, simulate_frame};
use crate::mle::ReconstructionResult;
use crate::protocol::{pair_coherence, reconstruct_pair, PairInput};
use crate::spot::{analyze_spot, SpotEstimate};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPOTS_FILE: &str = "spots.json";
pub const RESULTS_DIR: &str = "results";
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub workers: usize,
    pub noise: bool,
    pub out: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            seed: None,
            workers: 1,
            noise: true,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub file: String,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub i: usize,
    pub j: usize,
    pub file: String,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Config as run: effective seed filled in, output directory removed.
    pub config: ExperimentConfig,
    pub noise: bool,
    /// Aperture centers (m).
    pub points: Vec<f64>,
    pub calibration: Vec<FrameEntry>,
    pub pairs: Vec<PairEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotRecord {
    pub point: usize,
    pub aperture_center: f64,
    /// Total counts of the calibration frame.
    pub intensity: f64,
    pub estimate: SpotEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub i: usize,
    pub j: usize,
    pub x_i: f64,
    pub x_j: f64,
    pub coherence: f64,
    pub result: ReconstructionResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsIndex {
    pub points: Vec<f64>,
    pub aperture_width: f64,
    pub intensities: Vec<f64>,
    pub wavelength: f64,
    pub fit_focal: Option<f64>,
    pub stitch: StitchOptions,
    pub pair_files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSample {
    pub i: usize,
    pub j: usize,
    pub separation: f64,
    pub measured: f64,
    pub model: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub wavelength: f64,
    pub collimator_focal: f64,
    pub fit: CoreFit,
    pub samples: Vec<FitSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructSummary {
    pub records: Vec<PairRecord>,
    pub results_dir: PathBuf,
    /// Pairs whose likelihood iteration stopped without meeting the tolerance.
    pub non_converged: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StitchFitSummary {
    pub stitched: StitchedMatrix,
    pub fit: Option<FitReport>,
}

pub fn cal_file(i: usize) -> String {
    format!("cal_{i}.frame")
}

pub fn pair_file(i: usize, j: usize) -> String {
    format!("pair_{i}_{j}.frame")
}

fn pair_result_file(i: usize, j: usize) -> String {
    format!("pair_{i}_{j}.json")
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

fn manifest_dir(manifest_path: &Path) -> PathBuf {
    manifest_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf()
}

fn read_frame(dir: &Path, file: &str) -> Result<DetectorFrame> {
    let path = dir.join(file);
    if !path.exists() {
        return Err(Error::Manifest(format!("missing frame {}", path.display())));
    }
    DetectorFrame::read(&path)
}

/// Output directory: `--out`, else the config's, else `./out`.
pub fn output_dir(config: &ExperimentConfig, options: &RunOptions) -> PathBuf {
    options
        .out
        .clone()
        .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Simulates every calibration and pair frame of the plan and writes them with a
/// manifest. Returns the manifest path.
pub fn cmd_simulate(config: &ExperimentConfig, options: &RunOptions) -> Result<PathBuf> {
    config.validate()?;
    let out = output_dir(config, options);
    create_dir(&out)?;
    let geometry = config.geometry.to_geometry()?;
    let source = config.source_model(&geometry)?;
    let master = options.seed.unwrap_or(config.seed);
    let n = config.plan.start_mirrors.len();
    let points: Vec<f64> = config.plan.apertures(&geometry).iter().map(|a| a.center).collect();
    let plan = plan_pairs(&points, config.plan.aperture_mirrors as f64 * geometry.mirror_pitch)?;

    // Seed index k: points first, then pairs in plan order.
    let mut jobs: Vec<(Vec<usize>, String, Option<u64>)> = (0..n)
        .map(|i| (vec![i], cal_file(i), Some(i as u64)))
        .collect();
    jobs.extend(
        plan.pairs
            .iter()
            .enumerate()
            .map(|(k, &(i, j))| (vec![i, j], pair_file(i, j), Some((n + k) as u64))),
    );
    for job in &mut jobs {
        job.2 = if options.noise { job.2.map(|k| derive_seed(master, k)) } else { None };
    }

    let frames = pool(options.workers)?.install(|| {
        jobs.par_iter()
            .map(|(members, file, seed)| {
                let mask = config.plan.mask_for(members)?;
                let frame = simulate_frame(&source, &mask, &geometry, config.photons_per_frame, *seed)
                    .map_err(|e| e.within(format!("simulating {file}")))?;
                write_atomic(&out.join(file), frame.to_text().as_bytes())
            })
            .collect::<Vec<Result<()>>>()
    });
    frames.into_iter().collect::<Result<Vec<()>>>()?;

    let mut recorded = config.clone();
    recorded.seed = master;
    recorded.output_dir = None;
    let manifest = Manifest {
        config: recorded,
        noise: options.noise,
        calibration: jobs[..n]
            .iter()
            .map(|(_, file, seed)| FrameEntry { file: file.clone(), seed: *seed })
            .collect(),
        pairs: plan
            .pairs
            .iter()
            .zip(&jobs[n..])
            .map(|(&(i, j), (_, file, seed))| PairEntry { i, j, file: file.clone(), seed: *seed })
            .collect(),
        points,
    };
    let path = out.join(MANIFEST_FILE);
    write_json(&path, &manifest)?;
    Ok(path)
}

fn calibrate(manifest: &Manifest, dir: &Path, workers: usize) -> Result<Vec<SpotRecord>> {
    let geometry = manifest.config.geometry.to_geometry()?;
    let apertures = manifest.config.plan.apertures(&geometry);
    if apertures.len() != manifest.calibration.len() {
        return Err(Error::Manifest(format!(
            "{} calibration frames for {} plan points",
            manifest.calibration.len(),
            apertures.len()
        )));
    }
    let records = pool(workers)?.install(|| {
        manifest
            .calibration
            .par_iter()
            .enumerate()
            .map(|(i, entry)| {
                let frame = read_frame(dir, &entry.file)?;
                let estimate = analyze_spot(&frame, &geometry, apertures[i], &manifest.config.spot)
                    .map_err(|e| e.within(format!("calibrating point {i}")))?;
                Ok(SpotRecord {
                    point: i,
                    aperture_center: apertures[i].center,
                    intensity: frame.total(),
                    estimate,
                })
            })
            .collect::<Vec<Result<SpotRecord>>>()
    });
    records.into_iter().collect()
}

/// Runs spot analysis on every calibration frame and writes `spots.json`.
pub fn cmd_calibrate(manifest_path: &Path, workers: usize) -> Result<Vec<SpotRecord>> {
    let manifest = Manifest::read(manifest_path)?;
    let dir = manifest_dir(manifest_path);
    let records = calibrate(&manifest, &dir, workers)?;
    write_json(&dir.join(SPOTS_FILE), &records)?;
    Ok(records)
}

/// Reconstructs every plan pair and writes one result file per pair plus the
/// results index.
pub fn cmd_reconstruct(manifest_path: &Path, workers: usize) -> Result<ReconstructSummary> {
    let manifest = Manifest::read(manifest_path)?;
    let dir = manifest_dir(manifest_path);
    let config = &manifest.config;
    let geometry = config.geometry.to_geometry()?;
    let apertures = config.plan.apertures(&geometry);
    let spots = calibrate(&manifest, &dir, workers)?;
    let calibration = manifest
        .calibration
        .iter()
        .map(|e| read_frame(&dir, &e.file))
        .collect::<Result<Vec<_>>>()?;

    let records = pool(workers)?.install(|| {
        manifest
            .pairs
            .par_iter()
            .map(|entry| {
                let (i, j) = (entry.i, entry.j);
                if i >= apertures.len() || j >= apertures.len() {
                    return Err(Error::Manifest(format!("pair ({i}, {j}) refers to a missing point")));
                }
                let input = PairInput {
                    calibration: vec![calibration[i].clone(), calibration[j].clone()],
                    joint: read_frame(&dir, &entry.file)?,
                    apertures: vec![apertures[i], apertures[j]],
                };
                let result = reconstruct_pair(&input, &geometry, &config.ml, &config.spot)
                    .map_err(|e| e.within(format!("pair ({i}, {j})")))?;
                Ok(PairRecord {
                    i,
                    j,
                    x_i: apertures[i].center,
                    x_j: apertures[j].center,
                    coherence: pair_coherence(&result.rho_hat)?,
                    result,
                })
            })
            .collect::<Vec<Result<PairRecord>>>()
    });
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;

    let results_dir = dir.join(RESULTS_DIR);
    create_dir(&results_dir)?;
    for r in &records {
        write_json(&results_dir.join(pair_result_file(r.i, r.j)), r)?;
    }
    let index = ResultsIndex {
        points: manifest.points.clone(),
        aperture_width: config.plan.aperture_mirrors as f64 * geometry.mirror_pitch,
        intensities: spots.iter().map(|s| s.intensity).collect(),
        wavelength: geometry.wavelength,
        fit_focal: config.fit_focal_length(),
        stitch: config.stitch,
        pair_files: records.iter().map(|r| pair_result_file(r.i, r.j)).collect(),
    };
    write_json(&results_dir.join(INDEX_FILE), &index)?;
    let non_converged = records
        .iter()
        .filter(|r| !r.result.converged)
        .map(|r| (r.i, r.j))
        .collect();
    Ok(ReconstructSummary {
        records,
        results_dir,
        non_converged,
    })
}

fn fmt_row(fields: &[f64]) -> Vec<String> {
    fields.iter().map(|v| v.to_string()).collect()
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_data = |e: csv::Error| Error::Data(format!("csv: {e}"));
    w.write_record(header).map_err(to_data)?;
    for row in rows {
        w.write_record(&row).map_err(to_data)?;
    }
    w.into_inner().map_err(|e| Error::Data(format!("csv: {e}")))
}

/// Stitches the pair results in `results_dir`, fits the core diameter and writes
/// `stitched.json`, `coherence.csv`, `fit.json` and `fit_samples.csv` there.
///
/// The stitched artifacts are written even when the fit is refused.
pub fn cmd_stitch_fit(results_dir: &Path) -> Result<StitchFitSummary> {
    let index_path = results_dir.join(INDEX_FILE);
    if !index_path.exists() {
        return Err(Error::IncompletePlan(format!("{} not found", index_path.display())));
    }
    let index: ResultsIndex = read_json(&index_path)?;
    let plan = plan_pairs(&index.points, index.aperture_width)?;
    let mut estimates = BTreeMap::new();
    for &(i, j) in &plan.pairs {
        let path = results_dir.join(pair_result_file(i, j));
        if !path.exists() {
            return Err(Error::IncompletePlan(format!("missing result {}", path.display())));
        }
        let record: PairRecord = read_json(&path)?;
        estimates.insert((i, j), record.result.rho_hat);
    }
    let stitched = stitch(&plan, &estimates, &index.intensities, index.stitch)?;
    write_json(&results_dir.join("stitched.json"), &stitched)?;

    let n = plan.len();
    let rows = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| {
        let jv = stitched.j[(i, j)];
        fmt_row(&[plan.points[i], plan.points[j], jv.norm(), jv.arg(), stitched.mu[(i, j)].norm()])
    });
    let table = csv_bytes(&["x_i_m", "x_j_m", "abs_j", "arg_j", "abs_mu"], rows)?;
    write_atomic(&results_dir.join("coherence.csv"), &table)?;

    let Some(focal) = index.fit_focal else {
        return Ok(StitchFitSummary { stitched, fit: None });
    };
    let samples: Vec<(usize, usize, f64, f64)> = plan
        .pairs
        .iter()
        .map(|&(i, j)| (i, j, plan.separation(i, j), stitched.mu[(i, j)].norm()))
        .collect();
    let xy: Vec<(f64, f64)> = samples.iter().map(|s| (s.2, s.3)).collect();
    let fit = fit_core_diameter(&xy, index.wavelength, focal).map_err(|e| e.within("core diameter fit"))?;
    let report = FitReport {
        wavelength: index.wavelength,
        collimator_focal: focal,
        samples: samples
            .iter()
            .map(|&(i, j, separation, measured)| FitSample {
                i,
                j,
                separation,
                measured,
                model: vcz_mu(fit.core_diameter, index.wavelength, focal, separation),
            })
            .collect(),
        fit,
    };
    write_json(&results_dir.join("fit.json"), &report)?;
    let rows = report.samples.iter().map(|s| {
        let mut row = vec![s.i.to_string(), s.j.to_string()];
        row.extend(fmt_row(&[s.separation, s.measured, s.model, s.measured - s.model]));
        row
    });
    let table = csv_bytes(&["i", "j", "separation_m", "abs_mu", "model_abs_mu", "residual"], rows)?;
    write_atomic(&results_dir.join("fit_samples.csv"), &table)?;
    Ok(StitchFitSummary {
        stitched,
        fit: Some(report),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out: PathBuf,
    pub reconstruct: ReconstructSummary,
    pub stitch_fit: StitchFitSummary,
}

/// simulate, calibrate, reconstruct, stitch-fit in one output directory.
/// Non-convergence of any pair is reported after all artifacts are written.
pub fn run_all(config: &ExperimentConfig, options: &RunOptions) -> Result<RunSummary> {
    let manifest = cmd_simulate(config, options)?;
    cmd_calibrate(&manifest, options.workers)?;
    let reconstruct = cmd_reconstruct(&manifest, options.workers)?;
    let stitch_fit = cmd_stitch_fit(&reconstruct.results_dir)?;
    Ok(RunSummary {
        out: manifest_dir(&manifest),
        reconstruct,
        stitch_fit,
    })
}
