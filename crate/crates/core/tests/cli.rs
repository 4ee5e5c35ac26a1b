use std::path::Path;
use std::process::{Command, Output};

use dmd_coherence::config::ExperimentConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dmd-coherence"))
}

fn write_config(dir: &Path, config: &ExperimentConfig) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, config.to_json()).unwrap();
    path
}

fn stderr_line(out: &Output) -> String {
    let text = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(text.lines().count(), 1, "stderr: {text}");
    text.trim_end().to_string()
}

#[test]
fn simulate_names_frames_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &ExperimentConfig::default());
    let out = dir.path().join("sim");
    let status = bin()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let mut names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "cal_0.frame", "cal_1.frame", "cal_2.frame", "cal_3.frame", "manifest.json",
            "pair_0_1.frame", "pair_0_2.frame", "pair_0_3.frame", "pair_1_2.frame",
            "pair_1_3.frame", "pair_2_3.frame",
        ]
    );
}

#[test]
fn staged_commands_match_run_all() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &ExperimentConfig::default());
    let staged = dir.path().join("staged");
    let run = |args: &[&str], extra: &[&Path]| {
        let mut cmd = bin();
        cmd.args(args);
        for p in extra {
            cmd.arg(p);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["simulate", "--seed", "9", "--config"], &[&config, Path::new("--out"), &staged]);
    run(&["calibrate", "--manifest"], &[&staged]);
    run(&["reconstruct", "--workers", "3", "--manifest"], &[&staged.join("manifest.json")]);
    run(&["stitch-fit", "--results"], &[&staged]);

    let all = dir.path().join("all");
    run(&["run-all", "--seed", "9", "--config"], &[&config, Path::new("--out"), &all]);
    for file in ["spots.json", "results/stitched.json", "results/fit.json", "results/coherence.csv", "results/pair_0_3.json"] {
        assert_eq!(
            std::fs::read(staged.join(file)).unwrap(),
            std::fs::read(all.join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn config_errors_exit_two_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"geometry\": {\"wavelength\": \"633 parsecs\"}\n}").unwrap();
    let out = bin().args(["simulate", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let line = stderr_line(&out);
    assert!(line.starts_with("error[E_CONFIG]: "), "{line}");
    assert!(line.contains("parsecs"));

    let out = bin().args(["run-all", "--config"]).arg(dir.path().join("absent.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error[E_CONFIG]"));
}

#[test]
fn data_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["stitch-fit", "--results"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_line(&out).starts_with("error[E_DATA]"));

    let out = bin().args(["calibrate", "--manifest"]).arg(dir.path().join("manifest.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_line(&out).starts_with("error[E_MANIFEST]"));
}

#[test]
fn iteration_cap_exits_four_after_writing_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::default();
    config.plan.start_mirrors = vec![497, 517, 537];
    config.ml.max_iterations = 1;
    config.ml.likelihood_tolerance = 1e-300;
    let path = write_config(dir.path(), &config);
    let out_dir = dir.path().join("out");
    let out = bin().args(["run-all", "--config"]).arg(&path).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stderr_line(&out).starts_with("error[E_NONCONVERGENCE]"));
    assert!(out_dir.join("results/stitched.json").exists());
}

#[test]
fn no_noise_frames_hold_expected_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &ExperimentConfig::default());
    let out = dir.path().join("clean");
    let status = bin()
        .args(["simulate", "--no-noise", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let frame = dmd_coherence::frame::DetectorFrame::read(&out.join("cal_0.frame")).unwrap();
    assert_eq!(frame.noise_seed, None);
    assert!(frame.counts.iter().any(|c| c.fract() != 0.0));
    assert!((frame.total() - 1e6).abs() < 1e-6);
}
