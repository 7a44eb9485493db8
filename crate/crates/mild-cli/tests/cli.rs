//! End-to-end tests of the experiment driver: config parsing, data
//! round-trips, sweep reports, and the binary's exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

use mild_cli::experiment::{evaluate_dir, read_data_dir, run_training, write_data_dir};
use mild_cli::{render_report, run_sweep, verify_report, ExperimentConfig, MethodChoice};
use mild_core::train::Method;

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn small_config() -> ExperimentConfig {
    ExperimentConfig::from_file(&config_dir().join("determinism.conf")).unwrap()
}

#[test]
fn parses_repo_configs() {
    for name in [
        "severe.conf",
        "setup1_error_only.conf",
        "setup2_error_plus_cost.conf",
        "setup3_error_only.conf",
        "llm_analog.conf",
        "determinism.conf",
    ] {
        let config = ExperimentConfig::from_file(&config_dir().join(name));
        assert!(config.is_ok(), "{name}: {:?}", config.err());
    }
}

#[test]
fn rejects_unknown_keys_and_values() {
    assert!(ExperimentConfig::from_str("bogus_key = 1\n").is_err());
    assert!(ExperimentConfig::from_str("setup = nonsense\n").is_err());
    assert!(ExperimentConfig::from_str("methods = mild,magic\n").is_err());
    assert!(ExperimentConfig::from_str("n_seeds = 0\n").is_err());
    assert!(ExperimentConfig::from_str("tau = 0.5\n").is_err());
    // Comments and blank lines are fine.
    assert!(ExperimentConfig::from_str("# just a comment\n\nseed = 3\n").is_ok());
}

#[test]
fn custom_coverage_setup_parses() {
    let config = ExperimentConfig::from_str("setup = custom:0.8,0.2\n").unwrap();
    assert_eq!(config.n_experts(), 2);
    assert_eq!(config.setup_name(), "custom");
}

#[test]
fn data_dir_roundtrip() {
    let mut config = small_config();
    config.n_samples = 200;
    let dir = tempfile::tempdir().unwrap();
    let (dataset, panel, costs) = mild_cli::generate_data(&config, 3).unwrap();
    write_data_dir(dir.path(), &config, 3, &dataset, &panel, &costs).unwrap();
    let (ds2, costs2) = read_data_dir(dir.path()).unwrap();
    assert_eq!(ds2.labels, dataset.labels);
    assert_eq!(ds2.n_classes, dataset.n_classes);
    for (a, b) in costs2.values.iter().zip(costs.values.iter()) {
        assert!((a - b).abs() < 1e-9);
    }
    assert_eq!(costs2.cost_type, costs.cost_type);
}

#[test]
fn training_router_roundtrips_through_eval() {
    let mut config = small_config();
    config.n_samples = 400;
    config.epochs = 30;
    let dir = tempfile::tempdir().unwrap();
    let (dataset, panel, costs) = mild_cli::generate_data(&config, 5).unwrap();
    write_data_dir(dir.path(), &config, 5, &dataset, &panel, &costs).unwrap();
    let (ds, cs, outcome) = run_training(
        &config,
        Method::Mild,
        5,
        Some((dataset.clone(), costs.clone())),
    )
    .unwrap();
    let router_path = dir.path().join("router.txt");
    mild_core::io::write_router(&router_path, &outcome.router).unwrap();
    // Evaluating the stored router on the stored data reproduces the
    // in-memory full-dataset evaluation.
    let from_disk = evaluate_dir(dir.path(), &router_path).unwrap();
    let phi = outcome
        .router
        .feature_map
        .apply_matrix(&ds.features)
        .unwrap();
    let in_memory =
        mild_core::eval::evaluate_mapped(&outcome.router, &phi, &cs, None).unwrap();
    assert!(
        (from_disk.mean_deferral_loss - in_memory.mean_deferral_loss).abs() < 1e-9,
        "{} vs {}",
        from_disk.mean_deferral_loss,
        in_memory.mean_deferral_loss
    );
}

#[test]
fn sweep_report_shape_and_aggregates() {
    let config = small_config();
    let outcome = run_sweep(&config).unwrap();
    let report = render_report(&config, &outcome);
    let lines: Vec<&str> = report.lines().collect();
    // Header + (methods x seeds) + one aggregate per method.
    assert_eq!(lines.len(), 1 + 3 * 2 + 3);
    assert!(lines[0].starts_with("method,setup,cost_type,seed,dl,dl_std"));
    verify_report(&report).unwrap();

    let oracle = outcome.summary(MethodChoice::Oracle).unwrap();
    let mild = outcome.summary(MethodChoice::Mild).unwrap();
    let tdef = outcome.summary(MethodChoice::Tdef).unwrap();
    for (a, b) in oracle.runs.iter().zip(mild.runs.iter()) {
        assert!(a.deferral_loss <= b.deferral_loss + 1e-12);
    }
    for (a, b) in oracle.runs.iter().zip(tdef.runs.iter()) {
        assert!(a.deferral_loss <= b.deferral_loss + 1e-12);
    }
}

#[test]
fn sweeps_are_bit_reproducible() {
    let config = small_config();
    let a = render_report(&config, &run_sweep(&config).unwrap());
    let b = render_report(&config, &run_sweep(&config).unwrap());
    assert_eq!(a, b);
}

#[test]
fn verify_report_catches_tampering() {
    let config = small_config();
    let report = render_report(&config, &run_sweep(&config).unwrap());
    verify_report(&report).unwrap();
    // Corrupt one seed row's loss; the independent pass must notice.
    let mut lines: Vec<String> = report.lines().map(|l| l.to_string()).collect();
    let idx = lines
        .iter()
        .position(|l| l.starts_with("mild,") && !l.contains("aggregate"))
        .unwrap();
    let mut fields: Vec<&str> = lines[idx].split(',').collect();
    fields[4] = "9.99999999e-1";
    lines[idx] = fields.join(",");
    let tampered = lines.join("\n") + "\n";
    assert!(verify_report(&tampered).is_err());
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mild"))
}

#[test]
fn binary_rejects_bad_config_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("bad.conf");
    std::fs::write(&config_path, "setup = nonsense\n").unwrap();
    let status = binary()
        .args(["sweep", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn binary_gen_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let run_dir = dir.path().join("run");
    let config_path = config_dir().join("determinism.conf");

    let status = binary()
        .args(["gen", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(&data_dir)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for file in ["dataset.csv", "panel.csv", "costs.csv", "manifest.txt"] {
        assert!(data_dir.join(file).exists(), "{file} missing");
    }

    let status = binary()
        .args(["train", "--config"])
        .arg(&config_path)
        .arg("--data")
        .arg(&data_dir)
        .arg("--out")
        .arg(&run_dir)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(run_dir.join("router.txt").exists());
    assert!(run_dir.join("trace.csv").exists());

    let output = binary()
        .args(["eval", "--data"])
        .arg(&data_dir)
        .arg("--router")
        .arg(run_dir.join("router.txt"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.starts_with("{\"mean_deferral_loss\": "));
}

#[test]
fn binary_check_fast_passes() {
    let output = binary().args(["check", "--tier", "fast"]).output().unwrap();
    assert_eq!(output.status.code(), Some(0));
    let text = String::from_utf8(output.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.ends_with("pass")).count(), 8);
}
