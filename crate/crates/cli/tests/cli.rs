//! End-to-end tests of the `nraec` binary: exit codes, output-directory
//! resolution (flag vs environment variable vs config) and the CSV files a
//! sweep leaves behind.

use std::path::Path;
use std::process::{Command, Output};

fn nraec() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nraec"))
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tiny_config(out_dir: &Path) -> String {
    format!(
        r#"
[signals]
scenario_count = 1
duration_s = 4.0

[grid]
snr_db = [0.0]
ser_db = [0.0]
lf = [32]

[output]
dir = "{}"
export_artifacts = false
"#,
        out_dir.display()
    )
}

#[test]
fn default_config_prints_parseable_toml_with_all_blocks() {
    let out = nraec().arg("default-config").output().unwrap();
    assert_success(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    let value: toml::Table = toml::from_str(&text).unwrap();
    for block in [
        "room", "geometry", "signals", "stft", "grid", "aec", "tracking", "output",
    ] {
        assert!(value.contains_key(block), "missing [{block}] in:\n{text}");
    }
}

#[test]
fn verify_passes_and_prints_one_line_per_check() {
    let out = nraec().arg("verify").output().unwrap();
    assert_success(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    let passes = text.lines().filter(|l| l.starts_with("PASS")).count();
    assert!(passes >= 5, "expected at least 5 PASS lines:\n{text}");
    assert!(!text.contains("FAIL"), "{text}");
}

#[test]
fn run_then_figures_round_trip_and_env_var_overrides_the_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let config_dir = dir.path().join("from_config");
    let env_dir = dir.path().join("from_env");
    let config_path = dir.path().join("sweep.toml");
    std::fs::write(&config_path, tiny_config(&config_dir)).unwrap();

    // The environment variable must win over the configured directory.
    let out = nraec()
        .arg("run")
        .arg(&config_path)
        .env("NRAEC_OUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert_success(&out);
    assert!(env_dir.join("results.csv").exists());
    assert!(!config_dir.exists());

    let results = std::fs::read_to_string(env_dir.join("results.csv")).unwrap();
    assert_eq!(
        results.lines().count(),
        3,
        "header + one row per design:\n{results}"
    );
    assert!(env_dir.join("aggregates.csv").exists());
    assert!(env_dir.join("figures/figure_nr_performance.csv").exists());

    // Re-derive figure data somewhere else from the same results file.
    let fig_dir = dir.path().join("refigured");
    let out = nraec()
        .arg("figures")
        .arg(env_dir.join("results.csv"))
        .arg("--out")
        .arg(&fig_dir)
        .output()
        .unwrap();
    assert_success(&out);
    for name in ["nr_performance", "aec_converged", "aec_adaptive"] {
        assert!(fig_dir.join(format!("figure_{name}.csv")).exists());
    }
}

#[test]
fn set_overrides_narrow_the_grid_and_the_out_flag_wins_over_everything() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("sweep.toml");
    let env_dir = dir.path().join("from_env");
    let flag_dir = dir.path().join("from_flag");
    std::fs::write(&config_path, tiny_config(&dir.path().join("from_config"))).unwrap();

    let out = nraec()
        .arg("run")
        .arg(&config_path)
        .arg("--set")
        .arg(r#"grid.designs=["nr_aec"]"#)
        .arg("--set")
        .arg("signals.master_seed=7")
        .arg("--out")
        .arg(&flag_dir)
        .env("NRAEC_OUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert_success(&out);
    assert!(flag_dir.join("results.csv").exists());
    assert!(!env_dir.exists());

    let results = std::fs::read_to_string(flag_dir.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 2, "{results}");
    assert!(results.lines().nth(1).unwrap().contains("nr_aec"));
    // The merged configuration (with overrides applied) is persisted.
    let used = std::fs::read_to_string(flag_dir.join("config_used.toml")).unwrap();
    assert!(used.contains("master_seed = 7"));
}

#[test]
fn invalid_config_keys_fail_with_a_clear_error() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("bad.toml");
    std::fs::write(&config_path, "[signals]\nduration = 1.0\n").unwrap();
    let out = nraec().arg("run").arg(&config_path).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("duration"), "stderr: {err}");
}
