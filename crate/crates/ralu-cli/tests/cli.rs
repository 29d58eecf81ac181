//! CLI surface tests: exit codes, config handling, serialization round
//! trips.

use std::path::Path;
use std::process::{Command, Output};

fn ralu(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ralu"))
        .args(args)
        .current_dir(dir)
        .env_remove("RALU_SEED")
        .output()
        .expect("binary runs")
}

fn code(output: &Output) -> i32 {
    output.status.code().unwrap_or(-1)
}

#[test]
fn exit_codes_follow_the_contract() {
    let tmp = tempfile::tempdir().unwrap();

    // config errors -> 2
    let out = ralu(&["run", "--preset", "flux9x"], tmp.path());
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let out = ralu(&["run", "--preset", "flux4x", "--ratio", "1.5"], tmp.path());
    assert_eq!(code(&out), 2);
    let out = ralu(
        &["verify", "--preset", "flux4x", "--samples", "100"],
        tmp.path(),
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("power"));

    // a single-stage schedule has nothing to reschedule -> 2
    let cfg = tmp.path().join("single.toml");
    std::fs::write(&cfg, "stages_n = [10]\nstages_e = [1.0]\n").unwrap();
    let out = ralu(&["schedule", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nothing to reschedule"));

    // unknown config keys are rejected -> 2
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "mystery_knob = 1\n").unwrap();
    let out = ralu(&["run", "--config", bad.to_str().unwrap()], tmp.path());
    assert_eq!(code(&out), 2);

    // missing input file -> 3
    let out = ralu(
        &[
            "edges",
            "--preset",
            "flux4x",
            "--input",
            "no-such-file.lat1",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 3);
}

#[test]
fn ralu_seed_env_is_the_default_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("env-run");
    let output = Command::new(env!("CARGO_BIN_EXE_ralu"))
        .args([
            "run",
            "--preset",
            "flux4x",
            "--c",
            "0.0251",
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .env("RALU_SEED", "12345")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let report = std::fs::read_to_string(out_dir.join("report.toml")).unwrap();
    assert!(
        report.contains("seed = 12345"),
        "report: {}",
        &report[..200.min(report.len())]
    );
}

#[test]
fn schedule_document_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("sched");
    let out = ralu(
        &[
            "schedule",
            "--preset",
            "flux7x",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    // parse(serialize(x)) == x through the TOML layer
    let text = std::fs::read_to_string(out_dir.join("schedule.toml")).unwrap();
    let value: toml::Value = toml::from_str(&text).unwrap();
    let reserialized = toml::to_string(&value).unwrap();
    let value_again: toml::Value = toml::from_str(&reserialized).unwrap();
    assert_eq!(value, value_again);

    // plan invariants hold in the exported document
    let plan = &value["plan"];
    let stages = plan["stages"].as_array().unwrap();
    assert_eq!(stages.len(), 3);
    assert_eq!(stages[0]["start"].as_float().unwrap(), 0.0);
    let c = plan["c"].as_float().unwrap();
    assert!(c > 0.0 && c <= 0.25);
    let coef = plan["coefficients"].as_array().unwrap();
    for (k, pair) in coef.iter().enumerate() {
        let a = pair["a"].as_float().unwrap();
        let b = pair["b"].as_float().unwrap();
        let e = stages[k]["end"].as_float().unwrap();
        let s = stages[k + 1]["start"].as_float().unwrap();
        assert!((a * e - s).abs() < 1e-12);
        assert!((b - (1.0 - s)).abs() < 1e-12);
    }

    // density tables accompany the schedule
    for file in ["target_density.csv", "realized_density.csv"] {
        let csv = std::fs::read_to_string(out_dir.join(file)).unwrap();
        assert!(csv.starts_with("t,density\n"));
        assert_eq!(csv.lines().count(), 4097);
    }
}

#[test]
fn lat1_artifacts_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    let out = ralu(
        &[
            "run",
            "--preset",
            "flux4x",
            "--seed",
            "3",
            "--c",
            "0.0251",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let bytes = std::fs::read(out_dir.join("final.lat1")).unwrap();
    let grid = ralu_core::io::read_lat1(&bytes).unwrap();
    assert_eq!((grid.height, grid.width), (64, 64));
    assert_eq!(ralu_core::io::write_lat1(&grid), bytes);

    // the final latent feeds back in as an edges input
    let edges_dir = tmp.path().join("edges");
    let out = ralu(
        &[
            "edges",
            "--preset",
            "flux4x",
            "--input",
            out_dir.join("final.lat1").to_str().unwrap(),
            "--out",
            edges_dir.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let pgm = std::fs::read(edges_dir.join("edges.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n256 256\n255\n"));
}

#[test]
fn baseline_flag_switches_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("base");
    let out = ralu(
        &[
            "run",
            "--preset",
            "flux4x",
            "--baseline",
            "--seed",
            "3",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    let report = std::fs::read_to_string(out_dir.join("report.toml")).unwrap();
    assert!(report.contains("mode = \"baseline\""));
    assert!(report.contains("integration_token_steps = 204800"));
    assert!(!out_dir.join("selection.csv").exists());
}

#[test]
fn run_with_caching_reports_published_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("cached");
    let out = ralu(
        &[
            "run",
            "--preset",
            "flux4x",
            "--seed",
            "3",
            "--c",
            "0.0251",
            "--caching",
            "0.4",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = std::fs::read_to_string(out_dir.join("report.toml")).unwrap();
    assert!(report.contains("computed_tokens_per_step = [1948, 1948, 1168, 1168, 1168, 1168]"));
    assert!(
        report.contains("computed_tokens_per_step = [4096, 4096, 2457, 2457, 2457, 2457, 4096]")
    );
}

#[test]
fn verify_passes_with_defaults_and_reports_the_ablation() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("verify");
    let out = ralu(
        &[
            "verify",
            "--preset",
            "flux4x",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS injection_within_block_corr_max_abs"));
    let csv = std::fs::read_to_string(out_dir.join("verify_report.csv")).unwrap();
    assert!(csv.starts_with("statistic,expected,observed,z_score\n"));

    let skip_dir = tmp.path().join("verify-skip");
    let out = ralu(
        &[
            "verify",
            "--preset",
            "flux4x",
            "--skip-injection",
            "--samples",
            "20000",
            "--out",
            skip_dir.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("EXPECTED-FAIL injection_isotropy_skipped"));
    assert!(stdout.contains("PASS ablation_replication_corr_min"));
}

#[test]
fn cost_command_emits_breakdown() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("cost");
    let out = ralu(
        &[
            "cost",
            "--preset",
            "flux4x",
            "--caching",
            "0.4",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    let csv = std::fs::read_to_string(out_dir.join("cost.csv")).unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(csv.starts_with("stage,steps,tokens,cost,share\n"));
    assert!(csv.lines().any(|l| l.starts_with("2,6,1948,")));
    assert!(csv.lines().any(|l| l.starts_with("3,7,4096,")));
    assert!(stdout.contains("[1024, 1948, 4096]"));
    assert!(stdout.contains("cached-step tokens at ratio 0.4: [-, 1168, 2457]"));
}

#[test]
fn config_file_round_trips_and_drives_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("run.toml");
    let cfg_text = concat!(
        "preset = \"flux7x\"\n",
        "base_height = 8\n",
        "base_width = 8\n",
        "ratio = 0.25\n",
        "c = 0.02\n",
        "seed = 5\n",
        "footprint = 4\n",
        "[canny]\n",
        "low_threshold = 0.08\n",
        "high_threshold = 0.18\n",
        "blur_sigma = 1.2\n",
    );
    std::fs::write(&cfg_path, cfg_text).unwrap();

    // the config parses to the same document it serializes back to
    let parsed: toml::Value = toml::from_str(cfg_text).unwrap();
    let reparsed: toml::Value = toml::from_str(&toml::to_string(&parsed).unwrap()).unwrap();
    assert_eq!(parsed, reparsed);

    let out_dir = tmp.path().join("from-config");
    let out = ralu(
        &[
            "run",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = std::fs::read_to_string(out_dir.join("report.toml")).unwrap();
    assert!(report.contains("seed = 5"));
    assert!(report.contains("ratio = 0.25"));
    assert!(report.contains("base_height = 8"));
}
