use std::collections::BTreeSet;
use std::fs;
use std::ops::ControlFlow;
use std::path::Path;
use std::process::Command;

use jsq_cli::config::{load_config, parse_config, ConfigError, Format, SweepConfig};
use jsq_cli::report::{emit_report, plot_file_name, read_json_rows, ReportWriter, CSV_COLUMNS};
use jsq_cli::sweep::{run_sweep, run_sweep_with};

fn small_sweep(dir: &Path, extra: &str) -> SweepConfig {
    let mut cfg = parse_config(&format!(
        "n_list = [2, 4]\nalpha_list = [2.5, 3.0]\nreplications_per_cell = 8\nseed = 11\n{extra}"
    ))
    .unwrap();
    cfg.output_dir = dir.to_owned();
    cfg
}

fn csv_lines(dir: &Path) -> Vec<String> {
    fs::read_to_string(dir.join("results.csv"))
        .unwrap()
        .lines()
        .map(str::to_owned)
        .collect()
}

#[test]
fn config_file_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.toml");
    fs::write(&path, "n_list = [4]\nalpha_list = [2.5]\n").unwrap();
    let cfg = load_config(&path).unwrap();
    assert_eq!(cfg.n_list, vec![4]);
    assert_eq!(cfg.replications_per_cell, 8);

    fs::write(&path, "n_list = [4]\n\nnservers = 4\n").unwrap();
    let err = load_config(&path).unwrap_err();
    assert!(matches!(err, ConfigError::UnknownKey { line: 3, .. }), "{err}");
    assert!(err.to_string().contains("n_servers"), "{err}");

    assert!(matches!(
        load_config(&dir.path().join("missing.toml")),
        Err(ConfigError::Io { .. })
    ));
}

#[test]
fn sweep_is_deterministic_and_satisfies_unused_service_identity() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let rows_a = run_sweep(&small_sweep(a.path(), ""), 1).unwrap();
    let rows_b = run_sweep(&small_sweep(b.path(), ""), 3).unwrap();
    assert_eq!(rows_a.len(), 4);
    assert_eq!(
        fs::read(a.path().join("results.csv")).unwrap(),
        fs::read(b.path().join("results.csv")).unwrap()
    );
    for (x, y) in rows_a.iter().zip(&rows_b) {
        let mut y = y.row.clone();
        y.runtime_seconds = x.row.runtime_seconds;
        assert_eq!(x.row, y);
    }
    for o in &rows_a {
        let r = &o.row;
        assert!(r.is_ok(), "{}", r.status);
        let (est, se) = (r.u_rate_est.unwrap(), r.u_rate_se.unwrap());
        assert!((est - r.drift_target).abs() <= 3.0 * se, "N = {} alpha = {}: {est} ± {se}", r.n, r.alpha);
    }
}

#[test]
fn interrupted_sweep_keeps_completed_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_sweep(dir.path(), "");
    let mut writer = ReportWriter::create(&cfg.output_dir, &cfg.formats).unwrap();
    let mut seen = 0;
    let out = run_sweep_with(&cfg, 1, &mut writer, |_| {
        seen += 1;
        if seen == 2 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();
    assert_eq!(out.len(), 2);
    let lines = csv_lines(dir.path());
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], CSV_COLUMNS.join(","));
    assert_eq!(read_json_rows(&dir.path().join("results.json")).unwrap().len(), 2);
}

#[test]
fn report_files_match_rows() {
    let src = tempfile::tempdir().unwrap();
    let cfg = parse_config("n_servers = 4\nalpha = 2.5\nreplications_per_cell = 2\n").unwrap();
    let cfg = SweepConfig {
        output_dir: src.path().to_owned(),
        ..cfg
    };
    let outputs = run_sweep(&cfg, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let formats: BTreeSet<Format> = [Format::Csv, Format::Json].into_iter().collect();
    emit_report(&outputs, &formats, dir.path()).unwrap();

    assert_eq!(csv_lines(dir.path()).len(), 2);
    let back = read_json_rows(&dir.path().join("results.json")).unwrap();
    assert_eq!(back, vec![outputs[0].row.clone()]);

    let row = &outputs[0].row;
    let plot = outputs[0].plot.as_ref().unwrap();
    let qq = fs::read_to_string(dir.path().join(plot_file_name("qq", 4, 2.5, row.policy))).unwrap();
    assert_eq!(qq.lines().count() - 1, plot.qq.len());
    assert!(plot.qq.len() as u64 <= row.n_samples.unwrap());
    let mgf = fs::read_to_string(dir.path().join("mgf_4_2.5.csv")).unwrap();
    assert_eq!(mgf.lines().next(), Some("theta,est,se,target"));
    assert_eq!(mgf.lines().count(), 22);

    assert!(emit_report(&[], &formats, dir.path()).is_err());
}

#[test]
fn csv_only_output_skips_json() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = parse_config("n_servers = 2\nalpha = 3.0\nreplications_per_cell = 2\nformats = [\"csv\"]\n").unwrap();
    cfg.output_dir = dir.path().to_owned();
    run_sweep(&cfg, 1).unwrap();
    assert!(dir.path().join("results.csv").exists());
    assert!(!dir.path().join("results.json").exists());
}

#[test]
fn unwritable_output_fails_before_simulating() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let cfg = SweepConfig {
        output_dir: blocker.join("sub"),
        ..SweepConfig::default()
    };
    let start = std::time::Instant::now();
    assert!(run_sweep(&cfg, 1).is_err());
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

fn jsq() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_jsq"));
    cmd.env("RUST_LOG", "warn").env_remove("JSQ_WORKERS");
    cmd
}

#[test]
fn binary_exit_codes() {
    let out = jsq().arg("bound").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 6);

    let out = jsq().args(["oracle", "--n", "2", "--arrivals", "0:0.3,1:0.7"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("E[sum u] = 1.300000000000"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "nservers = 4\n").unwrap();
    let out = jsq().arg("run").arg("--config").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("did you mean `n_servers`"));
}

#[test]
fn run_writes_outputs_and_honours_worker_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "n_list = [2, 3]\nalpha = 3.0\nreplications_per_cell = 2\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = jsq()
        .arg("run")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .args(["--seed", "5"])
        .env("JSQ_WORKERS", "3")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = csv_lines(&out_dir);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].contains(",5,ok"), "{}", lines[1]);
    assert!(out_dir.join("qq_3_3.csv").exists());
}

#[test]
fn verify_reports_every_criterion() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("v.toml");
    fs::write(&cfg, "n_list = [2, 3, 4]\nalpha = 3.0\nreplications_per_cell = 4\n").unwrap();
    let run = |extra: &[&str]| {
        jsq()
            .arg("verify")
            .arg("--quick")
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join("v"))
            .args(extra)
            .env("JSQ_WORKERS", "3")
            .output()
            .unwrap()
    };
    let out = run(&["--workers", "2"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(matches!(out.status.code(), Some(0) | Some(1)), "{text}");
    assert!(text.lines().next().unwrap().ends_with("2 workers"), "{text}");
    let verdicts = text.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).count();
    assert_eq!(verdicts, 10, "{text}");
    assert!(text.contains("PASS [10]"), "{text}");
    assert_eq!(out.status.code() == Some(0), !text.contains("FAIL ["));

    let out = run(&[]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().next().unwrap().ends_with("3 workers"), "{text}");
}
