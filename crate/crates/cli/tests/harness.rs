use std::fs;
use std::path::Path;
use std::process::Command;

use shiftform_cli::{
    render_report, run_experiment, validate_config, ExperimentKind, HarnessError, RawConfig,
    EXIT_OK, EXIT_VALIDATION,
};

fn decay_config(dir: &Path) -> RawConfig {
    RawConfig {
        experiment: Some(ExperimentKind::Decay),
        form: Some("Q0:2,1".into()),
        xi: Some("1.7320508075688772".into()),
        num_shifts: Some(10),
        t_min: Some(2.0),
        t_max: Some(512.0),
        seed: Some(11),
        out_dir: Some(dir.to_path_buf()),
        ..Default::default()
    }
}

#[test]
fn decay_run_has_one_row_per_shift_and_radius() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = validate_config(&decay_config(dir.path())).unwrap();
    let report = run_experiment(&cfg).unwrap();
    let text = fs::read_to_string(dir.path().join("decay.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "shift_id,t,gap,kappa_hat_running");
    assert_eq!(lines.len(), 1 + 90);
    assert!(report.falsifications.is_empty());
    assert!(report.results["median_kappa_hat"].as_f64().is_some());

    let svgs = render_report(&report, dir.path()).unwrap();
    assert_eq!(svgs.len(), 11);
    assert!(svgs.iter().any(|p| p.ends_with("decay_median.svg")));
}

#[test]
fn identical_runs_give_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run = |dir: &Path, threads: usize| {
        let mut raw = decay_config(dir);
        raw.num_shifts = Some(3);
        let cfg = validate_config(&raw).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| run_experiment(&cfg).unwrap())
    };
    let ra = run(a.path(), 1);
    let rb = run(b.path(), 4);
    assert_eq!(
        fs::read(a.path().join("decay.csv")).unwrap(),
        fs::read(b.path().join("decay.csv")).unwrap()
    );
    assert_eq!(ra.results, rb.results);
}

#[test]
fn every_target_hit_is_verified() {
    let dir = tempfile::tempdir().unwrap();
    let raw = RawConfig {
        experiment: Some(ExperimentKind::Targets),
        form: Some("Q0:2,1".into()),
        xi: Some("1.7320508075688772".into()),
        kappa: Some(1.0),
        num_shifts: Some(10),
        t_grid: Some("2,4,8,16,32".into()),
        seed: Some(5),
        out_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let report = run_experiment(&validate_config(&raw).unwrap()).unwrap();
    assert!(report.falsifications.is_empty());
    let mut rdr = csv::Reader::from_path(dir.path().join("hits.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(
        headers.iter().collect::<Vec<_>>(),
        ["shift_id", "t", "hit", "gamma_id", "witness_u", "verified"]
    );
    let mut hits = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        if &rec[2] == "true" {
            hits += 1;
            assert_eq!(&rec[5], "true");
            assert!(!rec[3].is_empty() && !rec[4].is_empty());
        }
    }
    assert!(hits > 0);
}

#[test]
fn volume_report_renders_one_plot() {
    let dir = tempfile::tempdir().unwrap();
    let raw = RawConfig {
        experiment: Some(ExperimentKind::Volume),
        signature: Some("3,1".into()),
        t_grid: Some("100,1000,10000".into()),
        out_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let report = run_experiment(&validate_config(&raw).unwrap()).unwrap();
    let slope = report.results["slope"].as_f64().unwrap();
    assert!((slope - 2.0).abs() < 0.1);
    let svgs = render_report(&report, dir.path()).unwrap();
    assert_eq!(svgs.len(), 1);
    assert!(fs::read_to_string(&svgs[0])
        .unwrap()
        .contains("reference slope 2.0000"));
}

#[test]
fn reports_without_series_cannot_be_rendered() {
    let dir = tempfile::tempdir().unwrap();
    let raw = RawConfig {
        experiment: Some(ExperimentKind::Exponents),
        signature: Some("3,3".into()),
        out_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let report = run_experiment(&validate_config(&raw).unwrap()).unwrap();
    assert_eq!(report.results["kappa0"], "3/2");
    assert!(matches!(
        render_report(&report, dir.path()),
        Err(HarnessError::EmptySeries(_))
    ));
}

#[test]
fn lattice_output_lists_the_unit_ball() {
    let dir = tempfile::tempdir().unwrap();
    let raw = RawConfig {
        experiment: Some(ExperimentKind::Lattice),
        form: Some("Q0:2,1".into()),
        max_norm: Some(1.0),
        out_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    run_experiment(&validate_config(&raw).unwrap()).unwrap();
    let text = fs::read_to_string(dir.path().join("gamma.csv")).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",1,identity")));
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shiftform"))
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = binary()
        .args([
            "--out-dir",
            dir.path().to_str().unwrap(),
            "exponents",
            "--signature",
            "6,3",
        ])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(EXIT_OK));
    let out: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(out["kappa0"], "5/2");

    let bad = binary()
        .args(["decay", "--form", "Q0:2,1"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(EXIT_VALIDATION));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("xi: required"));

    let missing = binary()
        .args(["lattice", "--form", "Q0:2,1", "--max-norm", "0.5"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(EXIT_VALIDATION));
}

#[test]
fn config_file_mirrors_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("search.json");
    fs::write(
        &cfg,
        r#"{"experiment": "search", "form": "Q1", "shift": "0.25,0.5,0.125,0.75", "xi": "1.4142135623730951", "t": 6, "eps": 0.05, "brute-force": true}"#,
    )
    .unwrap();
    let out = binary()
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(EXIT_OK),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let res: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(res["brute_force"]["agree"], true);
    assert_eq!(res["v"], res["brute_force"]["v"]);
    assert!(dir.path().join("search_report.json").exists());
}
