use std::path::PathBuf;
use std::process::Command;

use preview_traction::harness::{
    emit, metrics, run_scenario, run_sweep, ConfigFile, MetricsRow, ProfileName, ScenarioConfig,
    Variant,
};

/// Field-wise equality where NaN equals NaN (untimed runs).
fn same(a: &MetricsRow, b: &MetricsRow) -> bool {
    let bits = |r: &MetricsRow| {
        [r.tau, r.delay, r.peak_slip, r.rmse, r.solve_mean, r.solve_p99, r.solve_max].map(f64::to_bits)
    };
    a.variant() == b.variant() && a.rmse_window == b.rmse_window && bits(a) == bits(b)
}

fn base(duration: f64) -> ScenarioConfig {
    let mut file = ConfigFile::default();
    file.scenario.profile = ProfileName::Experiment;
    file.scenario.duration_s = duration;
    file.resolve().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("preview-tc-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn parallel_and_serial_sweeps_agree() {
    let cfg = base(2.0);
    let tau = [0.04, 0.14];
    let delay = [0.0, 0.05];
    let par = run_sweep(&cfg, &tau, &delay, true).unwrap();
    let ser = run_sweep(&cfg, &tau, &delay, false).unwrap();
    assert_eq!(par.rows.len(), 12);
    assert!(par.rows.iter().zip(&ser.rows).all(|(a, b)| same(a, b)));
    assert!(par.failures.is_empty());
    assert_eq!(emit::metrics_csv(&par.rows), emit::metrics_csv(&ser.rows));
}

#[test]
fn sweep_cell_equals_direct_run() {
    let cfg = base(2.0);
    let result = run_sweep(&cfg, &[0.09], &[0.05], false).unwrap();
    for variant in Variant::ALL {
        let direct = variant.configure(&cfg, 0.09, 0.05);
        let row = metrics(&run_scenario(&direct).unwrap(), direct.rmse_window);
        let found = result.rows.iter().find(|r| r.variant() == variant.label()).unwrap();
        assert!(same(found, &row), "{found:?} vs {row:?}");
    }
}

#[test]
fn zero_delay_cells_keep_their_labels() {
    let result = run_sweep(&base(1.0), &[0.14], &[0.0], false).unwrap();
    let labels: Vec<String> = result.rows.iter().map(|r| r.variant()).collect();
    assert_eq!(labels, ["nmpc", "pre-nmpc-comp", "pre-nmpc-no-comp"]);
}

#[test]
fn empty_or_invalid_sweeps_are_rejected() {
    let cfg = base(1.0);
    assert!(run_sweep(&cfg, &[], &[0.0], true).is_err());
    assert!(run_sweep(&cfg, &[0.14], &[], true).is_err());
    // 30.1 ms is not on the 0.2 ms plant grid.
    assert!(run_sweep(&cfg, &[0.14], &[0.0301], true).is_err());
}

#[test]
fn series_csv_round_trips() {
    let series = run_scenario(&base(2.5)).unwrap();
    let text = emit::series_csv(&series);
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header.join(","), emit::SERIES_HEADER);
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), series.samples.len());
    let close = |text: &str, value: f64| {
        let parsed: f64 = text.parse().unwrap();
        parsed == value || (parsed - value).abs() <= 5e-9 * value.abs()
    };
    for (row, s) in rows.iter().zip(&series.samples) {
        assert_eq!(row.len(), 18);
        assert!(close(&row[0], s.time));
        assert!(close(&row[4], s.command));
        assert!(close(&row[9], s.slip[1]));
        assert!(close(&row[11], s.slip_ref[1]));
        assert_eq!(row[16].parse::<usize>().unwrap(), s.qp_iterations);
        assert!(row[17].parse::<f64>().unwrap().is_nan());
    }
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let file = ConfigFile::default();
    let text = file.to_toml().unwrap();
    let back = ConfigFile::parse(&text).unwrap();
    assert_eq!(back.to_toml().unwrap(), text);
    assert!(ConfigFile::parse("[scenario]\nmoed = \"nmpc\"\n").is_err());
    assert!(ConfigFile::parse("[plant]\ndt_s = 0.0003\n").unwrap().resolve().is_err());
    assert!(ConfigFile::parse("[scenario]\nduration_s = 0.0\n").unwrap().resolve().is_err());
}

fn cli(args: &[&str], out: &std::path::Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_preview_traction"))
        .args(args)
        .env("PREVIEW_TC_OUT_DIR", out)
        .output()
        .unwrap()
}

#[test]
fn cli_run_is_reproducible_and_path_independent() {
    let first = scratch("run-a");
    let second = scratch("run-b").join("nested");
    let a = cli(&["run", "--mode", "pre-nmpc", "--profile", "experiment"], &first);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = cli(&["run", "--mode", "pre-nmpc", "--profile", "experiment"], &second);
    assert!(b.status.success());
    for name in ["series.csv", "metrics.csv", "config.toml"] {
        let x = std::fs::read(first.join(name)).unwrap();
        let y = std::fs::read(second.join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
    // The written config reproduces the run.
    let cfg = first.join("config.toml");
    let third = scratch("run-c");
    let c = cli(&["run", "--config", cfg.to_str().unwrap()], &third);
    assert!(c.status.success());
    assert_eq!(
        std::fs::read(first.join("series.csv")).unwrap(),
        std::fs::read(third.join("series.csv")).unwrap()
    );
    for dir in [first, second.parent().unwrap().to_path_buf(), third] {
        std::fs::remove_dir_all(dir).unwrap();
    }
}

#[test]
fn cli_reports_bad_input() {
    let out = scratch("bad");
    let missing = cli(&["run", "--config", "/nonexistent/preview.toml"], &out);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/preview.toml"));
    let sweep = cli(&["sweep", "--tau-ms", "140", "--delay-ms", "30.1"], &out);
    assert!(!sweep.status.success());
    let _ = std::fs::remove_dir_all(out);
}

#[test]
fn cli_sweep_writes_tables() {
    let out = scratch("sweep");
    let r = cli(&["sweep", "--profile", "experiment", "--tau-ms", "140", "--delay-ms", "0,60"], &out);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let table = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(table.lines().count(), 7);
    assert!(table.starts_with(emit::METRICS_HEADER));
    let failures = std::fs::read_to_string(out.join("failures.csv")).unwrap();
    assert_eq!(failures.trim_end(), emit::FAILURES_HEADER);
    std::fs::remove_dir_all(out).unwrap();
}
