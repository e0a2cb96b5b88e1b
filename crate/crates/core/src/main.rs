use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use preview_traction::harness::{
    emit, metrics, run_scenario, run_sweep, ConfigFile, ProfileName,
};
use preview_traction::nmpc::ControllerMode;
use preview_traction::Result;

const OUT_DIR_ENV: &str = "PREVIEW_TC_OUT_DIR";

#[derive(Parser)]
#[command(name = "preview-tc", about = "Pre-emptive NMPC traction control scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop scenario.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// passive, nmpc or pre-nmpc
        #[arg(long)]
        mode: Option<ControllerMode>,
        /// experiment or simulation
        #[arg(long)]
        profile: Option<ProfileName>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Sweep powertrain lag and delay for every controller variant.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        tau_ms: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        delay_ms: Vec<f64>,
        #[arg(long)]
        profile: Option<ProfileName>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn load(config: Option<&Path>) -> Result<ConfigFile> {
    match config {
        Some(path) => ConfigFile::load(path),
        None => Ok(ConfigFile::default()),
    }
}

fn out_dir(arg: Option<PathBuf>) -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .or(arg)
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run(
    config: Option<PathBuf>,
    mode: Option<ControllerMode>,
    profile: Option<ProfileName>,
    out: PathBuf,
) -> Result<bool> {
    let mut file = load(config.as_deref())?;
    if let Some(mode) = mode {
        file.scenario.mode = mode;
    }
    if let Some(profile) = profile {
        file.scenario.profile = profile;
    }
    let cfg = file.resolve()?;
    emit::write_file(&out.join("config.toml"), &file.to_toml()?)?;
    let (series, failure) = match run_scenario(&cfg) {
        Ok(series) => (series, None),
        Err((e, partial)) => (partial, Some(e)),
    };
    emit::write_file(&out.join("series.csv"), &emit::series_csv(&series))?;
    if let Some(e) = failure {
        return Err(e);
    }
    let row = metrics(&series, cfg.rmse_window);
    emit::write_file(&out.join("metrics.csv"), &emit::metrics_csv(std::slice::from_ref(&row)))?;
    println!(
        "{}: peak slip {:.4}, rmse {:.5} ({} steps) -> {}",
        row.variant(),
        row.peak_slip,
        row.rmse,
        series.samples.len(),
        out.display()
    );
    Ok(true)
}

fn sweep(
    config: Option<PathBuf>,
    tau_ms: Vec<f64>,
    delay_ms: Vec<f64>,
    profile: Option<ProfileName>,
    out: PathBuf,
) -> Result<bool> {
    let mut file = load(config.as_deref())?;
    if let Some(profile) = profile {
        file.scenario.profile = profile;
    }
    if !tau_ms.is_empty() {
        file.sweep.tau_ms = tau_ms;
    }
    if !delay_ms.is_empty() {
        file.sweep.delay_ms = delay_ms;
    }
    let cfg = file.resolve()?;
    emit::write_file(&out.join("config.toml"), &file.to_toml()?)?;
    let to_s = |v: &[f64]| v.iter().map(|ms| ms * 1e-3).collect::<Vec<_>>();
    let result = run_sweep(&cfg, &to_s(&file.sweep.tau_ms), &to_s(&file.sweep.delay_ms), true)?;
    emit::write_file(&out.join("metrics.csv"), &emit::metrics_csv(&result.rows))?;
    emit::write_file(&out.join("failures.csv"), &emit::failures_csv(&result.failures))?;
    for row in &result.rows {
        println!(
            "{:<17} tau {:>5.0} ms delay {:>4.0} ms: peak {:.4} rmse {:.5}",
            row.variant(),
            row.tau * 1e3,
            row.delay * 1e3,
            row.peak_slip,
            row.rmse
        );
    }
    for f in &result.failures {
        eprintln!(
            "{} tau {} ms delay {} ms failed after {} steps: {}",
            f.variant.label(),
            f.tau * 1e3,
            f.delay * 1e3,
            f.completed_steps,
            f.message
        );
    }
    Ok(result.failures.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            mode,
            profile,
            out_dir: dir,
        } => run(config, mode, profile, out_dir(dir)),
        Command::Sweep {
            config,
            tau_ms,
            delay_ms,
            profile,
            out_dir: dir,
        } => sweep(config, tau_ms, delay_ms, profile, out_dir(dir)),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
