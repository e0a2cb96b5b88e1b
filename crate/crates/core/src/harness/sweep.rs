use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nmpc::ControllerMode;

use super::config::ScenarioConfig;
use super::metrics::{metrics, MetricsRow};
use super::scenario::run_scenario;

/// Controller variants compared in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Variant {
    Nmpc,
    PreNoComp,
    PreComp,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Nmpc, Variant::PreNoComp, Variant::PreComp];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Nmpc => "nmpc",
            Variant::PreNoComp => "pre-nmpc-no-comp",
            Variant::PreComp => "pre-nmpc-comp",
        }
    }

    /// `base` with this variant's controller and the given plant lag and
    /// delay (seconds). The internal model's lag follows the plant.
    pub fn configure(self, base: &ScenarioConfig, tau: f64, delay: f64) -> ScenarioConfig {
        let mut cfg = base.clone();
        cfg.plant.vehicle.time_constant = tau;
        cfg.plant.delay = delay;
        cfg.controller.vehicle.time_constant = tau;
        let (mode, compensated) = match self {
            Variant::Nmpc => (ControllerMode::NonPreemptive, 0.0),
            Variant::PreNoComp => (ControllerMode::Preemptive, 0.0),
            Variant::PreComp => (ControllerMode::Preemptive, delay),
        };
        cfg.controller.mode = mode;
        cfg.controller.compensated_delay = compensated;
        cfg.delay_compensation = self == Variant::PreComp;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub variant: Variant,
    pub tau: f64,
    pub delay: f64,
    pub message: String,
    /// Control steps completed before the failure.
    pub completed_steps: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    /// Sorted by (variant, tau, delay).
    pub rows: Vec<MetricsRow>,
    pub failures: Vec<CellFailure>,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    variant: Variant,
    tau: f64,
    delay: f64,
}

fn cells(tau: &[f64], delay: &[f64]) -> Vec<Cell> {
    let mut out = Vec::with_capacity(3 * tau.len() * delay.len());
    for &variant in &Variant::ALL {
        for &t in tau {
            for &d in delay {
                out.push(Cell {
                    variant,
                    tau: t,
                    delay: d,
                });
            }
        }
    }
    out
}

fn run_cell(base: &ScenarioConfig, cell: Cell) -> std::result::Result<MetricsRow, CellFailure> {
    let cfg = cell.variant.configure(base, cell.tau, cell.delay);
    match run_scenario(&cfg) {
        Ok(series) => Ok(metrics(&series, cfg.rmse_window)),
        Err((e, partial)) => Err(CellFailure {
            variant: cell.variant,
            tau: cell.tau,
            delay: cell.delay,
            message: e.to_string(),
            completed_steps: partial.samples.len(),
        }),
    }
}

/// Every variant at every (tau, delay) pair, lists in seconds.
///
/// Cells run on the rayon pool when `parallel` is set. A failing cell is
/// recorded in [`SweepResult::failures`] and does not stop the others.
pub fn run_sweep(base: &ScenarioConfig, tau: &[f64], delay: &[f64], parallel: bool) -> Result<SweepResult> {
    if tau.is_empty() || delay.is_empty() {
        return Err(Error::Config("sweep lists must be nonempty".into()));
    }
    for cell in cells(tau, delay) {
        cell.variant.configure(base, cell.tau, cell.delay).validate()?;
    }
    let grid = cells(tau, delay);
    let outcomes: Vec<_> = if parallel {
        grid.par_iter().map(|&c| run_cell(base, c)).collect()
    } else {
        grid.iter().map(|&c| run_cell(base, c)).collect()
    };

    let mut result = SweepResult::default();
    for outcome in outcomes {
        match outcome {
            Ok(row) => result.rows.push(row),
            Err(f) => result.failures.push(f),
        }
    }
    result.rows.sort_by(|a, b| {
        a.variant()
            .cmp(&b.variant())
            .then(a.tau.total_cmp(&b.tau))
            .then(a.delay.total_cmp(&b.delay))
    });
    result.failures.sort_by(|a, b| {
        a.variant
            .cmp(&b.variant)
            .then(a.tau.total_cmp(&b.tau))
            .then(a.delay.total_cmp(&b.delay))
    });
    Ok(result)
}
