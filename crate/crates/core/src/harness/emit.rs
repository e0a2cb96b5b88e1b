//! CSV output. Floats are written in scientific notation with nine
//! significant digits, so identical runs give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{LEFT, RIGHT};

use super::metrics::MetricsRow;
use super::scenario::TimeSeries;
use super::sweep::CellFailure;

pub const SERIES_HEADER: &str = "t_s,position_m,speed_mps,driver_torque_nm,command_nm,motor_torque_nm,\
wheel_speed_left_mps,wheel_speed_right_mps,slip_left,slip_right,slip_ref_left,slip_ref_right,\
mu_left,mu_right,min_slack,kkt_residual,qp_iterations,solve_time_s";

pub const METRICS_HEADER: &str = "variant,mode,tau_s,delay_s,compensated,peak_slip_fr,rmse_slip_fr,\
rmse_window,solve_mean_s,solve_p99_s,solve_max_s";

pub const FAILURES_HEADER: &str = "variant,tau_s,delay_s,completed_steps,message";

fn num(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.8e}");
}

pub fn series_csv(series: &TimeSeries) -> String {
    let mut out = String::with_capacity(256 * (series.samples.len() + 1));
    out.push_str(SERIES_HEADER);
    out.push('\n');
    for s in &series.samples {
        let values = [
            s.time,
            s.position,
            s.speed,
            s.driver_torque,
            s.command,
            s.motor_torque,
            s.wheel_tangential[LEFT],
            s.wheel_tangential[RIGHT],
            s.slip[LEFT],
            s.slip[RIGHT],
            s.slip_ref[LEFT],
            s.slip_ref[RIGHT],
            s.mu[LEFT],
            s.mu[RIGHT],
            s.min_slack,
            s.kkt_residual,
        ];
        for v in values {
            num(&mut out, v);
            out.push(',');
        }
        let _ = write!(out, "{},", s.qp_iterations);
        num(&mut out, s.solve_time);
        out.push('\n');
    }
    out
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},", r.variant(), r.mode);
        num(&mut out, r.tau);
        out.push(',');
        num(&mut out, r.delay);
        let _ = write!(out, ",{},", r.compensated);
        for v in [r.peak_slip, r.rmse] {
            num(&mut out, v);
            out.push(',');
        }
        let _ = write!(out, "{},", r.rmse_window.label());
        num(&mut out, r.solve_mean);
        out.push(',');
        num(&mut out, r.solve_p99);
        out.push(',');
        num(&mut out, r.solve_max);
        out.push('\n');
    }
    out
}

pub fn failures_csv(failures: &[CellFailure]) -> String {
    let mut out = String::new();
    out.push_str(FAILURES_HEADER);
    out.push('\n');
    for f in failures {
        let _ = write!(out, "{},", f.variant.label());
        num(&mut out, f.tau);
        out.push(',');
        num(&mut out, f.delay);
        let message = f.message.replace('"', "\"\"");
        let _ = writeln!(out, ",{},\"{message}\"", f.completed_steps);
    }
    out
}

/// Write `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}
