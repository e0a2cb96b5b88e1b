use serde::Serialize;

use crate::model::RIGHT;
use crate::nmpc::ControllerMode;

use super::config::RmseWindow;
use super::scenario::TimeSeries;

/// Summary of one run: front-right slip peak and tracking RMSE.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub mode: ControllerMode,
    pub tau: f64,
    pub delay: f64,
    pub compensated: bool,
    pub peak_slip: f64,
    pub rmse: f64,
    pub rmse_window: RmseWindow,
    /// Controller wall time statistics (s); NaN when not recorded.
    pub solve_mean: f64,
    pub solve_p99: f64,
    pub solve_max: f64,
}

impl MetricsRow {
    /// Label used in tables: `nmpc`, `pre-nmpc-no-comp`, `pre-nmpc-comp`.
    pub fn variant(&self) -> String {
        match (self.mode, self.compensated) {
            (ControllerMode::Preemptive, true) => "pre-nmpc-comp".into(),
            (ControllerMode::Preemptive, false) => "pre-nmpc-no-comp".into(),
            (mode, _) => mode.to_string(),
        }
    }
}

/// Root mean square of `values`; zero for an empty slice.
pub fn rms(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, count) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, c), v| (s + v * v, c + 1));
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

/// Nearest-rank percentile of unsorted data, `q` in [0, 1].
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

pub fn metrics(series: &TimeSeries, window: RmseWindow) -> MetricsRow {
    let start = match window {
        RmseWindow::LowMuEntry => series.low_mu_entry().unwrap_or(0),
        RmseWindow::FullRun => 0,
    };
    let rmse = rms(series.samples[start..]
        .iter()
        .map(|s| s.slip_ref[RIGHT] - s.slip[RIGHT]));

    let times: Vec<f64> = series
        .samples
        .iter()
        .map(|s| s.solve_time)
        .filter(|t| t.is_finite())
        .collect();
    let (mean, p99, max) = if times.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        (
            times.iter().sum::<f64>() / times.len() as f64,
            percentile(&times, 0.99),
            times.iter().copied().fold(0.0, f64::max),
        )
    };

    MetricsRow {
        mode: series.mode,
        tau: series.plant_tau,
        delay: series.plant_delay,
        compensated: series.delay_compensation,
        peak_slip: series.peak_slip(RIGHT),
        rmse,
        rmse_window: window,
        solve_mean: mean,
        solve_p99: p99,
        solve_max: max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scenario::Sample;
    use approx::assert_relative_eq;

    fn sample(time: f64, slip: f64, slip_ref: f64, mu: f64) -> Sample {
        Sample {
            time,
            position: 0.0,
            speed: 0.0,
            driver_torque: 80.0,
            command: 80.0,
            motor_torque: 0.0,
            wheel_tangential: [0.0; 2],
            slip: [slip; 2],
            slip_ref: [slip_ref; 2],
            mu: [mu; 2],
            min_slack: 0.0,
            first_slack: 0.0,
            kkt_residual: 0.0,
            qp_iterations: 0,
            solve_time: f64::NAN,
        }
    }

    fn series(samples: Vec<Sample>) -> TimeSeries {
        TimeSeries {
            mode: ControllerMode::Preemptive,
            plant_tau: 0.14,
            plant_delay: 0.0,
            compensated_delay: 0.0,
            delay_compensation: false,
            samples,
        }
    }

    #[test]
    fn perfect_tracking() {
        let s = series((0..10).map(|k| sample(k as f64, 0.05, 0.05, 0.5)).collect());
        let m = metrics(&s, RmseWindow::FullRun);
        assert_eq!(m.rmse, 0.0);
        assert_eq!(m.peak_slip, 0.05);
        assert!(m.solve_mean.is_nan());
    }

    #[test]
    fn peak_of_small_series() {
        let s = series(vec![
            sample(0.0, 0.0, 0.1, 1.0),
            sample(1.0, 0.1, 0.1, 1.0),
            sample(2.0, 0.05, 0.1, 1.0),
        ]);
        assert_eq!(metrics(&s, RmseWindow::FullRun).peak_slip, 0.1);
    }

    #[test]
    fn sawtooth_rms() {
        // Error ramps 0, 1/P, ..., (P-1)/P repeatedly; RMS^2 = (P-1)(2P-1)/(6P^2).
        let p = 8usize;
        let samples = (0..(4 * p))
            .map(|k| sample(k as f64, 0.0, (k % p) as f64 / p as f64, 1.0))
            .collect();
        let m = metrics(&series(samples), RmseWindow::FullRun);
        let pf = p as f64;
        let expect = ((pf - 1.0) * (2.0 * pf - 1.0) / (6.0 * pf * pf)).sqrt();
        assert_relative_eq!(m.rmse, expect, epsilon = 1e-14);
    }

    #[test]
    fn window_starts_at_friction_drop() {
        let mut samples: Vec<Sample> = (0..5).map(|k| sample(k as f64, 0.0, 0.1, 1.0)).collect();
        samples.extend((5..10).map(|k| sample(k as f64, 0.02, 0.01, 0.12)));
        let s = series(samples);
        assert_eq!(s.low_mu_entry(), Some(5));
        assert_relative_eq!(metrics(&s, RmseWindow::LowMuEntry).rmse, 0.01, epsilon = 1e-15);
        assert!(metrics(&s, RmseWindow::FullRun).rmse > 0.05);
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(|k| k as f64).collect();
        assert_eq!(percentile(&v, 0.99), 99.0);
        assert_eq!(percentile(&v, 1.0), 100.0);
        assert_eq!(percentile(&[3.0], 0.5), 3.0);
        assert!(percentile(&[], 0.5).is_nan());
    }
}
