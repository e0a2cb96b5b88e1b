use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{LEFT, RIGHT};
use crate::nmpc::{ControllerMode, Measurement, TractionController};
use crate::plant::Plant;

use super::config::ScenarioConfig;

/// One logged control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub time: f64,
    pub position: f64,
    pub speed: f64,
    pub driver_torque: f64,
    pub command: f64,
    pub motor_torque: f64,
    /// `omega * R` per side (m/s).
    pub wheel_tangential: [f64; 2],
    pub slip: [f64; 2],
    pub slip_ref: [f64; 2],
    pub mu: [f64; 2],
    /// Smallest slack over the horizon (zero in passive mode).
    pub min_slack: f64,
    /// First-stage slack, largest of the two sides.
    pub first_slack: f64,
    pub kkt_residual: f64,
    pub qp_iterations: usize,
    /// Controller wall time (s); NaN unless timing is recorded.
    pub solve_time: f64,
}

#[derive(Debug, Clone)]
pub struct TimeSeries {
    pub mode: ControllerMode,
    pub plant_tau: f64,
    pub plant_delay: f64,
    pub compensated_delay: f64,
    pub delay_compensation: bool,
    pub samples: Vec<Sample>,
}

impl TimeSeries {
    /// Index of the first sample on lower friction than at the start.
    pub fn low_mu_entry(&self) -> Option<usize> {
        let first = self.samples.first()?.mu;
        self.samples
            .iter()
            .position(|s| s.mu[LEFT] < first[LEFT] || s.mu[RIGHT] < first[RIGHT])
    }

    /// Index of the first sample where the command is below 99% of the
    /// driver request.
    pub fn first_reduction(&self) -> Option<usize> {
        self.samples
            .iter()
            .position(|s| s.command < 0.99 * s.driver_torque)
    }

    pub fn peak_slip(&self, side: usize) -> f64 {
        self.samples.iter().map(|s| s.slip[side]).fold(0.0, f64::max)
    }
}

/// Run the closed loop for the configured duration.
///
/// On a controller or plant failure the error carries the samples logged so
/// far.
pub fn run_scenario(cfg: &ScenarioConfig) -> std::result::Result<TimeSeries, (Error, TimeSeries)> {
    let mut series = TimeSeries {
        mode: cfg.controller.mode,
        plant_tau: cfg.plant.vehicle.time_constant,
        plant_delay: cfg.plant.delay,
        compensated_delay: cfg.controller.compensated_delay,
        delay_compensation: cfg.delay_compensation,
        samples: Vec::new(),
    };
    match run_into(cfg, &mut series) {
        Ok(()) => Ok(series),
        Err(e) => Err((e, series)),
    }
}

fn run_into(cfg: &ScenarioConfig, series: &mut TimeSeries) -> Result<()> {
    cfg.validate()?;
    let ts = cfg.controller.profile.ts;
    let fine_steps = crate::model::substep_count(ts, cfg.plant.dt)?;
    let control_steps = (cfg.duration / ts).round() as usize;
    let mut plant = Plant::new(cfg.plant, cfg.tire, cfg.map.clone())?;
    let mut controller = TractionController::new(cfg.controller.clone(), 0.0)?;
    let model_vehicle = cfg.controller.vehicle;
    let reference = &cfg.controller.reference;
    series.samples.reserve(control_steps);

    for k in 0..control_steps {
        let time = k as f64 * ts;
        let driver_torque = cfg.driver_demand.min(plant.torque_limit());
        let meas = Measurement {
            state: plant.measure(controller.error_integral()),
            position: plant.state.position,
            speed: plant.state.speed,
        };
        let started = Instant::now();
        let out = controller.step(time, &meas, driver_torque, &cfg.map)?;
        let elapsed = started.elapsed().as_secs_f64();

        let vehicle = &cfg.plant.vehicle;
        let mu = cfg.map.at(plant.state.position);
        let (min_slack, first_slack, kkt, iters) = match &out.solution {
            Some(sol) => (
                sol.controls
                    .iter()
                    .flat_map(|u| u.slack)
                    .fold(f64::INFINITY, f64::min),
                sol.controls[0].slack[LEFT].max(sol.controls[0].slack[RIGHT]),
                sol.kkt_residual,
                sol.qp_iterations,
            ),
            None => (0.0, 0.0, 0.0, 0),
        };
        series.samples.push(Sample {
            time,
            position: plant.state.position,
            speed: plant.state.speed,
            driver_torque,
            command: out.command,
            motor_torque: plant.state.motor_torque,
            wheel_tangential: [
                plant.state.wheel_speed[LEFT] * vehicle.tire_radius,
                plant.state.wheel_speed[RIGHT] * vehicle.tire_radius,
            ],
            slip: [
                plant.state.slip_ratio(LEFT, vehicle),
                plant.state.slip_ratio(RIGHT, vehicle),
            ],
            slip_ref: [
                reference.evaluate(mu[LEFT], model_vehicle.vertical_load[LEFT], &cfg.controller.tire),
                reference.evaluate(mu[RIGHT], model_vehicle.vertical_load[RIGHT], &cfg.controller.tire),
            ],
            mu,
            min_slack,
            first_slack,
            kkt_residual: kkt,
            qp_iterations: iters,
            solve_time: if cfg.record_timing { elapsed } else { f64::NAN },
        });

        for _ in 0..fine_steps {
            plant.step(out.command)?;
        }
    }
    Ok(())
}
