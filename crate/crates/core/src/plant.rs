//! Ground-truth half-vehicle used in closed-loop runs.
//!
//! Same wheel and tire equations as the internal model, but with vehicle
//! speed and position as states, a pure-delay command buffer in front of the
//! powertrain lag, a torque/power envelope and friction read from the map at
//! the current position.

use std::collections::VecDeque;

use nalgebra::SVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, InternalState, TireParams, VehicleParams, LEFT, RIGHT};
use crate::preview::FrictionMap;

const GRAVITY: f64 = 9.81;
/// Motor speed below which the power limit is not applied (rad/s).
const ENVELOPE_MIN_SPEED: f64 = 1.0;
/// Speed over which rolling resistance ramps in from rest (m/s).
const RESISTANCE_RAMP: f64 = 0.1;

type PlantVector = SVector<f64, 5>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    pub vehicle: VehicleParams,
    /// Pure delay between a torque command and the start of its response (s).
    pub delay: f64,
    /// Integration step (s).
    pub dt: f64,
    pub rolling_resistance: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            vehicle: VehicleParams::default(),
            delay: 0.0,
            dt: 2e-4,
            rolling_resistance: 0.0,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        if !(self.dt > 0.0 && self.dt <= 1e-3) {
            return Err(Error::Config(format!(
                "plant step must be in (0, 1 ms], got {} s",
                self.dt
            )));
        }
        if !(self.delay >= 0.0) {
            return Err(Error::Config("plant delay must be non-negative".into()));
        }
        if self.delay > 0.0 {
            model::substep_count(self.delay, self.dt)?;
        }
        if !(self.rolling_resistance >= 0.0) {
            return Err(Error::Config("rolling resistance must be non-negative".into()));
        }
        Ok(())
    }

    pub fn delay_steps(&self) -> usize {
        if self.delay == 0.0 {
            0
        } else {
            (self.delay / self.dt).round() as usize
        }
    }
}

/// Motor torque available at motor speed `omega_motor` (rad/s).
pub fn torque_envelope(omega_motor: f64, vehicle: &VehicleParams) -> f64 {
    vehicle
        .max_torque
        .min(vehicle.max_power / omega_motor.max(ENVELOPE_MIN_SPEED))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub time: f64,
    /// Vehicle speed (m/s).
    pub speed: f64,
    /// Travelled distance (m).
    pub position: f64,
    pub wheel_speed: [f64; 2],
    /// Actual motor torque (Nm).
    pub motor_torque: f64,
    /// Commands in flight, oldest first; always `delay_steps` long.
    pending: VecDeque<f64>,
}

impl PlantState {
    /// Standstill with an empty (all-zero) delay line.
    pub fn at_rest(params: &PlantParams) -> Self {
        Self {
            time: 0.0,
            speed: 0.0,
            position: 0.0,
            wheel_speed: [0.0; 2],
            motor_torque: 0.0,
            pending: VecDeque::from(vec![0.0; params.delay_steps()]),
        }
    }

    pub fn motor_speed(&self, vehicle: &VehicleParams) -> f64 {
        0.5 * (self.wheel_speed[LEFT] + self.wheel_speed[RIGHT]) * vehicle.gear_ratio
    }

    pub fn slip_speed(&self, side: usize, vehicle: &VehicleParams) -> f64 {
        self.wheel_speed[side] * vehicle.tire_radius - self.speed
    }

    pub fn slip_ratio(&self, side: usize, vehicle: &VehicleParams) -> f64 {
        model::slip_ratio(
            self.slip_speed(side, vehicle),
            self.wheel_speed[side],
            vehicle.tire_radius,
            vehicle.slip_speed_floor,
        )
        .value
    }

    fn to_vector(&self) -> PlantVector {
        PlantVector::from([
            self.motor_torque,
            self.wheel_speed[LEFT],
            self.wheel_speed[RIGHT],
            self.speed,
            self.position,
        ])
    }
}

fn plant_rates(
    x: &PlantVector,
    torque_in: f64,
    mu: [f64; 2],
    params: &PlantParams,
    tire: &TireParams,
) -> PlantVector {
    let v = &params.vehicle;
    let r = v.tire_radius;
    let wheel_torque = 0.5 * x[0] * v.gear_ratio;
    let speed = x[3];
    let mut forces = [0.0; 2];
    let mut dx = PlantVector::zeros();
    dx[0] = (torque_in - x[0]) / v.time_constant;
    for side in [LEFT, RIGHT] {
        let omega = x[1 + side];
        let sigma = model::slip_ratio(omega * r - speed, omega, r, v.slip_speed_floor).value;
        forces[side] = model::mu_x_unchecked(sigma, mu[side], tire) * v.vertical_load[side];
        dx[1 + side] = (wheel_torque - forces[side] * r) / v.wheel_inertia;
    }
    let resistance =
        params.rolling_resistance * v.mass * GRAVITY * (speed / RESISTANCE_RAMP).clamp(0.0, 1.0);
    dx[3] = (forces[LEFT] + forces[RIGHT] - resistance) / v.mass;
    dx[4] = speed;
    dx
}

/// Advance the plant by one step of `params.dt`.
pub fn plant_step(
    state: &PlantState,
    command: f64,
    params: &PlantParams,
    tire: &TireParams,
    map: &FrictionMap,
) -> Result<PlantState> {
    let mut pending = state.pending.clone();
    let applied = if pending.is_empty() {
        command
    } else {
        pending.push_back(command);
        pending.pop_front().unwrap_or(0.0)
    };
    let limit = torque_envelope(state.motor_speed(&params.vehicle), &params.vehicle);
    let torque_in = applied.clamp(0.0, limit);
    let mu = map.at(state.position);

    let x = state.to_vector();
    let h = params.dt;
    let f = |s: &PlantVector| plant_rates(s, torque_in, mu, params, tire);
    let k1 = f(&x);
    let k2 = f(&(x + k1 * (0.5 * h)));
    let k3 = f(&(x + k2 * (0.5 * h)));
    let k4 = f(&(x + k3 * h));
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);

    let time = state.time + h;
    if !next.iter().all(|v| v.is_finite()) {
        return Err(Error::Diverged {
            time,
            reason: format!("non-finite plant state {next:?}"),
        });
    }
    Ok(PlantState {
        time,
        motor_torque: next[0],
        wheel_speed: [next[1], next[2]],
        speed: next[3],
        position: next[4],
        pending,
    })
}

/// Controller-side view of the plant. The error integrals are owned by the
/// controller and passed through.
pub fn measure(state: &PlantState, vehicle: &VehicleParams, error_integral: [f64; 2]) -> InternalState {
    InternalState {
        motor_torque: state.motor_torque,
        wheel_speed: state.wheel_speed,
        slip_speed: [
            state.slip_speed(LEFT, vehicle),
            state.slip_speed(RIGHT, vehicle),
        ],
        error_integral,
    }
}

/// Plant with its parameters, tire and road bundled together.
#[derive(Debug, Clone)]
pub struct Plant {
    pub params: PlantParams,
    pub tire: TireParams,
    pub map: FrictionMap,
    pub state: PlantState,
}

impl Plant {
    pub fn new(params: PlantParams, tire: TireParams, map: FrictionMap) -> Result<Self> {
        params.validate()?;
        tire.validate()?;
        let state = PlantState::at_rest(&params);
        Ok(Self {
            params,
            tire,
            map,
            state,
        })
    }

    pub fn step(&mut self, command: f64) -> Result<()> {
        self.state = plant_step(&self.state, command, &self.params, &self.tire, &self.map)?;
        Ok(())
    }

    pub fn measure(&self, error_integral: [f64; 2]) -> InternalState {
        measure(&self.state, &self.params.vehicle, error_integral)
    }

    pub fn torque_limit(&self) -> f64 {
        torque_envelope(self.state.motor_speed(&self.params.vehicle), &self.params.vehicle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn envelope_corners() {
        let v = VehicleParams::default();
        assert_eq!(torque_envelope(0.0, &v), v.max_torque);
        assert_eq!(torque_envelope(0.5, &v), v.max_torque);
        let corner = v.max_power / v.max_torque;
        assert_relative_eq!(torque_envelope(corner, &v), v.max_torque, epsilon = 1e-12);
        assert_relative_eq!(torque_envelope(2.0 * corner, &v), v.max_torque / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn rest_is_an_equilibrium() {
        let params = PlantParams::default();
        let mut plant = Plant::new(params, TireParams::default(), FrictionMap::constant(1.0).unwrap())
            .unwrap();
        let start = plant.state.clone();
        for _ in 0..100 {
            plant.step(0.0).unwrap();
        }
        assert_eq!(plant.state.speed, start.speed);
        assert_eq!(plant.state.wheel_speed, start.wheel_speed);
        assert_eq!(plant.state.motor_torque, start.motor_torque);
        assert_eq!(plant.state.position, 0.0);
    }

    #[test]
    fn delay_holds_torque_at_zero() {
        let params = PlantParams {
            delay: 0.060,
            ..PlantParams::default()
        };
        let mut plant = Plant::new(params, TireParams::default(), FrictionMap::constant(1.0).unwrap())
            .unwrap();
        let steps = params.delay_steps();
        assert_eq!(steps, 300);
        for _ in 0..steps {
            plant.step(80.0).unwrap();
            assert_eq!(plant.state.motor_torque, 0.0);
        }
        plant.step(80.0).unwrap();
        assert!(plant.state.motor_torque > 0.0);
    }

    #[test]
    fn measurement_kinematics() {
        let v = VehicleParams::default();
        let params = PlantParams::default();
        let mut state = PlantState::at_rest(&params);
        let x = measure(&state, &v, [0.1, 0.2]);
        assert_eq!(x.slip_speed, [0.0; 2]);
        assert_eq!(x.wheel_speed, [0.0; 2]);
        assert_eq!(x.error_integral, [0.1, 0.2]);

        state.speed = 6.0;
        state.wheel_speed = [20.0, 25.0];
        let x = measure(&state, &v, [0.0; 2]);
        assert_eq!(x.slip_speed[LEFT], 0.0);
        assert_relative_eq!(x.slip_speed[RIGHT], 1.5, epsilon = 1e-12);
        assert_eq!(
            x.slip_ratio(RIGHT, &v).value,
            state.slip_ratio(RIGHT, &v)
        );
    }

    #[test]
    fn params_validation() {
        assert!(PlantParams::default().validate().is_ok());
        let p = PlantParams {
            dt: 2e-3,
            ..PlantParams::default()
        };
        assert!(p.validate().is_err());
        let p = PlantParams {
            delay: 0.0301,
            ..PlantParams::default()
        };
        assert!(p.validate().is_err());
    }
}
