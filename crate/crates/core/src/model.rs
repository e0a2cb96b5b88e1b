//! Continuous-time prediction model of the front-driven axle.
//!
//! Seven states: motor torque with a first-order lag, the two front wheel
//! speeds, the two longitudinal slip speeds and the two time-integrals of
//! slip-ratio error. Tire forces come from a single-peak Magic Formula whose
//! stiffness and peak are rescaled by the local friction coefficient.
//!
//! Side-indexed quantities are stored as `[left, right]`.

use nalgebra::SVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 7;
pub const CONTROL_DIM: usize = 3;

/// Integration substep used by the controller's internal model (1 ms).
pub const DEFAULT_SUBSTEP: f64 = 1e-3;

pub type StateVector = SVector<f64, STATE_DIM>;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// Controller state, ordered as
/// `[T_m, omega_L, omega_R, s_L, s_R, e_int_L, e_int_R]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InternalState {
    /// Actual motor torque (Nm).
    pub motor_torque: f64,
    /// Front wheel angular speeds (rad/s).
    pub wheel_speed: [f64; 2],
    /// Longitudinal slip speeds `omega * R - V` (m/s).
    pub slip_speed: [f64; 2],
    /// Time integral of `sigma_ref - sigma` (s).
    pub error_integral: [f64; 2],
}

impl InternalState {
    pub fn to_vector(&self) -> StateVector {
        StateVector::from([
            self.motor_torque,
            self.wheel_speed[LEFT],
            self.wheel_speed[RIGHT],
            self.slip_speed[LEFT],
            self.slip_speed[RIGHT],
            self.error_integral[LEFT],
            self.error_integral[RIGHT],
        ])
    }

    pub fn from_vector(v: &StateVector) -> Self {
        Self {
            motor_torque: v[0],
            wheel_speed: [v[1], v[2]],
            slip_speed: [v[3], v[4]],
            error_integral: [v[5], v[6]],
        }
    }

    /// Rolling state at vehicle speed `speed` with zero slip and zero torque.
    pub fn rolling(speed: f64, radius: f64) -> Self {
        Self {
            wheel_speed: [speed / radius; 2],
            ..Self::default()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }

    /// Slip ratio on one side, using the configured low-speed floor.
    pub fn slip_ratio(&self, side: usize, vehicle: &VehicleParams) -> SlipRatio {
        slip_ratio(
            self.slip_speed[side],
            self.wheel_speed[side],
            vehicle.tire_radius,
            vehicle.slip_speed_floor,
        )
    }
}

/// Modified torque request plus the two soft-constraint slacks.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub torque_request: f64,
    pub slack: [f64; 2],
}

impl ControlInput {
    pub fn torque(torque_request: f64) -> Self {
        Self {
            torque_request,
            slack: [0.0; 2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// Vehicle mass (kg).
    pub mass: f64,
    /// Front tire rolling radius (m).
    pub tire_radius: f64,
    /// Front wheel moment of inertia (kg m^2).
    pub wheel_inertia: f64,
    /// Single-speed transmission ratio.
    pub gear_ratio: f64,
    /// Powertrain first-order time constant (s).
    pub time_constant: f64,
    /// Static front vertical loads (N).
    pub vertical_load: [f64; 2],
    /// Motor torque cap (Nm).
    pub max_torque: f64,
    /// Motor power cap (W).
    pub max_power: f64,
    /// Lower bound on the slip-ratio denominator `omega * R` (m/s).
    pub slip_speed_floor: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 900.0,
            tire_radius: 0.30,
            wheel_inertia: 1.2,
            gear_ratio: 9.7,
            time_constant: 0.140,
            vertical_load: [2800.0, 2800.0],
            max_torque: 80.0,
            max_power: 30_000.0,
            slip_speed_floor: 2.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("mass", self.mass),
            ("tire_radius", self.tire_radius),
            ("wheel_inertia", self.wheel_inertia),
            ("gear_ratio", self.gear_ratio),
            ("time_constant", self.time_constant),
            ("vertical_load[left]", self.vertical_load[LEFT]),
            ("vertical_load[right]", self.vertical_load[RIGHT]),
            ("max_torque", self.max_torque),
            ("max_power", self.max_power),
            ("slip_speed_floor", self.slip_speed_floor),
        ];
        for (name, value) in checks {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!(
                    "vehicle.{name} must be positive, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// Nominal (high-friction) Magic Formula coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TireParams {
    pub b0: f64,
    pub c0: f64,
    pub d0: f64,
}

impl Default for TireParams {
    fn default() -> Self {
        Self {
            b0: 12.0,
            c0: 1.65,
            d0: 1.0,
        }
    }
}

impl TireParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.b0 > 0.0
            && self.c0 > 1.0
            && self.c0 < 2.0
            && self.d0 > 0.0
            && self.d0 <= 1.2;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "tire needs B0 > 0, 1 < C0 < 2, 0 < D0 <= 1.2; got {self:?}"
            )))
        }
    }

    /// Unscaled slip ratio at which the curve peaks, `tan(pi / 2C0) / B0`.
    pub fn peak_slip_nominal(&self) -> f64 {
        (std::f64::consts::FRAC_PI_2 / self.c0).tan() / self.b0
    }
}

/// Per-stage parameters of the prediction model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageParams {
    pub mu: [f64; 2],
    pub sigma_ref: [f64; 2],
    pub driver_torque: f64,
}

/// Longitudinal force coefficient `D sin(C0 atan(B sigma))` with
/// `B = B0 / mu` and `D = D0 mu`.
pub fn mf_mu_x(sigma: f64, mu: f64, tire: &TireParams) -> Result<f64> {
    if !sigma.is_finite() {
        return Err(Error::NonFinite("slip ratio"));
    }
    if !(mu > 0.0) {
        return Err(Error::Config(format!("friction scale must be positive, got {mu}")));
    }
    Ok(mu_x_unchecked(sigma, mu, tire))
}

#[inline]
pub(crate) fn mu_x_unchecked(sigma: f64, mu: f64, tire: &TireParams) -> f64 {
    let b = tire.b0 / mu;
    let d = tire.d0 * mu;
    d * (tire.c0 * (b * sigma).atan()).sin()
}

/// Longitudinal tire force (N) at vertical load `fz`.
pub fn tire_force(sigma: f64, mu: f64, fz: f64, tire: &TireParams) -> Result<f64> {
    if !(fz > 0.0) {
        return Err(Error::Config(format!("vertical load must be positive, got {fz}")));
    }
    Ok(mf_mu_x(sigma, mu, tire)? * fz)
}

/// Slip ratio with a flag telling whether the denominator was floored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlipRatio {
    pub value: f64,
    pub clamped: bool,
}

/// `s / (omega R)` with `omega R` floored at `floor` (m/s).
pub fn slip_ratio(slip_speed: f64, omega: f64, radius: f64, floor: f64) -> SlipRatio {
    let tangential = omega * radius;
    if tangential > floor {
        SlipRatio {
            value: slip_speed / tangential,
            clamped: false,
        }
    } else {
        SlipRatio {
            value: slip_speed / floor,
            clamped: true,
        }
    }
}

/// Bilinear lookup table `(mu, Fz) -> sigma_ref`, clamped at the edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlipTable {
    pub mu: Vec<f64>,
    pub load: Vec<f64>,
    /// Row-major, `values[i * load.len() + k]` belongs to `(mu[i], load[k])`.
    pub values: Vec<f64>,
}

impl SlipTable {
    pub fn new(mu: Vec<f64>, load: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let increasing = |v: &[f64]| !v.is_empty() && v.windows(2).all(|w| w[0] < w[1]);
        if !increasing(&mu) || !increasing(&load) {
            return Err(Error::Config(
                "reference slip table axes must be non-empty and strictly increasing".into(),
            ));
        }
        if values.len() != mu.len() * load.len() {
            return Err(Error::Config(format!(
                "reference slip table needs {} values, got {}",
                mu.len() * load.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
            return Err(Error::Config("reference slip values must lie in (0, 1)".into()));
        }
        Ok(Self { mu, load, values })
    }

    fn locate(axis: &[f64], x: f64) -> (usize, usize, f64) {
        if axis.len() == 1 || x <= axis[0] {
            return (0, 0, 0.0);
        }
        let last = axis.len() - 1;
        if x >= axis[last] {
            return (last, last, 0.0);
        }
        let hi = axis.partition_point(|&a| a <= x);
        let lo = hi - 1;
        (lo, hi, (x - axis[lo]) / (axis[hi] - axis[lo]))
    }

    pub fn lookup(&self, mu: f64, load: f64) -> f64 {
        let (i0, i1, wi) = Self::locate(&self.mu, mu);
        let (k0, k1, wk) = Self::locate(&self.load, load);
        let n = self.load.len();
        let at = |i: usize, k: usize| self.values[i * n + k];
        let lo = at(i0, k0) * (1.0 - wk) + at(i0, k1) * wk;
        let hi = at(i1, k0) * (1.0 - wk) + at(i1, k1) * wk;
        lo * (1.0 - wi) + hi * wi
    }
}

/// Source of the reference slip ratio.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReferenceSlip {
    /// Analytic peak of the scaled Magic Formula; load independent.
    #[default]
    Peak,
    Table(SlipTable),
}

impl ReferenceSlip {
    pub fn evaluate(&self, mu: f64, load: f64, tire: &TireParams) -> f64 {
        match self {
            ReferenceSlip::Peak => mu * tire.peak_slip_nominal(),
            ReferenceSlip::Table(table) => table.lookup(mu, load),
        }
    }
}

/// Peak-slip reference: `mu * tan(pi / 2C0) / B0`.
pub fn reference_slip(mu: f64, _load: f64, tire: &TireParams) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(Error::Config(format!("friction scale must be positive, got {mu}")));
    }
    Ok(mu * tire.peak_slip_nominal())
}

/// Time derivative of the internal state.
pub fn state_derivative(
    x: &InternalState,
    u: &ControlInput,
    vehicle: &VehicleParams,
    tire: &TireParams,
    stage: &StageParams,
) -> Result<StateVector> {
    if !x.is_finite() || !u.torque_request.is_finite() {
        return Err(Error::NonFinite("state derivative input"));
    }
    if !(stage.mu[LEFT] > 0.0 && stage.mu[RIGHT] > 0.0) {
        return Err(Error::Config(format!(
            "stage friction must be positive, got {:?}",
            stage.mu
        )));
    }
    Ok(rates(&x.to_vector(), u.torque_request, vehicle, tire, stage))
}

#[inline]
pub(crate) fn rates(
    x: &StateVector,
    torque_request: f64,
    vehicle: &VehicleParams,
    tire: &TireParams,
    stage: &StageParams,
) -> StateVector {
    let r = vehicle.tire_radius;
    let j = vehicle.wheel_inertia;
    let wheel_torque = 0.5 * x[0] * vehicle.gear_ratio;
    let slip_gain = -r * r / j - 2.0 / vehicle.mass;

    let mut dx = StateVector::zeros();
    dx[0] = (torque_request - x[0]) / vehicle.time_constant;
    for side in [LEFT, RIGHT] {
        let omega = x[1 + side];
        let sigma = slip_ratio(x[3 + side], omega, r, vehicle.slip_speed_floor).value;
        let force = mu_x_unchecked(sigma, stage.mu[side], tire) * vehicle.vertical_load[side];
        dx[1 + side] = (wheel_torque - force * r) / j;
        dx[3 + side] = slip_gain * force + wheel_torque * r / j;
        dx[5 + side] = stage.sigma_ref[side] - sigma;
    }
    dx
}

/// Classical RK4 step of length `h`.
#[inline]
pub(crate) fn rk4<F>(x: &StateVector, h: f64, f: F) -> StateVector
where
    F: Fn(&StateVector) -> StateVector,
{
    let k1 = f(x);
    let k2 = f(&(x + k1 * (0.5 * h)));
    let k3 = f(&(x + k2 * (0.5 * h)));
    let k4 = f(&(x + k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Number of substeps of length `substep` in `dt`, or a configuration error.
pub fn substep_count(dt: f64, substep: f64) -> Result<usize> {
    if !(dt > 0.0 && substep > 0.0) {
        return Err(Error::Config(format!(
            "step {dt} s and substep {substep} s must be positive"
        )));
    }
    let n = (dt / substep).round();
    if n < 1.0 || (n * substep - dt).abs() > 1e-9 * dt.max(1.0) {
        return Err(Error::Config(format!(
            "step {dt} s is not an integer multiple of the {substep} s substep"
        )));
    }
    Ok(n as usize)
}

/// Advance `x` by `dt` with 1 ms RK4 substeps, holding `u` and `stage`.
pub fn integrate_step(
    x: &InternalState,
    u: &ControlInput,
    vehicle: &VehicleParams,
    tire: &TireParams,
    stage: &StageParams,
    dt: f64,
) -> Result<InternalState> {
    integrate_with_substep(x, u, vehicle, tire, stage, dt, DEFAULT_SUBSTEP)
}

pub fn integrate_with_substep(
    x: &InternalState,
    u: &ControlInput,
    vehicle: &VehicleParams,
    tire: &TireParams,
    stage: &StageParams,
    dt: f64,
    substep: f64,
) -> Result<InternalState> {
    let n = substep_count(dt, substep)?;
    let next = propagate(&x.to_vector(), u.torque_request, vehicle, tire, stage, n, substep);
    if next.iter().all(|v| v.is_finite()) {
        Ok(InternalState::from_vector(&next))
    } else {
        Err(Error::NonFinite("integrated state"))
    }
}

/// `n` RK4 substeps of length `h` on the raw state vector.
#[inline]
pub(crate) fn propagate(
    x: &StateVector,
    torque_request: f64,
    vehicle: &VehicleParams,
    tire: &TireParams,
    stage: &StageParams,
    n: usize,
    h: f64,
) -> StateVector {
    let mut state = *x;
    for _ in 0..n {
        state = rk4(&state, h, |s| rates(s, torque_request, vehicle, tire, stage));
    }
    state
}
