//! Traction NMPC: horizon transcription, Gauss-Newton real-time iteration and
//! the closed-loop controller wrapper.
//!
//! Decision variables are the per-stage torque requests and two slip slacks
//! per stage. The horizon is rolled out from the initial state with the
//! warm-start torques, each stage is linearized by forward differences on the
//! discrete map, states are eliminated (condensing) and the resulting dense QP
//! is solved once per control step.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    self, ControlInput, InternalState, ReferenceSlip, StageParams, StateVector, TireParams,
    VehicleParams, CONTROL_DIM, DEFAULT_SUBSTEP, LEFT, RIGHT, STATE_DIM,
};
use crate::preview::{self, CommandHistory, FrictionMap, PredictionContext, PreviewVector};
use crate::qp::{QpStatus, SoftBoxQp};

/// Cost weights of the stage cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Weights {
    /// Slip-slack weights per side.
    pub slack: [f64; 2],
    /// Weight on `(T_driver - T_mod)^2` (1/Nm^2).
    pub torque: f64,
    /// Integral-error weights per side (1/s^2).
    pub error_integral: [f64; 2],
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            slack: [1e6; 2],
            torque: 1e-4,
            error_integral: [5e2; 2],
        }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.slack[LEFT],
            self.slack[RIGHT],
            self.torque,
            self.error_integral[LEFT],
            self.error_integral[RIGHT],
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("weights must be non-negative: {self:?}")));
        }
        if !(self.torque > 0.0) {
            return Err(Error::Config("torque weight must be positive".into()));
        }
        if self.slack.iter().any(|w| *w < 1e3 * self.torque) {
            return Err(Error::Config(
                "slack weights must be at least 1e3 times the torque weight".into(),
            ));
        }
        Ok(())
    }
}

/// Horizon discretization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    /// Control and shooting interval (s).
    pub ts: f64,
    pub steps: usize,
    /// RK4 substep inside each interval (s).
    pub substep: f64,
}

impl Profile {
    /// Settings used on the vehicle: 250 ms horizon in ten 25 ms steps.
    pub fn experiment() -> Self {
        Self {
            ts: 0.025,
            steps: 10,
            substep: DEFAULT_SUBSTEP,
        }
    }

    /// Settings used in simulation: 250 ms horizon in fifty 5 ms steps.
    pub fn simulation() -> Self {
        Self {
            ts: 0.005,
            steps: 50,
            substep: DEFAULT_SUBSTEP,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.ts * self.steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("horizon needs at least one step".into()));
        }
        model::substep_count(self.ts, self.substep).map(|_| ())
    }
}

/// Optional box on predicted states, imposed as penalized soft rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateBounds {
    pub lower: [f64; STATE_DIM],
    pub upper: [f64; STATE_DIM],
    pub weight: f64,
}

impl Default for StateBounds {
    fn default() -> Self {
        Self {
            lower: [f64::NEG_INFINITY; STATE_DIM],
            upper: [f64::INFINITY; STATE_DIM],
            weight: 1e6,
        }
    }
}

impl StateBounds {
    fn rows(&self) -> Vec<(usize, bool, f64)> {
        let mut out = Vec::new();
        for i in 0..STATE_DIM {
            if self.lower[i].is_finite() {
                out.push((i, false, self.lower[i]));
            }
            if self.upper[i].is_finite() {
                out.push((i, true, self.upper[i]));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct OcpProblem {
    pub initial: InternalState,
    pub profile: Profile,
    /// Stage parameters for nodes `0..=N`.
    pub stages: Vec<StageParams>,
    pub weights: Weights,
    pub vehicle: VehicleParams,
    pub tire: TireParams,
    pub state_bounds: StateBounds,
}

impl OcpProblem {
    fn validate(&self) -> Result<()> {
        if self.stages.len() != self.profile.steps + 1 {
            return Err(Error::Config(format!(
                "expected {} stage parameter sets, got {}",
                self.profile.steps + 1,
                self.stages.len()
            )));
        }
        if !self.initial.is_finite() {
            return Err(Error::NonFinite("initial state"));
        }
        for (n, st) in self.stages.iter().enumerate() {
            if !(st.mu.iter().all(|m| *m > 0.0) && st.driver_torque >= 0.0) {
                return Err(Error::Infeasible {
                    stage: n,
                    reason: format!("invalid stage parameters {st:?}"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SqpStatus {
    Solved,
    /// QP hit its iteration limit; the returned point is feasible.
    QpIterationLimit,
}

#[derive(Debug, Clone)]
pub struct OcpSolution {
    pub controls: Vec<ControlInput>,
    /// Predicted states `x_0..x_N` under `controls`.
    pub states: Vec<InternalState>,
    pub kkt_residual: f64,
    pub status: SqpStatus,
    pub qp_iterations: usize,
    /// Largest gap between the linearized prediction and the simulated one.
    pub linearization_defect: f64,
    pub solve_time: f64,
}

impl OcpSolution {
    /// Drop the first interval and repeat the last control.
    pub fn shifted(&self) -> Self {
        let mut out = self.clone();
        if out.controls.len() > 1 {
            out.controls.remove(0);
            out.controls.push(*out.controls.last().unwrap());
            out.states.remove(0);
            out.states.push(*out.states.last().unwrap());
        }
        out
    }
}

/// Stage cost of one node.
pub fn stage_cost(x: &InternalState, u: &ControlInput, driver_torque: f64, w: &Weights) -> f64 {
    let dt = driver_torque - u.torque_request;
    w.slack[LEFT] * u.slack[LEFT].powi(2)
        + w.slack[RIGHT] * u.slack[RIGHT].powi(2)
        + w.torque * dt * dt
        + w.error_integral[LEFT] * x.error_integral[LEFT].powi(2)
        + w.error_integral[RIGHT] * x.error_integral[RIGHT].powi(2)
}

/// Discrete map of one stage and its Jacobians.
#[derive(Debug, Clone, Copy)]
pub struct StageLinearization {
    pub next: StateVector,
    pub a: SMatrix<f64, STATE_DIM, STATE_DIM>,
    /// Columns: torque request, left slack, right slack. The slack columns
    /// are identically zero since slacks do not enter the dynamics.
    pub b: SMatrix<f64, STATE_DIM, CONTROL_DIM>,
}

fn fd_step(value: f64) -> f64 {
    1e-6_f64.max(1e-6 * value.abs())
}

/// Discrete dynamics over one interval plus forward-difference Jacobians.
pub fn discretize_and_linearize(
    x: &StateVector,
    torque_request: f64,
    stage: &StageParams,
    vehicle: &VehicleParams,
    tire: &TireParams,
    profile: &Profile,
) -> Result<StageLinearization> {
    let n = model::substep_count(profile.ts, profile.substep)?;
    let h = profile.substep;
    let f = |state: &StateVector, torque: f64| {
        model::propagate(state, torque, vehicle, tire, stage, n, h)
    };
    let next = f(x, torque_request);
    if !next.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("stage prediction"));
    }
    let mut a = SMatrix::<f64, STATE_DIM, STATE_DIM>::zeros();
    for i in 0..STATE_DIM {
        let step = fd_step(x[i]);
        let mut xp = *x;
        xp[i] += step;
        a.set_column(i, &((f(&xp, torque_request) - next) / step));
    }
    let mut b = SMatrix::<f64, STATE_DIM, CONTROL_DIM>::zeros();
    let step = fd_step(torque_request);
    b.set_column(0, &((f(x, torque_request + step) - next) / step));
    Ok(StageLinearization { next, a, b })
}

/// Slip ratio and its gradient with respect to the state vector.
fn slip_with_gradient(x: &StateVector, side: usize, vehicle: &VehicleParams) -> (f64, f64, f64) {
    let r = vehicle.tire_radius;
    let omega = x[1 + side];
    let s = x[3 + side];
    let tangential = omega * r;
    if tangential > vehicle.slip_speed_floor {
        (s / tangential, -s * r / (tangential * tangential), 1.0 / tangential)
    } else {
        let floor = vehicle.slip_speed_floor;
        (s / floor, 0.0, 1.0 / floor)
    }
}

/// One Gauss-Newton SQP iteration.
pub fn rti_step(problem: &OcpProblem, warm: Option<&OcpSolution>) -> Result<OcpSolution> {
    let started = Instant::now();
    problem.validate()?;
    let profile = &problem.profile;
    let steps = profile.steps;
    let vehicle = &problem.vehicle;
    let tire = &problem.tire;
    let w = &problem.weights;

    // Linearization point.
    let zbar = DVector::from_fn(steps, |n, _| {
        let limit = problem.stages[n].driver_torque;
        warm.and_then(|s| s.controls.get(n))
            .map_or(limit, |u| u.torque_request)
            .clamp(0.0, limit)
    });

    let mut xbar = Vec::with_capacity(steps + 1);
    xbar.push(problem.initial.to_vector());
    let mut lins = Vec::with_capacity(steps);
    for n in 0..steps {
        let lin = discretize_and_linearize(&xbar[n], zbar[n], &problem.stages[n], vehicle, tire, profile)
            .map_err(|e| Error::Infeasible {
                stage: n,
                reason: e.to_string(),
            })?;
        xbar.push(lin.next);
        lins.push(lin);
    }

    // Condensing: sens[n] = d x_n / d z, zero in columns >= n.
    let mut sens: Vec<DMatrix<f64>> = Vec::with_capacity(steps + 1);
    sens.push(DMatrix::zeros(STATE_DIM, steps));
    for n in 0..steps {
        let a = DMatrix::from_fn(STATE_DIM, STATE_DIM, |i, j| lins[n].a[(i, j)]);
        let mut next = a * &sens[n];
        for i in 0..STATE_DIM {
            next[(i, n)] += lins[n].b[(i, 0)];
        }
        sens.push(next);
    }

    let bound_rows = problem.state_bounds.rows();
    let num_slip_rows = 2 * steps;
    let num_rows = num_slip_rows + bound_rows.len() * steps;

    let mut hessian = DMatrix::zeros(steps, steps);
    let mut gradient = DVector::zeros(steps);
    let mut soft_rows = DMatrix::zeros(num_rows, steps);
    let mut soft_offsets = DVector::zeros(num_rows);
    let mut slack_weights = DVector::zeros(num_rows);

    // Stage n's state terms and slip rows act on x_{n+1}, the first node its
    // control reaches; x_0 is fixed and contributes only a constant.
    for n in 0..steps {
        let stage = &problem.stages[n];
        hessian[(n, n)] += 2.0 * w.torque;
        gradient[n] -= 2.0 * w.torque * stage.driver_torque;

        let node = n + 1;
        let sigma_ref = problem.stages[node].sigma_ref;
        for side in [LEFT, RIGHT] {
            // Integral error, affine in z.
            let g = sens[node].row(5 + side).transpose();
            let kappa = xbar[node][5 + side] - g.dot(&zbar);
            hessian.ger(2.0 * w.error_integral[side], &g, &g, 1.0);
            gradient.axpy(2.0 * w.error_integral[side] * kappa, &g, 1.0);

            // sigma_ref - sigma(x) + eps >= 0, linearized at the rollout.
            let (sigma, d_omega, d_slip) = slip_with_gradient(&xbar[node], side, vehicle);
            let dsigma = sens[node].row(1 + side) * d_omega + sens[node].row(3 + side) * d_slip;
            let row = 2 * n + side;
            for k in 0..steps {
                soft_rows[(row, k)] = -dsigma[k];
            }
            soft_offsets[row] = sigma_ref[side] - sigma + dsigma.dot(&zbar.transpose());
            slack_weights[row] = 2.0 * w.slack[side];
        }
    }
    // State bounds on nodes 1..=N.
    for (b, &(i, upper, limit)) in bound_rows.iter().enumerate() {
        for n in 1..=steps {
            let row = num_slip_rows + b * steps + (n - 1);
            let sign = if upper { -1.0 } else { 1.0 };
            let srow = sens[n].row(i);
            for k in 0..steps {
                soft_rows[(row, k)] = sign * srow[k];
            }
            soft_offsets[row] = sign * (xbar[n][i] - srow.dot(&zbar.transpose()) - limit);
            slack_weights[row] = 2.0 * problem.state_bounds.weight;
        }
    }

    let qp = SoftBoxQp {
        hessian,
        gradient,
        lower: DVector::zeros(steps),
        upper: DVector::from_fn(steps, |n, _| problem.stages[n].driver_torque),
        soft_rows,
        soft_offsets,
        slack_weights,
    };
    let max_iter = 10 * (steps + num_rows) + 100;
    let sol = qp.solve(&zbar, max_iter)?;

    let mut controls = Vec::with_capacity(steps);
    for n in 0..steps {
        controls.push(ControlInput {
            torque_request: sol.primal[n].clamp(0.0, problem.stages[n].driver_torque),
            slack: [sol.slack[2 * n], sol.slack[2 * n + 1]],
        });
    }

    // Simulate the new controls; compare against the linear prediction.
    let n_sub = model::substep_count(profile.ts, profile.substep)?;
    let dz = &sol.primal - &zbar;
    let mut states = Vec::with_capacity(steps + 1);
    let mut x = problem.initial.to_vector();
    let mut defect: f64 = 0.0;
    states.push(problem.initial);
    for n in 0..steps {
        x = model::propagate(
            &x,
            controls[n].torque_request,
            vehicle,
            tire,
            &problem.stages[n],
            n_sub,
            profile.substep,
        );
        let linear = xbar[n + 1] + &sens[n + 1] * &dz;
        defect = defect.max((linear - x).amax());
        states.push(InternalState::from_vector(&x));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("predicted trajectory"));
    }

    Ok(OcpSolution {
        controls,
        states,
        kkt_residual: sol.kkt_residual,
        status: match sol.status {
            QpStatus::Optimal => SqpStatus::Solved,
            QpStatus::IterationLimit => SqpStatus::QpIterationLimit,
        },
        qp_iterations: sol.iterations,
        linearization_defect: defect,
        solve_time: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerMode {
    /// No intervention: the driver request goes straight through.
    Passive,
    /// Only the friction under the wheels is known; held over the horizon.
    #[serde(rename = "nmpc")]
    NonPreemptive,
    /// Friction previewed from the spatial map.
    #[serde(rename = "pre-nmpc")]
    Preemptive,
}

impl std::fmt::Display for ControllerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ControllerMode::Passive => "passive",
            ControllerMode::NonPreemptive => "nmpc",
            ControllerMode::Preemptive => "pre-nmpc",
        })
    }
}

impl std::str::FromStr for ControllerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "passive" => Ok(ControllerMode::Passive),
            "nmpc" => Ok(ControllerMode::NonPreemptive),
            "pre-nmpc" => Ok(ControllerMode::Preemptive),
            other => Err(Error::Config(format!("unknown controller mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub mode: ControllerMode,
    pub profile: Profile,
    pub weights: Weights,
    /// Internal model parameters, including the assumed time constant.
    pub vehicle: VehicleParams,
    pub tire: TireParams,
    pub reference: ReferenceSlip,
    /// Powertrain delay the controller compensates (s); zero disables it.
    pub compensated_delay: f64,
    pub state_bounds: StateBounds,
}

impl ControllerConfig {
    pub fn new(mode: ControllerMode, profile: Profile) -> Self {
        Self {
            mode,
            profile,
            weights: Weights::default(),
            vehicle: VehicleParams::default(),
            tire: TireParams::default(),
            reference: ReferenceSlip::Peak,
            compensated_delay: 0.0,
            state_bounds: StateBounds::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        self.weights.validate()?;
        self.vehicle.validate()?;
        self.tire.validate()?;
        if !(self.compensated_delay >= 0.0) {
            return Err(Error::Config("compensated delay must be non-negative".into()));
        }
        if self.compensated_delay > 0.0 {
            model::substep_count(self.compensated_delay, self.profile.substep)?;
        }
        Ok(())
    }

    fn effective_delay(&self) -> f64 {
        match self.mode {
            ControllerMode::Preemptive => self.compensated_delay,
            _ => 0.0,
        }
    }
}

/// Measured quantities available to the controller each step.
#[derive(Debug, Clone, Copy)]
pub struct Measurement {
    /// Kinematic state; the error integrals are ignored and replaced by the
    /// controller's own.
    pub state: InternalState,
    /// Travelled distance (m).
    pub position: f64,
    /// Vehicle speed (m/s).
    pub speed: f64,
}

#[derive(Debug, Clone)]
pub struct ControlOutput {
    pub command: f64,
    pub initial_state: InternalState,
    pub solution: Option<OcpSolution>,
}

/// Closed-loop traction controller with its warm start, integrators and
/// command history.
#[derive(Debug, Clone)]
pub struct TractionController {
    config: ControllerConfig,
    warm: Option<OcpSolution>,
    history: CommandHistory,
    error_integral: [f64; 2],
}

impl TractionController {
    /// Controller whose command history reads zero before `start`.
    pub fn new(config: ControllerConfig, start: f64) -> Result<Self> {
        config.validate()?;
        let delay = config.effective_delay();
        let retain = delay + config.profile.ts;
        Ok(Self {
            history: CommandHistory::new(start - retain - 1.0, 0.0, retain),
            config,
            warm: None,
            error_integral: [0.0; 2],
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn error_integral(&self) -> [f64; 2] {
        self.error_integral
    }

    pub fn history(&self) -> &CommandHistory {
        &self.history
    }

    /// Build the horizon problem for the current measurement.
    pub fn build_problem(
        &self,
        time: f64,
        meas: &Measurement,
        driver_torque: f64,
        map: &FrictionMap,
    ) -> Result<OcpProblem> {
        let cfg = &self.config;
        let mut measured = meas.state;
        measured.error_integral = self.error_integral;
        let steps = cfg.profile.steps;
        let delay = cfg.effective_delay();

        let (preview, initial) = match cfg.mode {
            ControllerMode::Preemptive => {
                let pv = preview::sample_preview(
                    map,
                    meas.position,
                    meas.speed,
                    cfg.profile.ts,
                    steps,
                    delay,
                );
                let ctx = PredictionContext {
                    vehicle: &cfg.vehicle,
                    tire: &cfg.tire,
                    reference: &cfg.reference,
                    map,
                    substep: cfg.profile.substep,
                };
                let x_in = preview::predict_initial_state(
                    &measured,
                    &self.history,
                    &ctx,
                    time,
                    delay,
                    meas.position,
                    meas.speed,
                )?;
                (pv, x_in)
            }
            _ => (PreviewVector::constant(map.at(meas.position), steps), measured),
        };

        let loads = cfg.vehicle.vertical_load;
        let stages = preview
            .stages
            .iter()
            .map(|mu| StageParams {
                mu: *mu,
                sigma_ref: [
                    cfg.reference.evaluate(mu[LEFT], loads[LEFT], &cfg.tire),
                    cfg.reference.evaluate(mu[RIGHT], loads[RIGHT], &cfg.tire),
                ],
                driver_torque,
            })
            .collect();

        Ok(OcpProblem {
            initial,
            profile: cfg.profile,
            stages,
            weights: cfg.weights,
            vehicle: cfg.vehicle,
            tire: cfg.tire,
            state_bounds: cfg.state_bounds,
        })
    }

    /// Compute the torque command for time `time`.
    pub fn step(
        &mut self,
        time: f64,
        meas: &Measurement,
        driver_torque: f64,
        map: &FrictionMap,
    ) -> Result<ControlOutput> {
        if !(driver_torque >= 0.0) {
            return Err(Error::Config(format!(
                "driver torque must be non-negative, got {driver_torque}"
            )));
        }
        let output = match self.config.mode {
            ControllerMode::Passive => {
                let mut x = meas.state;
                x.error_integral = self.error_integral;
                ControlOutput {
                    command: driver_torque,
                    initial_state: x,
                    solution: None,
                }
            }
            _ => {
                let problem = self.build_problem(time, meas, driver_torque, map)?;
                let warm = self.warm.as_ref().map(OcpSolution::shifted);
                let solution = rti_step(&problem, warm.as_ref())?;
                let command = solution.controls[0].torque_request.clamp(0.0, driver_torque);
                self.warm = Some(solution.clone());
                ControlOutput {
                    command,
                    initial_state: problem.initial,
                    solution: Some(solution),
                }
            }
        };

        self.history.push(time, output.command)?;
        let cfg = &self.config;
        let mu = map.at(meas.position);
        // Conditional integration: the controller can only reduce torque, so
        // the integral is cleared whenever the driver request passes through.
        let intervening = output.command < driver_torque;
        for side in [LEFT, RIGHT] {
            if !intervening {
                self.error_integral[side] = 0.0;
                continue;
            }
            let sigma_ref =
                cfg.reference.evaluate(mu[side], cfg.vehicle.vertical_load[side], &cfg.tire);
            let sigma = meas.state.slip_ratio(side, &cfg.vehicle).value;
            self.error_integral[side] += cfg.profile.ts * (sigma_ref - sigma);
        }
        Ok(output)
    }
}
