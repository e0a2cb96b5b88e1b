//! Friction preview along the horizon and compensation of pure powertrain delay.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    self, InternalState, ReferenceSlip, StageParams, TireParams, VehicleParams,
    LEFT, RIGHT,
};

const MU_MAX: f64 = 1.2;
const TIME_TOL: f64 = 1e-9;

/// Piecewise-constant, right-continuous friction profile for one side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideProfile {
    positions: Vec<f64>,
    mu: Vec<f64>,
}

impl SideProfile {
    pub fn new(breakpoints: &[(f64, f64)]) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(Error::Map("no breakpoints".into()));
        }
        for w in breakpoints.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Map(format!(
                    "positions must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        for &(pos, mu) in breakpoints {
            if !pos.is_finite() {
                return Err(Error::Map(format!("non-finite position {pos}")));
            }
            if !(mu > 0.0 && mu <= MU_MAX) {
                return Err(Error::Map(format!("mu {mu} at {pos} m outside (0, {MU_MAX}]")));
            }
        }
        Ok(Self {
            positions: breakpoints.iter().map(|b| b.0).collect(),
            mu: breakpoints.iter().map(|b| b.1).collect(),
        })
    }

    pub fn at(&self, position: f64) -> f64 {
        let idx = self.positions.partition_point(|&p| p <= position);
        self.mu[idx.saturating_sub(1)]
    }

    pub fn breakpoints(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.positions.iter().copied().zip(self.mu.iter().copied())
    }
}

/// Spatial friction map for the left and right wheel tracks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrictionMap {
    sides: [SideProfile; 2],
}

impl FrictionMap {
    pub fn new(left: SideProfile, right: SideProfile) -> Self {
        Self {
            sides: [left, right],
        }
    }

    /// Same profile on both sides.
    pub fn uniform(breakpoints: &[(f64, f64)]) -> Result<Self> {
        let side = SideProfile::new(breakpoints)?;
        Ok(Self::new(side.clone(), side))
    }

    pub fn constant(mu: f64) -> Result<Self> {
        Self::uniform(&[(0.0, mu)])
    }

    /// High friction up to `position`, low friction from there on.
    pub fn step(position: f64, mu_high: f64, mu_low: f64) -> Result<Self> {
        Self::uniform(&[(0.0, mu_high), (position, mu_low)])
    }

    pub fn side(&self, side: usize) -> &SideProfile {
        &self.sides[side]
    }

    pub fn at(&self, position: f64) -> [f64; 2] {
        [self.sides[LEFT].at(position), self.sides[RIGHT].at(position)]
    }

    /// Parses `position_m mu` or `position_m mu_left mu_right` lines;
    /// `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut left = Vec::new();
        let mut right = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields = line
                .split_whitespace()
                .map(|f| {
                    f.parse::<f64>().map_err(|e| {
                        Error::Map(format!("line {}: cannot parse {f:?}: {e}", lineno + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            let (pos, l, r) = match fields.as_slice() {
                [pos, mu] => (*pos, *mu, *mu),
                [pos, l, r] => (*pos, *l, *r),
                _ => {
                    return Err(Error::Map(format!(
                        "line {}: expected `position mu` or `position mu_left mu_right`",
                        lineno + 1
                    )));
                }
            };
            left.push((pos, l));
            right.push((pos, r));
        }
        Ok(Self::new(SideProfile::new(&left)?, SideProfile::new(&right)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Map(msg) => Error::Map(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Position of the first friction drop on either side, if any.
    pub fn first_drop(&self) -> Option<f64> {
        self.sides
            .iter()
            .filter_map(|side| {
                let first = side.mu[0];
                side.breakpoints().find(|&(_, mu)| mu < first).map(|(p, _)| p)
            })
            .min_by(f64::total_cmp)
    }
}

/// Friction coefficient per side at each of the `N + 1` horizon nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PreviewVector {
    pub stages: Vec<[f64; 2]>,
}

impl PreviewVector {
    /// Non-pre-emptive preview: the current friction held over the horizon.
    pub fn constant(mu: [f64; 2], steps: usize) -> Self {
        Self {
            stages: vec![mu; steps + 1],
        }
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }
}

/// Travelled distance at each horizon node under constant speed.
pub fn future_distances(position: f64, speed: f64, ts: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|n| position + speed * (n as f64 * ts)).collect()
}

/// Distance covered at constant speed during the powertrain delay.
pub fn delay_advance(speed: f64, delay: f64) -> f64 {
    speed * delay
}

pub fn sample_preview(
    map: &FrictionMap,
    position: f64,
    speed: f64,
    ts: f64,
    steps: usize,
    delay: f64,
) -> PreviewVector {
    let shift = delay_advance(speed, delay);
    PreviewVector {
        stages: future_distances(position, speed, ts, steps)
            .into_iter()
            .map(|s| map.at(s + shift))
            .collect(),
    }
}

/// Timestamped torque commands, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandHistory {
    entries: VecDeque<(f64, f64)>,
    retain: f64,
}

impl CommandHistory {
    /// History whose only entry is `torque` issued at `time`; older lookups
    /// are refused. `retain` is how far back entries are kept.
    pub fn new(time: f64, torque: f64, retain: f64) -> Self {
        Self {
            entries: VecDeque::from([(time, torque)]),
            retain: retain.max(0.0),
        }
    }

    /// Append a command. Timestamps must be strictly increasing.
    pub fn push(&mut self, time: f64, torque: f64) -> Result<()> {
        if let Some(&(last, _)) = self.entries.back()
            && !(time > last)
        {
            return Err(Error::Config(format!(
                "command timestamps must increase ({last} then {time})"
            )));
        }
        self.entries.push_back((time, torque));
        // Keep the newest entry at or before `time - retain`; it is still
        // the command in force at that instant.
        let horizon = time - self.retain - TIME_TOL;
        while self.entries.len() > 1 && self.entries[1].0 <= horizon {
            self.entries.pop_front();
        }
        Ok(())
    }

    pub fn oldest(&self) -> f64 {
        self.entries.front().map_or(f64::INFINITY, |e| e.0)
    }

    pub fn latest(&self) -> Option<(f64, f64)> {
        self.entries.back().copied()
    }

    /// Command in force at `time` (zero-order hold).
    pub fn command_at(&self, time: f64) -> Result<f64> {
        let idx = self.entries.partition_point(|e| e.0 <= time + TIME_TOL);
        if idx == 0 {
            return Err(Error::InsufficientHistory {
                oldest: self.oldest(),
                required: time,
            });
        }
        Ok(self.entries[idx - 1].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Everything the delayed-state predictor needs besides the state.
#[derive(Debug, Clone, Copy)]
pub struct PredictionContext<'a> {
    pub vehicle: &'a VehicleParams,
    pub tire: &'a TireParams,
    pub reference: &'a ReferenceSlip,
    pub map: &'a FrictionMap,
    pub substep: f64,
}

/// Integrate the internal model over `[start, start + window]`.
///
/// The powertrain at time `t'` receives the command issued at `t' - lag`.
/// Friction is read from the map at the position reached at constant speed.
#[allow(clippy::too_many_arguments)]
pub fn predict_window(
    x: &InternalState,
    history: &CommandHistory,
    ctx: &PredictionContext<'_>,
    start: f64,
    window: f64,
    lag: f64,
    position: f64,
    speed: f64,
) -> Result<InternalState> {
    if window == 0.0 {
        return Ok(*x);
    }
    let n = model::substep_count(window, ctx.substep)?;
    let h = ctx.substep;
    let mut state = x.to_vector();
    for k in 0..n {
        let elapsed = k as f64 * h;
        let command = history.command_at(start + elapsed - lag)?;
        let mu = ctx.map.at(position + speed * elapsed);
        let stage = StageParams {
            mu,
            sigma_ref: [
                ctx.reference.evaluate(mu[LEFT], ctx.vehicle.vertical_load[LEFT], ctx.tire),
                ctx.reference.evaluate(mu[RIGHT], ctx.vehicle.vertical_load[RIGHT], ctx.tire),
            ],
            driver_torque: command,
        };
        state = model::propagate(&state, command, ctx.vehicle, ctx.tire, &stage, 1, h);
    }
    let out = InternalState::from_vector(&state);
    if out.is_finite() {
        Ok(out)
    } else {
        Err(Error::NonFinite("predicted initial state"))
    }
}

/// State `delay` seconds ahead of `now`, driven by the commands already
/// issued that reach the powertrain within that window.
pub fn predict_initial_state(
    measured: &InternalState,
    history: &CommandHistory,
    ctx: &PredictionContext<'_>,
    now: f64,
    delay: f64,
    position: f64,
    speed: f64,
) -> Result<InternalState> {
    if delay < 0.0 {
        return Err(Error::Config(format!("delay must be non-negative, got {delay}")));
    }
    predict_window(measured, history, ctx, now, delay, delay, position, speed)
}
