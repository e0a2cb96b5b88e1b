//! Scenario configuration file (TOML).
//!
//! Every key is optional; [`ConfigFile::default`] is the reference friction
//! step launch. The resolved file is written next to each run's output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ReferenceSlip, TireParams, VehicleParams};
use crate::nmpc::{ControllerConfig, ControllerMode, Profile, StateBounds, Weights};
use crate::plant::PlantParams;
use crate::preview::FrictionMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileName {
    Experiment,
    Simulation,
}

impl ProfileName {
    pub fn profile(self) -> Profile {
        match self {
            ProfileName::Experiment => Profile::experiment(),
            ProfileName::Simulation => Profile::simulation(),
        }
    }
}

impl std::str::FromStr for ProfileName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "experiment" => Ok(ProfileName::Experiment),
            "simulation" => Ok(ProfileName::Simulation),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }
}

/// Window over which the slip-error RMSE is accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RmseWindow {
    /// From the first sample on reduced friction to the end of the run.
    LowMuEntry,
    FullRun,
}

impl RmseWindow {
    pub fn label(self) -> &'static str {
        match self {
            RmseWindow::LowMuEntry => "low-mu-entry",
            RmseWindow::FullRun => "full-run",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub mode: ControllerMode,
    /// Pre-emptive mode only: compensate the plant delay.
    pub compensate_delay: bool,
    pub profile: ProfileName,
    pub duration_s: f64,
    /// Driver torque demand before the motor envelope (Nm).
    pub driver_demand_nm: f64,
    pub rmse_window: RmseWindow,
    /// Log controller wall time. Off by default so output is reproducible.
    pub record_timing: bool,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            mode: ControllerMode::Preemptive,
            compensate_delay: true,
            profile: ProfileName::Experiment,
            duration_s: 2.5,
            driver_demand_nm: 80.0,
            rmse_window: RmseWindow::LowMuEntry,
            record_timing: false,
        }
    }
}

/// Overrides of the controller's internal model and horizon.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub ts_s: Option<f64>,
    pub steps: Option<usize>,
    pub substep_s: Option<f64>,
    /// Time constant assumed by the internal model; defaults to the plant's.
    pub time_constant_s: Option<f64>,
    /// Delay assumed by the compensator; defaults to the plant's.
    pub assumed_delay_s: Option<f64>,
    pub state_bounds: StateBounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    pub delay_s: f64,
    pub dt_s: f64,
    pub rolling_resistance: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        let p = PlantParams::default();
        Self {
            delay_s: p.delay,
            dt_s: p.dt,
            rolling_resistance: p.rolling_resistance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSection {
    /// Map file; when set, the step parameters below are ignored.
    pub path: Option<PathBuf>,
    pub step_position_m: f64,
    pub mu_high: f64,
    pub mu_low: f64,
}

impl Default for MapSection {
    fn default() -> Self {
        Self {
            path: None,
            step_position_m: 2.0,
            mu_high: 1.0,
            mu_low: 0.12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub tau_ms: Vec<f64>,
    pub delay_ms: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            tau_ms: vec![40.0, 90.0, 140.0],
            delay_ms: vec![0.0, 30.0, 60.0],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub scenario: ScenarioSection,
    pub controller: ControllerSection,
    pub weights: Weights,
    /// Vehicle shared by plant and internal model; `time_constant` is the
    /// plant's powertrain lag.
    pub vehicle: VehicleParams,
    pub tire: TireParams,
    pub reference: ReferenceSlip,
    pub plant: PlantSection,
    pub map: MapSection,
    pub sweep: SweepSection,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // Map paths are relative to the config file.
        if let (Some(map), Some(dir)) = (cfg.map.path.as_mut(), path.parent())
            && map.is_relative()
        {
            *map = dir.join(&*map);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn friction_map(&self) -> Result<FrictionMap> {
        match &self.map.path {
            Some(path) => FrictionMap::load(path),
            None => FrictionMap::step(self.map.step_position_m, self.map.mu_high, self.map.mu_low),
        }
    }

    pub fn resolve(&self) -> Result<ScenarioConfig> {
        let s = &self.scenario;
        let preset = s.profile.profile();
        let profile = Profile {
            ts: self.controller.ts_s.unwrap_or(preset.ts),
            steps: self.controller.steps.unwrap_or(preset.steps),
            substep: self.controller.substep_s.unwrap_or(preset.substep),
        };
        let plant = PlantParams {
            vehicle: self.vehicle,
            delay: self.plant.delay_s,
            dt: self.plant.dt_s,
            rolling_resistance: self.plant.rolling_resistance,
        };
        let mut model_vehicle = self.vehicle;
        if let Some(tau) = self.controller.time_constant_s {
            model_vehicle.time_constant = tau;
        }
        let compensated_delay = match (s.mode, s.compensate_delay) {
            (ControllerMode::Preemptive, true) => {
                self.controller.assumed_delay_s.unwrap_or(plant.delay)
            }
            _ => 0.0,
        };
        let controller = ControllerConfig {
            mode: s.mode,
            profile,
            weights: self.weights,
            vehicle: model_vehicle,
            tire: self.tire,
            reference: self.reference.clone(),
            compensated_delay,
            state_bounds: self.controller.state_bounds,
        };
        let cfg = ScenarioConfig {
            controller,
            plant,
            tire: self.tire,
            map: self.friction_map()?,
            driver_demand: s.driver_demand_nm,
            duration: s.duration_s,
            rmse_window: s.rmse_window,
            record_timing: s.record_timing,
            delay_compensation: s.mode == ControllerMode::Preemptive && s.compensate_delay,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Fully resolved inputs of one closed-loop run.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub controller: ControllerConfig,
    pub plant: PlantParams,
    /// Tire of the plant.
    pub tire: TireParams,
    pub map: FrictionMap,
    pub driver_demand: f64,
    pub duration: f64,
    pub rmse_window: RmseWindow,
    pub record_timing: bool,
    /// Whether the controller compensates the plant delay, even a zero one.
    pub delay_compensation: bool,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.controller.validate()?;
        self.plant.validate()?;
        self.tire.validate()?;
        if !(self.duration > 0.0) {
            return Err(Error::Config("duration must be positive".into()));
        }
        if !(self.driver_demand >= 0.0) {
            return Err(Error::Config("driver demand must be non-negative".into()));
        }
        crate::model::substep_count(self.controller.profile.ts, self.plant.dt).map_err(|_| {
            Error::Config(format!(
                "controller step {} s is not a multiple of the plant step {} s",
                self.controller.profile.ts, self.plant.dt
            ))
        })?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let cfg = ConfigFile::default().resolve().unwrap();
        assert_eq!(cfg.controller.profile, Profile::experiment());
        assert_eq!(cfg.controller.mode, ControllerMode::Preemptive);
        assert_eq!(cfg.plant.dt, 2e-4);
        assert_eq!(cfg.map.at(0.0), [1.0; 2]);
        assert_eq!(cfg.map.at(2.0), [0.12; 2]);
    }

    #[test]
    fn round_trip_through_toml() {
        let cfg = ConfigFile::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ConfigFile::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_and_overrides() {
        let cfg = ConfigFile::parse(
            r#"
            [scenario]
            mode = "nmpc"
            profile = "simulation"
            [controller]
            time_constant_s = 0.09
            [plant]
            delay_s = 0.03
            "#,
        )
        .unwrap();
        let resolved = cfg.resolve().unwrap();
        assert_eq!(resolved.controller.mode, ControllerMode::NonPreemptive);
        assert_eq!(resolved.controller.profile.steps, 50);
        assert_eq!(resolved.controller.vehicle.time_constant, 0.09);
        assert_eq!(resolved.plant.vehicle.time_constant, 0.14);
        // Non-pre-emptive never compensates.
        assert_eq!(resolved.controller.compensated_delay, 0.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ConfigFile::parse("[scenario]\nspeed = 3\n").is_err());
        assert!(ConfigFile::parse("[scenario]\nmode = \"abs\"\n").is_err());
    }

    #[test]
    fn inconsistent_steps_rejected() {
        let mut cfg = ConfigFile::default();
        cfg.plant.dt_s = 3e-4;
        assert!(cfg.resolve().is_err());
    }
}
