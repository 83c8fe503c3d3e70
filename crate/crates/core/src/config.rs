//! JSON run configuration shared by all commands.

use crate::controller::{sigmoid_params, DirectionalRegression, GravityAssist, SigmoidBlend};
use crate::identification::{LowpassSpec, SteadyStateCriteria};
use crate::metrics::MetricsConfig;
use crate::plantsim::{IdentificationProtocol, PlantConfig, TrialProtocol};
use crate::transmission::{BowdenModel, TransmissionError};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

/// A configuration problem located by its JSON field path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, message: impl fmt::Display) -> Self {
        Self {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub support_fraction: f64,
    pub pretension_n: f64,
    pub moment_arm_m: f64,
    pub v001_rad_s: f64,
    pub v099_rad_s: f64,
    /// Identified lines, when already known
    pub m_raise: Option<f64>,
    pub b_raise: Option<f64>,
    pub m_lower: Option<f64>,
    pub b_lower: Option<f64>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            support_fraction: 0.5,
            pretension_n: 10.0,
            moment_arm_m: 0.11,
            v001_rad_s: -1.0,
            v099_rad_s: 1.0,
            m_raise: None,
            b_raise: None,
            m_lower: None,
            b_lower: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub identification: IdentificationProtocol,
    pub steady_state: SteadyStateCriteria,
    pub lowpass: LowpassSpec,
    pub trial: TrialProtocol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub transmission: BowdenModel,
    pub controller: ControllerConfig,
    pub plant: PlantConfig,
    pub protocol: ProtocolConfig,
    pub metrics: MetricsConfig,
    pub rng_seed: u64,
    /// Used when no output directory is given on the command line
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            transmission: BowdenModel::default(),
            controller: ControllerConfig::default(),
            plant: PlantConfig::default(),
            protocol: ProtocolConfig::default(),
            metrics: MetricsConfig::default(),
            rng_seed: 42,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { String::new() } else { path };
            ConfigError::new(path, e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new("", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Field-level and cross-block checks.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::new(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        self.transmission.validate().map_err(|e| match e {
            TransmissionError::InvalidModel { field, reason } => ConfigError::new(format!("transmission.{field}"), reason),
            other => ConfigError::new("transmission", other),
        })?;

        let c = &self.controller;
        if !(0.0..=1.0).contains(&c.support_fraction) {
            return Err(ConfigError::new("controller.support_fraction", "must lie in [0, 1]"));
        }
        if !(c.pretension_n.is_finite() && c.pretension_n >= 0.0) {
            return Err(ConfigError::new("controller.pretension_n", "must be >= 0"));
        }
        if !(c.moment_arm_m.is_finite() && c.moment_arm_m > 0.0) {
            return Err(ConfigError::new("controller.moment_arm_m", "must be > 0"));
        }
        if (c.moment_arm_m - self.plant.arm.moment_arm).abs() > 1e-9 * c.moment_arm_m {
            return Err(ConfigError::new(
                "controller.moment_arm_m",
                format!("{} m differs from plant.arm.moment_arm = {} m", c.moment_arm_m, self.plant.arm.moment_arm),
            ));
        }
        sigmoid_params(c.v001_rad_s, c.v099_rad_s).map_err(|e| ConfigError::new("controller.v001_rad_s", e))?;
        let given = [c.m_raise, c.b_raise, c.m_lower, c.b_lower].iter().filter(|v| v.is_some()).count();
        if given != 0 && given != 4 {
            return Err(ConfigError::new(
                "controller",
                "m_raise, b_raise, m_lower and b_lower must be given together",
            ));
        }
        if let Some(reg) = self.regression() {
            reg.validate().map_err(|e| ConfigError::new("controller.m_raise", e))?;
        }

        self.plant.validate().map_err(|e| ConfigError::new("plant", e))?;
        let nyquist = 0.5 * self.plant.sample_rate;
        let p = &self.protocol;
        p.identification
            .validate()
            .map_err(|e| ConfigError::new("protocol.identification", e))?;
        p.steady_state
            .validate()
            .map_err(|e| ConfigError::new("protocol.steady_state", e))?;
        if !(p.lowpass.cutoff_hz > 0.0 && p.lowpass.cutoff_hz < nyquist) {
            return Err(ConfigError::new(
                "protocol.lowpass.cutoff_hz",
                format!("must lie in (0, {nyquist}) Hz"),
            ));
        }
        if p.lowpass.order == 0 {
            return Err(ConfigError::new("protocol.lowpass.order", "must be >= 1"));
        }
        p.trial.validate().map_err(|e| ConfigError::new("protocol.trial", e))?;
        if p.trial.estimator_cutoff_hz.is_some_and(|fc| fc >= nyquist) {
            return Err(ConfigError::new(
                "protocol.trial.estimator_cutoff_hz",
                format!("must be below the control Nyquist frequency {nyquist} Hz"),
            ));
        }
        self.metrics.validate().map_err(|e| ConfigError::new("metrics", e))?;
        Ok(())
    }

    pub fn model(&self) -> BowdenModel {
        self.transmission
    }

    /// Gravity support for the configured user; anthropometrics come from
    /// the plant.
    pub fn assist(&self) -> GravityAssist {
        let arm = &self.plant.arm;
        GravityAssist {
            support_fraction: self.controller.support_fraction,
            arm_mass: arm.arm_mass,
            arm_com_length: arm.arm_com_length,
            load_mass: arm.load_mass,
            load_lever: arm.load_lever,
            moment_arm: self.controller.moment_arm_m,
            pretension: self.controller.pretension_n,
        }
    }

    pub fn blend(&self) -> SigmoidBlend {
        sigmoid_params(self.controller.v001_rad_s, self.controller.v099_rad_s).expect("validated anchors")
    }

    /// Regression given inline in the controller block, if complete.
    pub fn regression(&self) -> Option<DirectionalRegression> {
        let c = &self.controller;
        Some(DirectionalRegression {
            slope_raising: c.m_raise?,
            intercept_raising: c.b_raise?,
            slope_lowering: c.m_lower?,
            intercept_lowering: c.b_lower?,
            r2_raising: 1.0,
            r2_lowering: 1.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(RunConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn errors_carry_field_paths() {
        let e = RunConfig::from_json(r#"{"transmission": {"mu": -1}}"#).unwrap_err();
        assert_eq!(e.path, "transmission.mu");
        let e = RunConfig::from_json(r#"{"controller": {"moment_arm_m": 0.2}}"#).unwrap_err();
        assert_eq!(e.path, "controller.moment_arm_m");
        let e = RunConfig::from_json(r#"{"plant": {"arm": {"inertai": 1}}}"#).unwrap_err();
        assert!(e.path.starts_with("plant.arm"), "{e}");
        let e = RunConfig::from_json(r#"{"protocol": {"lowpass": {"cutoff_hz": 600}}}"#).unwrap_err();
        assert_eq!(e.path, "protocol.lowpass.cutoff_hz");
        let e = RunConfig::from_json(r#"{"controller": {"v001_rad_s": 2}}"#).unwrap_err();
        assert_eq!(e.path, "controller.v001_rad_s");
        let e = RunConfig::from_json(r#"{"schema_version": 7}"#).unwrap_err();
        assert_eq!(e.path, "schema_version");
        let e = RunConfig::from_json(r#"{"rng_seed": "x"}"#).unwrap_err();
        assert_eq!(e.path, "rng_seed");
    }

    #[test]
    fn inline_regression() {
        let cfg = RunConfig::from_json(r#"{"controller": {"m_raise": 0.05, "b_raise": 0.0, "m_lower": 0.025, "b_lower": 0.0}}"#)
            .unwrap();
        assert_eq!(cfg.regression().unwrap().slope_raising, 0.05);
        assert!(RunConfig::from_json(r#"{"controller": {"m_raise": 0.05}}"#).is_err());
        assert!(RunConfig::default().regression().is_none());
    }
}
