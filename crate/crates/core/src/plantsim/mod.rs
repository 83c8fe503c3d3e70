//! Simulated test bench: arm dynamics, the physical TDU/sheath path with
//! stiction and actuator lag, a reference-tracking user, and the two
//! experiment protocols (mannequin identification and assisted trials).

mod arm;
mod mannequin;
mod stiction;
mod trajectory;
mod trial;

pub use arm::{ArmPlant, MAX_DT};
pub use mannequin::{run_identification_protocol, ConditionBlock, IdentificationProtocol, IdentificationRun, InfeasibleCondition};
pub use stiction::{apply_stiction, invert_stiction, StictionModel};
pub use trajectory::{min_jerk_trajectory, MinJerk, ReferenceSeries, PEAK_TO_MEAN_SPEED};
pub use trial::{
    run_trial_grid, run_trial_protocol, HumanModel, SupportCondition, TrialCondition, TrialLog, TrialProtocol,
    TrialSpec, TRIAL_LOG_HEADER,
};

use crate::transmission::{BowdenModel, Direction};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid plant: {0}")]
    InvalidPlant(String),
    #[error("integration step {0} s outside (0, 5 ms]")]
    InvalidStep(f64),
    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),
    #[error("controller/plant mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Controller(#[from] crate::controller::ControllerError),
    #[error(transparent)]
    Transmission(#[from] crate::transmission::TransmissionError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Physical bench parameters beyond the arm itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub arm: ArmPlant,
    pub stiction: StictionModel,
    /// Cable speed below which sheath friction is static and interpolated
    /// between the two kinetic gains [m/s]
    pub sheath_creep_velocity: f64,
    /// Motor rotor and spool inertia seen at the spool [kg m^2]
    pub spool_inertia: f64,
    /// Bandwidth of the motor's inner torque loop; `None` is ideal [Hz]
    pub torque_bandwidth_hz: Option<f64>,
    /// Peak motor torque [Nm]
    pub max_motor_torque: f64,
    /// Load-cell noise during trials [N]
    pub load_cell_noise: f64,
    /// Control and logging rate [Hz]
    pub sample_rate: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            arm: ArmPlant::default(),
            stiction: StictionModel::default(),
            sheath_creep_velocity: 2e-3,
            spool_inertia: 1e-2,
            torque_bandwidth_hz: Some(15.0),
            max_motor_torque: 6.0,
            load_cell_noise: 0.2,
            sample_rate: 1000.0,
        }
    }
}

impl PlantConfig {
    /// Bench with none of the effects the inverse model ignores.
    pub fn ideal() -> Self {
        Self {
            stiction: StictionModel::none(),
            spool_inertia: 0.0,
            torque_bandwidth_hz: None,
            load_cell_noise: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.arm.validate()?;
        self.stiction.validate().map_err(SimError::InvalidPlant)?;
        if !(self.sheath_creep_velocity.is_finite() && self.sheath_creep_velocity > 0.0) {
            return Err(SimError::InvalidPlant("sheath_creep_velocity must be > 0".into()));
        }
        if !(self.spool_inertia.is_finite() && self.spool_inertia >= 0.0) {
            return Err(SimError::InvalidPlant("spool_inertia must be >= 0".into()));
        }
        if let Some(bw) = self.torque_bandwidth_hz {
            if !(bw.is_finite() && bw > 0.0) {
                return Err(SimError::InvalidPlant("torque_bandwidth_hz must be > 0".into()));
            }
        }
        if !(self.max_motor_torque > 0.0) {
            return Err(SimError::InvalidPlant("max_motor_torque must be > 0".into()));
        }
        if !(self.load_cell_noise >= 0.0) {
            return Err(SimError::InvalidPlant("load_cell_noise must be >= 0".into()));
        }
        let dt = 1.0 / self.sample_rate;
        if !(dt > 0.0 && dt <= MAX_DT) {
            return Err(SimError::InvalidStep(dt));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    /// Output/input tension gain of the sheath, including the static regime
    /// around zero cable speed.
    pub fn sheath_gain(&self, model: &BowdenModel, cable_velocity: f64) -> f64 {
        let up = model.tension_gain(Direction::Raising);
        let down = model.tension_gain(Direction::Lowering);
        let x = (cable_velocity / self.sheath_creep_velocity).clamp(-1.0, 1.0);
        0.5 * (up + down) + 0.5 * (up - down) * x
    }

    /// Cable speed for a given elevation speed; positive while raising [m/s].
    pub fn cable_velocity(&self, elevation_speed: f64) -> f64 {
        self.arm.moment_arm * elevation_speed
    }
}

/// Deterministic per-task seed derived from a base seed.
pub(crate) fn derive_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sheath_gain_matches_kinetic_outside_creep() {
        let cfg = PlantConfig::default();
        let m = BowdenModel::default();
        assert_eq!(cfg.sheath_gain(&m, 0.01), m.tension_gain(Direction::Raising));
        assert_eq!(cfg.sheath_gain(&m, -0.01), m.tension_gain(Direction::Lowering));
        let mid = cfg.sheath_gain(&m, 0.0);
        assert!(mid > m.tension_gain(Direction::Raising) && mid < m.tension_gain(Direction::Lowering));
    }

    #[test]
    fn seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(42, i)).collect();
        assert_eq!(s.len(), 1000);
        assert_eq!(derive_seed(1, 2), derive_seed(1, 2));
    }
}
