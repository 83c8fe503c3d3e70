//! Forward model of the tendon driver unit (TDU) and the Bowden-sheath
//! transmission.
//!
//! Motor torque is turned into input tension at the pulley, and the sheath
//! removes (raising) or adds (lowering) a Coulomb friction force that is
//! proportional to the normal reaction of the cable on the bent sheath:
//!
//! ```text
//! T_in  = tau / R_p
//! N     = (T_in + T_out) sin(phi / 2)
//! f     = sgn(V) mu N
//! T_out = T_in - f
//! ```
//!
//! Solving the last three for `T_out` gives a direction-dependent linear gain
//! `T_out = k(sgn V) T_in`. Inertia of the motor and pulley is neglected.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransmissionError {
    #[error("invalid Bowden model: {field} {reason}")]
    InvalidModel {
        field: &'static str,
        reason: String,
    },
    /// Coulomb friction is undefined for a cable at rest; the caller has to
    /// resolve the static regime with an explicit stiction model.
    #[error("cable velocity is exactly zero: stiction regime, friction direction undefined")]
    Stiction,
    #[error("input tension must be non-negative and finite, got {0}")]
    InvalidTension(f64),
}

/// Direction of arm (and cable) travel.
///
/// Raising pulls the cable towards the TDU, so friction opposes the motor;
/// lowering pays cable out and friction helps the motor hold the arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Raising,
    Lowering,
}

impl Direction {
    /// Direction implied by a signed velocity, `None` at exactly zero.
    pub fn from_velocity(v: f64) -> Option<Self> {
        if v > 0.0 {
            Some(Direction::Raising)
        } else if v < 0.0 {
            Some(Direction::Lowering)
        } else {
            None
        }
    }

    /// `+1` for raising, `-1` for lowering.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Raising => 1.0,
            Direction::Lowering => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Raising => "raising",
            Direction::Lowering => "lowering",
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Physical parameters of the TDU pulley and the Bowden sheath.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BowdenModel {
    /// Coulomb friction coefficient between cable and sheath [-]
    pub mu: f64,
    /// Total wrap angle of the sheath [rad]
    #[serde(rename = "phi_rad")]
    pub phi: f64,
    /// TDU pulley radius [m]
    #[serde(rename = "pulley_radius_m")]
    pub pulley_radius: f64,
}

impl Default for BowdenModel {
    fn default() -> Self {
        Self {
            mu: 0.25,
            phi: std::f64::consts::FRAC_PI_2,
            // 70 mm pulley
            pulley_radius: 0.035,
        }
    }
}

impl BowdenModel {
    pub fn new(mu: f64, phi: f64, pulley_radius: f64) -> Result<Self, TransmissionError> {
        let model = Self {
            mu,
            phi,
            pulley_radius,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), TransmissionError> {
        let invalid = |field, reason: &str| TransmissionError::InvalidModel {
            field,
            reason: reason.to_string(),
        };
        if !self.mu.is_finite() || self.mu < 0.0 {
            return Err(invalid("mu", "must be finite and >= 0"));
        }
        if !self.phi.is_finite() || !(0.0..=TAU).contains(&self.phi) {
            return Err(invalid("phi_rad", "must lie in [0, 2*pi]"));
        }
        if !self.pulley_radius.is_finite() || self.pulley_radius <= 0.0 {
            return Err(invalid("pulley_radius_m", "must be > 0"));
        }
        if self.friction_number() >= 1.0 {
            return Err(invalid("mu", "mu * sin(phi / 2) must be < 1"));
        }
        Ok(())
    }

    /// `mu sin(phi / 2)`, the only combination of `mu` and `phi` the
    /// transmission depends on.
    pub fn friction_number(&self) -> f64 {
        self.mu * (0.5 * self.phi).sin()
    }

    /// Output/input tension ratio for a given direction of cable travel.
    pub fn tension_gain(&self, direction: Direction) -> f64 {
        let s = direction.sign();
        let q = self.friction_number();
        1.0 - s * 2.0 * q / (1.0 + s * q)
    }

    /// Slope of the motor-torque-vs-output-tension line that inverts the
    /// transmission exactly, `R_p / k`.
    pub fn inverse_slope(&self, direction: Direction) -> f64 {
        self.pulley_radius / self.tension_gain(direction)
    }
}

/// Full force state of the cable inside the sheath.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CableState {
    /// Tension at the TDU side [N]
    pub input_tension: f64,
    /// Tension at the limb anchor [N]
    pub output_tension: f64,
    /// Signed cable velocity relative to the sheath, positive when raising [m/s]
    pub cable_velocity: f64,
    /// Friction force on the cable, positive when opposing the motor [N]
    pub friction_force: f64,
    /// Normal reaction of the sheath on the cable [N]
    pub normal_force: f64,
}

/// Input tension produced by the TDU for a motor torque.
pub fn input_tension(motor_torque: f64, model: &BowdenModel) -> f64 {
    motor_torque / model.pulley_radius
}

fn check_inputs(input_tension: f64, cable_velocity: f64) -> Result<Direction, TransmissionError> {
    if !input_tension.is_finite() || input_tension < 0.0 {
        return Err(TransmissionError::InvalidTension(input_tension));
    }
    Direction::from_velocity(cable_velocity).ok_or(TransmissionError::Stiction)
}

/// Tension delivered to the limb for a given input tension and direction of
/// cable travel.
pub fn output_tension(
    input_tension: f64,
    cable_velocity: f64,
    model: &BowdenModel,
) -> Result<f64, TransmissionError> {
    let direction = check_inputs(input_tension, cable_velocity)?;
    Ok(input_tension * model.tension_gain(direction))
}

/// Friction, normal force and output tension for one operating point.
pub fn friction_components(
    input_tension: f64,
    cable_velocity: f64,
    model: &BowdenModel,
) -> Result<CableState, TransmissionError> {
    let direction = check_inputs(input_tension, cable_velocity)?;
    let s = direction.sign();
    let q = model.friction_number();
    let friction_force = s * 2.0 * input_tension * q / (1.0 + s * q);
    let output_tension = input_tension - friction_force;
    let normal_force = (input_tension + output_tension) * (0.5 * model.phi).sin();
    Ok(CableState {
        input_tension,
        output_tension,
        cable_velocity,
        friction_force,
        normal_force,
    })
}
