//! Sensorless tension controller.
//!
//! The stack has three stages:
//!
//! 1. gravity assistance maps the humeral elevation angle to a desired
//!    output tension,
//! 2. the identified inverse transmission model turns that tension into a
//!    motor torque, with one line for raising and one for lowering,
//! 3. a logistic blend in elevation speed links the two lines so the
//!    command stays smooth across direction changes.

use crate::transmission::{BowdenModel, Direction};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Standard gravity [m/s^2]
pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("sigmoid anchors must satisfy v001 < v099 (got {v001} and {v099})")]
    InvalidAnchors { v001: f64, v099: f64 },
    #[error("invalid regression: {0}")]
    InvalidRegression(String),
    #[error("elevation angle {0} rad outside [0, pi]")]
    AngleOutOfRange(f64),
    #[error("invalid gravity assistance parameter {field}: {reason}")]
    InvalidAssist { field: &'static str, reason: String },
    #[error("velocity estimation needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("invalid estimator parameter: {0}")]
    InvalidEstimator(String),
}

/// Identified inverse transmission: motor torque as a linear function of the
/// desired output tension, one line per direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionalRegression {
    /// [Nm/N]
    #[serde(rename = "m_raise")]
    pub slope_raising: f64,
    /// [Nm]
    #[serde(rename = "b_raise")]
    pub intercept_raising: f64,
    /// [Nm/N]
    #[serde(rename = "m_lower")]
    pub slope_lowering: f64,
    /// [Nm]
    #[serde(rename = "b_lower")]
    pub intercept_lowering: f64,
    #[serde(rename = "r2_raise", default = "one")]
    pub r2_raising: f64,
    #[serde(rename = "r2_lower", default = "one")]
    pub r2_lowering: f64,
}

/// Relative amount by which an identified raising slope may fall below the
/// lowering slope; a frictionless sheath gives two equal lines plus noise.
pub const SLOPE_ORDER_TOLERANCE: f64 = 0.02;

fn one() -> f64 {
    1.0
}

impl DirectionalRegression {
    pub fn new(
        slope_raising: f64,
        intercept_raising: f64,
        slope_lowering: f64,
        intercept_lowering: f64,
    ) -> Result<Self, ControllerError> {
        let reg = Self {
            slope_raising,
            intercept_raising,
            slope_lowering,
            intercept_lowering,
            r2_raising: 1.0,
            r2_lowering: 1.0,
        };
        reg.validate()?;
        Ok(reg)
    }

    /// Exact inverse of a known transmission: zero intercepts and slopes
    /// `R_p / k` per direction.
    pub fn from_model(model: &BowdenModel) -> Self {
        Self {
            slope_raising: model.inverse_slope(Direction::Raising),
            intercept_raising: 0.0,
            slope_lowering: model.inverse_slope(Direction::Lowering),
            intercept_lowering: 0.0,
            r2_raising: 1.0,
            r2_lowering: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        let all = [
            self.slope_raising,
            self.intercept_raising,
            self.slope_lowering,
            self.intercept_lowering,
            self.r2_raising,
            self.r2_lowering,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(ControllerError::InvalidRegression("non-finite coefficient".into()));
        }
        if !(self.slope_lowering > 0.0 && self.slope_raising >= (1.0 - SLOPE_ORDER_TOLERANCE) * self.slope_lowering) {
            return Err(ControllerError::InvalidRegression(format!(
                "expected m_raise >= m_lower > 0, got m_raise = {}, m_lower = {}",
                self.slope_raising, self.slope_lowering
            )));
        }
        for (name, r2) in [("r2_raise", self.r2_raising), ("r2_lower", self.r2_lowering)] {
            if !(0.0..=1.0).contains(&r2) {
                return Err(ControllerError::InvalidRegression(format!("{name} = {r2} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Motor torque on one line.
    pub fn line(&self, direction: Direction, tension: f64) -> f64 {
        match direction {
            Direction::Raising => self.intercept_raising + self.slope_raising * tension,
            Direction::Lowering => self.intercept_lowering + self.slope_lowering * tension,
        }
    }
}

/// Logistic link between the two directional lines, parameterised by the
/// elevation speeds at which the raising weight reaches 1 % and 99 %.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidBlend {
    /// Speed of equal weighting [rad/s]
    pub midpoint: f64,
    /// Logistic steepness [s/rad], positive so raising dominates at positive speed
    pub steepness: f64,
    /// Speed with 1 % raising weight [rad/s]
    pub v001: f64,
    /// Speed with 99 % raising weight [rad/s]
    pub v099: f64,
}

impl Default for SigmoidBlend {
    fn default() -> Self {
        sigmoid_params(-1.0, 1.0).expect("default anchors are ordered")
    }
}

/// Builds the blend from its 1 % / 99 % anchor speeds.
///
/// The steepness magnitude is `ln(99) / (v099 - M)`; its sign is fixed so the
/// raising weight tends to one at large positive elevation speed.
pub fn sigmoid_params(v001: f64, v099: f64) -> Result<SigmoidBlend, ControllerError> {
    if !(v001.is_finite() && v099.is_finite() && v001 < v099) {
        return Err(ControllerError::InvalidAnchors { v001, v099 });
    }
    let midpoint = 0.5 * (v001 + v099);
    let steepness = 99f64.ln() / (v099 - midpoint);
    Ok(SigmoidBlend {
        midpoint,
        steepness,
        v001,
        v099,
    })
}

impl SigmoidBlend {
    /// Weight of the raising line at the given elevation speed, in `[0, 1]`.
    pub fn raising_weight(&self, elevation_speed: f64) -> f64 {
        let z = self.steepness * (elevation_speed - self.midpoint);
        // split on the sign of z so exp never overflows
        if z >= 0.0 {
            1.0 / (1.0 + (-z).exp())
        } else {
            let e = z.exp();
            e / (1.0 + e)
        }
    }
}

pub fn blend_torque(t_raising: f64, t_lowering: f64, elevation_speed: f64, blend: &SigmoidBlend) -> f64 {
    let w = blend.raising_weight(elevation_speed);
    let tau = t_lowering + (t_raising - t_lowering) * w;
    tau.clamp(t_raising.min(t_lowering), t_raising.max(t_lowering))
}

/// Motor torque that should produce `desired_tension` at the limb.
pub fn desired_motor_torque(
    desired_tension: f64,
    elevation_speed: f64,
    reg: &DirectionalRegression,
    blend: &SigmoidBlend,
) -> f64 {
    blend_torque(
        reg.line(Direction::Raising, desired_tension),
        reg.line(Direction::Lowering, desired_tension),
        elevation_speed,
        blend,
    )
}

/// Gravity-support block: user anthropometrics, support level and cable
/// geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GravityAssist {
    /// Fraction of the gravitational shoulder torque to support [0, 1]
    pub support_fraction: f64,
    /// [kg]
    pub arm_mass: f64,
    /// Shoulder to arm centre of mass [m]
    pub arm_com_length: f64,
    /// Held weight [kg]
    pub load_mass: f64,
    /// Shoulder to held weight [m]
    pub load_lever: f64,
    /// Cable lever arm about the glenohumeral joint [m]
    pub moment_arm: f64,
    /// Minimum cable tension [N]
    pub pretension: f64,
}

impl Default for GravityAssist {
    fn default() -> Self {
        Self {
            support_fraction: 0.5,
            arm_mass: 2.1,
            arm_com_length: 0.13,
            load_mass: 0.5,
            load_lever: 0.30,
            moment_arm: 0.11,
            pretension: 10.0,
        }
    }
}

impl GravityAssist {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let bad = |field, reason: &str| ControllerError::InvalidAssist {
            field,
            reason: reason.to_string(),
        };
        if !(0.0..=1.0).contains(&self.support_fraction) {
            return Err(bad("support_fraction", "must lie in [0, 1]"));
        }
        for (field, v) in [
            ("arm_mass", self.arm_mass),
            ("arm_com_length", self.arm_com_length),
            ("load_mass", self.load_mass),
            ("load_lever", self.load_lever),
            ("pretension", self.pretension),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(bad(field, "must be finite and >= 0"));
            }
        }
        if !self.moment_arm.is_finite() || self.moment_arm <= 0.0 {
            return Err(bad("moment_arm", "must be > 0"));
        }
        Ok(())
    }

    /// Peak gravitational shoulder torque of arm plus load (arm horizontal) [Nm].
    pub fn gravity_moment(&self) -> f64 {
        GRAVITY * (self.arm_mass * self.arm_com_length + self.load_mass * self.load_lever)
    }
}

/// Desired output tension at elevation `theta`.
pub fn gravity_tension_reference(theta: f64, assist: &GravityAssist) -> Result<f64, ControllerError> {
    if !(0.0..=PI).contains(&theta) {
        return Err(ControllerError::AngleOutOfRange(theta));
    }
    let supported = assist.support_fraction * assist.gravity_moment() * theta.sin() / assist.moment_arm;
    Ok(supported.max(assist.pretension))
}

pub fn shoulder_torque_from_tension(tension: f64, moment_arm: f64) -> f64 {
    tension * moment_arm
}

/// Causal elevation-speed estimator: backward difference followed by a
/// first-order low-pass.
#[derive(Debug, Clone)]
pub struct VelocityEstimator {
    dt: f64,
    alpha: f64,
    previous: Option<f64>,
    estimate: f64,
}

impl VelocityEstimator {
    pub const DEFAULT_CUTOFF_HZ: f64 = 5.0;

    pub fn new(dt: f64, cutoff_hz: f64) -> Result<Self, ControllerError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(ControllerError::InvalidEstimator(format!("dt = {dt} must be > 0")));
        }
        if !(cutoff_hz.is_finite() && cutoff_hz > 0.0) {
            return Err(ControllerError::InvalidEstimator(format!("cutoff = {cutoff_hz} Hz must be > 0")));
        }
        let tau = 1.0 / (2.0 * PI * cutoff_hz);
        Ok(Self {
            dt,
            alpha: dt / (tau + dt),
            previous: None,
            estimate: 0.0,
        })
    }

    /// Feeds one angle sample and returns the current speed estimate.
    pub fn update(&mut self, angle: f64) -> f64 {
        if let Some(prev) = self.previous {
            let raw = (angle - prev) / self.dt;
            self.estimate += self.alpha * (raw - self.estimate);
        }
        self.previous = Some(angle);
        self.estimate
    }

    pub fn estimate(&self) -> f64 {
        self.estimate
    }
}

/// Offline run of [`VelocityEstimator`] over a uniformly sampled series.
pub fn estimate_elevation_speed(angles: &[f64], dt: f64, cutoff_hz: f64) -> Result<Vec<f64>, ControllerError> {
    if angles.len() < 2 {
        return Err(ControllerError::TooFewSamples(angles.len()));
    }
    let mut est = VelocityEstimator::new(dt, cutoff_hz)?;
    Ok(angles.iter().map(|&a| est.update(a)).collect())
}

/// Output of one controller evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Command {
    pub desired_tension: f64,
    pub motor_torque: f64,
}

/// Immutable controller: assistance, inverse model and blend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensionController {
    pub assist: GravityAssist,
    pub regression: DirectionalRegression,
    pub blend: SigmoidBlend,
}

impl TensionController {
    pub fn new(
        assist: GravityAssist,
        regression: DirectionalRegression,
        blend: SigmoidBlend,
    ) -> Result<Self, ControllerError> {
        assist.validate()?;
        regression.validate()?;
        Ok(Self {
            assist,
            regression,
            blend,
        })
    }

    pub fn command(&self, theta: f64, elevation_speed: f64) -> Result<Command, ControllerError> {
        let desired_tension = gravity_tension_reference(theta, &self.assist)?;
        Ok(Command {
            desired_tension,
            motor_torque: desired_motor_torque(desired_tension, elevation_speed, &self.regression, &self.blend),
        })
    }
}
