//! Planar shoulder model: a compound pendulum about the glenohumeral joint,
//! lifted by the cable and by the user's own torque.

use super::SimError;
use crate::controller::GRAVITY;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Largest integration sub-step [s].
const MAX_SUBSTEP: f64 = 1e-4;
/// Largest accepted control period [s].
pub const MAX_DT: f64 = 5e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmPlant {
    /// Moment of inertia about the shoulder [kg m^2]
    pub inertia: f64,
    /// [kg]
    pub arm_mass: f64,
    /// [m]
    pub arm_com_length: f64,
    /// Held weight [kg]
    pub load_mass: f64,
    /// [m]
    pub load_lever: f64,
    /// [Nm s/rad]
    pub viscous_damping: f64,
    /// Cable lever arm about the shoulder [m]
    pub moment_arm: f64,
    /// Elevation angle [rad]
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// [rad/s]
    #[serde(default)]
    pub theta_dot: f64,
}

fn default_theta() -> f64 {
    20f64.to_radians()
}

impl Default for ArmPlant {
    fn default() -> Self {
        Self {
            inertia: 0.08,
            arm_mass: 2.1,
            arm_com_length: 0.13,
            load_mass: 0.5,
            load_lever: 0.30,
            viscous_damping: 0.05,
            moment_arm: 0.11,
            theta: default_theta(),
            theta_dot: 0.0,
        }
    }
}

impl ArmPlant {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |f: &str| Err(SimError::InvalidPlant(f.to_string()));
        if !(self.inertia.is_finite() && self.inertia > 0.0) {
            return bad("inertia must be > 0");
        }
        for (name, v) in [
            ("arm_mass", self.arm_mass),
            ("arm_com_length", self.arm_com_length),
            ("load_mass", self.load_mass),
            ("load_lever", self.load_lever),
            ("viscous_damping", self.viscous_damping),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::InvalidPlant(format!("{name} must be >= 0")));
            }
        }
        if !(self.moment_arm.is_finite() && self.moment_arm > 0.0) {
            return bad("moment_arm must be > 0");
        }
        if !(0.0..=PI).contains(&self.theta) {
            return bad("theta must lie in [0, pi]");
        }
        Ok(())
    }

    /// `g (m_a l_com + m_l l_l)` [Nm]
    pub fn gravity_moment(&self) -> f64 {
        GRAVITY * (self.arm_mass * self.arm_com_length + self.load_mass * self.load_lever)
    }

    pub fn gravity_torque(&self, theta: f64) -> f64 {
        self.gravity_moment() * theta.sin()
    }

    /// Angular acceleration for the given state and external torques.
    pub fn acceleration(&self, theta: f64, theta_dot: f64, cable_tension: f64, external_torque: f64) -> f64 {
        (cable_tension * self.moment_arm + external_torque - self.gravity_torque(theta) - self.viscous_damping * theta_dot)
            / self.inertia
    }

    /// Kinetic plus potential energy, zero hanging at rest [J].
    pub fn energy(&self) -> f64 {
        0.5 * self.inertia * self.theta_dot * self.theta_dot + self.gravity_moment() * (1.0 - self.theta.cos())
    }

    /// Advances by `dt` with only the cable acting.
    pub fn step_dynamics(&self, cable_tension: f64, dt: f64) -> Result<ArmPlant, SimError> {
        self.step_with_torque(cable_tension, 0.0, dt)
    }

    /// Semi-implicit Euler over sub-steps of at most 0.1 ms, torques held
    /// constant across the control period. The joint stops at 0 and pi are
    /// inelastic.
    pub fn step_with_torque(&self, cable_tension: f64, external_torque: f64, dt: f64) -> Result<ArmPlant, SimError> {
        if !(dt > 0.0 && dt <= MAX_DT) {
            return Err(SimError::InvalidStep(dt));
        }
        let substeps = (dt / MAX_SUBSTEP).ceil() as usize;
        let h = dt / substeps as f64;
        let mut next = *self;
        for _ in 0..substeps {
            let acc = next.acceleration(next.theta, next.theta_dot, cable_tension, external_torque);
            next.theta_dot += h * acc;
            next.theta += h * next.theta_dot;
            next.clamp_to_stops();
        }
        Ok(next)
    }
    /// Like [`ArmPlant::step_with_torque`], but the cable is driven through
    /// an inertia reflected to the arm, `reflected_inertia` [kg m^2]. The
    /// cable delivers `free_tension` minus what it takes to accelerate that
    /// inertia, and goes slack rather than push. Returns the new state and the
    /// mean cable tension over the step.
    pub fn step_coupled(
        &self,
        free_tension: f64,
        reflected_inertia: f64,
        external_torque: f64,
        dt: f64,
    ) -> Result<(ArmPlant, f64), SimError> {
        if !(dt > 0.0 && dt <= MAX_DT) {
            return Err(SimError::InvalidStep(dt));
        }
        let substeps = (dt / MAX_SUBSTEP).ceil() as usize;
        let h = dt / substeps as f64;
        let mut next = *self;
        let mut tension_sum = 0.0;
        for _ in 0..substeps {
            let free = self.acceleration(next.theta, next.theta_dot, free_tension, external_torque);
            let mut acc = free * self.inertia / (self.inertia + reflected_inertia);
            let mut tension = free_tension - reflected_inertia * acc / self.moment_arm;
            if tension < 0.0 {
                tension = 0.0;
                acc = self.acceleration(next.theta, next.theta_dot, 0.0, external_torque);
            }
            tension_sum += tension;
            next.theta_dot += h * acc;
            next.theta += h * next.theta_dot;
            next.clamp_to_stops();
        }
        Ok((next, tension_sum / substeps as f64))
    }

    fn clamp_to_stops(&mut self) {
        if self.theta < 0.0 {
            self.theta = 0.0;
            self.theta_dot = self.theta_dot.max(0.0);
        } else if self.theta > PI {
            self.theta = PI;
            self.theta_dot = self.theta_dot.min(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn undamped() -> ArmPlant {
        ArmPlant {
            viscous_damping: 0.0,
            ..ArmPlant::default()
        }
    }

    /// Classic RK4 on the same ODE with a fine step; the stops are never hit
    /// in the scenarios it is used for.
    fn rk4(plant: &ArmPlant, tension: impl Fn(f64) -> f64, t_end: f64, h: f64) -> Vec<(f64, f64)> {
        let mut state = (plant.theta, plant.theta_dot);
        let mut t = 0.0;
        let mut out = vec![state];
        let f = |t: f64, s: (f64, f64)| (s.1, plant.acceleration(s.0, s.1, tension(t), 0.0));
        while t < t_end - 1e-12 {
            let k1 = f(t, state);
            let k2 = f(t + h / 2.0, (state.0 + h / 2.0 * k1.0, state.1 + h / 2.0 * k1.1));
            let k3 = f(t + h / 2.0, (state.0 + h / 2.0 * k2.0, state.1 + h / 2.0 * k2.1));
            let k4 = f(t + h, (state.0 + h * k3.0, state.1 + h * k3.1));
            state.0 += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            state.1 += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
            t += h;
            out.push(state);
        }
        out
    }

    #[test]
    fn rejects_bad_step() {
        let p = ArmPlant::default();
        assert!(p.step_dynamics(0.0, 0.0).is_err());
        assert!(p.step_dynamics(0.0, 0.006).is_err());
        assert!(p.step_dynamics(0.0, 0.005).is_ok());
    }

    #[test]
    fn equilibrium_hold() {
        let mut p = ArmPlant {
            theta: 1.0,
            ..ArmPlant::default()
        };
        let tension = p.gravity_torque(1.0) / p.moment_arm;
        for _ in 0..1000 {
            p = p.step_dynamics(tension, 1e-3).unwrap();
        }
        assert!((p.theta - 1.0).abs() < 1e-6);
    }

    // The hanging position sits on the lower joint stop, so free swings are
    // set up around an equilibrium held by a constant cable tension, whose
    // potential is -T r theta.
    fn held_at(theta_eq: f64) -> (ArmPlant, f64) {
        let p = undamped();
        (p, p.gravity_torque(theta_eq) / p.moment_arm)
    }

    #[test]
    fn energy_is_conserved() {
        let (base, tension) = held_at(0.6);
        let mut p = ArmPlant { theta: 0.3, ..base };
        let energy = |p: &ArmPlant| p.energy() - tension * p.moment_arm * p.theta;
        let e0 = energy(&p);
        let swing = e0 - energy(&ArmPlant { theta: 0.6, ..base });
        let mut worst: f64 = 0.0;
        let mut lowest = p.theta;
        for _ in 0..10_000 {
            p = p.step_dynamics(tension, 1e-3).unwrap();
            lowest = lowest.min(p.theta);
            worst = worst.max((energy(&p) - e0).abs());
        }
        assert!(lowest > 0.1, "hit the stop");
        // relative to the energy of the swing about the equilibrium
        assert!(worst / swing < 1e-3, "relative energy drift {}", worst / swing);
    }

    #[test]
    fn unforced_energy_never_grows() {
        let mut p = ArmPlant { theta: 1.2, ..undamped() };
        let mut last = p.energy();
        for _ in 0..5000 {
            p = p.step_dynamics(0.0, 1e-3).unwrap();
            assert!(p.theta >= 0.0);
            assert!(p.energy() <= last * (1.0 + 1e-3));
            last = last.max(p.energy());
        }
    }

    #[test]
    fn small_angle_period() {
        let theta_eq = 0.3;
        let (base, tension) = held_at(theta_eq);
        let mut p = ArmPlant {
            theta: theta_eq + 0.01,
            ..base
        };
        let dt = 1e-3;
        // linearised about the held equilibrium; reduces to 2 pi sqrt(I / G) at 0
        let expected = 2.0 * PI * (p.inertia / (p.gravity_moment() * theta_eq.cos())).sqrt();
        // time between successive downward zero crossings of theta_dot
        let mut crossings = Vec::new();
        let mut prev = p.theta_dot;
        for k in 1..10_000 {
            p = p.step_dynamics(tension, dt).unwrap();
            if prev > 0.0 && p.theta_dot <= 0.0 {
                crossings.push(k as f64 * dt);
            }
            prev = p.theta_dot;
        }
        let periods: Vec<f64> = crossings.windows(2).map(|w| w[1] - w[0]).collect();
        let mean = periods.iter().sum::<f64>() / periods.len() as f64;
        assert!((mean - expected).abs() < 0.01 * expected, "{mean} vs {expected}");
    }

    #[test]
    fn tension_ramp_matches_dense_oracle() {
        let p = ArmPlant {
            theta: 0.4,
            viscous_damping: 1.0,
            ..ArmPlant::default()
        };
        let base = p.gravity_torque(0.4) / p.moment_arm;
        let ramp = |t: f64| base + 20.0 * t;
        let oracle = rk4(&p, ramp, 2.0, 1e-5);
        let mut sim = p;
        let mut last = sim.theta;
        let mut hit_stop = false;
        for k in 0..2000 {
            sim = sim.step_dynamics(ramp(k as f64 * 1e-3), 1e-3).unwrap();
            assert!(sim.theta >= last - 1e-12, "non-monotone at step {k}");
            last = sim.theta;
            if sim.theta >= PI {
                hit_stop = true;
            }
            if !hit_stop {
                let reference = oracle[(k + 1) * 100].0;
                assert!((sim.theta - reference).abs() < 2e-3, "step {k}: {} vs {}", sim.theta, reference);
            }
        }
    }

    #[test]
    fn coupled_step_adds_inertia() {
        let p = ArmPlant { theta: 0.5, ..undamped() };
        let tension = 2.0 * p.gravity_torque(0.5) / p.moment_arm;
        let plain = p.step_dynamics(tension, 1e-3).unwrap();
        let (same, t) = p.step_coupled(tension, 0.0, 0.0, 1e-3).unwrap();
        assert_eq!(plain, same);
        assert_eq!(t, tension);
        // doubling the inertia halves the initial acceleration
        let (heavy, t) = p.step_coupled(tension, p.inertia, 0.0, 1e-3).unwrap();
        assert!((heavy.theta_dot / plain.theta_dot - 0.5).abs() < 1e-3);
        assert!(t < tension && t > 0.0);
        // an arm falling with the motor off drags the spool along
        let (_, t) = p.step_coupled(0.0, 1.0, 0.0, 1e-3).unwrap();
        assert!(t > 0.0);
        // lifted faster than the spool follows, the cable goes slack
        let (free, t) = p.step_coupled(0.0, 1.0, 20.0, 1e-3).unwrap();
        assert_eq!(t, 0.0);
        assert_eq!(free, p.step_with_torque(0.0, 20.0, 1e-3).unwrap());
    }

    #[test]
    fn joint_stops_hold() {
        let mut p = ArmPlant {
            theta: 3.0,
            ..ArmPlant::default()
        };
        for _ in 0..2000 {
            p = p.step_dynamics(500.0, 1e-3).unwrap();
            assert!((0.0..=PI).contains(&p.theta));
        }
        assert_eq!(p.theta, PI);
    }
}
