//! Static friction of the TDU motor and spool.
//!
//! Above the deadband, a Stribeck excess `F(v) = F_s exp(-|v| / v_s)` opposes
//! the motion and fades with speed (the Coulomb part of the losses lives in
//! the sheath model). Inside the deadband the friction becomes static: it
//! absorbs the commanded torque up to `F(v)`, blended linearly into the
//! kinetic value so the result is continuous in velocity.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StictionModel {
    /// Static breakaway torque [Nm]
    pub breakaway_torque: f64,
    /// Half-width of the static regime in spool speed [rad/s]
    pub velocity_deadband: f64,
    /// Decay speed of the Stribeck excess [rad/s]
    pub stribeck_decay: f64,
}

impl Default for StictionModel {
    fn default() -> Self {
        Self {
            breakaway_torque: 0.12,
            velocity_deadband: 0.05,
            stribeck_decay: 0.8,
        }
    }
}

impl StictionModel {
    /// No stiction at all.
    pub fn none() -> Self {
        Self {
            breakaway_torque: 0.0,
            velocity_deadband: 1e-3,
            stribeck_decay: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.breakaway_torque.is_finite() && self.breakaway_torque >= 0.0) {
            return Err("breakaway_torque must be >= 0".into());
        }
        if !(self.velocity_deadband.is_finite() && self.velocity_deadband > 0.0) {
            return Err("velocity_deadband must be > 0".into());
        }
        if !(self.stribeck_decay.is_finite() && self.stribeck_decay > 0.0) {
            return Err("stribeck_decay must be > 0".into());
        }
        Ok(())
    }

    fn excess(&self, velocity: f64) -> f64 {
        self.breakaway_torque * (-velocity.abs() / self.stribeck_decay).exp()
    }

    /// Friction torque subtracted from the command at `velocity`.
    pub fn friction(&self, commanded_torque: f64, velocity: f64) -> f64 {
        let f = self.excess(velocity);
        let kinetic = velocity.signum() * f;
        if velocity == 0.0 {
            return commanded_torque.clamp(-f, f);
        }
        let a = velocity.abs() / self.velocity_deadband;
        if a >= 1.0 {
            kinetic
        } else {
            (1.0 - a) * commanded_torque.clamp(-f, f) + a * kinetic
        }
    }
}

/// Torque left to drive the cable after static and Stribeck friction.
pub fn apply_stiction(commanded_torque: f64, velocity: f64, model: &StictionModel) -> f64 {
    commanded_torque - model.friction(commanded_torque, velocity)
}

/// Smallest motor torque whose net output is `net_torque` at `velocity`.
///
/// The net torque is non-decreasing in the command, so bisection applies.
pub fn invert_stiction(net_torque: f64, velocity: f64, model: &StictionModel) -> f64 {
    let span = 2.0 * model.breakaway_torque + 1.0;
    let (mut lo, mut hi) = (net_torque - span, net_torque + span);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if apply_stiction(mid, velocity, model) < net_torque {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vanishes_at_speed() {
        let m = StictionModel::default();
        let v = 40.0 * m.stribeck_decay;
        for cmd in [-2.0, 0.3, 1.5] {
            assert!((apply_stiction(cmd, v, &m) - cmd).abs() < 1e-6);
            assert!((apply_stiction(cmd, -v, &m) - cmd).abs() < 1e-6);
        }
    }

    #[test]
    fn holds_below_breakaway_at_rest() {
        let m = StictionModel::default();
        for cmd in [-0.1, 0.0, 0.05, 0.1199] {
            assert_eq!(apply_stiction(cmd, 0.0, &m), 0.0);
        }
        assert!((apply_stiction(0.5, 0.0, &m) - (0.5 - m.breakaway_torque)).abs() < 1e-15);
    }

    #[test]
    fn reversal_sweep_shows_localized_spike() {
        // motor holding 0.5 Nm while the spool reverses from paying in to paying out
        let m = StictionModel::default();
        let net: Vec<f64> = (0..=400)
            .map(|i| {
                let v = 2.0 - 4.0 * i as f64 / 400.0;
                apply_stiction(0.5, v, &m)
            })
            .collect();
        let (imax, vmax) = net.iter().enumerate().fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        // spike sits just past the reversal (index 200) and decays on both sides
        assert!(vmax > 0.5 + 0.9 * m.breakaway_torque, "{vmax}");
        assert!((195..=215).contains(&imax), "{imax}");
        assert!((net[0] - 0.5).abs() < 0.1 * m.breakaway_torque);
        assert!((net[400] - 0.5).abs() < 0.1 * m.breakaway_torque);
    }

    #[test]
    fn inverse_round_trip() {
        let m = StictionModel::default();
        for v in [-3.0, -0.04, -0.001, 0.0, 0.02, 0.05, 1.0] {
            for net in [0.05, 0.4, 2.0] {
                let cmd = invert_stiction(net, v, &m);
                assert!((apply_stiction(cmd, v, &m) - net).abs() < 1e-9, "{v} {net}");
            }
        }
    }

    proptest! {
        #[test]
        fn continuous_in_velocity(cmd in -3.0f64..3.0, v in -2.0f64..2.0) {
            let m = StictionModel::default();
            let h = 1e-9;
            let d = apply_stiction(cmd, v + h, &m) - apply_stiction(cmd, v, &m);
            // Lipschitz bound: slope is at most F_s / deadband + 2 F_s / v_s
            let bound = h * (2.0 * m.breakaway_torque / m.velocity_deadband + m.breakaway_torque / m.stribeck_decay) + 1e-15;
            prop_assert!(d.abs() <= bound, "jump {d}");
        }

        #[test]
        fn monotone_in_command(a in -3.0f64..3.0, b in -3.0f64..3.0, v in -2.0f64..2.0) {
            let m = StictionModel::default();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(apply_stiction(lo, v, &m) <= apply_stiction(hi, v, &m) + 1e-15);
        }
    }
}
