//! Mannequin identification protocol.
//!
//! The TDU runs in velocity control through trapezoidal spool-speed profiles
//! that sweep the mannequin arm up and down its range, while the mannequin
//! motor applies a constant resisting torque. Each (speed, load, repetition)
//! triple is one up/down cycle; cycles are simulated independently and then
//! concatenated into a single continuous log. The logged motor torque is
//! the torque delivered past the motor's own stiction.

use super::{derive_seed, invert_stiction, PlantConfig, SimError};
use crate::exec::Exec;
use crate::identification::SampleLog;
use crate::transmission::{BowdenModel, Direction};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentificationProtocol {
    /// Plateau spool speeds, each run in both directions [rad/s]
    pub spool_velocities: Vec<f64>,
    /// Constant mannequin loads [Nm]
    pub loads: Vec<f64>,
    pub repetitions: usize,
    /// [deg]
    pub angle_min_deg: f64,
    /// [deg]
    pub angle_max_deg: f64,
    /// Spool acceleration on the ramps [rad/s^2]
    pub spool_acceleration: f64,
    /// Pause at each end of the range [s]
    pub rest_s: f64,
    /// Load-cell noise standard deviation [N]
    pub tension_noise: f64,
}

impl Default for IdentificationProtocol {
    fn default() -> Self {
        Self {
            spool_velocities: vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            loads: vec![0.5, 1.0, 2.0, 3.0, 4.0],
            repetitions: 5,
            angle_min_deg: 20.0,
            angle_max_deg: 110.0,
            spool_acceleration: 20.0,
            rest_s: 0.25,
            tension_noise: 0.5,
        }
    }
}

impl IdentificationProtocol {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidProtocol(m.to_string()));
        if self.spool_velocities.is_empty() || self.spool_velocities.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("spool_velocities must be non-empty and positive");
        }
        if self.loads.is_empty() || self.loads.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("loads must be non-empty and positive");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be >= 1");
        }
        if !(0.0 <= self.angle_min_deg && self.angle_min_deg < self.angle_max_deg && self.angle_max_deg <= 180.0) {
            return bad("angle range must satisfy 0 <= min < max <= 180 deg");
        }
        if !(self.spool_acceleration > 0.0) {
            return bad("spool_acceleration must be > 0");
        }
        if !(self.rest_s >= 0.0 && self.tension_noise >= 0.0) {
            return bad("rest_s and tension_noise must be >= 0");
        }
        Ok(())
    }
}

/// Contiguous rows of the log belonging to one condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionBlock {
    /// Signed plateau spool speed [rad/s]
    pub spool_velocity: f64,
    pub direction: Direction,
    /// [Nm]
    pub load: f64,
    pub repetition: usize,
    /// First row
    pub start: usize,
    /// One past the last row
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfeasibleCondition {
    pub spool_velocity: f64,
    pub load: f64,
    pub repetition: usize,
    /// Peak motor torque the cycle would have needed [Nm]
    pub required_torque: f64,
}

#[derive(Debug, Clone)]
pub struct IdentificationRun {
    pub log: SampleLog,
    pub blocks: Vec<ConditionBlock>,
    pub infeasible: Vec<InfeasibleCondition>,
}

/// Spool travel of a trapezoidal (or triangular) speed profile.
#[derive(Debug, Clone, Copy)]
struct Trapezoid {
    distance: f64,
    peak: f64,
    accel: f64,
    ramp_time: f64,
    total_time: f64,
}

impl Trapezoid {
    fn new(distance: f64, speed: f64, accel: f64) -> Self {
        let peak = speed.min((accel * distance).sqrt());
        let ramp_time = peak / accel;
        let cruise = (distance - peak * ramp_time) / peak;
        Self {
            distance,
            peak,
            accel,
            ramp_time,
            total_time: 2.0 * ramp_time + cruise.max(0.0),
        }
    }

    /// (position, speed, acceleration) at `t`.
    fn sample(&self, t: f64) -> (f64, f64, f64) {
        let t = t.clamp(0.0, self.total_time);
        if t < self.ramp_time {
            (0.5 * self.accel * t * t, self.accel * t, self.accel)
        } else if t <= self.total_time - self.ramp_time {
            let ramp_dist = 0.5 * self.accel * self.ramp_time * self.ramp_time;
            (ramp_dist + self.peak * (t - self.ramp_time), self.peak, 0.0)
        } else {
            let left = self.total_time - t;
            (self.distance - 0.5 * self.accel * left * left, self.accel * left, -self.accel)
        }
    }
}

struct Cycle {
    log: SampleLog,
    up: (usize, usize),
    down: (usize, usize),
    peak_torque: f64,
}

struct CycleSpec {
    speed: f64,
    load: f64,
    repetition: usize,
    seed: u64,
}

fn simulate_cycle(
    model: &BowdenModel,
    plant: &PlantConfig,
    cfg: &IdentificationProtocol,
    spec: &CycleSpec,
) -> Result<Cycle, SimError> {
    let arm = &plant.arm;
    let fs = plant.sample_rate;
    let dt = 1.0 / fs;
    let lo = cfg.angle_min_deg.to_radians();
    let hi = cfg.angle_max_deg.to_radians();
    // spool radians per arm radian
    let ratio = arm.moment_arm / model.pulley_radius;
    let profile = Trapezoid::new((hi - lo) * ratio, spec.speed, cfg.spool_acceleration);
    let sweep_n = (profile.total_time * fs).ceil() as usize;
    let rest_n = (cfg.rest_s * fs).round() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, cfg.tension_noise.max(f64::MIN_POSITIVE))
        .map_err(|e| SimError::InvalidProtocol(e.to_string()))?;
    let mut log = SampleLog::with_capacity(fs, 2 * (sweep_n + rest_n));
    let mut peak_torque: f64 = 0.0;

    let mut emit = |log: &mut SampleLog, theta: f64, spool_speed: f64, spool_acc: f64| {
        let theta_dot = spool_speed / ratio;
        let theta_ddot = spool_acc / ratio;
        let load_torque = spec.load + arm.gravity_torque(theta) + arm.inertia * theta_ddot + arm.viscous_damping * theta_dot;
        let t_out = (load_torque / arm.moment_arm).max(0.0);
        let gain = plant.sheath_gain(model, plant.cable_velocity(theta_dot));
        let t_in = t_out / gain;
        let applied = t_in * model.pulley_radius + plant.spool_inertia * spool_acc;
        let motor = invert_stiction(applied, spool_speed, &plant.stiction);
        peak_torque = peak_torque.max(motor.abs());
        let measured = if cfg.tension_noise > 0.0 {
            t_out + noise.sample(&mut rng)
        } else {
            t_out
        };
        let t = log.len() as f64 * dt;
        log.push(t, spool_speed, spool_acc, applied, measured, theta);
    };

    for _ in 0..rest_n {
        emit(&mut log, lo, 0.0, 0.0);
    }
    let up_start = log.len();
    for k in 0..sweep_n {
        let (pos, speed, acc) = profile.sample(k as f64 * dt);
        emit(&mut log, lo + pos / ratio, speed, acc);
    }
    let up = (up_start, log.len());
    for _ in 0..rest_n {
        emit(&mut log, hi, 0.0, 0.0);
    }
    let down_start = log.len();
    for k in 0..sweep_n {
        let (pos, speed, acc) = profile.sample(k as f64 * dt);
        emit(&mut log, hi - pos / ratio, -speed, -acc);
    }
    let down = (down_start, log.len());
    Ok(Cycle {
        log,
        up,
        down,
        peak_torque,
    })
}

/// Runs the full speed x load x repetition grid.
///
/// Output is bit-identical for a given seed whatever the execution strategy.
pub fn run_identification_protocol(
    model: &BowdenModel,
    plant: &PlantConfig,
    cfg: &IdentificationProtocol,
    seed: u64,
    exec: Exec,
) -> Result<IdentificationRun, SimError> {
    model.validate()?;
    plant.validate()?;
    cfg.validate()?;
    let mut specs = Vec::new();
    for &load in &cfg.loads {
        for &speed in &cfg.spool_velocities {
            for repetition in 0..cfg.repetitions {
                let seed = derive_seed(seed, specs.len() as u64);
                specs.push(CycleSpec {
                    speed,
                    load,
                    repetition,
                    seed,
                });
            }
        }
    }
    let cycles = exec.map(&specs, |spec| simulate_cycle(model, plant, cfg, spec));

    let total: usize = cycles.iter().map(|c| c.as_ref().map_or(0, |c| c.log.len())).sum();
    let mut log = SampleLog::with_capacity(plant.sample_rate, total);
    let mut blocks = Vec::new();
    let mut infeasible = Vec::new();
    for (spec, cycle) in specs.iter().zip(cycles) {
        let cycle = cycle?;
        if cycle.peak_torque > plant.max_motor_torque {
            infeasible.push(InfeasibleCondition {
                spool_velocity: spec.speed,
                load: spec.load,
                repetition: spec.repetition,
                required_torque: cycle.peak_torque,
            });
            continue;
        }
        let offset = log.len();
        for (range, direction) in [(cycle.up, Direction::Raising), (cycle.down, Direction::Lowering)] {
            blocks.push(ConditionBlock {
                spool_velocity: direction.sign() * spec.speed,
                direction,
                load: spec.load,
                repetition: spec.repetition,
                start: offset + range.0,
                end: offset + range.1,
            });
        }
        let c = cycle.log;
        for i in 0..c.len() {
            let t = log.len() as f64 / plant.sample_rate;
            log.push(t, c.tdu_speed[i], c.tdu_acceleration[i], c.tdu_torque[i], c.load_cell_tension[i], c.elevation_angle[i]);
        }
    }
    Ok(IdentificationRun {
        log,
        blocks,
        infeasible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_covers_distance() {
        for (d, v) in [(5.0, 6.0), (5.0, 0.5), (0.1, 6.0)] {
            let p = Trapezoid::new(d, v, 20.0);
            let (pos, speed, _) = p.sample(p.total_time);
            assert!((pos - d).abs() < 1e-9);
            assert!(speed.abs() < 1e-9);
            assert!(p.peak <= v + 1e-12);
        }
    }

    #[test]
    fn small_grid_blocks_and_determinism() {
        let cfg = IdentificationProtocol {
            spool_velocities: vec![2.0, 6.0],
            loads: vec![1.0],
            repetitions: 2,
            ..Default::default()
        };
        let model = BowdenModel::default();
        let plant = PlantConfig::default();
        let a = run_identification_protocol(&model, &plant, &cfg, 9, Exec::Parallel).unwrap();
        let b = run_identification_protocol(&model, &plant, &cfg, 9, Exec::Sequential).unwrap();
        assert_eq!(a.blocks.len(), 2 * 2 * 2);
        assert!(a.infeasible.is_empty());
        assert_eq!(a.log, b.log);
        a.log.validate().unwrap();
        for block in &a.blocks {
            let speeds = &a.log.tdu_speed[block.start..block.end];
            let peak = speeds.iter().fold(0.0f64, |m, v| if v.abs() > m.abs() { *v } else { m });
            assert_eq!(peak, block.spool_velocity);
        }
        let c = run_identification_protocol(&model, &plant, &cfg, 10, Exec::Parallel).unwrap();
        assert_ne!(a.log.load_cell_tension, c.log.load_cell_tension);
    }

    #[test]
    fn infeasible_loads_are_reported() {
        let cfg = IdentificationProtocol {
            spool_velocities: vec![3.0],
            loads: vec![1.0, 40.0],
            repetitions: 1,
            ..Default::default()
        };
        let run = run_identification_protocol(&BowdenModel::default(), &PlantConfig::default(), &cfg, 1, Exec::Sequential).unwrap();
        assert_eq!(run.infeasible.len(), 1);
        assert_eq!(run.infeasible[0].load, 40.0);
        assert_eq!(run.blocks.len(), 2);
    }
}
