//! Assisted elevation trials.
//!
//! A simulated user tracks a repeated minimum-jerk raise/lower reference
//! while the tension controller drives the TDU. The physical path from
//! commanded motor torque to cable tension includes the torque-loop lag,
//! motor stiction, spool inertia and the direction-dependent sheath gain.

use super::{apply_stiction, derive_seed, ArmPlant, MinJerk, PlantConfig, SimError};
use crate::controller::{gravity_tension_reference, TensionController, VelocityEstimator};
use crate::dsp::infer_sample_rate;
use crate::exec::Exec;
use crate::transmission::{BowdenModel, Direction};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{Read, Write};

/// Reference-tracking user.
///
/// Feedforward for the reference motion, minus the assistance the user has
/// learned to expect, plus PD feedback tuned to a second-order loop of the
/// given bandwidth. Torque noise is first-order coloured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HumanModel {
    /// Natural frequency of the tracking loop [Hz]
    pub bandwidth_hz: f64,
    pub damping_ratio: f64,
    /// Standard deviation of the torque noise [Nm]
    pub torque_noise: f64,
    /// Correlation time of the torque noise [s]
    pub noise_time_constant: f64,
}

impl Default for HumanModel {
    fn default() -> Self {
        Self {
            bandwidth_hz: 2.0,
            damping_ratio: 0.8,
            torque_noise: 0.05,
            noise_time_constant: 0.05,
        }
    }
}

impl HumanModel {
    /// Noise-free user.
    pub fn ideal() -> Self {
        Self {
            torque_noise: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.bandwidth_hz.is_finite() && self.bandwidth_hz > 0.0) {
            return Err(SimError::InvalidProtocol("human bandwidth_hz must be > 0".into()));
        }
        if !(self.damping_ratio.is_finite() && self.damping_ratio > 0.0) {
            return Err(SimError::InvalidProtocol("human damping_ratio must be > 0".into()));
        }
        if !(self.torque_noise.is_finite() && self.torque_noise >= 0.0) {
            return Err(SimError::InvalidProtocol("human torque_noise must be >= 0".into()));
        }
        if !(self.noise_time_constant.is_finite() && self.noise_time_constant > 0.0) {
            return Err(SimError::InvalidProtocol("human noise_time_constant must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportCondition {
    pub label: String,
    /// Fraction of the gravitational torque to support [0, 1]
    pub support_fraction: f64,
}

impl SupportCondition {
    pub fn new(label: &str, support_fraction: f64) -> Self {
        Self {
            label: label.to_string(),
            support_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialProtocol {
    /// [deg/s]
    pub peak_speeds_deg_s: Vec<f64>,
    /// [deg]
    pub angle_min_deg: f64,
    /// [deg]
    pub angle_max_deg: f64,
    pub repetitions: usize,
    pub supports: Vec<SupportCondition>,
    /// Cut-off of the controller's speed estimator; `null` feeds the true
    /// elevation speed to the controller [Hz]
    pub estimator_cutoff_hz: Option<f64>,
    pub human: HumanModel,
}

impl Default for TrialProtocol {
    fn default() -> Self {
        Self {
            peak_speeds_deg_s: vec![60.0, 120.0, 180.0],
            angle_min_deg: 20.0,
            angle_max_deg: 100.0,
            repetitions: 10,
            supports: vec![
                SupportCondition::new("pre", 0.0),
                SupportCondition::new("25%", 0.25),
                SupportCondition::new("50%", 0.5),
            ],
            estimator_cutoff_hz: Some(VelocityEstimator::DEFAULT_CUTOFF_HZ),
            human: HumanModel::default(),
        }
    }
}

impl TrialProtocol {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidProtocol(m.to_string()));
        if self.peak_speeds_deg_s.is_empty() || self.peak_speeds_deg_s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("peak_speeds_deg_s must be non-empty and positive");
        }
        if !(0.0 <= self.angle_min_deg && self.angle_min_deg < self.angle_max_deg && self.angle_max_deg <= 180.0) {
            return bad("angle range must satisfy 0 <= min < max <= 180 deg");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be >= 1");
        }
        if self.supports.is_empty() {
            return bad("supports must not be empty");
        }
        if self.supports.iter().any(|s| !(0.0..=1.0).contains(&s.support_fraction)) {
            return bad("support_fraction must lie in [0, 1]");
        }
        if self.estimator_cutoff_hz.is_some_and(|fc| !(fc.is_finite() && fc > 0.0)) {
            return bad("estimator_cutoff_hz must be > 0");
        }
        self.human.validate()
    }
}

/// Everything one trial needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSpec {
    pub controller: TensionController,
    pub model: BowdenModel,
    pub plant: PlantConfig,
    pub human: HumanModel,
    /// [rad/s]
    pub peak_speed: f64,
    /// [rad]
    pub angle_min: f64,
    /// [rad]
    pub angle_max: f64,
    pub repetitions: usize,
    /// Cut-off of the controller's speed estimator; `None` feeds the true
    /// elevation speed to the controller [Hz]
    pub estimator_cutoff_hz: Option<f64>,
    pub seed: u64,
}

pub const TRIAL_LOG_HEADER: [&str; 13] = [
    "t_s",
    "repetition",
    "phase",
    "theta_ref_rad",
    "theta_rad",
    "theta_dot_rad_s",
    "theta_dot_est_rad_s",
    "desired_tension_n",
    "applied_tension_n",
    "desired_torque_nm",
    "applied_torque_nm",
    "commanded_motor_torque_nm",
    "applied_motor_torque_nm",
];

/// Per-sample trial record. Torques at the shoulder are tensions times the
/// cable moment arm.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialLog {
    /// [Hz]
    pub sample_rate: f64,
    pub time: Vec<f64>,
    pub repetition: Vec<usize>,
    pub phase: Vec<Direction>,
    pub theta_ref: Vec<f64>,
    pub theta: Vec<f64>,
    pub theta_dot: Vec<f64>,
    pub theta_dot_estimate: Vec<f64>,
    pub desired_tension: Vec<f64>,
    /// Load-cell reading
    pub applied_tension: Vec<f64>,
    pub desired_torque: Vec<f64>,
    pub applied_torque: Vec<f64>,
    pub commanded_motor_torque: Vec<f64>,
    pub applied_motor_torque: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TrialRow {
    t_s: f64,
    repetition: usize,
    phase: Direction,
    theta_ref_rad: f64,
    theta_rad: f64,
    theta_dot_rad_s: f64,
    theta_dot_est_rad_s: f64,
    desired_tension_n: f64,
    applied_tension_n: f64,
    desired_torque_nm: f64,
    applied_torque_nm: f64,
    commanded_motor_torque_nm: f64,
    applied_motor_torque_nm: f64,
}

impl TrialLog {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn repetitions(&self) -> usize {
        self.repetition.last().map_or(0, |r| r + 1)
    }

    /// Row range of each repetition.
    pub fn repetition_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out: Vec<std::ops::Range<usize>> = Vec::new();
        for (i, &r) in self.repetition.iter().enumerate() {
            if r < out.len() {
                out[r].end = i + 1;
            } else {
                out.push(i..i + 1);
            }
        }
        out
    }

    fn push(&mut self, row: TrialRow) {
        self.time.push(row.t_s);
        self.repetition.push(row.repetition);
        self.phase.push(row.phase);
        self.theta_ref.push(row.theta_ref_rad);
        self.theta.push(row.theta_rad);
        self.theta_dot.push(row.theta_dot_rad_s);
        self.theta_dot_estimate.push(row.theta_dot_est_rad_s);
        self.desired_tension.push(row.desired_tension_n);
        self.applied_tension.push(row.applied_tension_n);
        self.desired_torque.push(row.desired_torque_nm);
        self.applied_torque.push(row.applied_torque_nm);
        self.commanded_motor_torque.push(row.commanded_motor_torque_nm);
        self.applied_motor_torque.push(row.applied_motor_torque_nm);
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(writer);
        for i in 0..self.len() {
            w.serialize(TrialRow {
                t_s: self.time[i],
                repetition: self.repetition[i],
                phase: self.phase[i],
                theta_ref_rad: self.theta_ref[i],
                theta_rad: self.theta[i],
                theta_dot_rad_s: self.theta_dot[i],
                theta_dot_est_rad_s: self.theta_dot_estimate[i],
                desired_tension_n: self.desired_tension[i],
                applied_tension_n: self.applied_tension[i],
                desired_torque_nm: self.desired_torque[i],
                applied_torque_nm: self.applied_torque[i],
                commanded_motor_torque_nm: self.commanded_motor_torque[i],
                applied_motor_torque_nm: self.applied_motor_torque[i],
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a log written by [`TrialLog::write_csv`]; the sample rate is
    /// inferred from the time column.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, SimError> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.iter().ne(TRIAL_LOG_HEADER.iter().copied()) {
            return Err(SimError::InvalidProtocol(format!("unexpected trial log header {header:?}")));
        }
        let mut log = TrialLog::default();
        for row in r.deserialize() {
            log.push(row?);
        }
        if log.len() < 2 {
            return Err(SimError::InvalidProtocol("trial log needs at least two rows".into()));
        }
        log.sample_rate = infer_sample_rate(&log.time)
            .ok_or_else(|| SimError::InvalidProtocol("trial log time column does not increase".into()))?;
        Ok(log)
    }
}

/// One cell of the speed x support grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialCondition {
    /// [deg/s]
    pub peak_speed_deg_s: f64,
    pub support: SupportCondition,
    pub log: TrialLog,
}

/// Simulates `spec.repetitions` raise/lower cycles back to back.
pub fn run_trial_protocol(spec: &TrialSpec) -> Result<TrialLog, SimError> {
    let plant = &spec.plant;
    let arm0 = &plant.arm;
    let assist = &spec.controller.assist;
    plant.validate()?;
    spec.model.validate()?;
    spec.human.validate()?;
    spec.controller.assist.validate()?;
    spec.controller.regression.validate()?;
    if (assist.moment_arm - arm0.moment_arm).abs() > 1e-9 * arm0.moment_arm {
        return Err(SimError::Mismatch(format!(
            "controller moment arm {} m differs from plant moment arm {} m",
            assist.moment_arm, arm0.moment_arm
        )));
    }
    if !(0.0..=1.0).contains(&assist.support_fraction) {
        return Err(SimError::Mismatch(format!("support fraction {} outside [0, 1]", assist.support_fraction)));
    }
    if spec.repetitions == 0 {
        return Err(SimError::InvalidProtocol("repetitions must be >= 1".into()));
    }
    if !(0.0 <= spec.angle_min && spec.angle_min < spec.angle_max && spec.angle_max <= PI) {
        return Err(SimError::InvalidProtocol("angle range must satisfy 0 <= min < max <= pi".into()));
    }

    let fs = plant.sample_rate;
    let dt = plant.dt();
    let up = MinJerk::with_peak_speed(spec.angle_min, spec.angle_max, spec.peak_speed)?;
    let down = MinJerk::with_peak_speed(spec.angle_max, spec.angle_min, spec.peak_speed)?;
    let half = up.duration;
    let per_rep = (2.0 * half * fs).ceil() as usize;
    let n = per_rep * spec.repetitions;

    let mut estimator = match spec.estimator_cutoff_hz {
        Some(fc) => Some(VelocityEstimator::new(dt, fc)?),
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r = arm0.moment_arm;
    let rp = spec.model.pulley_radius;
    let omega = 2.0 * PI * spec.human.bandwidth_hz;
    let kp = arm0.inertia * omega * omega;
    let kd = 2.0 * spec.human.damping_ratio * arm0.inertia * omega;
    let rho = (-dt / spec.human.noise_time_constant).exp();
    let lag = plant
        .torque_bandwidth_hz
        .map_or(1.0, |bw| 1.0 - (-2.0 * PI * bw * dt).exp());

    let mut arm = ArmPlant {
        theta: spec.angle_min,
        theta_dot: 0.0,
        ..*arm0
    };
    let mut human_noise = 0.0;
    let mut applied_motor = 0.0;
    let mut log = TrialLog {
        sample_rate: fs,
        ..TrialLog::default()
    };

    for k in 0..n {
        let repetition = k / per_rep;
        let local = (k % per_rep) as f64 / fs;
        let (phase, (theta_r, theta_dot_r, theta_ddot_r)) = if local < half {
            (Direction::Raising, up.sample(local))
        } else {
            (Direction::Lowering, down.sample(local - half))
        };

        let theta = arm.theta;
        let speed_estimate = match estimator.as_mut() {
            Some(est) => est.update(theta),
            None => arm.theta_dot,
        };
        let cmd = spec.controller.command(theta, speed_estimate)?;
        let commanded = cmd.motor_torque.clamp(-plant.max_motor_torque, plant.max_motor_torque);
        applied_motor += lag * (commanded - applied_motor);

        // spool speed is positive while the cable is reeled in
        let spool_speed = r * arm.theta_dot / rp;
        let net = apply_stiction(applied_motor, spool_speed, &plant.stiction).max(0.0);
        let gain = plant.sheath_gain(&spec.model, plant.cable_velocity(arm.theta_dot));
        let free_tension = net / rp * gain;
        let reflected = gain * plant.spool_inertia * (r / rp).powi(2);
        let expected_assist = gravity_tension_reference(theta_r, assist)? * r;
        let feedforward = arm0.inertia * theta_ddot_r + arm0.viscous_damping * theta_dot_r + arm0.gravity_torque(theta_r)
            - expected_assist;
        let feedback = kp * (theta_r - theta) + kd * (theta_dot_r - arm.theta_dot);
        if spec.human.torque_noise > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            human_noise = rho * human_noise + spec.human.torque_noise * (1.0 - rho * rho).sqrt() * z;
        }
        let theta_dot = arm.theta_dot;
        let (next, t_out) = arm.step_coupled(free_tension, reflected, feedforward + feedback + human_noise, dt)?;
        arm = next;
        let measured = if plant.load_cell_noise > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            t_out + plant.load_cell_noise * z
        } else {
            t_out
        };

        log.push(TrialRow {
            t_s: k as f64 / fs,
            repetition,
            phase,
            theta_ref_rad: theta_r,
            theta_rad: theta,
            theta_dot_rad_s: theta_dot,
            theta_dot_est_rad_s: speed_estimate,
            desired_tension_n: cmd.desired_tension,
            applied_tension_n: measured,
            desired_torque_nm: cmd.desired_tension * r,
            applied_torque_nm: measured * r,
            commanded_motor_torque_nm: commanded,
            applied_motor_torque_nm: applied_motor,
        });
    }
    Ok(log)
}

/// Runs every (peak speed, support) combination of the protocol.
///
/// Row order is speed-major. The controller's support fraction is replaced
/// per condition; all other controller settings are shared.
pub fn run_trial_grid(
    controller: &TensionController,
    model: &BowdenModel,
    plant: &PlantConfig,
    protocol: &TrialProtocol,
    seed: u64,
    exec: Exec,
) -> Result<Vec<TrialCondition>, SimError> {
    protocol.validate()?;
    let mut cells = Vec::new();
    for &speed in &protocol.peak_speeds_deg_s {
        for support in &protocol.supports {
            cells.push((cells.len(), speed, support.clone()));
        }
    }
    let results = exec.map(&cells, |(index, speed, support)| {
        let mut controller = *controller;
        controller.assist.support_fraction = support.support_fraction;
        let spec = TrialSpec {
            controller,
            model: *model,
            plant: *plant,
            human: protocol.human,
            peak_speed: speed.to_radians(),
            angle_min: protocol.angle_min_deg.to_radians(),
            angle_max: protocol.angle_max_deg.to_radians(),
            repetitions: protocol.repetitions,
            estimator_cutoff_hz: protocol.estimator_cutoff_hz,
            seed: derive_seed(seed, *index as u64),
        };
        run_trial_protocol(&spec).map(|log| TrialCondition {
            peak_speed_deg_s: *speed,
            support: support.clone(),
            log,
        })
    });
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{DirectionalRegression, GravityAssist, SigmoidBlend};

    fn spec(plant: PlantConfig) -> TrialSpec {
        let model = BowdenModel::default();
        TrialSpec {
            controller: TensionController::new(
                GravityAssist::default(),
                DirectionalRegression::from_model(&model),
                SigmoidBlend::default(),
            )
            .unwrap(),
            model,
            plant,
            human: HumanModel::default(),
            peak_speed: 120f64.to_radians(),
            angle_min: 20f64.to_radians(),
            angle_max: 100f64.to_radians(),
            repetitions: 2,
            estimator_cutoff_hz: Some(5.0),
            seed: 3,
        }
    }

    #[test]
    fn phases_tile_repetitions_and_follow_reference() {
        let s = spec(PlantConfig::default());
        let log = run_trial_protocol(&s).unwrap();
        assert_eq!(log.repetitions(), 2);
        let ranges = log.repetition_ranges();
        assert_eq!(ranges.len(), 2);
        assert_eq!(ranges[0].len(), ranges[1].len());
        // phase is the sign of the reference velocity, zeros assigned to the
        // phase that starts there
        let half = MinJerk::with_peak_speed(s.angle_min, s.angle_max, s.peak_speed).unwrap().duration;
        for (i, &phase) in log.phase.iter().enumerate() {
            let local = (i - ranges[log.repetition[i]].start) as f64 / log.sample_rate;
            let expected = if local < half { Direction::Raising } else { Direction::Lowering };
            assert_eq!(phase, expected);
            if i > 0 && log.repetition[i] == log.repetition[i - 1] {
                let dtheta = log.theta_ref[i] - log.theta_ref[i - 1];
                if phase == log.phase[i - 1] {
                    assert!(dtheta * phase.sign() >= -1e-12);
                }
            }
        }
        let peak = log.theta.iter().cloned().fold(f64::MIN, f64::max);
        assert!((peak - s.angle_max).abs() < 5f64.to_radians(), "{}", peak.to_degrees());
    }

    #[test]
    fn deterministic_per_seed() {
        let s = spec(PlantConfig::default());
        let a = run_trial_protocol(&s).unwrap();
        assert_eq!(a, run_trial_protocol(&s).unwrap());
        let b = run_trial_protocol(&TrialSpec { seed: 4, ..s }).unwrap();
        assert_ne!(a.applied_tension, b.applied_tension);
    }

    #[test]
    fn rejects_mismatch() {
        let mut s = spec(PlantConfig::default());
        s.controller.assist.moment_arm = 0.2;
        assert!(matches!(run_trial_protocol(&s), Err(SimError::Mismatch(_))));
        let mut s = spec(PlantConfig::default());
        s.controller.assist.support_fraction = 1.5;
        assert!(run_trial_protocol(&s).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let log = run_trial_protocol(&spec(PlantConfig::default())).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let back = TrialLog::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.applied_tension, log.applied_tension);
        assert_eq!(back.phase, log.phase);
        assert_eq!(back.repetition, log.repetition);
        assert_eq!(back.sample_rate, log.sample_rate);
    }

    #[test]
    fn torque_columns_are_scaled_tensions() {
        let s = spec(PlantConfig::default());
        let log = run_trial_protocol(&s).unwrap();
        let r = s.plant.arm.moment_arm;
        for i in 0..log.len() {
            assert_eq!(log.desired_torque[i], log.desired_tension[i] * r);
            assert_eq!(log.applied_torque[i], log.applied_tension[i] * r);
        }
    }
}
