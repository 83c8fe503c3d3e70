//! Minimum-jerk reference trajectories.

use super::SimError;
use serde::{Deserialize, Serialize};

/// Ratio between the peak speed of a quintic minimum-jerk move and its mean
/// speed.
pub const PEAK_TO_MEAN_SPEED: f64 = 1.875;

/// Point-to-point quintic `theta(s) = theta0 + d (10 s^3 - 15 s^4 + 6 s^5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinJerk {
    pub start: f64,
    pub end: f64,
    pub duration: f64,
}

impl MinJerk {
    /// Move whose analytic maximum speed equals `peak_speed`.
    pub fn with_peak_speed(start: f64, end: f64, peak_speed: f64) -> Result<Self, SimError> {
        let distance = end - start;
        if distance == 0.0 || !distance.is_finite() {
            return Err(SimError::InvalidTrajectory("zero displacement".into()));
        }
        if !(peak_speed.is_finite() && peak_speed > 0.0) {
            return Err(SimError::InvalidTrajectory(format!("peak speed {peak_speed} must be > 0")));
        }
        Ok(Self {
            start,
            end,
            duration: PEAK_TO_MEAN_SPEED * distance.abs() / peak_speed,
        })
    }

    /// Position, velocity and acceleration at time `t`, held constant
    /// outside `[0, duration]`.
    pub fn sample(&self, t: f64) -> (f64, f64, f64) {
        let d = self.end - self.start;
        let big_t = self.duration;
        let s = (t / big_t).clamp(0.0, 1.0);
        let (s2, s3) = (s * s, s * s * s);
        let pos = self.start + d * (10.0 * s3 - 15.0 * s3 * s + 6.0 * s3 * s2);
        if t <= 0.0 || t >= big_t {
            return (pos, 0.0, 0.0);
        }
        let vel = d / big_t * (30.0 * s2 - 60.0 * s3 + 30.0 * s2 * s2);
        let acc = d / (big_t * big_t) * (60.0 * s - 180.0 * s2 + 120.0 * s3);
        (pos, vel, acc)
    }

    pub fn peak_speed(&self) -> f64 {
        PEAK_TO_MEAN_SPEED * (self.end - self.start).abs() / self.duration
    }
}

/// Uniformly sampled reference.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReferenceSeries {
    pub time: Vec<f64>,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
}

/// Samples a minimum-jerk move from `t = 0` to its end, both included.
pub fn min_jerk_trajectory(
    theta_start: f64,
    theta_end: f64,
    peak_speed: f64,
    sample_rate: f64,
) -> Result<(MinJerk, ReferenceSeries), SimError> {
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(SimError::InvalidTrajectory(format!("sample rate {sample_rate} must be > 0")));
    }
    let mj = MinJerk::with_peak_speed(theta_start, theta_end, peak_speed)?;
    let n = (mj.duration * sample_rate).ceil() as usize;
    let mut out = ReferenceSeries::default();
    for k in 0..=n {
        let t = (k as f64 / sample_rate).min(mj.duration);
        let (p, v, _) = mj.sample(t);
        out.time.push(t);
        out.position.push(p);
        out.velocity.push(v);
    }
    Ok((mj, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duration_from_peak_speed() {
        let d = 80f64.to_radians();
        let mj = MinJerk::with_peak_speed(20f64.to_radians(), 100f64.to_radians(), 60f64.to_radians()).unwrap();
        assert!((mj.duration - 2.5).abs() < 1e-12);
        let fast = MinJerk::with_peak_speed(0.0, d, 180f64.to_radians()).unwrap();
        assert!((fast.duration - 0.833_333_333_333).abs() < 1e-9);
        assert!(MinJerk::with_peak_speed(1.0, 1.0, 1.0).is_err());
        assert!(MinJerk::with_peak_speed(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn boundary_conditions_and_peak() {
        let (mj, series) = min_jerk_trajectory(0.3, 1.7, 2.0, 1000.0).unwrap();
        assert_eq!(series.velocity[0], 0.0);
        assert_eq!(*series.velocity.last().unwrap(), 0.0);
        assert_eq!(mj.sample(0.0).2, 0.0);
        assert_eq!(mj.sample(mj.duration).2, 0.0);
        assert!((series.position.last().unwrap() - 1.7).abs() < 1e-12);
        let peak = series.velocity.iter().cloned().fold(0.0, f64::max);
        assert!((peak - 2.0).abs() < 1e-5);
        assert!((mj.sample(0.5 * mj.duration).1 - 2.0).abs() < 1e-12);
        // downward move has negative velocity
        let (_, down) = min_jerk_trajectory(1.7, 0.3, 2.0, 1000.0).unwrap();
        assert!(down.velocity[1..down.velocity.len() - 1].iter().all(|&v| v < 0.0));
    }

    #[test]
    fn velocity_is_derivative_of_position() {
        let mj = MinJerk::with_peak_speed(0.2, 1.5, 1.0).unwrap();
        let h = 1e-6;
        for i in 1..20 {
            let t = mj.duration * i as f64 / 20.0;
            let fd = (mj.sample(t + h).0 - mj.sample(t - h).0) / (2.0 * h);
            assert!((fd - mj.sample(t).1).abs() < 1e-7);
            let fa = (mj.sample(t + h).1 - mj.sample(t - h).1) / (2.0 * h);
            assert!((fa - mj.sample(t).2).abs() < 1e-6);
        }
    }
}
