//! Outcome measures: tracking errors, phase splits, movement smoothness and
//! the EMG envelope pipeline.

use crate::dsp::{Butterworth, FilterError};
use crate::plantsim::TrialLog;
use crate::transmission::Direction;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty series")]
    Empty,
    #[error("all {0} samples excluded by the reference threshold")]
    AllExcluded(usize),
    #[error("no samples in the {0} phase")]
    EmptyPhase(Direction),
    #[error("speed profile is identically zero")]
    NoMovement,
    #[error("need at least {needed} repetitions, got {got}")]
    InsufficientRepetitions { needed: usize, got: usize },
    #[error("invalid metrics config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<(), MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

pub fn rmse(reference: &[f64], measured: &[f64]) -> Result<f64, MetricsError> {
    check_pair(reference, measured)?;
    let sum: f64 = reference.iter().zip(measured).map(|(r, m)| (r - m) * (r - m)).sum();
    Ok((sum / reference.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentageError {
    /// [%]
    pub value: f64,
    /// Samples skipped because `|reference| < epsilon`
    pub excluded: usize,
}

/// RMSE of `100 (measured - reference) / reference`.
pub fn percentage_error_rmse(reference: &[f64], measured: &[f64], epsilon: f64) -> Result<PercentageError, MetricsError> {
    check_pair(reference, measured)?;
    let mut sum = 0.0;
    let mut kept = 0usize;
    for (r, m) in reference.iter().zip(measured) {
        if r.abs() < epsilon {
            continue;
        }
        let e = 100.0 * (m - r) / r;
        sum += e * e;
        kept += 1;
    }
    if kept == 0 {
        return Err(MetricsError::AllExcluded(reference.len()));
    }
    Ok(PercentageError {
        value: (sum / kept as f64).sqrt(),
        excluded: reference.len() - kept,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSplitStat {
    pub entire: f64,
    pub raising: f64,
    pub lowering: f64,
}

fn split<'a>(
    values: &'a [f64],
    phases: &'a [Direction],
    direction: Direction,
) -> impl Iterator<Item = (usize, f64)> + 'a {
    values
        .iter()
        .zip(phases)
        .enumerate()
        .filter(move |(_, (_, p))| **p == direction)
        .map(|(i, (v, _))| (i, *v))
}

/// RMSE over all samples and over each phase separately.
pub fn phase_split_rmse(reference: &[f64], measured: &[f64], phases: &[Direction]) -> Result<PhaseSplitStat, MetricsError> {
    check_pair(reference, measured)?;
    if phases.len() != reference.len() {
        return Err(MetricsError::LengthMismatch(reference.len(), phases.len()));
    }
    let phase = |d: Direction| -> Result<f64, MetricsError> {
        let (sum, n) = split(reference, phases, d).fold((0.0, 0usize), |(s, n), (i, r)| {
            let e = r - measured[i];
            (s + e * e, n + 1)
        });
        if n == 0 {
            return Err(MetricsError::EmptyPhase(d));
        }
        Ok((sum / n as f64).sqrt())
    };
    Ok(PhaseSplitStat {
        entire: rmse(reference, measured)?,
        raising: phase(Direction::Raising)?,
        lowering: phase(Direction::Lowering)?,
    })
}

/// Percentage-error RMSE over all samples and per phase.
pub fn phase_split_percentage(
    reference: &[f64],
    measured: &[f64],
    phases: &[Direction],
    epsilon: f64,
) -> Result<PhaseSplitStat, MetricsError> {
    check_pair(reference, measured)?;
    if phases.len() != reference.len() {
        return Err(MetricsError::LengthMismatch(reference.len(), phases.len()));
    }
    let phase = |d: Direction| -> Result<f64, MetricsError> {
        let idx: Vec<usize> = split(reference, phases, d).map(|(i, _)| i).collect();
        if idx.is_empty() {
            return Err(MetricsError::EmptyPhase(d));
        }
        let r: Vec<f64> = idx.iter().map(|&i| reference[i]).collect();
        let m: Vec<f64> = idx.iter().map(|&i| measured[i]).collect();
        Ok(percentage_error_rmse(&r, &m, epsilon)?.value)
    };
    Ok(PhaseSplitStat {
        entire: percentage_error_rmse(reference, measured, epsilon)?.value,
        raising: phase(Direction::Raising)?,
        lowering: phase(Direction::Lowering)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparcConfig {
    /// Highest frequency considered [Hz]
    pub cutoff_hz: f64,
    /// Normalised magnitude below which the spectrum tail is dropped
    pub amplitude_threshold: f64,
    /// FFT length is `2^(ceil(log2 n) + pad_level)`
    pub pad_level: u32,
}

impl Default for SparcConfig {
    fn default() -> Self {
        Self {
            cutoff_hz: 10.0,
            amplitude_threshold: 0.05,
            pad_level: 4,
        }
    }
}

impl SparcConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.cutoff_hz.is_finite() && self.cutoff_hz > 0.0) {
            return Err(MetricsError::InvalidConfig("sparc cutoff_hz must be > 0".into()));
        }
        if !(self.amplitude_threshold > 0.0 && self.amplitude_threshold < 1.0) {
            return Err(MetricsError::InvalidConfig("sparc amplitude_threshold must lie in (0, 1)".into()));
        }
        if self.pad_level > 8 {
            return Err(MetricsError::InvalidConfig("sparc pad_level must be <= 8".into()));
        }
        Ok(())
    }
}

/// Spectral arc length of a speed profile. Always <= 0; more negative is
/// less smooth.
pub fn sparc(speed: &[f64], sample_rate: f64, cfg: &SparcConfig) -> Result<f64, MetricsError> {
    cfg.validate()?;
    if speed.is_empty() {
        return Err(MetricsError::Empty);
    }
    if speed.iter().all(|v| *v == 0.0) {
        return Err(MetricsError::NoMovement);
    }
    let n = speed.len();
    let nfft = 1usize << ((n as f64).log2().ceil() as u32 + cfg.pad_level);
    let mut buf: Vec<Complex64> = speed.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(nfft, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);

    let df = sample_rate / nfft as f64;
    let bins = ((cfg.cutoff_hz / df).floor() as usize + 1).min(nfft);
    let mag: Vec<f64> = buf.iter().map(|c| c.norm()).collect();
    let peak = mag.iter().cloned().fold(0.0, f64::max);
    let sel: Vec<f64> = mag[..bins].iter().map(|m| m / peak).collect();
    let above: Vec<usize> = (0..bins).filter(|&i| sel[i] >= cfg.amplitude_threshold).collect();
    let (first, last) = match (above.first(), above.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Ok(0.0),
    };
    if last == first {
        return Ok(0.0);
    }
    let span = (last - first) as f64 * df;
    let arc: f64 = (first..last)
        .map(|i| {
            let dfn = df / span;
            let dm = sel[i + 1] - sel[i];
            (dfn * dfn + dm * dm).sqrt()
        })
        .sum();
    Ok(-arc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvelopeConfig {
    /// [Hz]
    pub bandpass_low: f64,
    /// [Hz]
    pub bandpass_high: f64,
    pub filter_order: usize,
    /// Width of the centred RMS window [s]
    pub rms_window: f64,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        Self {
            bandpass_low: 20.0,
            bandpass_high: 400.0,
            filter_order: 3,
            rms_window: 0.100,
        }
    }
}

impl EnvelopeConfig {
    pub fn validate(&self, sample_rate: f64) -> Result<(), MetricsError> {
        let nyquist = 0.5 * sample_rate;
        if !(self.bandpass_low > 0.0 && self.bandpass_low < self.bandpass_high && self.bandpass_high < nyquist) {
            return Err(MetricsError::InvalidConfig(format!(
                "envelope band must satisfy 0 < low < high < Nyquist ({nyquist} Hz), got {}..{} Hz",
                self.bandpass_low, self.bandpass_high
            )));
        }
        if self.filter_order == 0 {
            return Err(MetricsError::InvalidConfig("envelope filter_order must be >= 1".into()));
        }
        if !(self.rms_window.is_finite() && self.rms_window > 0.0) {
            return Err(MetricsError::InvalidConfig("envelope rms_window must be > 0".into()));
        }
        Ok(())
    }
}

/// Centred moving RMS, truncated at the edges.
pub fn sliding_rms(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len();
    let half = window / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in x {
        acc += v * v;
        prefix.push(acc);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            ((prefix[hi] - prefix[lo]).max(0.0) / (hi - lo) as f64).sqrt()
        })
        .collect()
}

/// Band-pass, rectify, smooth.
pub fn emg_envelope(raw: &[f64], sample_rate: f64, cfg: &EnvelopeConfig) -> Result<Vec<f64>, MetricsError> {
    cfg.validate(sample_rate)?;
    if raw.is_empty() {
        return Err(MetricsError::Empty);
    }
    let filter = Butterworth::bandpass(cfg.filter_order, cfg.bandpass_low, cfg.bandpass_high, sample_rate)?;
    let rectified: Vec<f64> = filter.filtfilt(raw)?.into_iter().map(f64::abs).collect();
    let window = ((cfg.rms_window * sample_rate).round() as usize).max(1);
    Ok(sliding_rms(&rectified, window))
}

/// Mean envelope over each phase, i.e. its integral over time rescaled to
/// the unit interval.
pub fn iemg(envelope: &[f64], phases: &[Direction]) -> Result<PhaseSplitStat, MetricsError> {
    if envelope.len() != phases.len() {
        return Err(MetricsError::LengthMismatch(envelope.len(), phases.len()));
    }
    if envelope.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mean = |d: Direction| -> Result<f64, MetricsError> {
        let (sum, n) = split(envelope, phases, d).fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
        if n == 0 {
            return Err(MetricsError::EmptyPhase(d));
        }
        Ok(sum / n as f64)
    };
    Ok(PhaseSplitStat {
        entire: envelope.iter().sum::<f64>() / envelope.len() as f64,
        raising: mean(Direction::Raising)?,
        lowering: mean(Direction::Lowering)?,
    })
}

/// Linear resampling onto `points` equally spaced instants spanning the
/// series.
pub fn resample_normalized(x: &[f64], points: usize) -> Result<Vec<f64>, MetricsError> {
    if x.is_empty() {
        return Err(MetricsError::Empty);
    }
    if points < 2 {
        return Err(MetricsError::InvalidConfig("resampling needs at least 2 points".into()));
    }
    if x.len() == 1 {
        return Ok(vec![x[0]; points]);
    }
    let last = (x.len() - 1) as f64;
    Ok((0..points)
        .map(|j| {
            let pos = last * j as f64 / (points - 1) as f64;
            let i = (pos.floor() as usize).min(x.len() - 2);
            let frac = pos - i as f64;
            x[i] + frac * (x[i + 1] - x[i])
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedAverage {
    /// Normalised time, 0 to 1
    pub time: Vec<f64>,
    pub mean: Vec<f64>,
    /// Sample standard deviation across repetitions
    pub sd: Vec<f64>,
    pub repetitions: usize,
}

/// Pointwise mean and standard deviation of repetitions on normalised time.
pub fn normalize_and_average<S: AsRef<[f64]>>(
    repetitions: &[S],
    points: usize,
    drop_first: bool,
) -> Result<NormalizedAverage, MetricsError> {
    let kept = if drop_first && !repetitions.is_empty() {
        &repetitions[1..]
    } else {
        repetitions
    };
    if kept.len() < 2 {
        return Err(MetricsError::InsufficientRepetitions {
            needed: 2,
            got: kept.len(),
        });
    }
    let traces = kept
        .iter()
        .map(|r| resample_normalized(r.as_ref(), points))
        .collect::<Result<Vec<_>, _>>()?;
    let k = traces.len() as f64;
    let mut mean = vec![0.0; points];
    let mut sd = vec![0.0; points];
    for j in 0..points {
        let m = traces.iter().map(|t| t[j]).sum::<f64>() / k;
        let var = traces.iter().map(|t| (t[j] - m).powi(2)).sum::<f64>() / (k - 1.0);
        mean[j] = m;
        sd[j] = var.sqrt();
    }
    Ok(NormalizedAverage {
        time: (0..points).map(|j| j as f64 / (points - 1) as f64).collect(),
        mean,
        sd,
        repetitions: traces.len(),
    })
}

/// Average of the per-repetition envelope peaks, used to scale every
/// condition of a channel.
pub fn reference_peak<S: AsRef<[f64]>>(repetitions: &[S]) -> Result<f64, MetricsError> {
    if repetitions.is_empty() {
        return Err(MetricsError::InsufficientRepetitions { needed: 1, got: 0 });
    }
    let mut sum = 0.0;
    for r in repetitions {
        let r = r.as_ref();
        if r.is_empty() {
            return Err(MetricsError::Empty);
        }
        sum += r.iter().cloned().fold(f64::MIN, f64::max);
    }
    let peak = sum / repetitions.len() as f64;
    if peak <= 0.0 {
        return Err(MetricsError::InvalidConfig("reference envelope peak must be > 0".into()));
    }
    Ok(peak)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub envelope: EnvelopeConfig,
    pub sparc: SparcConfig,
    /// Length of the normalised-time vector
    pub resample_points: usize,
    /// Discard the first repetition of each condition
    pub drop_first: bool,
    /// References below this magnitude are excluded from percentage errors
    pub percentage_epsilon: f64,
    /// Recording columns holding elevation speed; every other channel is
    /// treated as EMG
    pub speed_channels: Vec<String>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            envelope: EnvelopeConfig::default(),
            sparc: SparcConfig::default(),
            resample_points: 1001,
            drop_first: true,
            percentage_epsilon: 1e-6,
            speed_channels: Vec::new(),
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        self.sparc.validate()?;
        if self.resample_points < 2 {
            return Err(MetricsError::InvalidConfig("resample_points must be >= 2".into()));
        }
        if !(self.percentage_epsilon >= 0.0) {
            return Err(MetricsError::InvalidConfig("percentage_epsilon must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-condition summary of a trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    /// [N]
    pub tension_rmse: PhaseSplitStat,
    /// [Nm]
    pub torque_rmse: PhaseSplitStat,
    /// [%]
    pub tension_percentage_rmse: PhaseSplitStat,
    /// [%]
    pub torque_percentage_rmse: PhaseSplitStat,
    /// [deg]
    pub angle_rmse_deg: f64,
    /// Mean over repetitions of the SPARC of the elevation speed magnitude
    pub sparc: f64,
    /// Normalised time of the largest mean tension error
    pub peak_error_time: f64,
    pub repetitions: usize,
}

/// Rows of the repetitions kept for analysis.
fn kept_rows(log: &TrialLog, drop_first: bool) -> Result<Vec<std::ops::Range<usize>>, MetricsError> {
    let ranges = log.repetition_ranges();
    let kept: Vec<_> = ranges.into_iter().skip(usize::from(drop_first)).collect();
    if kept.is_empty() {
        return Err(MetricsError::InsufficientRepetitions {
            needed: 1 + usize::from(drop_first),
            got: log.repetitions(),
        });
    }
    Ok(kept)
}

pub fn trial_metrics(log: &TrialLog, cfg: &MetricsConfig) -> Result<TrialMetrics, MetricsError> {
    cfg.validate()?;
    let kept = kept_rows(log, cfg.drop_first)?;
    let gather = |x: &[f64]| -> Vec<f64> { kept.iter().flat_map(|r| x[r.clone()].iter().copied()).collect() };
    let phases: Vec<Direction> = kept.iter().flat_map(|r| log.phase[r.clone()].iter().copied()).collect();

    let desired_t = gather(&log.desired_tension);
    let applied_t = gather(&log.applied_tension);
    let desired_q = gather(&log.desired_torque);
    let applied_q = gather(&log.applied_torque);
    let eps = cfg.percentage_epsilon;

    let angle = rmse(&gather(&log.theta_ref), &gather(&log.theta))?.to_degrees();

    let mut sparc_sum = 0.0;
    for r in &kept {
        let speed: Vec<f64> = log.theta_dot[r.clone()].iter().map(|v| v.abs()).collect();
        sparc_sum += sparc(&speed, log.sample_rate, &cfg.sparc)?;
    }

    let errors: Vec<Vec<f64>> = kept
        .iter()
        .map(|r| r.clone().map(|i| log.applied_tension[i] - log.desired_tension[i]).collect())
        .collect();
    let peak_error_time = if errors.len() >= 2 {
        let avg = normalize_and_average(&errors, cfg.resample_points, false)?;
        let (imax, _) = avg
            .mean
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
        avg.time[imax]
    } else {
        let e = resample_normalized(&errors[0], cfg.resample_points)?;
        let (imax, _) = e
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
        imax as f64 / (cfg.resample_points - 1) as f64
    };

    Ok(TrialMetrics {
        tension_rmse: phase_split_rmse(&desired_t, &applied_t, &phases)?,
        torque_rmse: phase_split_rmse(&desired_q, &applied_q, &phases)?,
        tension_percentage_rmse: phase_split_percentage(&desired_t, &applied_t, &phases, eps)?,
        torque_percentage_rmse: phase_split_percentage(&desired_q, &applied_q, &phases, eps)?,
        angle_rmse_deg: angle,
        sparc: sparc_sum / kept.len() as f64,
        peak_error_time,
        repetitions: kept.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plantsim::min_jerk_trajectory;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn rmse_basics() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|v| v - 0.25).collect();
        assert!((rmse(&a, &b).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(rmse(&a, &b[..2]), Err(MetricsError::LengthMismatch(3, 2)));
        assert_eq!(rmse(&[], &[]), Err(MetricsError::Empty));
    }

    #[test]
    fn percentage_basics() {
        let r = [10.0, 20.0, 0.0, 40.0];
        let m: Vec<f64> = r.iter().map(|v| 1.1 * v).collect();
        let p = percentage_error_rmse(&r, &m, 1e-9).unwrap();
        assert!((p.value - 10.0).abs() < 1e-12);
        assert_eq!(p.excluded, 1);
        assert_eq!(percentage_error_rmse(&r, &r, 1e-9).unwrap().value, 0.0);
        assert_eq!(percentage_error_rmse(&[0.0], &[1.0], 1e-9), Err(MetricsError::AllExcluded(1)));
    }

    #[test]
    fn phase_split_is_weighted_mean_of_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 301;
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(5.0..20.0)).collect();
        let m: Vec<f64> = r.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
        let ph: Vec<Direction> = (0..n)
            .map(|i| if i < 120 { Direction::Raising } else { Direction::Lowering })
            .collect();
        let s = phase_split_rmse(&r, &m, &ph).unwrap();
        let combined = (120.0 * s.raising.powi(2) + 181.0 * s.lowering.powi(2)) / 301.0;
        assert!((s.entire.powi(2) - combined).abs() < 1e-12 * combined);
        let only_up = vec![Direction::Raising; n];
        assert_eq!(phase_split_rmse(&r, &m, &only_up), Err(MetricsError::EmptyPhase(Direction::Lowering)));
    }

    fn min_jerk_speed(fs: f64) -> Vec<f64> {
        min_jerk_trajectory(0.0, 80f64.to_radians(), 60f64.to_radians(), fs).unwrap().1.velocity
    }

    #[test]
    fn sparc_orders_ripple_and_is_time_invariant() {
        let fs = 1000.0;
        let cfg = SparcConfig::default();
        let smooth = min_jerk_speed(fs);
        let peak = smooth.iter().cloned().fold(0.0, f64::max);
        let rippled: Vec<f64> = smooth
            .iter()
            .enumerate()
            .map(|(i, v)| v + 0.1 * peak * (2.0 * PI * 3.0 * i as f64 / fs).sin())
            .collect();
        let s0 = sparc(&smooth, fs, &cfg).unwrap();
        let s1 = sparc(&rippled, fs, &cfg).unwrap();
        assert!(s1 < s0, "{s1} vs {s0}");
        assert!(s0 < 0.0);

        let slow = min_jerk_trajectory(0.0, 1.0, 0.5, fs).unwrap().1.velocity;
        let fast = min_jerk_trajectory(0.0, 1.0, 1.0, fs).unwrap().1.velocity;
        let (a, b) = (sparc(&slow, fs, &cfg).unwrap(), sparc(&fast, fs, &cfg).unwrap());
        assert!((a - b).abs() < 0.01 * a.abs(), "{a} vs {b}");
        assert_eq!(sparc(&[0.0; 10], fs, &cfg), Err(MetricsError::NoMovement));
    }

    #[test]
    fn sparc_of_a_raise_lower_cycle_is_in_typical_range() {
        let fs = 1000.0;
        let mut speed = min_jerk_speed(fs);
        speed.extend(min_jerk_speed(fs));
        let s = sparc(&speed, fs, &SparcConfig::default()).unwrap();
        assert!((-3.5..=-2.0).contains(&s), "{s}");
    }

    #[test]
    fn envelope_of_sinusoids() {
        let fs = 2000.0;
        let cfg = EnvelopeConfig::default();
        let n = 4000;
        let a = 2.0;
        let tone = |f: f64| -> Vec<f64> { (0..n).map(|i| a * (2.0 * PI * f * i as f64 / fs).sin()).collect() };
        let env = emg_envelope(&tone(100.0), fs, &cfg).unwrap();
        for v in &env[1000..3000] {
            assert!((v - a / 2f64.sqrt()).abs() < 0.01 * a, "{v}");
        }
        let low = emg_envelope(&tone(5.0), fs, &cfg).unwrap();
        assert!(low[1000..3000].iter().all(|v| *v < 0.01 * a));
        assert!(emg_envelope(&vec![0.0; 500], fs, &cfg).unwrap().iter().all(|v| *v == 0.0));
        assert!(emg_envelope(&tone(100.0), 700.0, &cfg).is_err());
    }

    #[test]
    fn sliding_rms_matches_direct_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..97).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = 10;
        let fast = sliding_rms(&x, w);
        for i in 0..x.len() {
            let lo = i.saturating_sub(w / 2);
            let hi = (i + w / 2 + 1).min(x.len());
            let direct = (x[lo..hi].iter().map(|v| v * v).sum::<f64>() / (hi - lo) as f64).sqrt();
            assert!((fast[i] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn envelope_is_shift_equivariant() {
        let fs = 2000.0;
        let cfg = EnvelopeConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let burst: Vec<f64> = (0..3000)
            .map(|i| if (1000..1600).contains(&i) { rng.random_range(-1.0..1.0) } else { 0.0 })
            .collect();
        let shift = 150;
        let mut shifted = vec![0.0; shift];
        shifted.extend_from_slice(&burst[..burst.len() - shift]);
        let a = emg_envelope(&burst, fs, &cfg).unwrap();
        let b = emg_envelope(&shifted, fs, &cfg).unwrap();
        for i in 800..2500 {
            assert!((a[i] - b[i + shift]).abs() < 1e-6, "{i}");
        }
    }

    #[test]
    fn iemg_cases() {
        let ph: Vec<Direction> = (0..10)
            .map(|i| if i < 4 { Direction::Raising } else { Direction::Lowering })
            .collect();
        let c = iemg(&[0.7; 10], &ph).unwrap();
        assert!((c.raising - 0.7).abs() < 1e-15 && (c.lowering - 0.7).abs() < 1e-15 && (c.entire - 0.7).abs() < 1e-15);
        let env: Vec<f64> = (0..10).map(|i| if i < 4 { 1.0 } else { 0.0 }).collect();
        let s = iemg(&env, &ph).unwrap();
        assert_eq!(s.lowering, 0.0);
        assert_eq!(s.raising, 1.0);
        assert!(iemg(&env, &ph[..3]).is_err());
    }

    #[test]
    fn averaging_cases() {
        let rep: Vec<f64> = (0..50).map(|i| (i as f64 * 0.1).sin()).collect();
        let avg = normalize_and_average(&vec![rep.clone(); 10], 1001, true).unwrap();
        assert_eq!(avg.repetitions, 9);
        assert!(avg.sd.iter().all(|s| *s < 1e-12));
        let a: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let b: Vec<f64> = (0..250).map(|i| i as f64 / 249.0).collect();
        let avg = normalize_and_average(&[a, b], 1001, false).unwrap();
        for j in 0..1001 {
            assert!(avg.sd[j] < 1e-12);
            assert!((avg.mean[j] - avg.time[j]).abs() < 1e-12);
        }
        assert!(normalize_and_average(&[rep.clone(), rep], 11, true).is_err());
    }

    #[test]
    fn reference_peak_averages_maxima() {
        let p = reference_peak(&[vec![0.0, 2.0, 1.0], vec![4.0, 0.0]]).unwrap();
        assert_eq!(p, 3.0);
        assert!(reference_peak::<Vec<f64>>(&[]).is_err());
    }
}
