//! Identification of the inverse transmission from mannequin logs.
//!
//! Pipeline: zero-phase low-pass of the measured channels, selection of
//! steady-state samples, then one robust line per direction relating the
//! output tension (x) to the motor torque (y).

use crate::controller::DirectionalRegression;
use crate::dsp::{infer_sample_rate, zero_phase_lowpass, FilterError};
use crate::exec::Exec;
use crate::transmission::Direction;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IdentificationError {
    #[error("invalid sample log: {0}")]
    InvalidLog(String),
    #[error("invalid steady-state criteria: {0}")]
    InvalidCriteria(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("no sample satisfies the steady-state criteria")]
    EmptySelection,
    #[error("no steady-state samples for the {0} direction")]
    MissingDirection(Direction),
    #[error("robust fit needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("x values have no variance, slope is undefined")]
    DegenerateX,
    #[error("robust fit did not converge after {iterations} iterations (last slope {}, intercept {})", last.slope, last.intercept)]
    NotConverged { iterations: usize, last: LineFit },
    #[error("identified {0}")]
    InvalidRegression(#[from] crate::controller::ControllerError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Synchronised TDU and mannequin channels sampled at a fixed rate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleLog {
    /// [Hz]
    pub sample_rate: f64,
    /// [s]
    pub time: Vec<f64>,
    /// Motor-side spool speed [rad/s]
    pub tdu_speed: Vec<f64>,
    /// Motor-side spool acceleration [rad/s^2]
    pub tdu_acceleration: Vec<f64>,
    /// Estimated motor torque [Nm]
    pub tdu_torque: Vec<f64>,
    /// Output tension from the load cell [N]
    pub load_cell_tension: Vec<f64>,
    /// Humeral angle of elevation [rad]
    pub elevation_angle: Vec<f64>,
}

pub const SAMPLE_LOG_HEADER: [&str; 6] = [
    "t_s",
    "tdu_speed_rad_s",
    "tdu_acc_rad_s2",
    "tdu_torque_nm",
    "tension_n",
    "theta_aoe_rad",
];

impl SampleLog {
    pub fn with_capacity(sample_rate: f64, n: usize) -> Self {
        Self {
            sample_rate,
            time: Vec::with_capacity(n),
            tdu_speed: Vec::with_capacity(n),
            tdu_acceleration: Vec::with_capacity(n),
            tdu_torque: Vec::with_capacity(n),
            load_cell_tension: Vec::with_capacity(n),
            elevation_angle: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn push(&mut self, t: f64, speed: f64, acc: f64, torque: f64, tension: f64, angle: f64) {
        self.time.push(t);
        self.tdu_speed.push(speed);
        self.tdu_acceleration.push(acc);
        self.tdu_torque.push(torque);
        self.load_cell_tension.push(tension);
        self.elevation_angle.push(angle);
    }

    /// Checks channel lengths and uniform, strictly increasing time.
    pub fn validate(&self) -> Result<(), IdentificationError> {
        let n = self.len();
        let lens = [
            self.tdu_speed.len(),
            self.tdu_acceleration.len(),
            self.tdu_torque.len(),
            self.load_cell_tension.len(),
            self.elevation_angle.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(IdentificationError::InvalidLog("channel lengths differ".into()));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(IdentificationError::InvalidLog(format!("sample rate {} must be > 0", self.sample_rate)));
        }
        let dt = 1.0 / self.sample_rate;
        for (i, w) in self.time.windows(2).enumerate() {
            let step = w[1] - w[0];
            if step <= 0.0 {
                return Err(IdentificationError::InvalidLog(format!("time not strictly increasing at row {}", i + 1)));
            }
            if (step - dt).abs() > 1e-6 * dt {
                return Err(IdentificationError::InvalidLog(format!(
                    "non-uniform sampling at row {}: step {step} s, expected {dt} s",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    /// Copy of the log with speed, acceleration, torque and tension passed
    /// through the zero-phase low-pass.
    pub fn filtered(&self, filter: &LowpassSpec) -> Result<SampleLog, IdentificationError> {
        let fs = self.sample_rate;
        let f = |x: &[f64]| zero_phase_lowpass(x, filter.cutoff_hz, filter.order, fs);
        Ok(SampleLog {
            sample_rate: fs,
            time: self.time.clone(),
            tdu_speed: f(&self.tdu_speed)?,
            tdu_acceleration: f(&self.tdu_acceleration)?,
            tdu_torque: f(&self.tdu_torque)?,
            load_cell_tension: f(&self.load_cell_tension)?,
            elevation_angle: self.elevation_angle.clone(),
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), IdentificationError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(SAMPLE_LOG_HEADER)?;
        for i in 0..self.len() {
            w.write_record(
                [
                    self.time[i],
                    self.tdu_speed[i],
                    self.tdu_acceleration[i],
                    self.tdu_torque[i],
                    self.load_cell_tension[i],
                    self.elevation_angle[i],
                ]
                .iter()
                .map(|v| v.to_string()),
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a log; the sample rate is inferred from the time column.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, IdentificationError> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut columns = [0usize; 6];
        for (slot, name) in columns.iter_mut().zip(SAMPLE_LOG_HEADER) {
            *slot = header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| IdentificationError::InvalidLog(format!("missing column {name}")))?;
        }
        let mut log = SampleLog::default();
        for (row, record) in r.records().enumerate() {
            let record = record?;
            let mut vals = [0.0; 6];
            for (k, &c) in columns.iter().enumerate() {
                let raw = record.get(c).unwrap_or("");
                vals[k] = raw.trim().parse().map_err(|_| {
                    IdentificationError::InvalidLog(format!(
                        "row {}, column {}: cannot parse {raw:?}",
                        row + 1,
                        SAMPLE_LOG_HEADER[k]
                    ))
                })?;
            }
            log.push(vals[0], vals[1], vals[2], vals[3], vals[4], vals[5]);
        }
        if log.len() < 2 {
            return Err(IdentificationError::InvalidLog("need at least two rows".into()));
        }
        log.sample_rate = infer_sample_rate(&log.time)
            .ok_or_else(|| IdentificationError::InvalidLog("time column does not increase".into()))?;
        log.validate()?;
        Ok(log)
    }

    pub fn read_csv_path(path: &Path) -> Result<Self, IdentificationError> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LowpassSpec {
    pub cutoff_hz: f64,
    pub order: usize,
}

impl Default for LowpassSpec {
    fn default() -> Self {
        Self {
            cutoff_hz: 5.0,
            order: 3,
        }
    }
}

/// Steady-state selection thresholds, in degrees as they are usually quoted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteadyStateCriteria {
    /// Minimum |spool speed| [deg/s]
    pub min_speed: f64,
    /// Maximum |spool acceleration| [deg/s^2]
    pub max_acceleration: f64,
    /// [deg]
    pub angle_min: f64,
    /// [deg]
    pub angle_max: f64,
    /// [Nm]
    pub min_torque: f64,
}

impl Default for SteadyStateCriteria {
    fn default() -> Self {
        Self {
            min_speed: 15.0,
            max_acceleration: 15.0,
            angle_min: 20.0,
            angle_max: 90.0,
            min_torque: 0.0,
        }
    }
}

impl SteadyStateCriteria {
    pub fn validate(&self) -> Result<(), IdentificationError> {
        if !(self.angle_min < self.angle_max) {
            return Err(IdentificationError::InvalidCriteria("angle_min must be < angle_max".into()));
        }
        if !(self.min_speed > 0.0) {
            return Err(IdentificationError::InvalidCriteria("min_speed must be > 0".into()));
        }
        if !(self.max_acceleration > 0.0) {
            return Err(IdentificationError::InvalidCriteria("max_acceleration must be > 0".into()));
        }
        Ok(())
    }

    /// Whether the sample at `i` passes all conditions.
    pub fn accepts(&self, log: &SampleLog, i: usize) -> bool {
        let speed = log.tdu_speed[i].to_degrees();
        let acc = log.tdu_acceleration[i].to_degrees();
        let angle = log.elevation_angle[i].to_degrees();
        speed.abs() > self.min_speed
            && acc.abs() < self.max_acceleration
            && angle > self.angle_min
            && angle < self.angle_max
            && log.tdu_torque[i] > self.min_torque
    }
}

/// Indices of the retained samples, split by direction of spool travel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Selection {
    pub raising: Vec<usize>,
    pub lowering: Vec<usize>,
}

impl Selection {
    pub fn indices(&self, direction: Direction) -> &[usize] {
        match direction {
            Direction::Raising => &self.raising,
            Direction::Lowering => &self.lowering,
        }
    }

    /// `(tension, torque)` pairs for one direction.
    pub fn points(&self, log: &SampleLog, direction: Direction) -> Vec<(f64, f64)> {
        self.indices(direction)
            .iter()
            .map(|&i| (log.load_cell_tension[i], log.tdu_torque[i]))
            .collect()
    }
}

/// Keeps the steady-state samples of an already filtered log.
pub fn select_steady_state(log: &SampleLog, criteria: &SteadyStateCriteria) -> Result<Selection, IdentificationError> {
    criteria.validate()?;
    let mut sel = Selection::default();
    for i in 0..log.len() {
        if criteria.accepts(log, i) {
            if log.tdu_speed[i] > 0.0 {
                sel.raising.push(i);
            } else {
                sel.lowering.push(i);
            }
        }
    }
    if sel.raising.is_empty() && sel.lowering.is_empty() {
        return Err(IdentificationError::EmptySelection);
    }
    Ok(sel)
}

/// A fitted line with its ordinary goodness of fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub sample_count: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub direction: Direction,
    #[serde(flatten)]
    pub line: LineFit,
}

pub const MIN_FIT_POINTS: usize = 10;
/// Bisquare tuning constant (95 % efficiency at the normal model).
pub const BISQUARE_TUNING: f64 = 4.685;
const MAD_TO_SIGMA: f64 = 0.6745;
const MAX_ITERATIONS: usize = 50;
const COEFFICIENT_TOLERANCE: f64 = 1e-8;

fn weighted_line(points: &[(f64, f64)], weights: &[f64]) -> Option<(f64, f64)> {
    let sw: f64 = weights.iter().sum();
    if sw <= 0.0 {
        return None;
    }
    let mx = points.iter().zip(weights).map(|((x, _), w)| w * x).sum::<f64>() / sw;
    let my = points.iter().zip(weights).map(|((_, y), w)| w * y).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for ((x, y), w) in points.iter().zip(weights) {
        sxx += w * (x - mx) * (x - mx);
        sxy += w * (x - mx) * (y - my);
    }
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

fn r_squared(points: &[(f64, f64)], slope: f64, intercept: f64) -> f64 {
    let n = points.len() as f64;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    if ss_tot == 0.0 {
        return 1.0;
    }
    (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, &mut upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Iteratively reweighted least squares with Tukey's bisquare weights.
///
/// Residuals are leverage-adjusted and scaled by a MAD estimate of sigma;
/// iteration stops once no coefficient moves by more than `1e-8`.
pub fn robust_linear_fit(points: &[(f64, f64)]) -> Result<LineFit, IdentificationError> {
    let n = points.len();
    if n < MIN_FIT_POINTS {
        return Err(IdentificationError::TooFewPoints {
            needed: MIN_FIT_POINTS,
            got: n,
        });
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if !(sxx > 0.0) || points.iter().all(|p| p.0 == points[0].0) {
        return Err(IdentificationError::DegenerateX);
    }
    // leverage of the ordinary design, capped so 1 - h stays positive
    let adjust: Vec<f64> = points
        .iter()
        .map(|p| {
            let h = 1.0 / n as f64 + (p.0 - mx).powi(2) / sxx;
            1.0 / (1.0 - h.min(0.9999)).sqrt()
        })
        .collect();
    let my = points.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let sd_y = (points.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let tiny_scale = if sd_y > 0.0 { 1e-6 * sd_y } else { 1.0 };

    let mut weights = vec![1.0; n];
    let (mut slope, mut intercept) = weighted_line(points, &weights).ok_or(IdentificationError::DegenerateX)?;
    let mut scratch = vec![0.0; n];
    for iteration in 1..=MAX_ITERATIONS {
        let residuals: Vec<f64> = points
            .iter()
            .zip(&adjust)
            .map(|(p, a)| (p.1 - intercept - slope * p.0) * a)
            .collect();
        for (s, r) in scratch.iter_mut().zip(&residuals) {
            *s = r.abs();
        }
        // median of |r| skipping the smallest p - 1 = 1 value
        scratch.sort_unstable_by(f64::total_cmp);
        let sigma = (median_in_place(&mut scratch[1..]) / MAD_TO_SIGMA).max(tiny_scale);
        for (w, r) in weights.iter_mut().zip(&residuals) {
            let u = r / (BISQUARE_TUNING * sigma);
            *w = if u.abs() < 1.0 { (1.0 - u * u).powi(2) } else { 0.0 };
        }
        let last = LineFit {
            slope,
            intercept,
            r_squared: r_squared(points, slope, intercept),
            sample_count: n,
            iterations: iteration,
        };
        let (s, b) = weighted_line(points, &weights).ok_or(IdentificationError::NotConverged { iterations: iteration, last })?;
        let converged = (s - slope).abs() < COEFFICIENT_TOLERANCE && (b - intercept).abs() < COEFFICIENT_TOLERANCE;
        slope = s;
        intercept = b;
        if converged {
            return Ok(LineFit {
                slope,
                intercept,
                r_squared: r_squared(points, slope, intercept),
                sample_count: n,
                iterations: iteration,
            });
        }
    }
    Err(IdentificationError::NotConverged {
        iterations: MAX_ITERATIONS,
        last: LineFit {
            slope,
            intercept,
            r_squared: r_squared(points, slope, intercept),
            sample_count: n,
            iterations: MAX_ITERATIONS,
        },
    })
}

/// Everything the identification produced, including the fitted points.
#[derive(Debug, Clone)]
pub struct Identification {
    pub regression: DirectionalRegression,
    pub raising: FitResult,
    pub lowering: FitResult,
    pub filtered: SampleLog,
    pub selection: Selection,
}

/// Filters, selects and fits with the default 5 Hz, third-order filter.
pub fn identify(log: &SampleLog, criteria: &SteadyStateCriteria) -> Result<DirectionalRegression, IdentificationError> {
    Ok(identify_with(log, criteria, &LowpassSpec::default(), Exec::default())?.regression)
}

pub fn identify_with(
    log: &SampleLog,
    criteria: &SteadyStateCriteria,
    filter: &LowpassSpec,
    exec: Exec,
) -> Result<Identification, IdentificationError> {
    log.validate()?;
    let filtered = log.filtered(filter)?;
    let selection = select_steady_state(&filtered, criteria)?;
    for direction in [Direction::Raising, Direction::Lowering] {
        if selection.indices(direction).is_empty() {
            return Err(IdentificationError::MissingDirection(direction));
        }
    }
    let fit = |direction: Direction| {
        robust_linear_fit(&selection.points(&filtered, direction)).map(|line| FitResult { direction, line })
    };
    let (raising, lowering) = exec.join(|| fit(Direction::Raising), || fit(Direction::Lowering));
    let (raising, lowering) = (raising?, lowering?);
    let regression = DirectionalRegression {
        slope_raising: raising.line.slope,
        intercept_raising: raising.line.intercept,
        slope_lowering: lowering.line.slope,
        intercept_lowering: lowering.line.intercept,
        r2_raising: raising.line.r_squared,
        r2_lowering: lowering.line.r_squared,
    };
    regression.validate()?;
    Ok(Identification {
        regression,
        raising,
        lowering,
        filtered,
        selection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn ols(points: &[(f64, f64)]) -> (f64, f64) {
        weighted_line(points, &vec![1.0; points.len()]).unwrap()
    }

    #[test]
    fn exact_line() {
        let pts: Vec<_> = (0..50).map(|i| {
            let x = i as f64;
            (x, 0.05 * x + 0.1)
        }).collect();
        let fit = robust_linear_fit(&pts).unwrap();
        assert!((fit.slope - 0.05).abs() < 1e-9);
        assert!((fit.intercept - 0.1).abs() < 1e-9);
        assert!((fit.r_squared - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fit_errors() {
        let few: Vec<_> = (0..9).map(|i| (i as f64, i as f64)).collect();
        assert!(matches!(robust_linear_fit(&few), Err(IdentificationError::TooFewPoints { .. })));
        let flat: Vec<_> = (0..20).map(|i| (3.0, i as f64)).collect();
        assert!(matches!(robust_linear_fit(&flat), Err(IdentificationError::DegenerateX)));
    }

    #[test]
    fn noisy_line_agrees_with_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 0.02).unwrap();
        let pts: Vec<_> = (0..500)
            .map(|_| {
                let x = rng.random_range(5.0..80.0);
                (x, 0.05 * x + 0.1 + noise.sample(&mut rng))
            })
            .collect();
        let fit = robust_linear_fit(&pts).unwrap();
        let (s_ols, _) = ols(&pts);
        assert!((fit.slope - 0.05).abs() < 0.02 * 0.05);
        // standard error of the OLS slope
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / 500.0;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let se = 0.02 / sxx.sqrt();
        assert!((fit.slope - s_ols).abs() < se, "{} vs {}", fit.slope, s_ols);
    }

    #[test]
    fn gross_outliers_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.02).unwrap();
        let mut pts: Vec<_> = (0..500)
            .map(|i| {
                let x = 5.0 + 75.0 * i as f64 / 499.0;
                (x, 0.05 * x + 0.1 + noise.sample(&mut rng))
            })
            .collect();
        // 5 % of the points, at the high-tension end, pushed far up
        let span = 0.05 * 80.0;
        for p in pts.iter_mut().rev().take(25) {
            p.1 += 10.0 * 0.1 * span;
        }
        let fit = robust_linear_fit(&pts).unwrap();
        let (s_ols, _) = ols(&pts);
        assert!((fit.slope - 0.05).abs() < 0.02 * 0.05, "robust {}", fit.slope);
        assert!((s_ols - 0.05).abs() > 0.05 * 0.05, "ols {s_ols}");
    }

    fn tiny_log() -> SampleLog {
        let mut log = SampleLog::with_capacity(100.0, 0);
        // speed deg/s, acc deg/s^2, torque, angle deg
        let rows = [
            (30.0, 0.0, 1.0, 45.0),  // kept, raising
            (-30.0, 0.0, 1.0, 45.0), // kept, lowering
            (30.0, 0.0, 1.0, 15.0),  // angle below
            (0.0, 0.0, 1.0, 45.0),   // no speed
            (30.0, 20.0, 1.0, 45.0), // accelerating
            (30.0, 0.0, -0.1, 45.0), // torque
            (30.0, 0.0, 1.0, 95.0),  // angle above
            (15.0, 0.0, 1.0, 45.0),  // speed at the threshold
            (-16.0, -14.9, 0.2, 89.9), // kept, lowering
        ];
        for (i, (s, a, tq, ang)) in rows.iter().enumerate() {
            log.push(i as f64 / 100.0, f64::to_radians(*s), f64::to_radians(*a), *tq, 10.0, f64::to_radians(*ang));
        }
        log
    }

    #[test]
    fn selection_rules() {
        let log = tiny_log();
        let sel = select_steady_state(&log, &SteadyStateCriteria::default()).unwrap();
        assert_eq!(sel.raising, vec![0]);
        assert_eq!(sel.lowering, vec![1, 8]);

        let crit = SteadyStateCriteria { angle_min: 80.0, ..Default::default() };
        let mut log = tiny_log();
        log.elevation_angle.iter_mut().for_each(|a| *a = 0.1);
        assert!(matches!(select_steady_state(&log, &crit), Err(IdentificationError::EmptySelection)));
    }

    #[test]
    fn selection_is_sound_exhaustively() {
        // grid of small logs: every retained sample passes every rule, every
        // rejected one fails at least one
        let crit = SteadyStateCriteria::default();
        let speeds = [-40.0, -15.0, -10.0, 0.0, 10.0, 15.0, 15.1, 40.0];
        let accs = [-20.0, -15.0, 0.0, 14.9, 15.0, 30.0];
        let angles = [10.0, 20.0, 20.1, 50.0, 89.9, 90.0, 100.0];
        let torques = [-1.0, 0.0, 0.5];
        let mut log = SampleLog::with_capacity(10.0, 0);
        let mut k = 0;
        for s in speeds {
            for a in accs {
                for ang in angles {
                    for tq in torques {
                        log.push(k as f64 * 0.1, f64::to_radians(s), f64::to_radians(a), tq, 1.0, f64::to_radians(ang));
                        k += 1;
                    }
                }
            }
        }
        let sel = select_steady_state(&log, &crit).unwrap();
        let kept: std::collections::HashSet<usize> = sel.raising.iter().chain(&sel.lowering).copied().collect();
        for i in 0..log.len() {
            let s = log.tdu_speed[i].to_degrees();
            let a = log.tdu_acceleration[i].to_degrees();
            let ang = log.elevation_angle[i].to_degrees();
            let pass = s.abs() > 15.0 && a.abs() < 15.0 && ang > 20.0 && ang < 90.0 && log.tdu_torque[i] > 0.0;
            assert_eq!(kept.contains(&i), pass, "row {i}");
        }
        assert!(sel.raising.iter().all(|&i| log.tdu_speed[i] > 0.0));
        assert!(sel.lowering.iter().all(|&i| log.tdu_speed[i] < 0.0));
    }

    #[test]
    fn trapezoid_keeps_only_plateau() {
        // spool speed ramps at 5 rad/s^2 to 2 rad/s, holds, ramps down
        let fs = 1000.0;
        let mut log = SampleLog::with_capacity(fs, 0);
        let (acc, vmax) = (5.0, 2.0);
        let t_ramp = vmax / acc;
        let t_total = 2.0 * t_ramp + 1.0;
        let n = (t_total * fs) as usize;
        for k in 0..n {
            let t = k as f64 / fs;
            let (v, a) = if t < t_ramp {
                (acc * t, acc)
            } else if t < t_total - t_ramp {
                (vmax, 0.0)
            } else {
                (acc * (t_total - t), -acc)
            };
            log.push(t, v, a, 1.0, 10.0, f64::to_radians(50.0));
        }
        let sel = select_steady_state(&log, &SteadyStateCriteria::default()).unwrap();
        assert!(sel.raising.iter().all(|&i| {
            let t = log.time[i];
            t >= t_ramp && t < t_total - t_ramp
        }));
        let plateau = (0..n).filter(|&i| log.tdu_acceleration[i] == 0.0).count();
        assert_eq!(sel.raising.len(), plateau);
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let log = tiny_log();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let back = SampleLog::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.tdu_speed, log.tdu_speed);
        assert_eq!(back.elevation_angle, log.elevation_angle);
        assert!((back.sample_rate - 100.0).abs() < 1e-6);

        let bad = "t_s,tdu_speed_rad_s,tdu_acc_rad_s2,tdu_torque_nm,tension_n,theta_aoe_rad\n0,1,0,1,1,1\n0.01,1,0,1,1,1\n0.05,1,0,1,1,1\n";
        assert!(matches!(SampleLog::read_csv(bad.as_bytes()), Err(IdentificationError::InvalidLog(_))));
        let missing = "t_s,tdu_speed_rad_s\n0,1\n";
        assert!(SampleLog::read_csv(missing.as_bytes()).is_err());
    }

    #[test]
    fn identify_reports_missing_direction() {
        let fs = 100.0;
        let mut log = SampleLog::with_capacity(fs, 0);
        for k in 0..400 {
            let tension = 10.0 + (k % 50) as f64;
            log.push(k as f64 / fs, 1.0, 0.0, 0.05 * tension, tension, 0.8);
        }
        match identify(&log, &SteadyStateCriteria::default()) {
            Err(IdentificationError::MissingDirection(Direction::Lowering)) => {}
            other => panic!("{other:?}"),
        }
    }
}
