//! Digital Butterworth design and zero-phase (forward-backward) filtering.
//!
//! Filters are designed from the analog prototype with prewarped band edges
//! and the bilinear transform, then stored as transfer-function coefficients.
//! Forward-backward application squares the magnitude response and cancels
//! the phase.

use rustfft::num_complex::Complex64;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("filter order must be >= 1")]
    ZeroOrder,
    #[error("cutoff {cutoff} Hz must lie in (0, {nyquist}) Hz")]
    CutoffOutOfRange { cutoff: f64, nyquist: f64 },
    #[error("band edges must satisfy 0 < low < high (got {low} and {high})")]
    InvalidBand { low: f64, high: f64 },
    #[error("signal of {len} samples is too short, need more than {needed}")]
    SignalTooShort { len: usize, needed: usize },
}

/// Transfer-function coefficients, `a[0] == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Butterworth {
    pub b: Vec<f64>,
    pub a: Vec<f64>,
}

fn check_cutoff(cutoff: f64, sample_rate: f64) -> Result<(), FilterError> {
    let nyquist = 0.5 * sample_rate;
    if !(cutoff.is_finite() && cutoff > 0.0 && cutoff < nyquist) {
        return Err(FilterError::CutoffOutOfRange { cutoff, nyquist });
    }
    Ok(())
}

/// Left-half-plane poles of the unit-cutoff analog Butterworth prototype.
fn prototype_poles(order: usize) -> Vec<Complex64> {
    (0..order)
        .map(|k| {
            let angle = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            Complex64::from_polar(1.0, angle)
        })
        .collect()
}

fn prewarp(freq: f64, sample_rate: f64) -> f64 {
    2.0 * sample_rate * (PI * freq / sample_rate).tan()
}

/// Monic polynomial with the given roots, highest power first.
fn poly(roots: &[Complex64]) -> Vec<f64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, &ci) in c.iter().enumerate() {
            next[i] += ci;
            next[i + 1] -= ci * r;
        }
        c = next;
    }
    // roots come in conjugate pairs
    c.into_iter().map(|z| z.re).collect()
}

fn bilinear(s: Complex64, sample_rate: f64) -> Complex64 {
    let fs2 = 2.0 * sample_rate;
    (fs2 + s) / (fs2 - s)
}

impl Butterworth {
    pub fn lowpass(order: usize, cutoff: f64, sample_rate: f64) -> Result<Self, FilterError> {
        if order == 0 {
            return Err(FilterError::ZeroOrder);
        }
        check_cutoff(cutoff, sample_rate)?;
        let wc = prewarp(cutoff, sample_rate);
        let poles: Vec<_> = prototype_poles(order)
            .into_iter()
            .map(|p| bilinear(p * wc, sample_rate))
            .collect();
        let zeros = vec![Complex64::new(-1.0, 0.0); order];
        let mut filter = Self {
            b: poly(&zeros),
            a: poly(&poles),
        };
        filter.normalize_at(0.0);
        Ok(filter)
    }

    pub fn bandpass(order: usize, low: f64, high: f64, sample_rate: f64) -> Result<Self, FilterError> {
        if order == 0 {
            return Err(FilterError::ZeroOrder);
        }
        if !(low > 0.0 && low < high) {
            return Err(FilterError::InvalidBand { low, high });
        }
        check_cutoff(low, sample_rate)?;
        check_cutoff(high, sample_rate)?;
        let wl = prewarp(low, sample_rate);
        let wh = prewarp(high, sample_rate);
        let bw = wh - wl;
        let w0 = (wl * wh).sqrt();
        let mut poles = Vec::with_capacity(2 * order);
        for p in prototype_poles(order) {
            let p_lp = p * (0.5 * bw);
            let disc = (p_lp * p_lp - w0 * w0).sqrt();
            poles.push(bilinear(p_lp + disc, sample_rate));
            poles.push(bilinear(p_lp - disc, sample_rate));
        }
        // order zeros at s = 0 map to z = 1, order zeros at infinity to z = -1
        let mut zeros = vec![Complex64::new(1.0, 0.0); order];
        zeros.extend(std::iter::repeat_n(Complex64::new(-1.0, 0.0), order));
        let mut filter = Self {
            b: poly(&zeros),
            a: poly(&poles),
        };
        let center = 2.0 * (w0 / (2.0 * sample_rate)).atan();
        filter.normalize_at(center);
        Ok(filter)
    }

    /// Scales `b` so the gain at the digital frequency `omega` (rad/sample) is one.
    fn normalize_at(&mut self, omega: f64) {
        let g = self.response(omega).norm();
        for c in &mut self.b {
            *c /= g;
        }
    }

    /// Complex frequency response at `omega` rad/sample.
    pub fn response(&self, omega: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -omega);
        eval_poly(&self.b, z_inv) / eval_poly(&self.a, z_inv)
    }

    /// Number of taps of the longer coefficient vector minus one.
    pub fn order(&self) -> usize {
        self.a.len().max(self.b.len()) - 1
    }

    /// Padding used on each side by [`Butterworth::filtfilt`].
    pub fn pad_len(&self) -> usize {
        3 * self.a.len().max(self.b.len())
    }

    /// Direct-form II transposed pass with initial state `zi`.
    pub fn lfilter(&self, x: &[f64], zi: &[f64]) -> Vec<f64> {
        let n = self.a.len();
        let mut z = zi.to_vec();
        let mut y = Vec::with_capacity(x.len());
        for &xi in x {
            let yi = self.b[0] * xi + z[0];
            for i in 0..n - 2 {
                z[i] = self.b[i + 1] * xi + z[i + 1] - self.a[i + 1] * yi;
            }
            z[n - 2] = self.b[n - 1] * xi - self.a[n - 1] * yi;
            y.push(yi);
        }
        y
    }

    /// Steady-state filter state for a unit step input.
    pub fn steady_state(&self) -> Vec<f64> {
        let m = self.a.len() - 1;
        // (I - A^T) zi = b[1..] - a[1..] b[0], A the companion matrix of a
        let mut mat = vec![vec![0.0; m]; m];
        for (i, row) in mat.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for i in 0..m {
            mat[i][0] += self.a[i + 1];
            if i + 1 < m {
                mat[i][i + 1] -= 1.0;
            }
        }
        let rhs: Vec<f64> = (0..m).map(|i| self.b[i + 1] - self.a[i + 1] * self.b[0]).collect();
        solve(mat, rhs)
    }

    /// Zero-phase forward-backward filtering with odd reflective padding and
    /// steady-state initial conditions at both ends.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>, FilterError> {
        let pad = self.pad_len();
        if x.len() <= pad {
            return Err(FilterError::SignalTooShort { len: x.len(), needed: pad });
        }
        let n = x.len();
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let zi = self.steady_state();
        let scaled = |v: f64| zi.iter().map(|z| z * v).collect::<Vec<_>>();
        let mut y = self.lfilter(&ext, &scaled(ext[0]));
        y.reverse();
        let mut y = self.lfilter(&y, &scaled(y[0]));
        y.reverse();
        Ok(y[pad..pad + n].to_vec())
    }
}

/// `c[0] + c[1] z^-1 + ...` by Horner's rule.
fn eval_poly(c: &[f64], z_inv: Complex64) -> Complex64 {
    c.iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &ci| acc * z_inv + ci)
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn solve(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Vec<f64> {
    let n = rhs.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap_or(col);
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= factor * m[col][k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
        x[row] = (rhs[row] - s) / m[row][row];
    }
    x
}

/// Zero-phase low-pass of `signal`.
pub fn zero_phase_lowpass(signal: &[f64], cutoff: f64, order: usize, sample_rate: f64) -> Result<Vec<f64>, FilterError> {
    Butterworth::lowpass(order, cutoff, sample_rate)?.filtfilt(signal)
}

/// Zero-phase band-pass of `signal`; `order` is the prototype order.
pub fn zero_phase_bandpass(
    signal: &[f64],
    low: f64,
    high: f64,
    order: usize,
    sample_rate: f64,
) -> Result<Vec<f64>, FilterError> {
    Butterworth::bandpass(order, low, high, sample_rate)?.filtfilt(signal)
}

/// Sample rate of a uniformly sampled time vector, snapped to the nearest
/// integer when within 1 ppm of it.
pub fn infer_sample_rate(time: &[f64]) -> Option<f64> {
    let n = time.len();
    if n < 2 {
        return None;
    }
    let span = time[n - 1] - time[0];
    if !(span.is_finite() && span > 0.0) {
        return None;
    }
    let fs = (n - 1) as f64 / span;
    let snapped = fs.round();
    Some(if (fs - snapped).abs() < 1e-6 * fs { snapped } else { fs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Magnitude of a prewarped bilinear Butterworth low-pass, from the analog formula.
    fn lowpass_gain(f: f64, fc: f64, order: usize, fs: f64) -> f64 {
        let ratio = (PI * f / fs).tan() / (PI * fc / fs).tan();
        1.0 / (1.0 + ratio.powi(2 * order as i32)).sqrt()
    }

    fn bandpass_gain(f: f64, low: f64, high: f64, order: usize, fs: f64) -> f64 {
        let w = (PI * f / fs).tan();
        let wl = (PI * low / fs).tan();
        let wh = (PI * high / fs).tan();
        let x = (w * w - wl * wh) / (w * (wh - wl));
        1.0 / (1.0 + x.powi(2 * order as i32)).sqrt()
    }

    #[test]
    fn lowpass_matches_analytic_magnitude() {
        let f = Butterworth::lowpass(3, 5.0, 1000.0).unwrap();
        assert_eq!(f.a.len(), 4);
        for freq in [0.0, 1.0, 5.0, 10.0, 50.0, 200.0] {
            let got = f.response(2.0 * PI * freq / 1000.0).norm();
            let want = lowpass_gain(freq, 5.0, 3, 1000.0);
            assert!((got - want).abs() <= 1e-9 * want.max(1e-6), "{freq}: {got} vs {want}");
        }
    }

    #[test]
    fn bandpass_matches_analytic_magnitude() {
        let f = Butterworth::bandpass(3, 20.0, 400.0, 2000.0).unwrap();
        assert_eq!(f.a.len(), 7);
        for freq in [5.0, 20.0, 90.0, 100.0, 400.0, 700.0] {
            let got = f.response(2.0 * PI * freq / 2000.0).norm();
            let want = bandpass_gain(freq, 20.0, 400.0, 3, 2000.0);
            assert!((got - want).abs() <= 1e-8 * want.max(1e-6), "{freq}: {got} vs {want}");
        }
    }

    #[test]
    fn dc_passes_unchanged() {
        let x = vec![3.25; 400];
        let y = zero_phase_lowpass(&x, 5.0, 3, 1000.0).unwrap();
        for v in y {
            assert!((v - 3.25).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(zero_phase_lowpass(&[0.0; 100], 500.0, 3, 1000.0), Err(FilterError::CutoffOutOfRange { .. })));
        assert!(matches!(zero_phase_lowpass(&[0.0; 12], 5.0, 3, 1000.0), Err(FilterError::SignalTooShort { .. })));
        assert!(zero_phase_lowpass(&[0.0; 13], 5.0, 3, 1000.0).is_ok());
        assert!(matches!(Butterworth::lowpass(0, 5.0, 100.0), Err(FilterError::ZeroOrder)));
        assert!(matches!(Butterworth::bandpass(3, 400.0, 20.0, 2000.0), Err(FilterError::InvalidBand { .. })));
        assert!(Butterworth::bandpass(3, 20.0, 1000.0, 2000.0).is_err());
    }

    fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| (2.0 * PI * freq * k as f64 / fs).sin()).collect()
    }

    #[test]
    fn in_band_and_stop_band_sinusoids() {
        let fs = 1000.0;
        let x = sine(1.0, fs, 10_000);
        let y = zero_phase_lowpass(&x, 5.0, 3, fs).unwrap();
        let mid = 4000..6000;
        let peak_x = mid.clone().map(|k| x[k].abs()).fold(0.0, f64::max);
        let peak_y = mid.clone().map(|k| y[k].abs()).fold(0.0, f64::max);
        assert!(peak_y / peak_x >= 0.999);

        let x = sine(50.0, fs, 10_000);
        let y = zero_phase_lowpass(&x, 5.0, 3, fs).unwrap();
        let peak_y = mid.map(|k| y[k].abs()).fold(0.0, f64::max);
        assert!(peak_y < 1e-5);
    }

    proptest! {
        #[test]
        fn filtfilt_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let n = 256;
            let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            };
            let x: Vec<f64> = (0..n).map(|_| next()).collect();
            let y: Vec<f64> = (0..n).map(|_| next()).collect();
            let f = Butterworth::lowpass(3, 5.0, 1000.0).unwrap();
            let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = f.filtfilt(&combo).unwrap();
            let fx = f.filtfilt(&x).unwrap();
            let fy = f.filtfilt(&y).unwrap();
            let scale = lhs.iter().fold(1e-3f64, |m, v| m.max(v.abs()));
            for i in 0..n {
                prop_assert!((lhs[i] - (a * fx[i] + b * fy[i])).abs() <= 1e-10 * scale);
            }
        }
    }
}
