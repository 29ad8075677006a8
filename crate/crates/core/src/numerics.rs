//! Complex-vector arithmetic, FIR filtering, small dense Hermitian solves and
//! delay/gain alignment shared by every other module.
//!
//! All delay-line style operations assume zero prehistory: samples before
//! the start of a signal are taken as `0`, and outputs keep the input length.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{DpdError, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Complex baseband samples with their sample rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexSignal {
    pub samples: Vec<Complex64>,
    pub sample_rate_hz: f64,
}

impl ComplexSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz > 0.0) || !sample_rate_hz.is_finite() {
            return Err(DpdError::invalid(format!(
                "sample rate must be positive and finite, got {sample_rate_hz}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    /// Build a signal with the same sample rate as `self`.
    pub fn with_samples(&self, samples: Vec<Complex64>) -> Self {
        Self {
            samples,
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }

    pub fn rms(&self) -> f64 {
        self.mean_power().sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().map(|s| s.norm()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        self.with_samples(self.samples.iter().map(|&s| s * factor).collect())
    }

    /// Scale the signal so that its largest magnitude equals `target_peak`.
    ///
    /// This is the normalization applied before training spline models:
    /// callers pick `target_peak = 0.95 * A_max` so the drive stays inside the
    /// LUT range.
    pub fn normalized_to_peak(&self, target_peak: f64) -> Result<Self> {
        let peak = self.peak();
        if peak == 0.0 || !peak.is_finite() {
            return Err(DpdError::invalid("cannot normalize an all-zero signal"));
        }
        Ok(self.scaled(Complex64::new(target_peak / peak, 0.0)))
    }

    pub fn is_finite(&self) -> bool {
        self.samples
            .iter()
            .all(|s| s.re.is_finite() && s.im.is_finite())
    }
}

pub fn mean_power(samples: &[Complex64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / samples.len() as f64
}

/// Dense real matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if n_rows == 0 || n_cols == 0 || rows.iter().any(|r| r.len() != n_cols) {
            return Err(DpdError::invalid("ragged or empty matrix rows"));
        }
        Ok(Self {
            rows: n_rows,
            cols: n_cols,
            data: rows.concat(),
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, Complex64::new(1.0, 0.0));
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(DpdError::invalid(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.cols, "matrix-vector dimension mismatch");
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let scale = self
            .data
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        (0..self.rows).all(|r| {
            (r..self.cols)
                .all(|c| (self.get(r, c) - self.get(c, r).conj()).norm() <= rel_tol * scale)
        })
    }
}

/// Causal FIR filtering with zero prehistory; output length equals input length.
pub fn fir_filter(taps: &[Complex64], signal: &ComplexSignal) -> Result<ComplexSignal> {
    if taps.is_empty() {
        return Err(DpdError::invalid("FIR filter needs at least one tap"));
    }
    Ok(signal.with_samples(fir(taps, &signal.samples)))
}

pub(crate) fn fir(taps: &[Complex64], x: &[Complex64]) -> Vec<Complex64> {
    (0..x.len())
        .map(|n| {
            taps.iter()
                .take(n + 1)
                .enumerate()
                .map(|(k, &h)| h * x[n - k])
                .sum()
        })
        .collect()
}

/// Solve `A x = b` for Hermitian positive-definite `A`.
///
/// The factorization is of the diagonally loaded `A + εI` with
/// `ε = 1e-8·trace(A)/dim`. A few refinement sweeps against the unloaded `A`
/// remove the loading bias along well-conditioned directions while leaving
/// near-null directions regularized.
pub fn solve_hermitian(a: &ComplexMatrix, b: &[Complex64]) -> Result<Vec<Complex64>> {
    let chol = LoadedCholesky::new(a)?;
    if b.len() != a.rows() {
        return Err(DpdError::invalid(format!(
            "right-hand side has length {}, matrix is {}x{}",
            b.len(),
            a.rows(),
            a.cols()
        )));
    }
    if b.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(DpdError::numeric("non-finite right-hand side"));
    }
    Ok(chol.solve_refined(a, b))
}

/// Inverse of a Hermitian positive-definite matrix via [`solve_hermitian`]
/// applied column by column.
pub fn invert_hermitian(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    let chol = LoadedCholesky::new(a)?;
    let n = a.rows();
    let mut inv = ComplexMatrix::zeros(n, n);
    let mut e = vec![ZERO; n];
    for c in 0..n {
        e.iter_mut().for_each(|v| *v = ZERO);
        e[c] = Complex64::new(1.0, 0.0);
        let col = chol.solve_refined(a, &e);
        for (r, v) in col.into_iter().enumerate() {
            inv.set(r, c, v);
        }
    }
    // Symmetrize away rounding asymmetry.
    for r in 0..n {
        for c in r + 1..n {
            let v = 0.5 * (inv.get(r, c) + inv.get(c, r).conj());
            inv.set(r, c, v);
            inv.set(c, r, v.conj());
        }
        let d = inv.get(r, r).re;
        inv.set(r, r, Complex64::new(d, 0.0));
    }
    Ok(inv)
}

const REFINEMENT_SWEEPS: usize = 3;

struct LoadedCholesky {
    n: usize,
    // Lower-triangular factor, row-major.
    l: Vec<Complex64>,
}

impl LoadedCholesky {
    fn new(a: &ComplexMatrix) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(DpdError::invalid(format!(
                "matrix must be square, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        if a.data
            .iter()
            .any(|v| !v.re.is_finite() || !v.im.is_finite())
        {
            return Err(DpdError::numeric("matrix has non-finite entries"));
        }
        let n = a.rows();
        let eps = 1e-8 * a.trace().re / n as f64;
        let mut l = vec![ZERO; n * n];
        for j in 0..n {
            let mut d = a.get(j, j).re + eps;
            for k in 0..j {
                d -= l[j * n + k].norm_sqr();
            }
            if !(d > 0.0) {
                return Err(DpdError::numeric(format!(
                    "matrix is not positive definite (pivot {j} = {d:e})"
                )));
            }
            let d = d.sqrt();
            l[j * n + j] = Complex64::new(d, 0.0);
            for i in j + 1..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k].conj();
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Self { n, l })
    }

    fn solve_loaded(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut y = vec![ZERO; n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        let mut x = vec![ZERO; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[k * n + i].conj() * x[k];
            }
            x[i] = s / self.l[i * n + i].re;
        }
        x
    }

    fn solve_refined(&self, a: &ComplexMatrix, b: &[Complex64]) -> Vec<Complex64> {
        let mut x = self.solve_loaded(b);
        for _ in 0..REFINEMENT_SWEEPS {
            let ax = a.mul_vec(&x);
            let r: Vec<Complex64> = b.iter().zip(&ax).map(|(bi, axi)| bi - axi).collect();
            let dx = self.solve_loaded(&r);
            x.iter_mut().zip(dx).for_each(|(xi, d)| *xi += d);
        }
        x
    }
}

/// Integer delay and complex gain of `observed` relative to `reference`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub delay: isize,
    pub gain: Complex64,
}

/// Estimate `observed[n] ≈ gain · reference[n − delay]`.
///
/// The delay maximizes the magnitude of the cross-correlation over lags with
/// `|lag| ≤ len/2`; the gain is the least-squares scalar over the overlap.
pub fn estimate_delay_and_gain(
    reference: &ComplexSignal,
    observed: &ComplexSignal,
) -> Result<Alignment> {
    const MIN_LEN: usize = 64;
    let x = &reference.samples;
    let y = &observed.samples;
    if x.len() < MIN_LEN || y.len() < MIN_LEN {
        return Err(DpdError::invalid(format!(
            "alignment needs at least {MIN_LEN} samples per signal"
        )));
    }
    if x.iter().all(|v| v.norm_sqr() == 0.0) {
        return Err(DpdError::invalid("reference signal is all zeros"));
    }

    // corr[k] = Σ_n y[n + k] · conj(x[n]), via zero-padded FFTs.
    let n_fft = (x.len() + y.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n_fft);
    let inv = planner.plan_fft_inverse(n_fft);
    let mut xf = x.clone();
    xf.resize(n_fft, ZERO);
    let mut yf = y.clone();
    yf.resize(n_fft, ZERO);
    fwd.process(&mut xf);
    fwd.process(&mut yf);
    let mut cf: Vec<Complex64> = yf.iter().zip(&xf).map(|(a, b)| a * b.conj()).collect();
    inv.process(&mut cf);

    let max_lag = (x.len().min(y.len()) / 2) as isize;
    let mut best = (0isize, -1.0f64);
    for lag in -max_lag..=max_lag {
        let idx = lag.rem_euclid(n_fft as isize) as usize;
        let mag = cf[idx].norm();
        if mag > best.1 {
            best = (lag, mag);
        }
    }
    let delay = best.0;

    let (mut num, mut den) = (ZERO, 0.0);
    for (n, xn) in x.iter().enumerate() {
        let m = n as isize + delay;
        if m >= 0 && (m as usize) < y.len() {
            num += y[m as usize] * xn.conj();
            den += xn.norm_sqr();
        }
    }
    if den == 0.0 {
        return Err(DpdError::Alignment(format!(
            "no overlapping support at delay {delay}"
        )));
    }
    let gain = num / den;
    if gain.norm() == 0.0 || !gain.re.is_finite() || !gain.im.is_finite() {
        return Err(DpdError::Alignment(format!(
            "degenerate gain estimate {gain} at delay {delay}"
        )));
    }
    Ok(Alignment { delay, gain })
}

/// Shift `observed` back by the estimated delay and divide out the gain, so
/// the result lines up sample-by-sample with the reference at unit gain.
pub fn align(observed: &ComplexSignal, alignment: Alignment) -> ComplexSignal {
    let y = &observed.samples;
    let inv_gain = 1.0 / alignment.gain;
    let samples = (0..y.len())
        .map(|n| {
            let m = n as isize + alignment.delay;
            if m >= 0 && (m as usize) < y.len() {
                y[m as usize] * inv_gain
            } else {
                ZERO
            }
        })
        .collect();
    observed.with_samples(samples)
}
