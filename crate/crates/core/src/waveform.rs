//! Desk-scale OFDM downlink waveform with windowing and iterative
//! clipping-and-filtering crest factor reduction.
//!
//! Subcarriers `±1 … ±active/2` carry random square QAM; DC is nulled. The
//! IFFT runs on the oversampled grid of `fft_size·oversampling` points, each
//! symbol gets a cyclic prefix, and consecutive symbols are joined with a
//! raised-cosine overlap (WOLA) whose tapers sit inside the cyclic prefix.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{DpdError, Result};
use crate::numerics::ComplexSignal;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Fraction of the channel occupied by active subcarriers.
pub const OCCUPANCY: f64 = 0.9;

/// Clipping-and-filtering iterations used by the experiment pipeline.
pub const DEFAULT_PAPR_ITERATIONS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfdmConfig {
    pub fft_size: usize,
    pub active_subcarriers: usize,
    /// Cyclic prefix length at the non-oversampled rate.
    pub cp_length: usize,
    pub qam_order: usize,
    pub oversampling: usize,
    pub num_symbols: usize,
    pub seed: u64,
    pub subcarrier_spacing_hz: f64,
    /// Raised-cosine edge length at the non-oversampled rate.
    pub window_length: usize,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        Self {
            fft_size: 1024,
            active_subcarriers: 600,
            cp_length: 72,
            qam_order: 64,
            oversampling: 4,
            num_symbols: 14,
            seed: 1,
            subcarrier_spacing_hz: 30e3,
            window_length: 8,
        }
    }
}

impl OfdmConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(DpdError::invalid(m));
        if !self.fft_size.is_power_of_two() || self.fft_size < 8 {
            return err(format!(
                "fft_size must be a power of two ≥ 8, got {}",
                self.fft_size
            ));
        }
        if self.active_subcarriers == 0
            || !self.active_subcarriers.is_multiple_of(2)
            || self.active_subcarriers >= self.fft_size
        {
            return err(format!(
                "active_subcarriers must be even, positive and below fft_size, got {}",
                self.active_subcarriers
            ));
        }
        if ![4, 16, 64, 256].contains(&self.qam_order) {
            return err(format!(
                "qam_order must be 4, 16, 64 or 256, got {}",
                self.qam_order
            ));
        }
        if self.oversampling == 0 || self.num_symbols == 0 {
            return err("oversampling and num_symbols must be positive".into());
        }
        if self.window_length > self.cp_length {
            return err(format!(
                "window_length {} must not exceed cp_length {}",
                self.window_length, self.cp_length
            ));
        }
        if !(self.subcarrier_spacing_hz > 0.0) {
            return err("subcarrier spacing must be positive".into());
        }
        Ok(())
    }

    /// IFFT size on the oversampled grid.
    pub fn ifft_size(&self) -> usize {
        self.fft_size * self.oversampling
    }

    pub fn cp_samples(&self) -> usize {
        self.cp_length * self.oversampling
    }

    pub fn window_samples(&self) -> usize {
        self.window_length * self.oversampling
    }

    pub fn symbol_samples(&self) -> usize {
        self.ifft_size() + self.cp_samples()
    }

    pub fn frame_samples(&self) -> usize {
        self.symbol_samples() * self.num_symbols
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.subcarrier_spacing_hz * self.ifft_size() as f64
    }

    /// Measurement bandwidth, `active_subcarriers · Δf`.
    pub fn channel_bandwidth_hz(&self) -> f64 {
        self.active_subcarriers as f64 * self.subcarrier_spacing_hz
    }

    /// Nominal channel spacing: the occupied bandwidth fills 90 % of the
    /// channel, leaving a guard band between neighbours. Adjacent channels
    /// are measured at this offset.
    pub fn channel_spacing_hz(&self) -> f64 {
        self.channel_bandwidth_hz() / OCCUPANCY
    }

    /// FFT bins of the active subcarriers, ordered `−N/2 … −1, 1 … N/2`.
    pub fn active_bins(&self) -> Vec<usize> {
        let half = (self.active_subcarriers / 2) as isize;
        let n = self.ifft_size() as isize;
        (-half..=half)
            .filter(|&k| k != 0)
            .map(|k| k.rem_euclid(n) as usize)
            .collect()
    }

    /// Smallest symbol count whose frame holds at least `samples` samples.
    pub fn with_min_samples(mut self, samples: usize) -> Self {
        self.num_symbols = samples.div_ceil(self.symbol_samples()).max(1);
        self
    }
}

/// Generated frame: time signal plus the transmitted QAM points
/// (`symbols[s][k]` for symbol `s` and active subcarrier `k`).
#[derive(Debug, Clone, PartialEq)]
pub struct OfdmFrame {
    pub signal: ComplexSignal,
    pub symbols: Vec<Vec<Complex64>>,
}

/// Unit-average-energy square QAM constellation.
pub fn qam_constellation(order: usize) -> Vec<Complex64> {
    let side = (order as f64).sqrt().round() as usize;
    let norm = (2.0 * (order as f64 - 1.0) / 3.0).sqrt();
    let levels: Vec<f64> = (0..side)
        .map(|i| (2 * i) as f64 - (side - 1) as f64)
        .collect();
    levels
        .iter()
        .flat_map(|&i| levels.iter().map(move |&q| Complex64::new(i, q) / norm))
        .collect()
}

struct Transforms {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    n: usize,
}

impl Transforms {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            n,
        }
    }

    /// Time-domain body (unnormalized inverse DFT) from active-bin values.
    fn body_from_bins(&self, bins: &[usize], values: &[Complex64]) -> Vec<Complex64> {
        let mut buf = vec![ZERO; self.n];
        for (&b, &v) in bins.iter().zip(values) {
            buf[b] = v;
        }
        self.inv.process(&mut buf);
        buf
    }

    fn bins_from_body(&self, bins: &[usize], body: &[Complex64]) -> Vec<Complex64> {
        let mut buf = body.to_vec();
        self.fwd.process(&mut buf);
        bins.iter().map(|&b| buf[b] / self.n as f64).collect()
    }
}

/// Assemble bodies into a frame with cyclic prefixes and WOLA edges.
fn assemble(cfg: &OfdmConfig, bodies: &[Vec<Complex64>]) -> Vec<Complex64> {
    let n = cfg.ifft_size();
    let cp = cfg.cp_samples();
    let w = cfg.window_samples();
    let len = cfg.symbol_samples();
    let total = len * bodies.len();
    let ramp: Vec<f64> = (0..w)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::PI * (i as f64 + 0.5) / w as f64).cos()))
        .collect();
    let mut out = vec![ZERO; total];
    for (s, body) in bodies.iter().enumerate() {
        let start = s * len;
        // [CP | body | suffix]; suffix continues the body cyclically.
        for i in 0..len + w {
            let pos = start + i;
            if pos >= total {
                break;
            }
            let v = body[(i + n - cp) % n];
            let gain = if w > 0 && i < w && s > 0 {
                ramp[i]
            } else if i >= len {
                1.0 - ramp[i - len]
            } else {
                1.0
            };
            out[pos] += v * gain;
        }
    }
    out
}

fn extract_bodies(cfg: &OfdmConfig, x: &[Complex64]) -> Vec<Vec<Complex64>> {
    let n = cfg.ifft_size();
    let cp = cfg.cp_samples();
    let len = cfg.symbol_samples();
    (0..cfg.num_symbols)
        .map(|s| x[s * len + cp..s * len + cp + n].to_vec())
        .collect()
}

fn normalize_power(x: &mut [Complex64]) {
    let p = crate::numerics::mean_power(x);
    if p > 0.0 {
        let k = 1.0 / p.sqrt();
        x.iter_mut().for_each(|v| *v *= k);
    }
}

/// Seeded random QAM frame with unit average power.
pub fn generate_ofdm(cfg: &OfdmConfig) -> Result<OfdmFrame> {
    cfg.validate()?;
    let constellation = qam_constellation(cfg.qam_order);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bins = cfg.active_bins();
    let tf = Transforms::new(cfg.ifft_size());

    let symbols: Vec<Vec<Complex64>> = (0..cfg.num_symbols)
        .map(|_| {
            (0..cfg.active_subcarriers)
                .map(|_| constellation[rng.random_range(0..constellation.len())])
                .collect()
        })
        .collect();
    let bodies: Vec<Vec<Complex64>> = symbols
        .iter()
        .map(|s| tf.body_from_bins(&bins, s))
        .collect();
    let mut x = assemble(cfg, &bodies);
    normalize_power(&mut x);
    Ok(OfdmFrame {
        signal: ComplexSignal::new(x, cfg.sample_rate_hz())?,
        symbols,
    })
}

/// Iterative clipping and filtering.
///
/// Each iteration clips the symbol bodies at `target_papr_db` above their
/// RMS level, then removes everything outside the active subcarriers. The
/// result is reassembled with cyclic prefixes and windowing and rescaled to
/// unit average power. Signals already at or below the target are returned
/// unchanged.
pub fn reduce_papr(
    signal: &ComplexSignal,
    target_papr_db: f64,
    iterations: usize,
    cfg: &OfdmConfig,
) -> Result<ComplexSignal> {
    cfg.validate()?;
    if !(target_papr_db > 0.0) {
        return Err(DpdError::invalid(format!(
            "target PAPR must be positive, got {target_papr_db} dB"
        )));
    }
    let rms = signal.rms();
    if rms == 0.0 || signal.peak() <= rms * 10f64.powf(target_papr_db / 20.0) {
        return Ok(signal.clone());
    }
    if signal.len() < cfg.frame_samples() {
        return Err(DpdError::invalid(format!(
            "signal has {} samples, frame needs {}",
            signal.len(),
            cfg.frame_samples()
        )));
    }

    let bins = cfg.active_bins();
    let tf = Transforms::new(cfg.ifft_size());
    let mut bodies = extract_bodies(cfg, &signal.samples);
    let ratio = 10f64.powf(target_papr_db / 20.0);
    for _ in 0..iterations {
        let p: f64 = bodies
            .iter()
            .map(|b| crate::numerics::mean_power(b))
            .sum::<f64>()
            / bodies.len() as f64;
        let threshold = p.sqrt() * ratio;
        for body in &mut bodies {
            for v in body.iter_mut() {
                let m = v.norm();
                if m > threshold {
                    *v *= threshold / m;
                }
            }
            let freq = tf.bins_from_body(&bins, body);
            *body = tf.body_from_bins(&bins, &freq);
        }
    }
    let mut x = assemble(cfg, &bodies);
    normalize_power(&mut x);
    Ok(signal.with_samples(x))
}

/// Active-subcarrier values of every symbol in an aligned received frame.
pub(crate) fn demodulate(cfg: &OfdmConfig, x: &[Complex64]) -> Result<Vec<Vec<Complex64>>> {
    cfg.validate()?;
    if x.len() < cfg.frame_samples() {
        return Err(DpdError::Alignment(format!(
            "received signal has {} samples, the symbol grid needs {}",
            x.len(),
            cfg.frame_samples()
        )));
    }
    let bins = cfg.active_bins();
    let tf = Transforms::new(cfg.ifft_size());
    Ok(extract_bodies(cfg, x)
        .iter()
        .map(|b| tf.bins_from_body(&bins, b))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> OfdmConfig {
        OfdmConfig {
            fft_size: 64,
            active_subcarriers: 36,
            cp_length: 8,
            qam_order: 16,
            oversampling: 2,
            num_symbols: 4,
            seed: 3,
            subcarrier_spacing_hz: 15e3,
            window_length: 2,
        }
    }

    #[test]
    fn constellation_has_unit_energy() {
        for order in [4, 16, 64, 256] {
            let c = qam_constellation(order);
            assert_eq!(c.len(), order);
            let e: f64 = c.iter().map(|v| v.norm_sqr()).sum::<f64>() / order as f64;
            assert!((e - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn active_bins_are_symmetric_without_dc() {
        let cfg = small_cfg();
        let bins = cfg.active_bins();
        assert_eq!(bins.len(), 36);
        assert!(!bins.contains(&0));
        assert_eq!(bins[17], 127);
        assert_eq!(bins[18], 1);
    }

    #[test]
    fn frame_is_deterministic_and_normalized() {
        let cfg = small_cfg();
        let a = generate_ofdm(&cfg).unwrap();
        let b = generate_ofdm(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.signal.len(), cfg.frame_samples());
        assert!((a.signal.mean_power() - 1.0).abs() < 1e-12);
        let other = generate_ofdm(&OfdmConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(a.signal, other.signal);
    }

    #[test]
    fn demodulation_recovers_symbols_up_to_scale() {
        let cfg = small_cfg();
        let f = generate_ofdm(&cfg).unwrap();
        let rx = demodulate(&cfg, &f.signal.samples).unwrap();
        let k = rx[0][0] / f.symbols[0][0];
        for (rs, ts) in rx.iter().zip(&f.symbols) {
            for (r, t) in rs.iter().zip(ts) {
                assert!((r - k * t).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        for bad in [
            OfdmConfig {
                fft_size: 100,
                ..small_cfg()
            },
            OfdmConfig {
                active_subcarriers: 35,
                ..small_cfg()
            },
            OfdmConfig {
                active_subcarriers: 64,
                ..small_cfg()
            },
            OfdmConfig {
                qam_order: 8,
                ..small_cfg()
            },
            OfdmConfig {
                window_length: 9,
                ..small_cfg()
            },
        ] {
            assert!(generate_ofdm(&bad).is_err());
        }
    }

    #[test]
    fn constant_envelope_is_untouched() {
        let cfg = small_cfg();
        let x = ComplexSignal::new(
            (0..cfg.frame_samples())
                .map(|n| Complex64::from_polar(1.0, 0.1 * n as f64))
                .collect(),
            1.0,
        )
        .unwrap();
        assert_eq!(reduce_papr(&x, 7.0, 6, &cfg).unwrap(), x);
    }

    #[test]
    fn nonpositive_target_rejected() {
        let cfg = small_cfg();
        let f = generate_ofdm(&cfg).unwrap();
        assert!(reduce_papr(&f.signal, 0.0, 4, &cfg).is_err());
    }

    #[test]
    fn clipping_keeps_spectrum_in_band() {
        let cfg = small_cfg();
        let f = generate_ofdm(&cfg).unwrap();
        let y = reduce_papr(&f.signal, 5.0, 4, &cfg).unwrap();
        // Every symbol body is still a combination of active subcarriers only.
        let tf = Transforms::new(cfg.ifft_size());
        let bins = cfg.active_bins();
        for body in extract_bodies(&cfg, &y.samples) {
            let vals = tf.bins_from_body(&bins, &body);
            let rebuilt = tf.body_from_bins(&bins, &vals);
            for (a, b) in body.iter().zip(&rebuilt) {
                assert!((a - b).norm() < 1e-12);
            }
        }
        assert!(y.peak() < f.signal.peak());
    }
}
