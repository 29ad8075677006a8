//! Figures of merit: Welch PSD, ACLR, zero-forcing EVM and PAPR CCDF.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{DpdError, Result};
use crate::numerics::{align, estimate_delay_and_gain, ComplexSignal};
use crate::waveform::{demodulate, OfdmConfig};

/// Default Welch segment length; 30 kHz resolution at 122.88 MHz.
pub const DEFAULT_SEGMENT: usize = 4096;
pub const DEFAULT_OVERLAP: f64 = 0.5;

/// Two-sided power spectrum, ordered from `−fs/2` upward.
///
/// `power[k]` is the mean power falling in bin `k`, so the bins sum to the
/// average power of the signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psd {
    pub freq_hz: Vec<f64>,
    pub power: Vec<f64>,
}

impl Psd {
    pub fn total_power(&self) -> f64 {
        self.power.iter().sum()
    }

    /// Power in `[lo, hi]` Hz, bin centres inclusive.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        self.freq_hz
            .iter()
            .zip(&self.power)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .map(|(_, p)| p)
            .sum()
    }

    /// Per-bin level in dB relative to one unit of power per milliunit,
    /// i.e. dBm per bin when the samples are volts across 1 Ω.
    pub fn dbm_per_bin(&self) -> Vec<f64> {
        self.power
            .iter()
            .map(|p| 10.0 * (p.max(1e-300) * 1e3).log10())
            .collect()
    }

    fn nyquist(&self) -> f64 {
        match self.freq_hz.first() {
            Some(f) => -f,
            None => 0.0,
        }
    }
}

/// Hann-windowed averaged periodogram.
pub fn welch_psd(signal: &ComplexSignal, segment: usize, overlap_fraction: f64) -> Result<Psd> {
    let n = signal.len();
    if segment < 2 || segment > n {
        return Err(DpdError::invalid(format!(
            "segment length {segment} must be in [2, {n}]"
        )));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(DpdError::invalid(format!(
            "overlap fraction must be in [0, 1), got {overlap_fraction}"
        )));
    }
    let hop = ((segment as f64 * (1.0 - overlap_fraction)).round() as usize).max(1);
    let window: Vec<f64> = (0..segment)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / segment as f64).cos())
        .collect();
    let wpow: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(segment);

    let mut acc = vec![0.0; segment];
    let mut count = 0usize;
    let mut buf = vec![Complex64::new(0.0, 0.0); segment];
    let mut start = 0;
    while start + segment <= n {
        for (b, (x, w)) in buf
            .iter_mut()
            .zip(signal.samples[start..start + segment].iter().zip(&window))
        {
            *b = x * w;
        }
        fft.process(&mut buf);
        for (a, v) in acc.iter_mut().zip(&buf) {
            *a += v.norm_sqr();
        }
        count += 1;
        start += hop;
    }
    // Σ_k |X_k|² = N·Σ|x·w|², and Σ|x·w|² / Σw² estimates the mean power.
    let scale = 1.0 / (wpow * segment as f64 * count as f64);
    let half = segment / 2;
    let fs = signal.sample_rate_hz;
    let (freq_hz, power) = (0..segment)
        .map(|i| {
            let k = (i + segment - half) % segment;
            (
                (i as f64 - half as f64) * fs / segment as f64,
                acc[k] * scale,
            )
        })
        .unzip();
    Ok(Psd { freq_hz, power })
}

/// ACLR in dB from a PSD, as `(left, right)` with the desired channel
/// centred at DC and the adjacent channels at `∓adjacent_offset_hz`.
pub fn aclr_from_psd(psd: &Psd, channel_bw_hz: f64, adjacent_offset_hz: f64) -> Result<(f64, f64)> {
    if !(channel_bw_hz > 0.0) || !(adjacent_offset_hz > 0.0) {
        return Err(DpdError::invalid(
            "channel bandwidth and offset must be positive",
        ));
    }
    let half = channel_bw_hz / 2.0;
    if adjacent_offset_hz + half > psd.nyquist() {
        return Err(DpdError::invalid(format!(
            "adjacent channel edge {:.0} Hz exceeds Nyquist {:.0} Hz",
            adjacent_offset_hz + half,
            psd.nyquist()
        )));
    }
    let desired = psd.band_power(-half, half);
    let left = psd.band_power(-adjacent_offset_hz - half, -adjacent_offset_hz + half);
    let right = psd.band_power(adjacent_offset_hz - half, adjacent_offset_hz + half);
    let ratio = |adj: f64| 10.0 * (desired / adj.max(1e-300)).log10();
    Ok((ratio(left), ratio(right)))
}

/// Segment length used by [`aclr`] for a signal of `len` samples.
pub fn default_segment(len: usize) -> usize {
    if len >= DEFAULT_SEGMENT {
        DEFAULT_SEGMENT
    } else {
        (len / 2).next_power_of_two().min(len).max(2)
    }
}

pub fn aclr(
    signal: &ComplexSignal,
    channel_bw_hz: f64,
    adjacent_offset_hz: f64,
) -> Result<(f64, f64)> {
    let psd = welch_psd(signal, default_segment(signal.len()), DEFAULT_OVERLAP)?;
    aclr_from_psd(&psd, channel_bw_hz, adjacent_offset_hz)
}

/// EVM in percent after per-subcarrier least-squares zero-forcing.
///
/// `received` must already be aligned to the symbol grid of `cfg`.
pub fn evm(
    received: &ComplexSignal,
    reference_symbols: &[Vec<Complex64>],
    cfg: &OfdmConfig,
) -> Result<f64> {
    if reference_symbols.len() != cfg.num_symbols
        || reference_symbols
            .iter()
            .any(|s| s.len() != cfg.active_subcarriers)
    {
        return Err(DpdError::invalid(format!(
            "reference grid must be {} symbols × {} subcarriers",
            cfg.num_symbols, cfg.active_subcarriers
        )));
    }
    let rx = demodulate(cfg, &received.samples)?;
    let mut err = 0.0;
    let mut reference = 0.0;
    for k in 0..cfg.active_subcarriers {
        let (mut num, mut den) = (Complex64::new(0.0, 0.0), 0.0);
        for (r, t) in rx.iter().zip(reference_symbols) {
            num += r[k] * t[k].conj();
            den += t[k].norm_sqr();
        }
        let h = num / den;
        if h.norm() == 0.0 {
            return Err(DpdError::Alignment(format!(
                "subcarrier {k} carries no energy; is the signal aligned?"
            )));
        }
        for (r, t) in rx.iter().zip(reference_symbols) {
            err += (r[k] / h - t[k]).norm_sqr();
            reference += t[k].norm_sqr();
        }
    }
    Ok(100.0 * (err / reference).sqrt())
}

/// Empirical CCDF of instantaneous power over mean power, on a 0.1 dB grid
/// starting at 0 dB: `(papr_db, P[power/mean > papr])`.
pub fn papr_ccdf(signal: &ComplexSignal) -> Result<Vec<(f64, f64)>> {
    let sorted = sorted_normalized_power(signal)?;
    let n = sorted.len() as f64;
    let max_db = 10.0 * sorted[sorted.len() - 1].log10();
    let steps = (max_db / 0.1).ceil().max(0.0) as usize + 1;
    Ok((0..=steps)
        .map(|i| {
            let db = i as f64 * 0.1;
            let level = 10f64.powf(db / 10.0);
            let above = sorted.len() - sorted.partition_point(|&p| p <= level);
            (db, above as f64 / n)
        })
        .collect())
}

/// Level in dB that the instantaneous PAPR exceeds with probability `p`.
pub fn papr_at_probability(signal: &ComplexSignal, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(DpdError::invalid(format!(
            "probability must be in (0, 1), got {p}"
        )));
    }
    let needed = (1.0 / p).ceil() as usize;
    if signal.len() < needed {
        return Err(DpdError::invalid(format!(
            "{} samples are too few for the {p:e} point (need {needed})",
            signal.len()
        )));
    }
    let sorted = sorted_normalized_power(signal)?;
    // Smallest sample level exceeded by at most a fraction `p` of samples.
    let exceed = (p * sorted.len() as f64).floor() as usize;
    Ok(10.0 * sorted[sorted.len() - 1 - exceed].log10())
}

fn sorted_normalized_power(signal: &ComplexSignal) -> Result<Vec<f64>> {
    let mean = signal.mean_power();
    if signal.is_empty() || mean == 0.0 {
        return Err(DpdError::invalid("PAPR of an empty or all-zero signal"));
    }
    let mut p: Vec<f64> = signal.samples.iter().map(|v| v.norm_sqr() / mean).collect();
    p.sort_by(f64::total_cmp);
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub evm_pct: f64,
    pub aclr_db_left: f64,
    pub aclr_db_right: f64,
    pub papr_db_at_1e4: f64,
    pub psd: Psd,
}

impl MetricsReport {
    pub fn worst_aclr_db(&self) -> f64 {
        self.aclr_db_left.min(self.aclr_db_right)
    }

    pub fn is_finite(&self) -> bool {
        [
            self.evm_pct,
            self.aclr_db_left,
            self.aclr_db_right,
            self.papr_db_at_1e4,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Full report for a PA output `received` whose payload was `reference`
/// (the frame before predistortion) with symbols `reference_symbols`.
pub fn measure(
    received: &ComplexSignal,
    reference: &ComplexSignal,
    reference_symbols: &[Vec<Complex64>],
    cfg: &OfdmConfig,
) -> Result<MetricsReport> {
    let psd = welch_psd(received, default_segment(received.len()), DEFAULT_OVERLAP)?;
    let (left, right) = aclr_from_psd(&psd, cfg.channel_bandwidth_hz(), cfg.channel_spacing_hz())?;
    let aligned = align(received, estimate_delay_and_gain(reference, received)?);
    let evm_pct = evm(&aligned, reference_symbols, cfg)?;
    let papr = papr_at_probability(received, 1e-4)?;
    Ok(MetricsReport {
        evm_pct,
        aclr_db_left: left,
        aclr_db_right: right,
        papr_db_at_1e4: papr,
        psd,
    })
}
