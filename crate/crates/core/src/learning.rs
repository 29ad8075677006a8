//! Sample-adaptive learning rules and the indirect learning loop.
//!
//! All rules minimize the instantaneous squared error `|e|²` between the
//! postdistorter output and the predistorter output `x_dpd` it is trained to
//! reproduce. Updates are conjugate-gradient steps,
//! `θ ← θ − μ·∂|e|²/∂θ*`.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{DpdError, Result};
use crate::metrics;
use crate::models::{MpModel, Predistorter, SmpModel, SphModel};
use crate::numerics::{
    align, estimate_delay_and_gain, invert_hermitian, ComplexMatrix, ComplexSignal,
};
use crate::pa::{pa_apply, PaSimulator};
use crate::spline::{Regressor, SplineConfig, SplineLut};
use crate::waveform::{generate_ofdm, reduce_papr, OfdmConfig};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Block length of the divergence detector.
pub const DIVERGENCE_BLOCK: usize = 512;
/// Growth of the block mean `|e|²` that counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningConfig {
    pub mu_h: f64,
    pub mu_c: f64,
    /// Step size shared by every SMP branch.
    pub mu_q: f64,
    pub mu_w: f64,
    pub ila_iterations: usize,
    pub samples_per_iteration: usize,
    /// Samples used to estimate the MP basis autocorrelation.
    pub autocorr_block: usize,
    /// Divide step sizes by a running mean of `|z|²`.
    pub normalize_steps: bool,
    /// Seed of the PA noise in each iteration.
    pub seed: u64,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            mu_h: 0.005,
            mu_c: 0.02,
            mu_q: 0.02,
            mu_w: 0.002,
            ila_iterations: 5,
            samples_per_iteration: 100_000,
            autocorr_block: 4096,
            normalize_steps: false,
            seed: 7,
        }
    }
}

impl LearningConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, mu) in [
            ("mu_h", self.mu_h),
            ("mu_c", self.mu_c),
            ("mu_q", self.mu_q),
            ("mu_w", self.mu_w),
        ] {
            if !(mu > 0.0) || !mu.is_finite() {
                return Err(DpdError::invalid(format!(
                    "{name} must be positive, got {mu}"
                )));
            }
        }
        if self.ila_iterations == 0 || self.samples_per_iteration == 0 || self.autocorr_block == 0 {
            return Err(DpdError::invalid(
                "ila_iterations, samples_per_iteration and autocorr_block must be positive",
            ));
        }
        Ok(())
    }

    fn step_summary(&self) -> String {
        format!(
            "mu_h={}, mu_c={}, mu_q={}, mu_w={}",
            self.mu_h, self.mu_c, self.mu_q, self.mu_w
        )
    }
}

/// The most recent postdistorter inputs and their spline regressors,
/// newest first. Slots before the start of the stream hold zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    /// Zero LUT with the model's configuration; only its regressors are used.
    indexer: SplineLut,
    z: Vec<Complex64>,
    regressors: Vec<Option<Regressor>>,
}

impl SampleWindow {
    pub fn new(config: SplineConfig, len: usize) -> Result<Self> {
        Ok(Self {
            indexer: SplineLut::zeros(config)?,
            z: vec![ZERO; len],
            regressors: vec![None; len],
        })
    }

    /// Window holding `history` (newest first).
    pub fn from_history(config: SplineConfig, history: &[Complex64]) -> Result<Self> {
        if history.is_empty() {
            return Err(DpdError::invalid("window history must not be empty"));
        }
        let mut w = Self::new(config, history.len())?;
        for &z in history.iter().rev() {
            w.push(z);
        }
        Ok(w)
    }

    pub fn push(&mut self, z: Complex64) {
        let g = self.indexer.regressor_for(z);
        self.push_with(z, Some(g));
    }

    fn push_with(&mut self, z: Complex64, g: Option<Regressor>) {
        self.z.rotate_right(1);
        self.regressors.rotate_right(1);
        self.z[0] = z;
        self.regressors[0] = g;
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.z
    }

    pub fn regressors(&self) -> &[Option<Regressor>] {
        &self.regressors
    }
}

fn check_error(e: Complex64) -> Result<Complex64> {
    if e.re.is_finite() && e.im.is_finite() {
        Ok(e)
    } else {
        Err(DpdError::numeric(format!(
            "non-finite adaptation error {e}"
        )))
    }
}

fn check_window(window: &SampleWindow, memory: usize, what: &str) -> Result<()> {
    if window.len() != memory {
        return Err(DpdError::invalid(format!(
            "{what} window holds {} samples, model memory is {memory}",
            window.len()
        )));
    }
    Ok(())
}

/// One SPH update; returns the a-priori error.
///
/// `h` and `c` are updated simultaneously from the pre-update parameters:
/// `Δh = μ_h·e·s*` and `Δc = μ_c·e·Σᵀ·Z*·h*`.
pub fn sph_step(
    model: &mut SphModel,
    window: &SampleWindow,
    x_dpd: Complex64,
    cfg: &LearningConfig,
) -> Result<Complex64> {
    check_window(window, model.memory(), "SPH")?;
    sph_update(model, window, x_dpd, cfg.mu_h, cfg.mu_c)
}

fn sph_update(
    model: &mut SphModel,
    window: &SampleWindow,
    x_dpd: Complex64,
    mu_h: f64,
    mu_c: f64,
) -> Result<Complex64> {
    let m = model.memory();
    let cps = model.lut.control_points();
    let s: Vec<Complex64> = window
        .z
        .iter()
        .zip(&window.regressors)
        .map(|(&z, g)| match g {
            Some(g) => z + z * g.dot(cps),
            None => z,
        })
        .collect();
    let y: Complex64 = model.taps.iter().zip(s.iter()).map(|(h, s)| h * s).sum();
    let e = check_error(x_dpd - y)?;
    if mu_c != 0.0 {
        let cps = model.lut.control_points_mut();
        for k in 0..m {
            if let Some(g) = &window.regressors[k] {
                let a = mu_c * e * (window.z[k] * model.taps[k]).conj();
                for (j, w) in g.weights().iter().enumerate() {
                    cps[g.offset + j] += a * *w;
                }
            }
        }
    }
    if mu_h != 0.0 {
        for (h, s) in model.taps.iter_mut().zip(s.iter()) {
            *h += mu_h * e * s.conj();
        }
    }
    Ok(e)
}

/// One SMP update: `Δq_m = μ_q·e·z*[n−m]·g_{n−m}` for every branch.
pub fn smp_step(
    model: &mut SmpModel,
    window: &SampleWindow,
    x_dpd: Complex64,
    cfg: &LearningConfig,
) -> Result<Complex64> {
    check_window(window, model.memory(), "SMP")?;
    smp_update(model, window, x_dpd, cfg.mu_q)
}

fn smp_update(
    model: &mut SmpModel,
    window: &SampleWindow,
    x_dpd: Complex64,
    mu: f64,
) -> Result<Complex64> {
    let y = model.output_from_history(&window.z, &window.regressors);
    let e = check_error(x_dpd - y)?;
    if mu != 0.0 {
        for m in 0..model.memory() {
            if let Some(g) = &window.regressors[m] {
                let a = mu * e * window.z[m].conj();
                let cps = model.lut_mut(m).control_points_mut();
                for (j, w) in g.weights().iter().enumerate() {
                    cps[g.offset + j] += a * *w;
                }
            }
        }
    }
    Ok(e)
}

/// One self-orthogonalizing LMS update, `Δw = μ_w·e·R⁻¹·l*`.
pub fn mp_step(
    model: &mut MpModel,
    basis: &[Complex64],
    x_dpd: Complex64,
    r_inv: &ComplexMatrix,
    cfg: &LearningConfig,
) -> Result<Complex64> {
    let n = model.coefficient_count();
    if basis.len() != n || r_inv.rows() != n || r_inv.cols() != n {
        return Err(DpdError::invalid(format!(
            "MP update needs a basis of length {n} and an {n}×{n} inverse, got {} and {}×{}",
            basis.len(),
            r_inv.rows(),
            r_inv.cols()
        )));
    }
    mp_update(model, basis, x_dpd, r_inv, cfg.mu_w)
}

fn mp_update(
    model: &mut MpModel,
    basis: &[Complex64],
    x_dpd: Complex64,
    r_inv: &ComplexMatrix,
    mu: f64,
) -> Result<Complex64> {
    let y: Complex64 = model.weights.iter().zip(basis).map(|(w, l)| w * l).sum();
    let e = check_error(x_dpd - y)?;
    if mu != 0.0 {
        let a = mu * e;
        for (i, w) in model.weights.iter_mut().enumerate() {
            let row = r_inv.row(i);
            let d: Complex64 = row.iter().zip(basis).map(|(r, l)| r * l.conj()).sum();
            *w += a * d;
        }
    }
    Ok(e)
}

/// `R = (1/N)·Σ l*·lᵀ`, the Hessian of the mean squared error in `w`.
pub fn basis_autocorrelation(basis: &[Vec<Complex64>]) -> Result<ComplexMatrix> {
    let first = basis
        .first()
        .ok_or_else(|| DpdError::invalid("autocorrelation needs at least one basis vector"))?;
    let m = first.len();
    let mut r = ComplexMatrix::zeros(m, m);
    let mut acc = vec![ZERO; m * m];
    for l in basis {
        if l.len() != m {
            return Err(DpdError::invalid("basis vectors differ in length"));
        }
        for i in 0..m {
            let li = l[i].conj();
            for j in i..m {
                acc[i * m + j] += li * l[j];
            }
        }
    }
    let scale = 1.0 / basis.len() as f64;
    for i in 0..m {
        for j in i..m {
            let v = acc[i * m + j] * scale;
            r.set(i, j, v);
            r.set(j, i, v.conj());
        }
    }
    Ok(r)
}

/// Inverse autocorrelation of the first `block` basis vectors of `input`.
pub fn mp_r_inverse(model: &MpModel, input: &[Complex64], block: usize) -> Result<ComplexMatrix> {
    let mut window = MpWindow::new(model);
    let basis: Vec<Vec<Complex64>> = input
        .iter()
        .take(block.max(1))
        .map(|&z| {
            window.push(model, z);
            window.basis.clone()
        })
        .collect();
    invert_hermitian(&basis_autocorrelation(&basis)?)
}

/// Rolling delay-major MP basis vector.
struct MpWindow {
    basis: Vec<Complex64>,
    k: usize,
}

impl MpWindow {
    fn new(model: &MpModel) -> Self {
        Self {
            basis: vec![ZERO; model.coefficient_count()],
            k: model.order().div_ceil(2),
        }
    }

    fn push(&mut self, model: &MpModel, z: Complex64) {
        self.basis.rotate_right(self.k);
        model.sample_terms(z, &mut self.basis[..self.k]);
    }
}

/// Streams `(z, x_dpd)` pairs through the model-specific update rule.
struct Streamer<'a> {
    cfg: &'a LearningConfig,
    power: f64,
    window: Option<SampleWindow>,
    mp: Option<(MpWindow, ComplexMatrix)>,
}

impl<'a> Streamer<'a> {
    fn new(model: &Predistorter, z: &[Complex64], cfg: &'a LearningConfig) -> Result<Self> {
        let (window, mp) = match model {
            Predistorter::Sph(m) => (Some(SampleWindow::new(*m.lut.config(), m.memory())?), None),
            Predistorter::Smp(m) => (Some(SampleWindow::new(*m.config(), m.memory())?), None),
            Predistorter::Mp(m) => (
                None,
                Some((MpWindow::new(m), mp_r_inverse(m, z, cfg.autocorr_block)?)),
            ),
        };
        Ok(Self {
            cfg,
            power: 0.0,
            window,
            mp,
        })
    }

    fn step(
        &mut self,
        model: &mut Predistorter,
        z: Complex64,
        x: Complex64,
        n: usize,
    ) -> Result<Complex64> {
        let k = if self.cfg.normalize_steps {
            const ALPHA: f64 = 1.0 / 1024.0;
            self.power = if n == 0 {
                z.norm_sqr()
            } else {
                (1.0 - ALPHA) * self.power + ALPHA * z.norm_sqr()
            };
            1.0 / self.power.max(1e-12)
        } else {
            1.0
        };
        let c = self.cfg;
        match model {
            Predistorter::Sph(m) => {
                let w = self.window.as_mut().expect("spline window");
                w.push_with(z, Some(m.lut.regressor_for(z)));
                sph_update(m, w, x, c.mu_h * k, c.mu_c * k)
            }
            Predistorter::Smp(m) => {
                let w = self.window.as_mut().expect("spline window");
                w.push_with(z, Some(m.luts()[0].regressor_for(z)));
                smp_update(m, w, x, c.mu_q * k)
            }
            Predistorter::Mp(m) => {
                let (w, r_inv) = self.mp.as_mut().expect("MP state");
                w.push(m, z);
                mp_update(m, &w.basis, x, r_inv, c.mu_w * k)
            }
        }
    }
}

/// Stream one block of postdistorter inputs `z` against targets `x_dpd`.
///
/// Returns the mean `|e|²`. Fails with [`DpdError::Divergence`] when the
/// mean over a block of [`DIVERGENCE_BLOCK`] samples exceeds the first
/// block by more than [`DIVERGENCE_FACTOR`], or when the error overflows.
pub fn adapt(
    model: &mut Predistorter,
    z: &[Complex64],
    x_dpd: &[Complex64],
    cfg: &LearningConfig,
) -> Result<f64> {
    if z.len() != x_dpd.len() || z.is_empty() {
        return Err(DpdError::invalid(format!(
            "input and target lengths differ or are empty ({} vs {})",
            z.len(),
            x_dpd.len()
        )));
    }
    let target_power = crate::numerics::mean_power(x_dpd);
    let floor = 1e-12 * target_power.max(f64::MIN_POSITIVE);
    let mut streamer = Streamer::new(model, z, cfg)?;
    let mut total = 0.0;
    let mut block = 0.0;
    let mut reference: Option<f64> = None;
    for (n, (&zn, &xn)) in z.iter().zip(x_dpd).enumerate() {
        let e = streamer.step(model, zn, xn, n).map_err(|err| match err {
            DpdError::Numeric(msg) => {
                DpdError::Divergence(format!("{msg} at sample {n} ({})", cfg.step_summary()))
            }
            other => other,
        })?;
        let e2 = e.norm_sqr();
        total += e2;
        block += e2;
        if (n + 1) % DIVERGENCE_BLOCK == 0 {
            let mean = block / DIVERGENCE_BLOCK as f64;
            match reference {
                None => reference = Some(mean.max(floor)),
                Some(r) if mean > DIVERGENCE_FACTOR * r => {
                    return Err(DpdError::Divergence(format!(
                        "block mean |e|² grew from {r:.3e} to {mean:.3e} by sample {} ({})",
                        n + 1,
                        cfg.step_summary()
                    )));
                }
                _ => {}
            }
            block = 0.0;
        }
    }
    let mse = total / z.len() as f64;
    if !mse.is_finite() {
        return Err(DpdError::Divergence(format!(
            "mean |e|² is not finite ({})",
            cfg.step_summary()
        )));
    }
    Ok(mse)
}

/// One payload block offered to the training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceFrame {
    pub signal: ComplexSignal,
    /// Transmitted QAM grid and numerology, when the payload is OFDM.
    pub ofdm: Option<(OfdmConfig, Vec<Vec<Complex64>>)>,
}

pub trait WaveformSource {
    /// Fresh payload for ILA iteration `iteration` (0-based).
    fn frame(&mut self, iteration: usize) -> Result<SourceFrame>;
}

/// OFDM frames with clipping-and-filtering, scaled to a drive level.
///
/// Iteration `i` uses seed `base.seed + i + 1`, so training payloads differ
/// from one another and from a frame generated with `base` itself.
#[derive(Debug, Clone, PartialEq)]
pub struct OfdmSource {
    pub base: OfdmConfig,
    pub min_samples: usize,
    pub target_papr_db: Option<f64>,
    pub papr_iterations: usize,
    pub drive_rms: f64,
}

impl OfdmSource {
    pub fn new(base: OfdmConfig, min_samples: usize, drive_rms: f64) -> Self {
        Self {
            base,
            min_samples,
            target_papr_db: Some(7.0),
            papr_iterations: crate::waveform::DEFAULT_PAPR_ITERATIONS,
            drive_rms,
        }
    }

    /// Frame for an explicit seed; evaluation uses this with a seed outside
    /// the training sequence.
    pub fn frame_with_seed(&self, seed: u64) -> Result<SourceFrame> {
        let cfg = OfdmConfig {
            seed,
            ..self.base.clone()
        }
        .with_min_samples(self.min_samples);
        let frame = generate_ofdm(&cfg)?;
        let signal = match self.target_papr_db {
            Some(t) => reduce_papr(&frame.signal, t, self.papr_iterations, &cfg)?,
            None => frame.signal,
        };
        Ok(SourceFrame {
            signal: signal.scaled(Complex64::new(self.drive_rms, 0.0)),
            ofdm: Some((cfg, frame.symbols)),
        })
    }
}

impl WaveformSource for OfdmSource {
    fn frame(&mut self, iteration: usize) -> Result<SourceFrame> {
        self.frame_with_seed(self.base.seed.wrapping_add(iteration as u64 + 1))
    }
}

/// Cycles through fixed signals; for tests and replayed captures.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedSource(pub Vec<ComplexSignal>);

impl WaveformSource for FixedSource {
    fn frame(&mut self, iteration: usize) -> Result<SourceFrame> {
        if self.0.is_empty() {
            return Err(DpdError::invalid("fixed source holds no signals"));
        }
        Ok(SourceFrame {
            signal: self.0[iteration % self.0.len()].clone(),
            ofdm: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearityMetrics {
    pub aclr_db_left: f64,
    pub aclr_db_right: f64,
    pub evm_pct: f64,
}

impl LinearityMetrics {
    pub fn worst_aclr_db(&self) -> f64 {
        self.aclr_db_left.min(self.aclr_db_right)
    }
}

/// ACLR and EVM of a PA output for the OFDM payload `frame`.
pub fn linearity_metrics(
    pa_output: &ComplexSignal,
    frame: &SourceFrame,
) -> Result<Option<LinearityMetrics>> {
    let Some((cfg, symbols)) = &frame.ofdm else {
        return Ok(None);
    };
    let (l, r) = metrics::aclr(
        pa_output,
        cfg.channel_bandwidth_hz(),
        cfg.channel_spacing_hz(),
    )?;
    let aligned = align(
        pa_output,
        estimate_delay_and_gain(&frame.signal, pa_output)?,
    );
    let evm_pct = metrics::evm(&aligned, symbols, cfg)?;
    Ok(Some(LinearityMetrics {
        aclr_db_left: l,
        aclr_db_right: r,
        evm_pct,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    pub mean_sq_error: f64,
    /// PA output while the iteration's training data was captured.
    pub before: Option<LinearityMetrics>,
    /// PA output on the same payload after the updated model was copied.
    pub after: Option<LinearityMetrics>,
}

/// State of one indirect-learning run.
#[derive(Debug, Clone, PartialEq)]
pub struct IlaSession {
    pub config: LearningConfig,
    pub postdistorter: Predistorter,
    pub error_history: Vec<f64>,
    pub alignment: Option<crate::numerics::Alignment>,
}

impl IlaSession {
    pub fn new(config: LearningConfig, initial: Predistorter) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            postdistorter: initial,
            error_history: Vec::new(),
            alignment: None,
        })
    }

    /// The predistorter is a verbatim copy of the postdistorter.
    pub fn predistorter(&self) -> &Predistorter {
        &self.postdistorter
    }

    /// Predistort, amplify, align, adapt on `frame`, then copy.
    pub fn iterate(&mut self, pa: &PaSimulator, frame: &SourceFrame) -> Result<IterationRecord> {
        let iteration = self.error_history.len() + 1;
        let seed = self
            .config
            .seed
            .wrapping_mul(1000)
            .wrapping_add(2 * iteration as u64);
        let x = &frame.signal;
        let x_dpd = self.predistorter().forward(x);
        if !x_dpd.is_finite() {
            return Err(DpdError::Divergence(format!(
                "predistorter output is not finite in iteration {iteration} ({})",
                self.config.step_summary()
            )));
        }
        let y = pa_apply(pa, &x_dpd, seed);
        let before = linearity_metrics(&y, frame)?;
        let alignment = estimate_delay_and_gain(&x_dpd, &y)?;
        let z = align(&y, alignment);
        self.alignment = Some(alignment);

        let n = z.len().min(self.config.samples_per_iteration);
        let mse = adapt(
            &mut self.postdistorter,
            &z.samples[..n],
            &x_dpd.samples[..n],
            &self.config,
        )?;
        self.error_history.push(mse);

        let after = match &frame.ofdm {
            Some(_) => {
                let y_after = pa_apply(pa, &self.predistorter().forward(x), seed + 1);
                linearity_metrics(&y_after, frame)?
            }
            None => None,
        };
        Ok(IterationRecord {
            iteration,
            mean_sq_error: mse,
            before,
            after,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IlaOutcome {
    pub model: Predistorter,
    pub error_history: Vec<f64>,
    pub records: Vec<IterationRecord>,
}

impl IlaOutcome {
    /// Metrics of the untrained (initial) predistorter on the first payload.
    pub fn baseline(&self) -> Option<LinearityMetrics> {
        self.records.first().and_then(|r| r.before)
    }

    pub fn final_metrics(&self) -> Option<LinearityMetrics> {
        self.records.last().and_then(|r| r.after)
    }
}

/// Run `cfg.ila_iterations` indirect-learning iterations from `initial`,
/// each on a fresh payload from `source`.
pub fn run_ila(
    pa: &PaSimulator,
    initial: Predistorter,
    source: &mut dyn WaveformSource,
    cfg: &LearningConfig,
) -> Result<IlaOutcome> {
    let mut session = IlaSession::new(cfg.clone(), initial)?;
    let mut records = Vec::with_capacity(cfg.ila_iterations);
    for i in 0..cfg.ila_iterations {
        let frame = source.frame(i)?;
        records.push(session.iterate(pa, &frame)?);
    }
    Ok(IlaOutcome {
        model: session.postdistorter,
        error_history: session.error_history,
        records,
    })
}

pub const TRAINING_LOG_HEADER: &str = "iteration,mean_sq_error,aclr_db_left,aclr_db_right,evm_pct";

/// Training log as CSV, one row per iteration, using the post-update
/// metrics. Missing metrics are left empty.
pub fn write_training_log(records: &[IterationRecord], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "{TRAINING_LOG_HEADER}")?;
    for r in records {
        match r.after {
            Some(m) => writeln!(
                out,
                "{},{:e},{:.4},{:.4},{:.4}",
                r.iteration, r.mean_sq_error, m.aclr_db_left, m.aclr_db_right, m.evm_pct
            )?,
            None => writeln!(out, "{},{:e},,,", r.iteration, r.mean_sq_error)?,
        }
    }
    Ok(())
}
