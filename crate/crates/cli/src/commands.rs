use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spline_dpd::complexity::{complexity_published, flops, ComplexityReport};
use spline_dpd::learning::{
    run_ila, sph_step, write_training_log, LearningConfig, SampleWindow, SourceFrame,
};
use spline_dpd::metrics::{aclr, measure, papr_at_probability, welch_psd, MetricsReport};
use spline_dpd::models::{ModelKind, MpModel, Predistorter, SphModel};
use spline_dpd::pa::pa_apply;
use spline_dpd::spline::{basis_matrix, SplineConfig, SplineLut};
use spline_dpd::waveform::{generate_ofdm, reduce_papr, OfdmConfig, DEFAULT_PAPR_ITERATIONS};
use spline_dpd::{Complex64, ComplexSignal};

use crate::artifacts::{self, ModelArtifact, SignalMeta};
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

fn save_config(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let text = format!("# config_hash={}\n{}", cfg.hash(), cfg.to_toml());
    artifacts::write_atomic(&out.join("config.toml"), text.as_bytes())
}

pub fn generate(
    cfg: &ExperimentConfig,
    out: &Path,
    name: &str,
    seed: Option<u64>,
) -> Result<PathBuf> {
    let seed = seed.unwrap_or(cfg.seed);
    let frame = cfg.source()?.frame_with_seed(seed)?;
    let papr = papr_at_probability(&frame.signal, 1e-4)?;
    let path = out.join(format!("{name}.iq"));
    let meta = SignalMeta {
        sample_rate_hz: frame.signal.sample_rate_hz,
        length: frame.signal.len(),
        config_hash: cfg.hash(),
        seed: Some(seed),
    };
    artifacts::write_signal(&path, &frame.signal, &meta)?;
    save_config(cfg, out)?;
    println!(
        "generated {} samples (seed {seed}, rms {:.4}) -> {}",
        meta.length,
        frame.signal.rms(),
        path.display()
    );
    println!("PAPR at 1e-4: {papr:.2} dB");
    println!("config hash: {}", meta.config_hash);
    Ok(path)
}

pub fn train(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let pa = cfg.pa()?;
    let mut source = cfg.source()?;
    let outcome = run_ila(&pa, cfg.initial_model()?, &mut source, &cfg.learning())?;
    if let Some(b) = outcome.baseline() {
        println!(
            "no DPD: ACLR {:.2}/{:.2} dB, EVM {:.2} %",
            b.aclr_db_left, b.aclr_db_right, b.evm_pct
        );
    }
    for r in &outcome.records {
        match r.after {
            Some(m) => println!(
                "iteration {}: MSE {:.4e}, ACLR {:.2}/{:.2} dB, EVM {:.2} %",
                r.iteration, r.mean_sq_error, m.aclr_db_left, m.aclr_db_right, m.evm_pct
            ),
            None => println!("iteration {}: MSE {:.4e}", r.iteration, r.mean_sq_error),
        }
    }
    let hash = cfg.hash();
    let eval = cfg.source()?.frame_with_seed(cfg.eval_seed)?;
    let summary = TrainingSummary {
        config_hash: hash.clone(),
        final_mean_sq_error: outcome.error_history.last().copied().unwrap_or(f64::NAN),
        no_dpd: HeldOutMetrics::from(&assess(cfg, None, &eval)?),
        dpd: HeldOutMetrics::from(&assess(cfg, Some(&outcome.model), &eval)?),
    };
    println!(
        "held-out payload: no DPD {:.2} dB, DPD {:.2} dB worst-side ACLR",
        summary.no_dpd.worst_aclr_db(),
        summary.dpd.worst_aclr_db()
    );
    let summary_path = out.join("training_summary.json");
    let json = serde_json::to_vec_pretty(&summary).map_err(spline_dpd::DpdError::from)?;
    artifacts::write_atomic(&summary_path, &json)?;
    let model_path = out.join("model.json");
    artifacts::write_model(
        &model_path,
        &ModelArtifact {
            config_hash: hash.clone(),
            model: outcome.model,
        },
    )?;
    let mut log = Vec::new();
    write_training_log(&outcome.records, &mut log).expect("writing to memory");
    let log_path = out.join("training_log.csv");
    artifacts::write_atomic(
        &log_path,
        &artifacts::csv_with_hash(&hash, &String::from_utf8_lossy(&log)),
    )?;
    save_config(cfg, out)?;
    println!("model -> {}", model_path.display());
    println!("training log -> {}", log_path.display());
    Ok(model_path)
}

pub const METRICS_HEADER: &str = "model,evm_pct,aclr_db_left,aclr_db_right,papr_db_at_1e4";

pub fn evaluate(
    cfg: &ExperimentConfig,
    out: &Path,
    model: Option<&Path>,
    signal: Option<&Path>,
    name: &str,
) -> Result<MetricsReport> {
    let hash = cfg.hash();
    let source = cfg.source()?;
    let frame: SourceFrame = match signal {
        Some(path) => {
            let (sig, meta) = artifacts::read_signal(path)?;
            warn_on_hash(&meta.config_hash, &hash, path);
            let seed = meta.seed.ok_or_else(|| {
                CliError::Config(format!("{}: sidecar has no payload seed", path.display()))
            })?;
            let regenerated = source.frame_with_seed(seed)?;
            SourceFrame {
                signal: sig,
                ofdm: regenerated.ofdm,
            }
        }
        None => source.frame_with_seed(cfg.eval_seed)?,
    };
    let model = match model {
        Some(path) => {
            let artifact = artifacts::read_model(path)?;
            warn_on_hash(&artifact.config_hash, &hash, path);
            Some(artifact.model)
        }
        None => None,
    };
    let label = model
        .as_ref()
        .map_or("none".to_string(), |m| m.kind().to_string());
    let report = assess(cfg, model.as_ref(), &frame)?;

    let metrics = format!(
        "{METRICS_HEADER}\n{label},{:.6},{:.6},{:.6},{:.6}\n",
        report.evm_pct, report.aclr_db_left, report.aclr_db_right, report.papr_db_at_1e4
    );
    artifacts::write_atomic(
        &out.join(format!("{name}_metrics.csv")),
        &artifacts::csv_with_hash(&hash, &metrics),
    )?;
    let mut psd = String::from("freq_hz,power_dbm_per_bin\n");
    for (f, p) in report.psd.freq_hz.iter().zip(report.psd.dbm_per_bin()) {
        psd.push_str(&format!("{f:.1},{p:.4}\n"));
    }
    artifacts::write_atomic(
        &out.join(format!("{name}_psd.csv")),
        &artifacts::csv_with_hash(&hash, &psd),
    )?;
    save_config(cfg, out)?;
    println!(
        "{label}: ACLR {:.2}/{:.2} dB, EVM {:.2} %, PAPR {:.2} dB",
        report.aclr_db_left, report.aclr_db_right, report.evm_pct, report.papr_db_at_1e4
    );
    Ok(report)
}

/// PA output metrics for `frame`, predistorted by `model` when given.
pub fn assess(
    cfg: &ExperimentConfig,
    model: Option<&Predistorter>,
    frame: &SourceFrame,
) -> Result<MetricsReport> {
    let x_dpd = match model {
        Some(m) => m.forward(&frame.signal),
        None => frame.signal.clone(),
    };
    let y = pa_apply(&cfg.pa()?, &x_dpd, cfg.eval_noise_seed);
    let (ofdm, symbols) = frame
        .ofdm
        .as_ref()
        .ok_or_else(|| CliError::Config("evaluation needs an OFDM payload".into()))?;
    Ok(measure(&y, &frame.signal, symbols, ofdm)?)
}

/// Metrics of one held-out measurement, without the spectrum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeldOutMetrics {
    pub evm_pct: f64,
    pub aclr_db_left: f64,
    pub aclr_db_right: f64,
    pub papr_db_at_1e4: f64,
}

impl HeldOutMetrics {
    fn worst_aclr_db(&self) -> f64 {
        self.aclr_db_left.min(self.aclr_db_right)
    }
}

impl From<&MetricsReport> for HeldOutMetrics {
    fn from(r: &MetricsReport) -> Self {
        Self {
            evm_pct: r.evm_pct,
            aclr_db_left: r.aclr_db_left,
            aclr_db_right: r.aclr_db_right,
            papr_db_at_1e4: r.papr_db_at_1e4,
        }
    }
}

/// The trained model and the untrained PA on the evaluation payload, as
/// `evaluate` would measure them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub config_hash: String,
    pub final_mean_sq_error: f64,
    pub no_dpd: HeldOutMetrics,
    pub dpd: HeldOutMetrics,
}

fn warn_on_hash(found: &str, expected: &str, path: &Path) {
    if found != expected {
        eprintln!(
            "warning: {} was produced with config {found}, current config is {expected}",
            path.display()
        );
    }
}

pub fn complexity(
    rows: &[(ModelKind, usize, usize, Option<usize>, Option<f64>)],
) -> Result<String> {
    let mut out = format!("{}\n", ComplexityReport::CSV_HEADER);
    for &(kind, p, m, q, delta) in rows {
        out.push_str(&ComplexityReport::new(kind, p, m, q, delta)?.csv_row());
        out.push('\n');
    }
    Ok(out)
}

/// Quick invariant suite; returns the number of failed checks.
pub fn selftest() -> usize {
    let checks: Vec<(&str, Box<dyn Fn() -> std::result::Result<String, String>>)> = vec![
        ("cubic basis matrix", Box::new(check_basis)),
        ("partition of unity and identity", Box::new(check_spline)),
        (
            "SPH update is the descent direction",
            Box::new(check_gradient),
        ),
        (
            "unit-weight MP is the identity",
            Box::new(check_mp_identity),
        ),
        ("complexity tables", Box::new(check_complexity)),
        ("PAPR reduction", Box::new(check_papr)),
        ("metric contracts", Box::new(check_metrics)),
    ];
    let mut failed = 0;
    for (name, f) in checks {
        match f() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    failed
}

type Check = std::result::Result<String, String>;

fn check_basis() -> Check {
    let b = basis_matrix(3, 1.0).map_err(|e| e.to_string())?;
    let exact = [
        [-1.0, 3.0, -3.0, 1.0],
        [3.0, -6.0, 3.0, 0.0],
        [-3.0, 0.0, 3.0, 0.0],
        [1.0, 4.0, 1.0, 0.0],
    ];
    let mut worst: f64 = 0.0;
    for (r, row) in exact.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            worst = worst.max((b.get(r, c) - v / 6.0).abs());
        }
    }
    if worst <= 1e-15 {
        Ok(format!("max error {worst:.1e}"))
    } else {
        Err(format!("max error {worst:e}"))
    }
}

/// Deterministic pseudo-random values in `[0, 1)`.
fn halton(i: usize, base: usize) -> f64 {
    let (mut f, mut r, mut i) = (1.0, 0.0, i + 1);
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

fn check_spline() -> Check {
    let mut worst: f64 = 0.0;
    for order in 1..=3 {
        let cfg = SplineConfig::with_control_points(order, 0.7, 11).map_err(|e| e.to_string())?;
        let lut = SplineLut::zeros(cfg).map_err(|e| e.to_string())?;
        for i in 0..1000 {
            let z = Complex64::from_polar(1.1 * cfg.a_max() * halton(i, 2), 6.0 * halton(i, 3));
            let g = lut.regressor_for(z);
            worst = worst.max((g.weights().iter().sum::<f64>() - 1.0).abs());
            if lut.inject(z) != z {
                return Err(format!("zero LUT changed {z}"));
            }
        }
    }
    if worst < 1e-12 {
        Ok(format!("max deviation {worst:.1e}"))
    } else {
        Err(format!("weights sum off by {worst:e}"))
    }
}

fn check_gradient() -> Check {
    let cfg = SplineConfig::with_control_points(3, 0.25, 9).map_err(|e| e.to_string())?;
    let cps: Vec<Complex64> = (0..9)
        .map(|j| Complex64::new(halton(j, 2) - 0.5, halton(j, 3) - 0.5) * 0.4)
        .collect();
    let lut = SplineLut::new(cfg, cps).map_err(|e| e.to_string())?;
    let taps = vec![Complex64::new(0.9, 0.1), Complex64::new(-0.2, 0.3)];
    let model = SphModel::new(lut, taps).map_err(|e| e.to_string())?;
    let hist = [Complex64::new(0.7, -0.4), Complex64::new(-0.3, 0.9)];
    let x = Complex64::new(0.5, 0.2);
    let sig =
        ComplexSignal::new(hist.iter().rev().copied().collect(), 1.0).map_err(|e| e.to_string())?;
    let unit = LearningConfig {
        mu_h: 1.0,
        mu_c: 1.0,
        ..LearningConfig::default()
    };
    let mut up = model.clone();
    let window = SampleWindow::from_history(cfg, &hist).map_err(|e| e.to_string())?;
    sph_step(&mut up, &window, x, &unit).map_err(|e| e.to_string())?;
    let err = |p: &SphModel| x - *p.forward(&sig).samples.last().expect("two samples");
    let step = 1e-6;
    let mut worst: f64 = 0.0;
    for j in 0..9 {
        let fd = |d: Complex64| {
            let mut p = model.clone();
            p.lut.control_points_mut()[j] += d;
            let mut q = model.clone();
            q.lut.control_points_mut()[j] -= d;
            let (a, b) = (err(&p), err(&q));
            ((a - b) * (a + b).conj()).re / (2.0 * step)
        };
        let grad =
            -0.5 * Complex64::new(fd(Complex64::new(step, 0.0)), fd(Complex64::new(0.0, step)));
        let analytic = up.lut.control_points()[j] - model.lut.control_points()[j];
        worst = worst.max((analytic - grad).norm() / analytic.norm().max(1e-2));
    }
    if worst < 1e-6 {
        Ok(format!("worst relative error {worst:.1e}"))
    } else {
        Err(format!("worst relative error {worst:e}"))
    }
}

fn check_mp_identity() -> Check {
    let x: Vec<Complex64> = (0..500)
        .map(|i| Complex64::new(halton(i, 2), halton(i, 5)) * 3.0)
        .collect();
    let sig = ComplexSignal::new(x, 1.0).map_err(|e| e.to_string())?;
    let y = MpModel::identity(11, 4)
        .map_err(|e| e.to_string())?
        .forward(&sig);
    if y.samples == sig.samples {
        Ok("exact".into())
    } else {
        Err("output differs from input".into())
    }
}

fn check_complexity() -> Check {
    use ModelKind::*;
    let cells = [
        (Sph, 3, 4, 40, 124, 77),
        (Smp, 3, 4, 63, 119, 99),
        (Mp, 11, 4, 112, 2514, 255),
        (Sph, 3, 3, 36, 0, 69),
        (Smp, 2, 5, 56, 0, 73),
    ];
    for (kind, p, m, mul, learn, flop) in cells {
        let (a, b) = complexity_published(kind, p, m).map_err(|e| e.to_string())?;
        let f = flops(kind, p, m).map_err(|e| e.to_string())?.0;
        if a != mul || (learn != 0 && b != learn) || f != flop {
            return Err(format!("{kind} P={p} M={m}: {a}/{b}/{f}"));
        }
    }
    Ok(format!("{} cells", cells.len()))
}

fn check_papr() -> Check {
    let cfg = OfdmConfig::default();
    let f = generate_ofdm(&cfg).map_err(|e| e.to_string())?;
    let raw = papr_at_probability(&f.signal, 1e-4).map_err(|e| e.to_string())?;
    let clipped =
        reduce_papr(&f.signal, 7.0, DEFAULT_PAPR_ITERATIONS, &cfg).map_err(|e| e.to_string())?;
    let papr = papr_at_probability(&clipped, 1e-4).map_err(|e| e.to_string())?;
    let detail = format!("raw {raw:.2} dB, reduced {papr:.2} dB");
    if papr <= 7.3 && (9.0..=11.0).contains(&raw) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn check_metrics() -> Check {
    let cfg = OfdmConfig::default();
    let f = generate_ofdm(&cfg).map_err(|e| e.to_string())?;
    let (bw, off) = (cfg.channel_bandwidth_hz(), cfg.channel_spacing_hz());
    let a = aclr(&f.signal, bw, off).map_err(|e| e.to_string())?;
    let b = aclr(&f.signal.scaled(Complex64::new(0.0, 9.0)), bw, off).map_err(|e| e.to_string())?;
    let shift = (a.0 - b.0).abs().max((a.1 - b.1).abs());
    let psd = welch_psd(&f.signal, 4096, 0.5).map_err(|e| e.to_string())?;
    let parseval = (psd.total_power() / f.signal.mean_power() - 1.0).abs();
    let detail = format!(
        "ACLR shift {shift:.1e} dB, Parseval {:.3} %",
        100.0 * parseval
    );
    if shift < 1e-9 && parseval < 0.01 {
        Ok(detail)
    } else {
        Err(detail)
    }
}
