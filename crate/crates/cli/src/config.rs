//! Flat experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spline_dpd::learning::{LearningConfig, OfdmSource};
use spline_dpd::models::{ModelKind, MpModel, Predistorter, SmpModel, SphModel};
use spline_dpd::pa::{fixtures, PaSimulator};
use spline_dpd::spline::{MagnitudeMode, SplineConfig};
use spline_dpd::waveform::{OfdmConfig, DEFAULT_PAPR_ITERATIONS};

use crate::error::{CliError, Result};

/// Every knob of a run. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub spline_order: usize,
    pub control_points: usize,
    pub knot_spacing: f64,
    pub magnitude: MagnitudeMode,
    /// Defaults to 3 for SPH and 4 for SMP and MP.
    pub memory: Option<usize>,
    pub mp_order: usize,

    /// Fixture name, or a path to a PA JSON file.
    pub pa: String,
    pub pa_noise: bool,
    /// Defaults to placing the PAPR-limited peaks at 95 % of the LUT range.
    pub drive_rms: Option<f64>,

    pub fft_size: usize,
    pub active_subcarriers: usize,
    pub cp_length: usize,
    pub qam_order: usize,
    pub oversampling: usize,
    pub subcarrier_spacing_hz: f64,
    pub window_length: usize,
    /// Minimum payload length; whole OFDM symbols are generated.
    pub frame_samples: usize,
    pub target_papr_db: f64,
    /// 0 disables clipping and filtering.
    pub papr_iterations: usize,

    pub mu_h: f64,
    pub mu_c: f64,
    pub mu_q: f64,
    pub mu_w: f64,
    pub ila_iterations: usize,
    pub samples_per_iteration: usize,
    pub autocorr_block: usize,
    pub normalize_steps: bool,

    /// Payload seed; training iteration `i` uses `seed + i + 1`.
    pub seed: u64,
    pub learning_seed: u64,
    /// Payload seed of the evaluation frame, outside the training sequence.
    pub eval_seed: u64,
    /// PA noise seed during evaluation.
    pub eval_noise_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let ofdm = OfdmConfig::default();
        let learning = LearningConfig::default();
        Self {
            model: ModelKind::Smp,
            spline_order: 3,
            control_points: 7,
            knot_spacing: 1.0,
            magnitude: MagnitudeMode::Exact,
            memory: None,
            mp_order: 11,
            pa: "wiener".into(),
            pa_noise: true,
            drive_rms: None,
            fft_size: ofdm.fft_size,
            active_subcarriers: ofdm.active_subcarriers,
            cp_length: ofdm.cp_length,
            qam_order: ofdm.qam_order,
            oversampling: ofdm.oversampling,
            subcarrier_spacing_hz: ofdm.subcarrier_spacing_hz,
            window_length: ofdm.window_length,
            frame_samples: 50_000,
            target_papr_db: 7.0,
            papr_iterations: DEFAULT_PAPR_ITERATIONS,
            mu_h: learning.mu_h,
            mu_c: learning.mu_c,
            mu_q: learning.mu_q,
            mu_w: learning.mu_w,
            ila_iterations: learning.ila_iterations,
            samples_per_iteration: 50_000,
            autocorr_block: learning.autocorr_block,
            normalize_steps: learning.normalize_steps,
            seed: ofdm.seed,
            learning_seed: learning.seed,
            eval_seed: 1000,
            eval_noise_seed: 424_242,
        }
    }
}

impl ExperimentConfig {
    /// Reads `path` (if any) and applies `key=value` overrides, whose values
    /// use TOML syntax; bare words are taken as strings.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override '{item}' is not key=value")))?;
            let (key, value) = (key.trim(), value.trim());
            let parsed = format!("v = {value}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(value.to_string()));
            table.insert(key.to_string(), parsed);
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.ofdm(self.seed).validate()?;
        self.spline()?;
        self.learning().validate()?;
        self.initial_model()?;
        self.pa()?;
        if self.memory == Some(0) {
            return Err(CliError::Config("memory must be at least 1".into()));
        }
        if !(self.target_papr_db > 0.0) {
            return Err(CliError::Config("target_papr_db must be positive".into()));
        }
        if self.frame_samples < 10_000 {
            return Err(CliError::Config(
                "frame_samples must be at least 10000 for the 1e-4 PAPR point".into(),
            ));
        }
        if let Some(d) = self.drive_rms {
            if !(d > 0.0) || !d.is_finite() {
                return Err(CliError::Config(format!(
                    "drive_rms must be positive, got {d}"
                )));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, truncated to 16 characters.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn ofdm(&self, seed: u64) -> OfdmConfig {
        OfdmConfig {
            fft_size: self.fft_size,
            active_subcarriers: self.active_subcarriers,
            cp_length: self.cp_length,
            qam_order: self.qam_order,
            oversampling: self.oversampling,
            num_symbols: 1,
            seed,
            subcarrier_spacing_hz: self.subcarrier_spacing_hz,
            window_length: self.window_length,
        }
        .with_min_samples(self.frame_samples)
    }

    pub fn spline(&self) -> Result<SplineConfig> {
        Ok(SplineConfig::with_control_points(
            self.spline_order,
            self.knot_spacing,
            self.control_points,
        )?
        .with_magnitude(self.magnitude))
    }

    pub fn memory(&self) -> usize {
        self.memory.unwrap_or(match self.model {
            ModelKind::Sph => 3,
            ModelKind::Smp | ModelKind::Mp => 4,
        })
    }

    pub fn drive(&self) -> Result<f64> {
        match self.drive_rms {
            Some(d) => Ok(d),
            None => Ok(0.95 * self.spline()?.a_max() / 10f64.powf(self.target_papr_db / 20.0)),
        }
    }

    pub fn learning(&self) -> LearningConfig {
        LearningConfig {
            mu_h: self.mu_h,
            mu_c: self.mu_c,
            mu_q: self.mu_q,
            mu_w: self.mu_w,
            ila_iterations: self.ila_iterations,
            samples_per_iteration: self.samples_per_iteration,
            autocorr_block: self.autocorr_block,
            normalize_steps: self.normalize_steps,
            seed: self.learning_seed,
        }
    }

    pub fn initial_model(&self) -> Result<Predistorter> {
        let m = self.memory();
        Ok(match self.model {
            ModelKind::Sph => Predistorter::Sph(SphModel::identity(self.spline()?, m)?),
            ModelKind::Smp => Predistorter::Smp(SmpModel::identity(self.spline()?, m)?),
            ModelKind::Mp => Predistorter::Mp(
                MpModel::identity(self.mp_order, m)?.with_input_scale(self.drive()?)?,
            ),
        })
    }

    pub fn source(&self) -> Result<OfdmSource> {
        let mut src = OfdmSource::new(self.ofdm(self.seed), self.frame_samples, self.drive()?);
        src.papr_iterations = self.papr_iterations;
        src.target_papr_db = (self.papr_iterations > 0).then_some(self.target_papr_db);
        Ok(src)
    }

    pub fn pa(&self) -> Result<PaSimulator> {
        let pa = if self.pa.ends_with(".json") || self.pa.contains(std::path::MAIN_SEPARATOR) {
            let path = Path::new(&self.pa);
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            PaSimulator::from_json(&text)?
        } else {
            fixtures::load(&self.pa)?
        };
        Ok(if self.pa_noise {
            pa
        } else {
            pa.without_noise()
        })
    }
}
