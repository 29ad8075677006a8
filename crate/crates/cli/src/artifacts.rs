//! On-disk formats and atomic writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use spline_dpd::models::Predistorter;
use spline_dpd::ComplexSignal;

use crate::error::{CliError, Result};

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let result = std::fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| std::fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(CliError::io(path, e));
    }
    Ok(())
}

/// Sidecar of a signal file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalMeta {
    pub sample_rate_hz: f64,
    pub length: usize,
    pub config_hash: String,
    /// Payload seed, so the transmitted symbols can be regenerated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

pub fn sidecar_path(signal: &Path) -> PathBuf {
    let mut p = signal.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Little-endian `f64` pairs `(re, im)` plus a JSON sidecar.
pub fn write_signal(path: &Path, signal: &ComplexSignal, meta: &SignalMeta) -> Result<()> {
    let mut bytes = Vec::with_capacity(signal.len() * 16);
    for s in &signal.samples {
        bytes.extend_from_slice(&s.re.to_le_bytes());
        bytes.extend_from_slice(&s.im.to_le_bytes());
    }
    write_atomic(path, &bytes)?;
    let json = serde_json::to_vec_pretty(meta).map_err(spline_dpd::DpdError::from)?;
    write_atomic(&sidecar_path(path), &json)
}

pub fn read_signal(path: &Path) -> Result<(ComplexSignal, SignalMeta)> {
    let side = sidecar_path(path);
    let meta_text = std::fs::read(&side).map_err(|e| CliError::io(&side, e))?;
    let meta: SignalMeta = serde_json::from_slice(&meta_text)
        .map_err(|e| CliError::Config(format!("{}: {e}", side.display())))?;
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.len() != meta.length * 16 {
        return Err(CliError::Config(format!(
            "{} holds {} bytes, sidecar promises {} samples",
            path.display(),
            bytes.len(),
            meta.length
        )));
    }
    let samples = bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            Complex64::new(re, im)
        })
        .collect();
    Ok((ComplexSignal::new(samples, meta.sample_rate_hz)?, meta))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArtifact {
    pub config_hash: String,
    pub model: Predistorter,
}

pub fn write_model(path: &Path, artifact: &ModelArtifact) -> Result<()> {
    let json = serde_json::to_vec_pretty(artifact).map_err(spline_dpd::DpdError::from)?;
    write_atomic(path, &json)
}

pub fn read_model(path: &Path) -> Result<ModelArtifact> {
    let text = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// CSV text with a leading `# config_hash=…` comment.
pub fn csv_with_hash(hash: &str, body: &str) -> Vec<u8> {
    format!("# config_hash={hash}\n{body}").into_bytes()
}
