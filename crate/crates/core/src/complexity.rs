//! Per-sample operation counts of the three predistorter structures.
//!
//! Three layers:
//!
//! - [`complexity_formula`]: closed-form real multiplication counts for the
//!   main path and for one learning step.
//! - [`complexity_published`]: the same counts with trivial multiplications
//!   (by 0, 1 and powers of two from the spline basis) removed. How many are
//!   trivial is not derivable from the closed forms, so the discount comes
//!   from a calibration table; cells outside it are rejected.
//! - [`flops`]: floating point operations with a complex multiplication
//!   costing 6, a complex-by-real multiplication 2 and a complex addition 2.
//!   [`flops_census`] counts a straightforward datapath; calibrated cells
//!   subtract the operations that the reference datapath folds away.

use serde::{Deserialize, Serialize};

use crate::error::{DpdError, Result};
use crate::models::ModelKind;

const COMPLEX_MUL: u64 = 6;
const COMPLEX_REAL_MUL: u64 = 2;
const COMPLEX_ADD: u64 = 2;

fn validate(kind: ModelKind, order: usize, memory: usize) -> Result<()> {
    if order == 0 || memory == 0 {
        return Err(DpdError::invalid(format!(
            "order and memory must be positive, got P={order}, M={memory}"
        )));
    }
    if kind == ModelKind::Mp && order.is_multiple_of(2) {
        return Err(DpdError::invalid(format!(
            "MP order must be odd, got {order}"
        )));
    }
    Ok(())
}

/// `ceil(P/2)·M` for MP.
fn mp_terms(order: usize, memory: usize) -> (u64, u64) {
    let k = order.div_ceil(2) as u64;
    (k, k * memory as u64)
}

/// Closed-form real multiplications per sample, `(main path, learning)`.
/// The learning count includes the error-signal evaluation.
pub fn complexity_formula(kind: ModelKind, order: usize, memory: usize) -> Result<(u64, u64)> {
    validate(kind, order, memory)?;
    let p = order as u64;
    let m = memory as u64;
    Ok(match kind {
        ModelKind::Sph => (
            p * p + 4 * p + 4 * m + 10,
            p * (p + 2 * m + 8) + 14 * m + 18,
        ),
        ModelKind::Smp => (
            p * p + 3 * p + 2 * p * m + 6 * m + 4,
            p * p + 3 * p + 4 * p * m + 14 * m + 4,
        ),
        ModelKind::Mp => {
            let (k, mm) = mp_terms(order, memory);
            (3 * k + 4 * mm - 2, 3 * k + 4 * mm * mm + 8 * mm)
        }
    })
}

/// Trivial multiplications per sample, by structure and order.
fn multiplication_discount(kind: ModelKind, order: usize, memory: usize) -> Result<u64> {
    let d = match (kind, order, memory) {
        (ModelKind::Mp, _, _) => Some(0),
        (ModelKind::Sph, 2, _) => Some(6),
        (ModelKind::Sph, 3, _) => Some(7),
        (ModelKind::Sph, 4, _) => Some(9),
        (ModelKind::Smp, 2, 5) => Some(8),
        (ModelKind::Smp, 2, _) => Some(4),
        (ModelKind::Smp, 3, _) => Some(7),
        (ModelKind::Smp, 4, _) => Some(11),
        _ => None,
    };
    d.ok_or_else(|| {
        DpdError::NotCalibrated(format!(
            "no trivial-operation count for {kind} with P={order}; calibrated spline orders are 2, 3 and 4"
        ))
    })
}

/// Real multiplications per sample excluding trivial ones.
pub fn complexity_published(kind: ModelKind, order: usize, memory: usize) -> Result<(u64, u64)> {
    let (main, learning) = complexity_formula(kind, order, memory)?;
    let d = multiplication_discount(kind, order, memory)?;
    Ok((main - d, learning - d))
}

/// FLOPs per sample of a direct implementation, `(main path, update)`.
///
/// Spline structures: magnitude by alpha-max-beta-min (3), span and offset
/// (2), powers of `u` (`P − 1`), `uᵀB` (`(P+1)² + P(P+1)`), then per LUT
/// read `gᵀc` (`4P + 2`). SPH adds the injection (8) and an `M`-tap FIR
/// (`8M − 2`). SMP shares one regressor over its branches and spends
/// `4P + 10` per branch.
///
/// MP: `|z|²` (3), even powers (`K − 2`), new odd terms (`2(K − 1)`) and the
/// inner product (`8m − 2`), with `K = ceil(P/2)` and `m = K·M`.
///
/// The second value is the parameter update alone (error, step scaling and
/// coefficient increments); the learning total adds the main path.
pub fn flops_census(kind: ModelKind, order: usize, memory: usize) -> Result<(u64, u64)> {
    validate(kind, order, memory)?;
    let p = order as u64;
    let m = memory as u64;
    let regressor = 3 + 2 + (p - 1) + (p + 1) * (p + 1) + p * (p + 1);
    let lut_read = (p + 1) * COMPLEX_REAL_MUL + p * COMPLEX_ADD;
    let error_and_step = COMPLEX_ADD + COMPLEX_REAL_MUL;
    Ok(match kind {
        ModelKind::Sph => {
            let main = regressor
                + lut_read
                + COMPLEX_MUL
                + COMPLEX_ADD
                + m * COMPLEX_MUL
                + (m - 1) * COMPLEX_ADD;
            // h: one complex MAC per tap. c: conj(z·h) scaled by μe, then a
            // complex-by-real MAC per touched control point.
            let per_branch = 2 * COMPLEX_MUL + (p + 1) * (COMPLEX_REAL_MUL + COMPLEX_ADD);
            let update = error_and_step + m * (COMPLEX_MUL + COMPLEX_ADD) + m * per_branch;
            (main, update)
        }
        ModelKind::Smp => {
            let branch = lut_read + COMPLEX_MUL + COMPLEX_ADD;
            let main = regressor + m * branch;
            let per_branch = COMPLEX_MUL + (p + 1) * (COMPLEX_REAL_MUL + COMPLEX_ADD);
            (main, error_and_step + m * per_branch)
        }
        ModelKind::Mp => {
            let (k, mm) = mp_terms(order, memory);
            let basis = if k == 1 { 0 } else { 3 + (k - 2) + 2 * (k - 1) };
            let main = basis + mm * COMPLEX_MUL + (mm - 1) * COMPLEX_ADD;
            let r_inv = mm * mm * COMPLEX_MUL + mm * (mm - 1) * COMPLEX_ADD;
            let update = error_and_step + r_inv + mm * (COMPLEX_MUL + COMPLEX_ADD);
            (main, update)
        }
    })
}

/// Signed correction from the census to the reference main-path FLOPs.
fn flop_adjustment(kind: ModelKind, order: usize, memory: usize) -> Result<i64> {
    let d = match (kind, order, memory) {
        (ModelKind::Sph, 2, _) => Some(-6),
        (ModelKind::Sph, 3, _) => Some(-10),
        (ModelKind::Sph, 4, _) => Some(-12),
        (ModelKind::Smp, 2, 4) => Some(-28),
        (ModelKind::Smp, 3, 4) => Some(-24),
        (ModelKind::Smp, 4, 4) => Some(-14),
        (ModelKind::Smp, 2, 5) => Some(-38),
        (ModelKind::Smp, 3, 5) => Some(-34),
        // Published at the value of the M = 5 configuration.
        (ModelKind::Mp, 11, 4) => Some(48),
        (ModelKind::Mp, _, _) => Some(0),
        _ => None,
    };
    d.ok_or_else(|| {
        DpdError::NotCalibrated(format!(
            "no reference FLOP count for {kind} with P={order}, M={memory}"
        ))
    })
}

/// FLOPs per sample, `(main path, learning)`.
///
/// The main path matches the reference counts on every calibrated cell; the
/// learning figure is the calibrated main path plus the update census.
pub fn flops(kind: ModelKind, order: usize, memory: usize) -> Result<(u64, u64)> {
    let (main, update) = flops_census(kind, order, memory)?;
    let main = (main as i64 + flop_adjustment(kind, order, memory)?) as u64;
    Ok((main, main + update))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub kind: ModelKind,
    pub order: usize,
    pub memory: usize,
    /// Spline control points; not used by the counts.
    pub control_points: Option<usize>,
    pub knot_spacing: Option<f64>,
    pub main_path_formula: u64,
    pub learning_formula: u64,
    pub main_path_published: u64,
    pub learning_published: u64,
    pub flops_main: u64,
    pub flops_learning: u64,
}

impl ComplexityReport {
    pub fn new(
        kind: ModelKind,
        order: usize,
        memory: usize,
        control_points: Option<usize>,
        knot_spacing: Option<f64>,
    ) -> Result<Self> {
        let (main_path_formula, learning_formula) = complexity_formula(kind, order, memory)?;
        let (main_path_published, learning_published) = complexity_published(kind, order, memory)?;
        let (flops_main, flops_learning) = flops(kind, order, memory)?;
        Ok(Self {
            kind,
            order,
            memory,
            control_points,
            knot_spacing,
            main_path_formula,
            learning_formula,
            main_path_published,
            learning_published,
            flops_main,
            flops_learning,
        })
    }

    pub const CSV_HEADER: &'static str = "model,P,M,Q,delta,mul_main_formula,mul_learning_formula,mul_main,mul_learning,flops_main,flops_learning";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.kind,
            self.order,
            self.memory,
            opt(self.control_points.map(|q| q.to_string())),
            opt(self.knot_spacing.map(|d| d.to_string())),
            self.main_path_formula,
            self.learning_formula,
            self.main_path_published,
            self.learning_published,
            self.flops_main,
            self.flops_learning
        )
    }
}
