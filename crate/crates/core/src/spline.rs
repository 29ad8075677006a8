//! Uniform complex spline-interpolated lookup tables.
//!
//! A LUT of order `P` with `K` regions of width `Δ` holds `Q = K + P` complex
//! control points. An input magnitude `|z|` selects a region (span) and an
//! in-region offset `u ∈ [0, Δ)`; the interpolated value is
//! `[u^P … u 1] · B_P · [c_i … c_{i+P}]ᵀ`, which is also written as the sparse
//! product `gᵀ c` with the regressor `g` holding `P + 1` nonzero weights.
//!
//! The LUT value is a deviation from unit gain: [`inject`] returns
//! `z + z · gᵀ c`, so an all-zero LUT is the identity.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{DpdError, Result};
use crate::numerics::RealMatrix;

/// Highest supported spline order.
pub const MAX_ORDER: usize = 3;

/// How `|z|` is computed when indexing a LUT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MagnitudeMode {
    #[default]
    Exact,
    /// `α·max(|I|,|Q|) + β·min(|I|,|Q|)` with `α = 15/16`, `β = 15/32`.
    /// Cheap on hardware but perturbs the indexing slightly.
    AlphaMaxBetaMin,
}

impl MagnitudeMode {
    pub fn magnitude(self, z: Complex64) -> f64 {
        match self {
            MagnitudeMode::Exact => z.norm(),
            MagnitudeMode::AlphaMaxBetaMin => {
                let (a, b) = (z.re.abs(), z.im.abs());
                let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
                15.0 / 16.0 * hi + 15.0 / 32.0 * lo
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineConfig {
    pub order: usize,
    pub knot_spacing: f64,
    pub region_count: usize,
    pub magnitude: MagnitudeMode,
}

impl SplineConfig {
    pub fn new(order: usize, knot_spacing: f64, region_count: usize) -> Result<Self> {
        let cfg = Self {
            order,
            knot_spacing,
            region_count,
            magnitude: MagnitudeMode::Exact,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Configuration with `q` control points in total (`K = q − P`).
    pub fn with_control_points(order: usize, knot_spacing: f64, q: usize) -> Result<Self> {
        if q <= order {
            return Err(DpdError::invalid(format!(
                "need more than {order} control points for order {order}, got {q}"
            )));
        }
        Self::new(order, knot_spacing, q - order)
    }

    pub fn with_magnitude(mut self, mode: MagnitudeMode) -> Self {
        self.magnitude = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_ORDER).contains(&self.order) {
            return Err(DpdError::invalid(format!(
                "spline order must be in 1..={MAX_ORDER}, got {}",
                self.order
            )));
        }
        if !(self.knot_spacing > 0.0) || !self.knot_spacing.is_finite() {
            return Err(DpdError::invalid(format!(
                "knot spacing must be positive, got {}",
                self.knot_spacing
            )));
        }
        if self.region_count == 0 {
            return Err(DpdError::invalid("region count must be positive"));
        }
        Ok(())
    }

    /// `Q = K + P`.
    pub fn num_control_points(&self) -> usize {
        self.region_count + self.order
    }

    /// Largest representable input magnitude, `K·Δ`.
    pub fn a_max(&self) -> f64 {
        self.region_count as f64 * self.knot_spacing
    }
}

/// Uniform B-spline basis matrix of order `order` for knot spacing `delta`.
///
/// Row `r` multiplies `u^(P−r)`, so the rows are scaled by `Δ^−(P−r)`.
pub fn basis_matrix(order: usize, delta: f64) -> Result<RealMatrix> {
    let (scale, unit): (f64, &[&[f64]]) = match order {
        1 => (1.0, &[&[-1.0, 1.0], &[1.0, 0.0]]),
        2 => (
            0.5,
            &[&[1.0, -2.0, 1.0], &[-2.0, 2.0, 0.0], &[1.0, 1.0, 0.0]],
        ),
        3 => (
            1.0 / 6.0,
            &[
                &[-1.0, 3.0, -3.0, 1.0],
                &[3.0, -6.0, 3.0, 0.0],
                &[-3.0, 0.0, 3.0, 0.0],
                &[1.0, 4.0, 1.0, 0.0],
            ],
        ),
        _ => {
            return Err(DpdError::invalid(format!(
                "unsupported spline order {order}; supported orders are 1, 2 and 3"
            )))
        }
    };
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(DpdError::invalid(format!(
            "knot spacing must be positive, got {delta}"
        )));
    }
    let rows: Vec<Vec<f64>> = unit
        .iter()
        .enumerate()
        .map(|(r, row)| {
            let power = (order - r) as i32;
            let row_scale = scale / delta.powi(power);
            row.iter().map(|v| v * row_scale).collect()
        })
        .collect();
    RealMatrix::from_rows(&rows)
}

/// Selected region and in-region offset for one input magnitude.
///
/// `span` is the 0-based region number; the 1-based index used in the
/// math is [`RegionIndex::index`]. `u` is measured in input units, `0 ≤ u < Δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionIndex {
    pub span: usize,
    pub u: f64,
}

impl RegionIndex {
    pub fn index(&self) -> usize {
        self.span + 1
    }
}

/// Offset used for magnitudes at or beyond `A_max`: the last region, just
/// below its upper knot.
const SATURATION_FRACTION: f64 = 1.0 - 1.0 / (1u64 << 40) as f64;

pub fn region_index(magnitude: f64, config: &SplineConfig) -> Result<RegionIndex> {
    if !(magnitude >= 0.0) {
        return Err(DpdError::invalid(format!(
            "magnitude must be nonnegative, got {magnitude}"
        )));
    }
    Ok(region_index_unchecked(magnitude, config))
}

#[inline]
fn region_index_unchecked(magnitude: f64, config: &SplineConfig) -> RegionIndex {
    let delta = config.knot_spacing;
    let k = config.region_count;
    let t = magnitude / delta;
    if t >= k as f64 || !t.is_finite() {
        return RegionIndex {
            span: k - 1,
            u: delta * SATURATION_FRACTION,
        };
    }
    let span = t.floor() as usize;
    let u = (magnitude - span as f64 * delta).clamp(0.0, delta * SATURATION_FRACTION);
    RegionIndex { span, u }
}

/// Sparse regressor `g`: `order + 1` contiguous weights starting at `offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regressor {
    pub offset: usize,
    weights: [f64; MAX_ORDER + 1],
    len: usize,
}

impl Regressor {
    pub fn weights(&self) -> &[f64] {
        &self.weights[..self.len]
    }

    /// `gᵀ c`.
    #[inline]
    pub fn dot(&self, control_points: &[Complex64]) -> Complex64 {
        let window = &control_points[self.offset..self.offset + self.len];
        self.weights().iter().zip(window).map(|(w, c)| c * *w).sum()
    }

    /// Dense length-`q` form.
    pub fn to_dense(&self, q: usize) -> Vec<f64> {
        let mut g = vec![0.0; q];
        g[self.offset..self.offset + self.len].copy_from_slice(self.weights());
        g
    }
}

/// Immutable uniform spline LUT with its precomputed basis matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "LutFile", try_from = "LutFile")]
pub struct SplineLut {
    config: SplineConfig,
    control_points: Vec<Complex64>,
    basis: RealMatrix,
}

impl SplineLut {
    pub fn new(config: SplineConfig, control_points: Vec<Complex64>) -> Result<Self> {
        config.validate()?;
        if control_points.len() != config.num_control_points() {
            return Err(DpdError::invalid(format!(
                "LUT with K={} regions of order {} needs {} control points, got {}",
                config.region_count,
                config.order,
                config.num_control_points(),
                control_points.len()
            )));
        }
        let basis = basis_matrix(config.order, config.knot_spacing)?;
        Ok(Self {
            config,
            control_points,
            basis,
        })
    }

    /// All-zero LUT, i.e. the identity under injection.
    pub fn zeros(config: SplineConfig) -> Result<Self> {
        Self::new(
            config,
            vec![Complex64::new(0.0, 0.0); config.num_control_points()],
        )
    }

    pub fn config(&self) -> &SplineConfig {
        &self.config
    }

    pub fn basis(&self) -> &RealMatrix {
        &self.basis
    }

    pub fn control_points(&self) -> &[Complex64] {
        &self.control_points
    }

    pub fn control_points_mut(&mut self) -> &mut [Complex64] {
        &mut self.control_points
    }

    /// Regressor for a given region index.
    #[inline]
    pub fn regressor_at(&self, idx: RegionIndex) -> Regressor {
        let p = self.config.order;
        // u-vector, highest power first.
        let mut powers = [0.0; MAX_ORDER + 1];
        powers[p] = 1.0;
        for r in (0..p).rev() {
            powers[r] = powers[r + 1] * idx.u;
        }
        let mut weights = [0.0; MAX_ORDER + 1];
        for (r, &ur) in powers.iter().enumerate().take(p + 1) {
            let row = self.basis.row(r);
            for (w, b) in weights.iter_mut().zip(row) {
                *w += ur * b;
            }
        }
        Regressor {
            offset: idx.span,
            weights,
            len: p + 1,
        }
    }

    /// Regressor for an input sample, indexed by its magnitude.
    #[inline]
    pub fn regressor_for(&self, z: Complex64) -> Regressor {
        let mag = self.config.magnitude.magnitude(z);
        self.regressor_at(region_index_unchecked(mag, &self.config))
    }

    /// `F_I(|z|) + j·F_Q(|z|) = gᵀ c`.
    #[inline]
    pub fn gain_deviation(&self, z: Complex64) -> Complex64 {
        self.regressor_for(z).dot(&self.control_points)
    }

    /// `z + z·gᵀ c`.
    #[inline]
    pub fn inject(&self, z: Complex64) -> Complex64 {
        z + z * self.gain_deviation(z)
    }
}

/// Regressor `g` for `idx`; errors if the index does not fit the LUT.
pub fn regressor(idx: RegionIndex, lut: &SplineLut) -> Result<Regressor> {
    let cfg = lut.config();
    if idx.span >= cfg.region_count || !(idx.u >= 0.0 && idx.u < cfg.knot_spacing) {
        return Err(DpdError::invalid(format!(
            "region index (span {}, u {}) outside LUT with {} regions of width {}",
            idx.span, idx.u, cfg.region_count, cfg.knot_spacing
        )));
    }
    Ok(lut.regressor_at(idx))
}

pub fn gain_deviation(z: Complex64, lut: &SplineLut) -> Complex64 {
    lut.gain_deviation(z)
}

pub fn inject(z: Complex64, lut: &SplineLut) -> Complex64 {
    lut.inject(z)
}

/// On-disk LUT layout: `{order, knot_spacing, region_count, control_points}`
/// with control points as `[re, im]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LutFile {
    order: usize,
    knot_spacing: f64,
    region_count: usize,
    control_points: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "is_exact")]
    magnitude: MagnitudeMode,
}

fn is_exact(m: &MagnitudeMode) -> bool {
    *m == MagnitudeMode::Exact
}

impl From<SplineLut> for LutFile {
    fn from(lut: SplineLut) -> Self {
        LutFile {
            order: lut.config.order,
            knot_spacing: lut.config.knot_spacing,
            region_count: lut.config.region_count,
            control_points: lut.control_points.iter().map(|c| [c.re, c.im]).collect(),
            magnitude: lut.config.magnitude,
        }
    }
}

impl TryFrom<LutFile> for SplineLut {
    type Error = DpdError;

    fn try_from(f: LutFile) -> Result<Self> {
        let cfg =
            SplineConfig::new(f.order, f.knot_spacing, f.region_count)?.with_magnitude(f.magnitude);
        SplineLut::new(
            cfg,
            f.control_points
                .iter()
                .map(|p| Complex64::new(p[0], p[1]))
                .collect(),
        )
    }
}
