//! Forward (main-path) evaluation of the three predistorter structures.
//!
//! - [`SphModel`]: spline Hammerstein, an injected spline LUT followed by an
//!   FIR filter, `r[n] = Σ_k h_k s[n−k]` with `s[n] = z[n] + z[n]·g_nᵀ c`.
//! - [`SmpModel`]: spline memory polynomial, parallel LUTs on delayed
//!   samples, `r[n] = z[n] + Σ_m z[n−m]·g_{n−m}ᵀ q_m`.
//! - [`MpModel`]: memory polynomial with odd-order monomials,
//!   `r[n] = wᵀ l_n`.
//!
//! Forward evaluation never mutates a model.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{DpdError, Result};
use crate::numerics::{fir, ComplexSignal};
use crate::spline::{Regressor, SplineConfig, SplineLut};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

fn unit_taps(len: usize) -> Vec<Complex64> {
    let mut taps = vec![ZERO; len];
    taps[0] = ONE;
    taps
}

/// Spline LUT followed by an FIR filter.
#[derive(Debug, Clone, PartialEq)]
pub struct SphModel {
    pub lut: SplineLut,
    pub taps: Vec<Complex64>,
}

impl SphModel {
    pub fn new(lut: SplineLut, taps: Vec<Complex64>) -> Result<Self> {
        if taps.is_empty() {
            return Err(DpdError::invalid("SPH model needs at least one FIR tap"));
        }
        Ok(Self { lut, taps })
    }

    /// `c = 0`, `h = [1, 0, …, 0]`.
    pub fn identity(config: SplineConfig, memory: usize) -> Result<Self> {
        if memory == 0 {
            return Err(DpdError::invalid("SPH memory length must be at least 1"));
        }
        Self::new(SplineLut::zeros(config)?, unit_taps(memory))
    }

    pub fn memory(&self) -> usize {
        self.taps.len()
    }

    pub fn forward(&self, input: &ComplexSignal) -> ComplexSignal {
        let s: Vec<Complex64> = input.samples.iter().map(|&z| self.lut.inject(z)).collect();
        input.with_samples(fir(&self.taps, &s))
    }
}

/// Bank of spline LUTs, one per delay branch, sharing a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SmpModel {
    luts: Vec<SplineLut>,
}

impl SmpModel {
    pub fn new(luts: Vec<SplineLut>) -> Result<Self> {
        let first = luts
            .first()
            .ok_or_else(|| DpdError::invalid("SMP model needs at least one LUT"))?;
        if luts.iter().any(|l| l.config() != first.config()) {
            return Err(DpdError::invalid(
                "all SMP branch LUTs must share order, knot spacing and region count",
            ));
        }
        Ok(Self { luts })
    }

    /// All branches zero.
    pub fn identity(config: SplineConfig, memory: usize) -> Result<Self> {
        if memory == 0 {
            return Err(DpdError::invalid("SMP memory length must be at least 1"));
        }
        Self::new(vec![SplineLut::zeros(config)?; memory])
    }

    pub fn memory(&self) -> usize {
        self.luts.len()
    }

    pub fn config(&self) -> &SplineConfig {
        self.luts[0].config()
    }

    pub fn luts(&self) -> &[SplineLut] {
        &self.luts
    }

    pub fn lut_mut(&mut self, branch: usize) -> &mut SplineLut {
        &mut self.luts[branch]
    }

    /// Output sample given the `M` most recent inputs and their regressors
    /// (index 0 is the current sample; missing history is zero).
    #[inline]
    pub(crate) fn output_from_history(
        &self,
        inputs: &[Complex64],
        regressors: &[Option<Regressor>],
    ) -> Complex64 {
        let mut out = inputs[0];
        for (m, lut) in self.luts.iter().enumerate() {
            if let Some(g) = &regressors[m] {
                out += inputs[m] * g.dot(lut.control_points());
            }
        }
        out
    }

    pub fn forward(&self, input: &ComplexSignal) -> ComplexSignal {
        let x = &input.samples;
        // Each regressor is computed once and reused by every branch.
        let regs: Vec<Regressor> = x.iter().map(|&z| self.luts[0].regressor_for(z)).collect();
        let out = (0..x.len())
            .map(|n| {
                let mut r = x[n];
                for (m, lut) in self.luts.iter().enumerate().take(n + 1) {
                    r += x[n - m] * regs[n - m].dot(lut.control_points());
                }
                r
            })
            .collect();
        input.with_samples(out)
    }
}

/// Memory polynomial with odd orders `1, 3, …, P` on `M` delays.
///
/// `input_scale` normalizes the envelope inside the basis,
/// `l = z·(|z|/σ)^(p−1)`, which only reparametrizes the weights but keeps
/// the basis autocorrelation well scaled. `σ = 1` gives the plain monomials.
#[derive(Debug, Clone, PartialEq)]
pub struct MpModel {
    order: usize,
    memory: usize,
    pub weights: Vec<Complex64>,
    input_scale: f64,
}

/// `ceil(P/2)·M`.
pub fn mp_coefficient_count(order: usize, memory: usize) -> usize {
    order.div_ceil(2) * memory
}

fn check_mp_shape(order: usize, memory: usize) -> Result<()> {
    if order == 0 || order.is_multiple_of(2) {
        return Err(DpdError::invalid(format!(
            "memory polynomial order must be odd and positive, got {order}"
        )));
    }
    if memory == 0 {
        return Err(DpdError::invalid(
            "memory polynomial depth must be at least 1",
        ));
    }
    Ok(())
}

impl MpModel {
    pub fn new(order: usize, memory: usize, weights: Vec<Complex64>) -> Result<Self> {
        check_mp_shape(order, memory)?;
        let m = mp_coefficient_count(order, memory);
        if weights.len() != m {
            return Err(DpdError::invalid(format!(
                "MP with P={order}, M={memory} needs {m} weights, got {}",
                weights.len()
            )));
        }
        Ok(Self {
            order,
            memory,
            weights,
            input_scale: 1.0,
        })
    }

    /// `w = e₁`: only the undelayed linear term.
    pub fn identity(order: usize, memory: usize) -> Result<Self> {
        check_mp_shape(order, memory)?;
        Self::new(
            order,
            memory,
            unit_taps(mp_coefficient_count(order, memory)),
        )
    }

    pub fn with_input_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(DpdError::invalid(format!(
                "input scale must be positive, got {scale}"
            )));
        }
        self.input_scale = scale;
        Ok(self)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn input_scale(&self) -> f64 {
        self.input_scale
    }

    pub fn coefficient_count(&self) -> usize {
        self.weights.len()
    }

    /// Odd-order terms of one sample: `[z, z|z|², …, z|z|^(P−1)]`.
    #[inline]
    pub(crate) fn sample_terms(&self, z: Complex64, out: &mut [Complex64]) {
        sample_terms(z, self.input_scale, out);
    }

    pub fn forward(&self, input: &ComplexSignal) -> ComplexSignal {
        let k = self.order.div_ceil(2);
        let x = &input.samples;
        let mut terms = vec![ZERO; x.len() * k];
        for (n, &z) in x.iter().enumerate() {
            self.sample_terms(z, &mut terms[n * k..(n + 1) * k]);
        }
        let out = (0..x.len())
            .map(|n| {
                let mut r = ZERO;
                for d in 0..self.memory.min(n + 1) {
                    let t = &terms[(n - d) * k..(n - d + 1) * k];
                    let w = &self.weights[d * k..(d + 1) * k];
                    r += t.iter().zip(w).map(|(a, b)| a * b).sum::<Complex64>();
                }
                r
            })
            .collect();
        input.with_samples(out)
    }
}

#[inline]
fn sample_terms(z: Complex64, scale: f64, out: &mut [Complex64]) {
    let env2 = z.norm_sqr() / (scale * scale);
    let mut t = z;
    for slot in out.iter_mut() {
        *slot = t;
        t *= env2;
    }
}

/// Basis vectors `l_n` for every sample, delay-major:
/// `[z[n], z[n]|z[n]|², …, z[n−1], z[n−1]|z[n−1]|², …]`.
pub fn mp_basis(input: &ComplexSignal, order: usize, memory: usize) -> Result<Vec<Vec<Complex64>>> {
    check_mp_shape(order, memory)?;
    let k = order.div_ceil(2);
    let x = &input.samples;
    Ok((0..x.len())
        .map(|n| {
            let mut l = vec![ZERO; k * memory];
            for d in 0..memory.min(n + 1) {
                sample_terms(x[n - d], 1.0, &mut l[d * k..(d + 1) * k]);
            }
            l
        })
        .collect())
}

pub fn sph_forward(model: &SphModel, input: &ComplexSignal) -> ComplexSignal {
    model.forward(input)
}

pub fn smp_forward(model: &SmpModel, input: &ComplexSignal) -> ComplexSignal {
    model.forward(input)
}

pub fn mp_forward(model: &MpModel, input: &ComplexSignal) -> Result<ComplexSignal> {
    let m = mp_coefficient_count(model.order, model.memory);
    if model.weights.len() != m {
        return Err(DpdError::invalid(format!(
            "MP weight vector has length {}, expected {m}",
            model.weights.len()
        )));
    }
    Ok(model.forward(input))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sph,
    Smp,
    Mp,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Sph => "sph",
            ModelKind::Smp => "smp",
            ModelKind::Mp => "mp",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = DpdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sph" => Ok(ModelKind::Sph),
            "smp" => Ok(ModelKind::Smp),
            "mp" => Ok(ModelKind::Mp),
            other => Err(DpdError::invalid(format!(
                "unknown model kind '{other}' (expected sph, smp or mp)"
            ))),
        }
    }
}

/// Any of the three predistorter structures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelFile", try_from = "ModelFile")]
pub enum Predistorter {
    Sph(SphModel),
    Smp(SmpModel),
    Mp(MpModel),
}

impl Predistorter {
    pub fn kind(&self) -> ModelKind {
        match self {
            Predistorter::Sph(_) => ModelKind::Sph,
            Predistorter::Smp(_) => ModelKind::Smp,
            Predistorter::Mp(_) => ModelKind::Mp,
        }
    }

    pub fn forward(&self, input: &ComplexSignal) -> ComplexSignal {
        match self {
            Predistorter::Sph(m) => m.forward(input),
            Predistorter::Smp(m) => m.forward(input),
            Predistorter::Mp(m) => m.forward(input),
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Predistorter::Sph(m) => m.lut.control_points().len() + m.taps.len(),
            Predistorter::Smp(m) => m.luts.iter().map(|l| l.control_points().len()).sum(),
            Predistorter::Mp(m) => m.weights.len(),
        }
    }
}

type Pair = [f64; 2];

fn to_pairs(v: &[Complex64]) -> Vec<Pair> {
    v.iter().map(|c| [c.re, c.im]).collect()
}

fn from_pairs(v: &[Pair]) -> Vec<Complex64> {
    v.iter().map(|p| Complex64::new(p[0], p[1])).collect()
}

fn default_scale() -> f64 {
    1.0
}

/// Model file layout, tagged by `kind`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum ModelFile {
    Sph {
        lut: SplineLut,
        taps: Vec<Pair>,
    },
    Smp {
        luts: Vec<SplineLut>,
    },
    Mp {
        order: usize,
        memory: usize,
        weights: Vec<Pair>,
        #[serde(default = "default_scale")]
        input_scale: f64,
    },
}

impl From<Predistorter> for ModelFile {
    fn from(p: Predistorter) -> Self {
        match p {
            Predistorter::Sph(m) => ModelFile::Sph {
                taps: to_pairs(&m.taps),
                lut: m.lut,
            },
            Predistorter::Smp(m) => ModelFile::Smp { luts: m.luts },
            Predistorter::Mp(m) => ModelFile::Mp {
                order: m.order,
                memory: m.memory,
                weights: to_pairs(&m.weights),
                input_scale: m.input_scale,
            },
        }
    }
}

impl TryFrom<ModelFile> for Predistorter {
    type Error = DpdError;

    fn try_from(f: ModelFile) -> Result<Self> {
        Ok(match f {
            ModelFile::Sph { lut, taps } => {
                Predistorter::Sph(SphModel::new(lut, from_pairs(&taps))?)
            }
            ModelFile::Smp { luts } => Predistorter::Smp(SmpModel::new(luts)?),
            ModelFile::Mp {
                order,
                memory,
                weights,
                input_scale,
            } => Predistorter::Mp(
                MpModel::new(order, memory, from_pairs(&weights))?.with_input_scale(input_scale)?,
            ),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_signal(rng: &mut ChaCha8Rng, n: usize, peak: f64) -> ComplexSignal {
        let v = (0..n)
            .map(|_| Complex64::from_polar(rng.random_range(0.0..peak), rng.random_range(0.0..6.3)))
            .collect();
        ComplexSignal::new(v, 1.0).unwrap()
    }

    fn random_cps(rng: &mut ChaCha8Rng, q: usize) -> Vec<Complex64> {
        (0..q)
            .map(|_| c(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)))
            .collect()
    }

    fn cfg() -> SplineConfig {
        SplineConfig::with_control_points(3, 1.0, 7).unwrap()
    }

    fn max_diff(a: &ComplexSignal, b: &ComplexSignal) -> f64 {
        a.samples
            .iter()
            .zip(&b.samples)
            .map(|(p, q)| (p - q).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn sph_identity_and_linear_reduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_signal(&mut rng, 200, 3.8);
        let id = SphModel::identity(cfg(), 3).unwrap();
        assert_eq!(sph_forward(&id, &x), x);
        let taps = vec![c(0.9, 0.1), c(0.2, -0.1), c(0.05, 0.0)];
        let lin = SphModel::new(SplineLut::zeros(cfg()).unwrap(), taps.clone()).unwrap();
        let expected = crate::numerics::fir_filter(&taps, &x).unwrap();
        assert!(max_diff(&sph_forward(&lin, &x), &expected) < 1e-12);
    }

    #[test]
    fn sph_constant_lut_scales_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_signal(&mut rng, 100, 3.8);
        let gamma = c(0.2, 0.1);
        let m = SphModel::new(
            SplineLut::new(cfg(), vec![gamma; 7]).unwrap(),
            vec![c(1.0, 0.0)],
        )
        .unwrap();
        assert!(max_diff(&m.forward(&x), &x.scaled(1.0 + gamma)) < 1e-12);
    }

    #[test]
    fn smp_identity_and_branch_delay() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random_signal(&mut rng, 100, 3.8);
        let id = SmpModel::identity(cfg(), 4).unwrap();
        assert_eq!(smp_forward(&id, &x), x);

        let gamma = c(-0.1, 0.25);
        let m = SmpModel::new(vec![
            SplineLut::zeros(cfg()).unwrap(),
            SplineLut::new(cfg(), vec![gamma; 7]).unwrap(),
        ])
        .unwrap();
        let y = m.forward(&x);
        assert_eq!(y.samples[0], x.samples[0]);
        for n in 1..x.len() {
            let expected = x.samples[n] + gamma * x.samples[n - 1];
            assert!((y.samples[n] - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn smp_single_branch_equals_sph_without_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = random_signal(&mut rng, 300, 3.9);
        let lut = SplineLut::new(cfg(), random_cps(&mut rng, 7)).unwrap();
        let smp = SmpModel::new(vec![lut.clone()]).unwrap();
        let sph = SphModel::new(lut, vec![c(1.0, 0.0)]).unwrap();
        assert!(max_diff(&smp.forward(&x), &sph.forward(&x)) < 1e-12);
    }

    #[test]
    fn smp_rejects_mixed_configs() {
        let a = SplineLut::zeros(cfg()).unwrap();
        let b = SplineLut::zeros(SplineConfig::with_control_points(2, 1.0, 7).unwrap()).unwrap();
        assert!(SmpModel::new(vec![a, b]).is_err());
        assert!(SmpModel::new(vec![]).is_err());
    }

    #[test]
    fn mp_basis_examples() {
        let one = ComplexSignal::new(vec![c(2.0, 0.0)], 1.0).unwrap();
        assert_eq!(mp_basis(&one, 1, 1).unwrap()[0], vec![c(2.0, 0.0)]);
        assert_eq!(
            mp_basis(&one, 3, 1).unwrap()[0],
            vec![c(2.0, 0.0), c(8.0, 0.0)]
        );
        let two = ComplexSignal::new(vec![c(1.0, 0.0), c(0.0, 1.0)], 1.0).unwrap();
        assert_eq!(
            mp_basis(&two, 3, 2).unwrap()[1],
            vec![c(0.0, 1.0), c(0.0, 1.0), c(1.0, 0.0), c(1.0, 0.0)]
        );
        assert!(matches!(
            mp_basis(&two, 4, 2),
            Err(DpdError::InvalidArgument(_))
        ));
    }

    #[test]
    fn mp_identity_zero_and_cubic() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = random_signal(&mut rng, 100, 1.0);
        let id = MpModel::identity(11, 4).unwrap();
        assert_eq!(id.coefficient_count(), 24);
        assert!(max_diff(&mp_forward(&id, &x).unwrap(), &x) < 1e-12);

        let zero = MpModel::new(5, 2, vec![ZERO; 6]).unwrap();
        assert!(mp_forward(&zero, &x)
            .unwrap()
            .samples
            .iter()
            .all(|s| s.norm() == 0.0));

        // Cubic-only weight reproduces the memoryless polynomial with α₁ = 0.
        let a3 = c(-0.2, 0.05);
        let mut w = [ZERO; 3];
        w[1] = a3;
        let cubic = MpModel::new(3, 1, vec![w[0], w[1]]).unwrap();
        let y = mp_forward(&cubic, &x).unwrap();
        for (yn, xn) in y.samples.iter().zip(&x.samples) {
            assert!((yn - a3 * xn * xn.norm_sqr()).norm() < 1e-14);
        }
    }

    #[test]
    fn mp_forward_matches_basis_dot_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = random_signal(&mut rng, 50, 1.2);
        let w = random_cps(&mut rng, 12);
        let model = MpModel::new(5, 4, w.clone()).unwrap();
        let y = model.forward(&x);
        let basis = mp_basis(&x, 5, 4).unwrap();
        for n in 0..50 {
            let r: Complex64 = basis[n].iter().zip(&w).map(|(a, b)| a * b).sum();
            assert!((r - y.samples[n]).norm() < 1e-12);
        }
    }

    #[test]
    fn mp_input_scale_is_a_reparametrization() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = random_signal(&mut rng, 50, 3.0);
        let sigma: f64 = 1.7;
        let w = random_cps(&mut rng, 6);
        let plain = MpModel::new(5, 2, w.clone()).unwrap();
        // Weight for order p scales by σ^(p−1).
        let scaled_w: Vec<Complex64> = w
            .iter()
            .enumerate()
            .map(|(i, v)| v * sigma.powi(2 * (i % 3) as i32))
            .collect();
        let scaled = MpModel::new(5, 2, scaled_w)
            .unwrap()
            .with_input_scale(sigma)
            .unwrap();
        assert!(max_diff(&plain.forward(&x), &scaled.forward(&x)) < 1e-10);
    }

    #[test]
    fn mp_rejects_bad_shapes() {
        assert!(MpModel::new(4, 2, vec![ZERO; 4]).is_err());
        assert!(MpModel::new(3, 2, vec![ZERO; 3]).is_err());
        assert!(MpModel::identity(3, 0).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let models = vec![
            Predistorter::Sph(
                SphModel::new(
                    SplineLut::new(cfg(), random_cps(&mut rng, 7)).unwrap(),
                    random_cps(&mut rng, 3),
                )
                .unwrap(),
            ),
            Predistorter::Smp(
                SmpModel::new(vec![
                    SplineLut::new(cfg(), random_cps(&mut rng, 7)).unwrap(),
                    SplineLut::new(cfg(), random_cps(&mut rng, 7)).unwrap(),
                ])
                .unwrap(),
            ),
            Predistorter::Mp(
                MpModel::new(3, 2, random_cps(&mut rng, 4))
                    .unwrap()
                    .with_input_scale(2.0)
                    .unwrap(),
            ),
        ];
        for m in models {
            let json = serde_json::to_string(&m).unwrap();
            let back: Predistorter = serde_json::from_str(&json).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn model_kind_parsing() {
        assert_eq!("SMP".parse::<ModelKind>().unwrap(), ModelKind::Smp);
        assert!("gmp".parse::<ModelKind>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn phase_rotation_covariance(seed in 0u64..1000, phi in 0.0..std::f64::consts::TAU) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = random_signal(&mut rng, 64, 3.8);
                let rot = Complex64::from_polar(1.0, phi);
                let xr = x.scaled(rot);
                let sph = SphModel::new(SplineLut::new(cfg(), random_cps(&mut rng, 7)).unwrap(), random_cps(&mut rng, 3)).unwrap();
                let smp = SmpModel::new(vec![SplineLut::new(cfg(), random_cps(&mut rng, 7)).unwrap(); 3]).unwrap();
                let mp = MpModel::new(5, 3, random_cps(&mut rng, 9)).unwrap();
                for (a, b) in [
                    (sph.forward(&xr), sph.forward(&x).scaled(rot)),
                    (smp.forward(&xr), smp.forward(&x).scaled(rot)),
                    (mp.forward(&xr), mp.forward(&x).scaled(rot)),
                ] {
                    prop_assert!(max_diff(&a, &b) < 1e-9);
                }
            }
        }
    }
}
