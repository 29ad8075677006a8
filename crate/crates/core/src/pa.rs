//! Behavioral power amplifier simulators used as training targets.
//!
//! Every variant behaves as a linear system for vanishing drive. The
//! [`PaVariant::Wiener`] fixture (FIR memory followed by a Rapp AM/AM with a
//! cubic-saturating AM/PM) lies outside all three predistorter model classes
//! and is the default end-to-end target.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DpdError, Result};
use crate::models::MpModel;
use crate::numerics::{fir, ComplexSignal};

type Pair = [f64; 2];

fn cx(p: &Pair) -> Complex64 {
    Complex64::new(p[0], p[1])
}

fn default_noise_floor() -> Option<f64> {
    Some(-60.0)
}

/// Rapp AM/AM plus AM/PM `θ = k·r³/(1 + r³)` with `r = |G·x|/A_sat`.
#[derive(Debug, Clone, PartialEq)]
pub struct RappParams {
    pub gain: Pair,
    pub saturation: f64,
    pub smoothness: f64,
    pub am_pm_rad: f64,
}

impl RappParams {
    #[inline]
    fn apply(&self, x: Complex64) -> Complex64 {
        let gx = cx(&self.gain) * x;
        let r = gx.norm() / self.saturation;
        if r == 0.0 {
            return gx;
        }
        let two_p = 2.0 * self.smoothness;
        let compression = (1.0 + r.powf(two_p)).powf(-1.0 / two_p);
        let r3 = r * r * r;
        let theta = self.am_pm_rad * r3 / (1.0 + r3);
        gx * compression * Complex64::from_polar(1.0, theta)
    }

    fn validate(&self) -> Result<()> {
        if cx(&self.gain).norm() == 0.0 {
            return Err(DpdError::invalid("PA small-signal gain must be nonzero"));
        }
        if !(self.saturation > 0.0) || !(self.smoothness > 0.0) {
            return Err(DpdError::invalid(
                "Rapp saturation and smoothness must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum PaVariant {
    /// `y = Σ α_p x|x|^(p−1)` over odd `p`; `coefficients = [α₁, α₃, …]`.
    StaticPolynomial { coefficients: Vec<Pair> },
    Rapp {
        gain: Pair,
        saturation: f64,
        smoothness: f64,
        #[serde(default)]
        am_pm_rad: f64,
    },
    /// `A(r) = α_a r/(1 + β_a r²)`, `Φ(r) = α_p r²/(1 + β_p r²)`.
    Saleh {
        alpha_a: f64,
        beta_a: f64,
        alpha_p: f64,
        beta_p: f64,
    },
    /// FIR memory followed by the Rapp nonlinearity.
    Wiener {
        taps: Vec<Pair>,
        gain: Pair,
        saturation: f64,
        smoothness: f64,
        #[serde(default)]
        am_pm_rad: f64,
    },
    /// Fixed-coefficient memory polynomial, delay-major weights.
    MemoryPolynomial {
        order: usize,
        memory: usize,
        weights: Vec<Pair>,
    },
}

impl PaVariant {
    /// The Rapp stage of the `rapp` and `wiener` variants.
    pub fn rapp(&self) -> Option<RappParams> {
        match self {
            PaVariant::Rapp {
                gain,
                saturation,
                smoothness,
                am_pm_rad,
            }
            | PaVariant::Wiener {
                gain,
                saturation,
                smoothness,
                am_pm_rad,
                ..
            } => Some(RappParams {
                gain: *gain,
                saturation: *saturation,
                smoothness: *smoothness,
                am_pm_rad: *am_pm_rad,
            }),
            _ => None,
        }
    }
}

/// A PA variant plus its additive noise floor.
///
/// JSON layout: the variant object (tagged by `"variant"`) with an optional
/// extra `"noise_floor_dbc"` key; `null` disables noise, absent means −60 dBc.
#[derive(Debug, Clone, PartialEq)]
pub struct PaSimulator {
    pub variant: PaVariant,
    /// Additive complex Gaussian noise relative to the mean output power;
    /// `None` disables noise.
    pub noise_floor_dbc: Option<f64>,
}

impl Serialize for PaSimulator {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::Error;
        let mut v = serde_json::to_value(&self.variant).map_err(S::Error::custom)?;
        if let Some(obj) = v.as_object_mut() {
            obj.insert(
                "noise_floor_dbc".into(),
                serde_json::to_value(self.noise_floor_dbc).map_err(S::Error::custom)?,
            );
        }
        v.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PaSimulator {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let mut v = serde_json::Value::deserialize(deserializer)?;
        let obj = v
            .as_object_mut()
            .ok_or_else(|| D::Error::custom("PA fixture must be a JSON object"))?;
        let noise_floor_dbc = match obj.remove("noise_floor_dbc") {
            None => default_noise_floor(),
            Some(n) => serde_json::from_value(n).map_err(D::Error::custom)?,
        };
        let variant = serde_json::from_value(v).map_err(D::Error::custom)?;
        Ok(Self {
            variant,
            noise_floor_dbc,
        })
    }
}

impl PaSimulator {
    pub fn new(variant: PaVariant, noise_floor_dbc: Option<f64>) -> Result<Self> {
        let pa = Self {
            variant,
            noise_floor_dbc,
        };
        pa.validate()?;
        Ok(pa)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let pa: Self = serde_json::from_str(json)?;
        pa.validate()?;
        Ok(pa)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn without_noise(mut self) -> Self {
        self.noise_floor_dbc = None;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match &self.variant {
            PaVariant::StaticPolynomial { coefficients } => {
                if coefficients.first().map_or(0.0, |c| cx(c).norm()) == 0.0 {
                    return Err(DpdError::invalid("static polynomial needs a nonzero α₁"));
                }
            }
            PaVariant::Rapp { .. } => self.variant.rapp().expect("rapp").validate()?,
            PaVariant::Saleh { alpha_a, .. } => {
                if *alpha_a == 0.0 {
                    return Err(DpdError::invalid("Saleh α_a must be nonzero"));
                }
            }
            PaVariant::Wiener { taps, .. } => {
                if taps.is_empty() {
                    return Err(DpdError::invalid("Wiener PA needs at least one FIR tap"));
                }
                self.variant.rapp().expect("wiener").validate()?;
            }
            PaVariant::MemoryPolynomial {
                order,
                memory,
                weights,
            } => {
                let m = MpModel::new(*order, *memory, weights.iter().map(cx).collect())?;
                if m.weights[0].norm() == 0.0 {
                    return Err(DpdError::invalid(
                        "memory polynomial PA needs a nonzero undelayed linear weight",
                    ));
                }
            }
        }
        if let Some(n) = self.noise_floor_dbc {
            if !n.is_finite() || n > 0.0 {
                return Err(DpdError::invalid(format!(
                    "noise floor must be a finite negative dBc value, got {n}"
                )));
            }
        }
        Ok(())
    }

    /// Small-signal gain `G`: the coefficient of the undelayed linear term.
    pub fn small_signal_gain(&self) -> Complex64 {
        match &self.variant {
            PaVariant::StaticPolynomial { coefficients } => cx(&coefficients[0]),
            PaVariant::Rapp { gain, .. } => cx(gain),
            PaVariant::Saleh { alpha_a, .. } => Complex64::new(*alpha_a, 0.0),
            PaVariant::Wiener { taps, gain, .. } => cx(gain) * cx(&taps[0]),
            PaVariant::MemoryPolynomial { weights, .. } => cx(&weights[0]),
        }
    }

    /// Linear response the PA converges to as the drive level vanishes.
    /// Equals `G·x` for memoryless variants.
    pub fn small_signal_response(&self, input: &ComplexSignal) -> ComplexSignal {
        let x = &input.samples;
        let out = match &self.variant {
            PaVariant::Wiener { taps, gain, .. } => {
                let g = cx(gain);
                let taps: Vec<Complex64> = taps.iter().map(|t| cx(t) * g).collect();
                fir(&taps, x)
            }
            PaVariant::MemoryPolynomial { order, weights, .. } => {
                let k = order.div_ceil(2);
                let linear: Vec<Complex64> = weights.iter().step_by(k).map(cx).collect();
                fir(&linear, x)
            }
            _ => {
                let g = self.small_signal_gain();
                x.iter().map(|&v| v * g).collect()
            }
        };
        input.with_samples(out)
    }

    /// Noise-free deterministic response.
    pub fn distort(&self, input: &ComplexSignal) -> ComplexSignal {
        let x = &input.samples;
        let out: Vec<Complex64> = match &self.variant {
            PaVariant::StaticPolynomial { coefficients } => {
                let alphas: Vec<Complex64> = coefficients.iter().map(cx).collect();
                x.iter()
                    .map(|&v| {
                        let env2 = v.norm_sqr();
                        let mut term = v;
                        let mut y = Complex64::new(0.0, 0.0);
                        for a in &alphas {
                            y += a * term;
                            term *= env2;
                        }
                        y
                    })
                    .collect()
            }
            PaVariant::Rapp { .. } => {
                let r = self.variant.rapp().expect("rapp");
                x.iter().map(|&v| r.apply(v)).collect()
            }
            PaVariant::Saleh {
                alpha_a,
                beta_a,
                alpha_p,
                beta_p,
            } => x
                .iter()
                .map(|&v| {
                    let r = v.norm();
                    if r == 0.0 {
                        return v;
                    }
                    let amp = alpha_a * r / (1.0 + beta_a * r * r);
                    let phase = alpha_p * r * r / (1.0 + beta_p * r * r);
                    Complex64::from_polar(amp, v.arg() + phase)
                })
                .collect(),
            PaVariant::Wiener { taps, .. } => {
                let rapp = self.variant.rapp().expect("wiener");
                let taps: Vec<Complex64> = taps.iter().map(cx).collect();
                fir(&taps, x).into_iter().map(|v| rapp.apply(v)).collect()
            }
            PaVariant::MemoryPolynomial {
                order,
                memory,
                weights,
            } => {
                // Shape was checked in validate().
                let m = MpModel::new(*order, *memory, weights.iter().map(cx).collect())
                    .expect("validated memory polynomial");
                m.forward(input).samples
            }
        };
        input.with_samples(out)
    }
}

/// Apply the PA with seeded additive noise at `noise_floor_dbc` below the
/// mean output power.
pub fn pa_apply(pa: &PaSimulator, input: &ComplexSignal, seed: u64) -> ComplexSignal {
    let mut y = pa.distort(input);
    if let Some(dbc) = pa.noise_floor_dbc {
        let p = y.mean_power();
        let sigma = (p * 10f64.powf(dbc / 10.0) / 2.0).sqrt();
        if sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, sigma).expect("finite sigma");
            for s in &mut y.samples {
                *s += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
            }
        }
    }
    y
}

/// PA fixtures shipped with the crate (`fixtures/pa/v1`).
pub mod fixtures {
    use super::*;

    pub const VERSION: &str = "v1";

    const FILES: &[(&str, &str)] = &[
        ("wiener", include_str!("../fixtures/pa/v1/wiener.json")),
        ("linear", include_str!("../fixtures/pa/v1/linear.json")),
        (
            "static_polynomial",
            include_str!("../fixtures/pa/v1/static_polynomial.json"),
        ),
        ("rapp", include_str!("../fixtures/pa/v1/rapp.json")),
        ("saleh", include_str!("../fixtures/pa/v1/saleh.json")),
        (
            "memory_polynomial",
            include_str!("../fixtures/pa/v1/memory_polynomial.json"),
        ),
    ];

    pub fn names() -> impl Iterator<Item = &'static str> {
        FILES.iter().map(|(n, _)| *n)
    }

    pub fn load(name: &str) -> Result<PaSimulator> {
        let (_, json) = FILES.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            DpdError::invalid(format!(
                "unknown PA fixture '{name}' (available: {})",
                names().collect::<Vec<_>>().join(", ")
            ))
        })?;
        PaSimulator::from_json(json)
    }

    pub fn wiener() -> PaSimulator {
        load("wiener").expect("shipped wiener fixture parses")
    }
}
