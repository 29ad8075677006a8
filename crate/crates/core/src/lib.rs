//! Gradient-adaptive spline-interpolated lookup-table digital predistortion.
//!
//! The crate provides:
//!
//! - uniform complex B-spline LUTs with an injection structure ([`spline`]),
//! - the spline Hammerstein (SPH), spline memory polynomial (SMP) and
//!   reference memory polynomial (MP) predistorters ([`models`]),
//! - sample-adaptive learning rules and an indirect-learning training loop
//!   ([`learning`]),
//! - behavioral power amplifier simulators ([`pa`]),
//! - OFDM waveform generation, crest factor reduction and figures of merit
//!   ([`waveform`], [`metrics`]),
//! - multiplication and FLOP accounting for all three structures
//!   ([`complexity`]).

pub mod complexity;
pub mod error;
pub mod learning;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod pa;
pub mod spline;
pub mod waveform;

pub use error::{DpdError, Result};
pub use num_complex::Complex64;
pub use numerics::ComplexSignal;
