//! Balanced-homodyne squeezed-light noise simulation and spectral analysis.
//!
//! The numerical core is generic over the scalar type ([`Real`], implemented
//! for `f32` and `f64`). The aliases below fix it to `f64`, which the run
//! pipeline, file formats and CLI use.

// Domain guards are written `!(x > 0)` so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod io;
pub mod noise_models;
pub mod rng;
pub mod scalar;
pub mod spectral;
pub mod suite;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Real;

pub type OpoParams = noise_models::OpoParams<f64>;
pub type LossBudget = noise_models::LossBudget<f64>;
pub type QuadraturePair = noise_models::QuadraturePair<f64>;
pub type ValueInterval = noise_models::ValueInterval<f64>;
pub type HomodyneConfig = synth::HomodyneConfig<f64>;
pub type DarkNoiseModel = synth::DarkNoiseModel<f64>;
pub type MainsModel = synth::MainsModel<f64>;
pub type ParasiticModel = synth::ParasiticModel<f64>;
pub type SimScenario = synth::SimScenario<f64>;
pub type Band = spectral::Band<f64>;
pub type WindowPlan = spectral::WindowPlan<f64>;
pub type SpectrumSegment = spectral::SpectrumSegment<f64>;
pub type StitchedSpectrum = spectral::StitchedSpectrum<f64>;
pub type DarkCalibration = verify::DarkCalibration<f64>;

/// Single-precision variants.
pub mod f32 {
    pub type OpoParams = crate::noise_models::OpoParams<f32>;
    pub type QuadraturePair = crate::noise_models::QuadraturePair<f32>;
    pub type SimScenario = crate::synth::SimScenario<f32>;
    pub type WindowPlan = crate::spectral::WindowPlan<f32>;
    pub type StitchedSpectrum = crate::spectral::StitchedSpectrum<f32>;
}
