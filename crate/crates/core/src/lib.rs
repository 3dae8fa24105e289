//! Encoder-free quality control for still image coding.
//!
//! Encoding a large corpus to a uniform quality level normally requires either
//! a conservative fixed QP (wasting bits on easy images) or trial encodes
//! (wasting time on every image). This crate instead predicts, without
//! encoding, the QP that drives an image to a target PSNR:
//!
//! 1. [`transform`] computes LE, the log-domain quantization error of the
//!    original image's 8x8 DCT coefficients, at a few quantizer steps.
//! 2. A trained, content-independent model set ([`models::PsnrLeModelSet`])
//!    maps each LE value to the PSNR a specific encoder produces at a specific
//!    QP, yielding a handful of (lambda, PSNR) anchor points via the encoder's
//!    QP-lambda relationship.
//! 3. [`control::predict_qp`] fits the per-image line PSNR = a*log10(lambda) + b
//!    through the anchors, solves it for the target PSNR, and maps the
//!    resulting lambda back to an integer QP.
//!
//! [`training`] builds model sets from a corpus sweep, [`evaluation`] measures
//! control accuracy, and [`encoders`] provides a built-in analytic reference
//! encoder plus adapters for external encoder binaries.

pub mod control;
pub mod encoders;
pub mod evaluation;
pub mod models;
pub mod pixels;
pub mod synth;
pub mod training;
pub mod transform;

mod error;
mod util;

pub use error::{Error, Result};

/// Floor applied to every mean squared error before a `log10` (LE or PSNR).
///
/// Keeps lossless cases finite: a flat image quantizes with zero error, which
/// would otherwise produce `-inf` LE and `+inf` PSNR. The floor sits far below
/// any MSE a lossy encode can reach, so it only engages on exact-zero error.
pub const MSE_FLOOR: f64 = 1e-4;

/// Peak sample value for the 8-bit pipeline.
pub const PEAK: f64 = 255.0;
