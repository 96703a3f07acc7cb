//! Sinusoid parameter and model-order estimation from one-bit signed
//! measurements.
//!
//! Measurements are signs of a noisy sinusoidal signal compared against a
//! known (fixed or time-varying) threshold. The crate provides:
//!
//! * [`spectral`]: FFT and chirp-z spectral zoom primitives.
//! * [`sigmodel`]: signal synthesis, noise/threshold generation and one-bit sampling.
//! * [`likelihood`]: stable `-log Φ` and its derivatives, the negative
//!   log-likelihood and its quadratic majorizer.
//! * [`mmcore`]: the majorization-minimization engine that turns each
//!   likelihood step into a classical least-squares sinusoid fit.
//! * [`relax`]: the 1bCLEAN, 1bRELAX and 1bMMRELAX drivers and 1bBIC order selection.
//! * [`bench`]: a deterministic Monte Carlo harness.
//!
//! Real 1-D, complex 1-D and complex 2-D data are supported. Internally every
//! record is flattened into real "channels": one per sample for real data and
//! two (real part, imaginary part) per sample for complex data.

// NaN-rejecting `!(x > 0.0)` tests and index loops over small dense
// matrices are intentional.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::excessive_precision,
    clippy::too_many_arguments
)]

pub mod bench;
pub mod error;
pub mod likelihood;
pub mod mmcore;
pub mod relax;
pub mod sigmodel;
pub mod spectral;

pub use error::{Error, Result};
