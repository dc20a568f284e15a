//! Iterative frequency-domain receivers built on expectation propagation
//! with white Gaussian symbol messages.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: unitary DFT, circular convolution and seeded Gaussian sampling.
//! - [`bicm`]: RSC encoding, bit interleaving and the log-MAP BCJR decoder.
//! - [`mapping`]: Gray constellations and the EP soft demapper.
//! - [`channel`]: channel presets, fading, time variation and CSI mismatch.
//! - [`fde`]: single-tap MMSE FDE and the double-loop turbo driver.
//! - [`overlap`]: overlap FDE with NI/IR/IC inter-block interference handling.
//! - [`mimo`]: frequency-domain MIMO detector with PIC/SIC schedules.
//! - [`analysis`]: mutual information, EXIT curves and area-theorem rates.
//! - [`harness`]: Monte-Carlo experiment engine and result emission.

// `!(x > 0.0)` style checks are meant to reject NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bicm;
pub mod channel;
mod error;
pub mod fde;
pub mod harness;
pub mod mapping;
pub mod mimo;
pub mod numerics;
pub mod overlap;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Magnitude at which log-likelihood ratios are clamped.
pub const LLR_CLAMP: f64 = 50.0;

/// Smallest variance handed to divisions and exponentials.
pub const VARIANCE_FLOOR: f64 = 1e-12;
