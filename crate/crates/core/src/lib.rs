//! Cooperative multi-node ISAC network simulator.
//!
//! The crate models a small cellular sensing network end to end:
//!
//! - [`scenario`]: the simulated world (base stations, obstacles, targets) and
//!   line-of-sight queries.
//! - [`channel`]: path loss, Rician fading, array responses and two-way echo
//!   link budgets.
//! - [`signal`]: OFDM resource grids and noisy echo frames.
//! - [`ranging`]: delay/Doppler/angle estimation, three-stage super-resolution
//!   range refinement and Cramér-Rao bounds.
//! - [`fusion`]: front-end, mid-end, back-end and symbol-level fusion of
//!   multi-node observations, plus clock-offset calibration.
//! - [`comp`]: coherent joint transmission and minimum-power cooperative
//!   beamforming under SINR and CRLB constraints.
//! - [`harness`]: Monte-Carlo experiments, presets and CSV/SVG output.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

// Validation is written as `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod comp;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod ranging;
pub mod rng;
pub mod scenario;
pub mod signal;
pub mod units;

pub use error::{Error, Result};
