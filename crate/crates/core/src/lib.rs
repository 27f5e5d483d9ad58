//! Joint wireless-power allocation, sensing-data sizing, lossless compression
//! and transmission scheduling for wirelessly powered crowd sensing.
//!
//! An access point beams power to a set of mobile sensors; each sensor keeps a
//! share as payment, then senses, compresses and uploads data. The operator
//! maximizes data utility minus the price of the transferred energy.
//!
//! - [`model`]: configuration types and closed-form physical functions.
//! - [`pa_solver`]: power allocation for fixed compression ratios.
//! - [`comp_solver`]: compression ratio for fixed data sizes.
//! - [`iterate`]: block-coordinate ascent alternating the two.
//! - [`oracle`]: brute-force and finite-difference audits.
//! - [`sim`]: scenario sampling, baseline policies and parameter sweeps.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod comp_solver;
pub mod error;
pub mod iterate;
pub mod model;
pub mod oracle;
pub mod pa_solver;
pub mod sim;

pub use error::{Result, WpcsError};
pub use model::{Allocation, SensorProfile, SolveReport, SystemConfig};
