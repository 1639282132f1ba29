//! Joint channel estimation and signal detection for MIMO-OFDM receivers.
//!
//! The crate models a comb-pilot MIMO-OFDM link in the frequency domain and
//! implements a layered receiver: pilot-based LS/LMMSE estimation followed by
//! expectation-propagation (EP) detection, then data-aided re-estimation using
//! the detector's soft symbols. Two data-aided estimators are provided:
//!
//! - [`estimation::mjcd_lmmse`]: the Wiener-Hopf solution over the stacked
//!   space-frequency system, exact but cubic in `N_R * (K - P)`.
//! - [`estimation::ojcd_lmmse`]: an equivalent per-(tx, rx) subsystem
//!   estimator with interference cancellation and error-aware weights.
//!
//! [`harness`] drives Monte Carlo experiments and writes CSV/JSON results.

pub mod channel;
pub mod coding;
pub mod detection;
mod error;
pub mod estimation;
pub mod flops;
pub mod frame;
pub mod harness;
pub mod jcd;
pub mod linalg;
pub mod oracle;
pub mod selftest;

pub use error::{Error, Result};

pub use num_complex::Complex64;
