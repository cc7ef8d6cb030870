//! Differentially private PV reference generation and receding-horizon
//! dispatch of on/off HVAC loads.
//!
//! The pipeline: sample Laplace noise ([`privacy`]), subtract it from PV
//! generation to get the net reference, and steer a population of buildings
//! ([`thermal`]) so their aggregate consumption follows that reference while
//! indoor temperatures stay in a comfort band ([`dispatch`]). [`scenario`]
//! assembles inputs, [`metrics`] scores runs, [`cli`] ties it together.

pub mod cli;
pub mod dispatch;
pub mod error;
pub mod metrics;
pub mod privacy;
pub mod scenario;
pub mod thermal;

pub use cli::simulate;
pub use error::{Error, Result};

/// Float formatting for every CSV this crate writes: 17 significant digits,
/// enough to read back the identical `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
