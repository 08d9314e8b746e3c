//! Wideband spectrum sensing with a reconfigurable coefficient-decimation
//! filter bank, per-subband energy detection and band-edge estimation.
//!
//! Frequencies are Nyquist-normalized throughout: `1.0` is half the sampling
//! rate.

pub mod analysis;
pub mod edge_detect;
pub mod energy;
pub mod error;
pub mod filter_design;
pub mod filterbank;
pub mod sensing;
pub mod signal_gen;

pub use error::{Error, Result};
