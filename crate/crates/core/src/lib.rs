//! Link-level simulation of DFT-spread OFDM under oscillator phase noise.
//!
//! The crate covers the full uncoded chain: phase-noise synthesis from a
//! multi pole-zero PSD, DFT-s-OFDM modulation, a flat LoS channel with AWGN,
//! PTRS pilot layouts, five pilot-based phase estimators (CPE, constant and
//! linear interpolation, DCT fitting and the LMMSE interpolation filter),
//! covariance training for the filter, an analytic interference oracle and a
//! reproducible Monte Carlo engine.

// `!(x > 0.0)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod covariance;
pub mod engine;
pub mod error;
pub mod estimators;
pub mod oracle;
pub mod pn_model;
pub mod ptrs;
pub mod rng;
pub mod waveform;

pub use error::{Error, Result};

/// Complex baseband sample type used throughout the crate.
pub type C64 = num_complex::Complex64;
