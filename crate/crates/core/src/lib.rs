//! Simulation, calibration and recovery of frequency-domain multiplexed
//! scintillation detector readout.
//!
//! Detector anodes drive damped resonators tuned to distinct frequencies;
//! their outputs are summed into one digitizer channel. This crate models
//! that chain, estimates each resonator's transfer function from noise
//! records, recovers anode pulses by spectral division, and compares charge,
//! timing and pulse-shape observables of recovered and directly digitized
//! pulses.

pub mod analysis;
pub mod chain;
pub mod commands;
pub mod config;
pub mod deconv;
pub mod detector;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod signal;
pub mod summary;
pub mod sysid;

pub use error::{Error, Result};
