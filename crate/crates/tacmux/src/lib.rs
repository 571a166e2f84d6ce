//! Orthogonal-code multiplexing for distributed tactile sensing nodes.
//!
//! Every node in an array spreads its digitized pressure word over a
//! Hadamard row and drives the shared wire at the same time; the decoder
//! recovers each node's word by correlating the superimposed waveform
//! against the assigned rows. This crate contains the codebook machinery,
//! the per-node encoder with timing-jitter modelling, the single-wire
//! channel (attenuation, inverting summation, noise, acquisition), the
//! correlation decoder, and an experiment harness used by the `tacmux`
//! command line tool.

pub mod channel;
pub mod codebook;
pub mod config;
pub mod decoder;
pub mod encoder;
mod error;
pub mod rng;
pub mod sensor;
pub mod sim;
pub mod sweep;
pub mod trace_io;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
