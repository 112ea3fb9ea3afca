//! Decoy-state BB84 quantum key distribution simulator for high-loss
//! underwater optical links.
//!
//! The pipeline follows the hardware it models: a 50 MHz polarization-encoded
//! source with three decoy intensities and a 500 kHz timing beacon
//! ([`transmitter`]), linear water/system attenuation acting on weak coherent
//! pulses ([`channel`]), a passive-basis five-detector receiver with dark
//! counts, background, jitter and TDC quantization ([`receiver`]), beacon
//! grid recovery and per-pulse time tagging ([`sync`]), classical sifting,
//! cascade reconciliation and Toeplitz privacy amplification
//! ([`postprocess`]), and decoy-state bounds feeding the secret-key rate
//! ([`decoy`]). Optional channel attacks live in [`adversary`]; [`session`]
//! wires everything into seeded, reproducible rounds and [`io`] handles
//! event/emission logs and reports.

pub mod adversary;
pub mod channel;
pub mod config;
pub mod decoy;
pub mod error;
pub mod io;
pub mod postprocess;
pub mod receiver;
pub mod rng;
pub mod session;
pub mod sync;
pub mod timebase;
pub mod transmitter;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
