//! Behavioural-pattern authentication for NFT digital twins.
//!
//! The crate is organised bottom-up:
//!
//! * [`telemetry`] generates, ingests, windows and normalizes heater telemetry
//!   into 34×5 behavioural patterns.
//! * [`neural`] is a small f64 neural toolkit (dense, layer norm, dropout,
//!   GRU / Bi-GRU, Adam) with analytic gradients.
//! * [`models`] holds the denoising autoencoder and the Bi-GRU classifier.
//! * [`evaluation`] does τ-aware confusion accounting, soundness/completeness
//!   and the τ sweep.
//! * [`ledger`] simulates an NFT registry with an append-only event log.
//! * [`contracts`] runs the metadata update and verification state machines.
//! * [`pipeline`] wires the reference experiment end to end.

pub mod contracts;
pub mod error;
pub mod evaluation;
pub mod ledger;
pub mod models;
pub mod neural;
pub mod pipeline;
pub mod telemetry;

mod binio;

pub use error::{Error, Result};
