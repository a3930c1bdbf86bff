//! Core of a peer-to-peer networked music performance engine.

pub mod analysis;
pub mod device;
pub mod engine;
pub mod error;
pub mod jitter;
pub mod metronome;
pub mod netsim;
pub mod routing;
pub mod session;
pub mod telemetry;
pub mod wire;

pub use error::{Error, Result};
