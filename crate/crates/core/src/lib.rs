//! Simulation and verification toolkit for McKean-Vlasov SDEs with singular drift.

pub mod coupling;
pub mod error;
pub mod metrics;
pub mod model_zoo;
pub mod numerics;
pub mod particle;
pub mod paths;
pub mod picard;
pub mod verify;

pub use error::{Error, Result};
pub use paths::{brownian_increments, StreamKey, TimeGrid};
