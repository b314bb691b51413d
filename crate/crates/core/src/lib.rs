//! Deterministic simulator of personalized federated learning with partial
//! model-sharing, trigger-based backdoor attacks, and server/client defenses.

pub mod config;
pub mod attacks;
pub mod data;
pub mod defense;
pub mod error;
pub mod eval;
pub mod model;
pub mod optim;
pub mod params;
pub mod poison;
pub mod protocol;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
