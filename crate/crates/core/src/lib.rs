//! Pruning at initialization with sparse neuron-to-neuron skip connections,
//! plus heat-diffusion connectivity analysis of the resulting networks.

pub mod checkpoint;
pub mod config;
pub mod connectivity;
pub mod data;
pub mod error;
pub mod experiment;
pub mod net;
pub mod numcore;
pub mod pruning;
pub mod rng;
pub mod skipgen;
pub mod trainer;

pub use error::{Error, Result};
