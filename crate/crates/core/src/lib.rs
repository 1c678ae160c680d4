//! Binary restricted Boltzmann machines with hidden-unit pruning by removal
//! cost.

pub mod cli;
pub mod data;
pub mod error;
pub mod math;
pub mod model;
pub mod objective;
pub mod persist;
pub mod pruning;
pub mod rng;
pub mod sampling;
pub mod training;

pub use error::{Error, Result};
pub use model::{BinaryVector, DiscreteDistribution, RbmParams};
