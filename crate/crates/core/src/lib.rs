//! Auxiliary-objective space generation, factored meta-learned objective
//! weighting, and a stability lab for multitask SGD.

pub mod corpus;
pub mod error;
pub mod model;
pub mod objective_space;
pub mod rng;
pub mod search;
pub mod stability;
pub mod synthetic;

pub use error::{Error, Result};
