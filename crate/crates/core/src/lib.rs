pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod persist;
pub mod plot;
pub mod solver;

#[cfg(test)]
mod testutil;

pub use error::{Error, ErrorKind, Result};
pub use model::TaskKind;
pub use objective::Hyperparams;
pub use solver::{add_new, add_new_one_by_one, fit, Addition, Solution, SolverConfig};
