//! Optimal control of parameter ensembles under an average (Riemann–Stieltjes)
//! cost over a finite atom space.

pub mod cli;
pub mod ensemble;
pub mod error;
pub mod expr;
pub mod hamiltonian;
pub mod measure;
pub mod problem;
pub mod value;
pub mod verify;

pub use error::{Error, Result};
pub use measure::{EnsembleState, ParameterSpace};
pub use problem::ProblemSpec;
