mod binfmt;
pub mod convergence;
pub mod datasets;
pub mod error;
pub mod fem;
pub mod hybrid;
pub mod flux;
pub mod markov;
pub mod surrogate;

pub use error::{Error, Result};
