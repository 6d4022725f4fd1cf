pub mod error;
pub mod estimators;
pub mod gauss;
pub mod harness;
pub mod lbfgs;
pub mod models;
pub mod optim;
pub mod sobol;

pub use error::{Error, Result};
