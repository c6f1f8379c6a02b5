pub mod baselines;
pub mod cli;
pub mod coordinator;
pub mod error;
pub mod estimator;
pub mod imaging;
pub mod linalg;
pub mod policy;
pub mod vehicle;
pub mod world;

pub use error::{Error, Result};
