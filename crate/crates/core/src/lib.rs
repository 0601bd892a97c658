pub mod error;
pub mod estimator;
pub mod experiment;
pub mod fusion;
pub mod geometry;
pub mod metrics;
pub mod objectives;
pub mod perturb;
pub mod rng;
pub mod scene;

pub use error::{Error, Result};
