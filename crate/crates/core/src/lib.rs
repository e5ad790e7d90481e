pub mod anticausal;
pub mod cf_engine;
pub mod checkpoint;
pub mod diffusion;
pub mod error;
pub mod numerics;
pub mod pipeline;
pub mod prompt_learner;
pub mod rng;
pub mod scm;
pub mod stats;

pub use error::{Error, Result};
