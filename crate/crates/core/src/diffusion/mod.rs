//! Noise schedule, noise-prediction network, deterministic abduction and
//! guided reverse sampling.

pub mod model;
pub mod sampler;
pub mod schedule;

pub use model::{
    ddpm_loss, ddpm_train_step, from_model_space, time_embedding, time_embedding_rows, to_model_space, DenoiserConfig,
    DenoiserModel, NoisePredictor,
};
pub use sampler::{abduct, ddim_transition, guided_reverse_step, reconstruct, reverse, Abduction};
pub use schedule::{make_schedule, NoiseSchedule};
