//! Counterfactual prompt learning: a frozen image encoder, instance-
//! conditioned class prompts, and the losses that train them.

pub mod encoder;
pub mod loss;
pub mod probe;
pub mod prompt;
pub mod train;

pub use encoder::{pretrain_image_encoder, EncoderConfig, EncoderState, EncoderTraining};
pub use loss::{cf_loss_from_scores, loss_basic, loss_cf, total_loss, total_loss_and_grad, LossParts};
pub use prompt::{accuracy, class_anchors, classify, PromptConfig, PromptState};
pub use train::{train_prompts, EpochLog, EvalSet, PromptData, PromptTraining};
