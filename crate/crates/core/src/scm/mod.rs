//! Structural causal models: the image generator, dataset splits and
//! persistence, and analytic vector models with known inverses.

pub mod analytic;
pub mod glyph;
pub mod image;
pub mod io;
pub mod split;

pub use analytic::{AnalyticFamily, AnalyticScm, VectorSample};
pub use image::{render_image, sample_scm, true_counterfactual, ScmSample, ScmSpec};
pub use split::{biased_pool, class_balanced, make_splits, DatasetSplit, SplitOptions};
