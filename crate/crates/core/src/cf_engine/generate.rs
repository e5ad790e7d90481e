//! Abduction, action and estimation over batches of images.

use rand::Rng;

use super::select::{select_cf_label, Strategy};
use crate::anticausal::AntiCausalClassifier;
use crate::diffusion::{abduct, from_model_space, reverse, to_model_space, NoisePredictor, NoiseSchedule};
use crate::error::{contract, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct CounterfactualPair {
    pub x: Vec<f64>,
    pub y: usize,
    pub y_cf: usize,
    pub x_cf: Vec<f64>,
    pub s: f64,
    /// Abduced latent in model space.
    pub latent: Vec<f64>,
    /// Ground truth, when the exogenous values are known.
    pub x_cf_true: Option<Vec<f64>>,
}

/// The trained pieces needed to generate counterfactuals.
pub struct CfEngine<'a> {
    pub model: &'a dyn NoisePredictor,
    pub classifier: &'a AntiCausalClassifier,
    pub schedule: &'a NoiseSchedule,
}

impl CfEngine<'_> {
    /// Counterfactual class ids for `[0, 1]` images, chosen from the
    /// classifier's clean-image probabilities.
    pub fn choose_targets<R: Rng>(
        &self,
        images: &Tensor,
        labels: &[usize],
        strategy: Strategy,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        let probs = self.classifier.predict_probs_pixels(images)?;
        labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let local = self.classifier.local_index(y)?;
                let c = select_cf_label(probs.row(i), local, strategy, rng)?;
                Ok(self.classifier.classes[c])
            })
            .collect()
    }

    /// Deterministic generation towards given targets.
    pub fn generate_towards(
        &self,
        images: &Tensor,
        labels: &[usize],
        targets: &[usize],
        s: f64,
    ) -> Result<Vec<CounterfactualPair>> {
        let (n, _) = images.dims2()?;
        if labels.len() != n || targets.len() != n {
            return contract(format!(
                "{n} images with {} labels and {} targets",
                labels.len(),
                targets.len()
            ));
        }
        if let Some(i) = (0..n).find(|&i| labels[i] == targets[i]) {
            return contract(format!("counterfactual target equals factual label for image {i}"));
        }
        for &c in targets {
            self.classifier.local_index(c)?;
        }
        if !(s >= 0.0) {
            return contract(format!("guidance scale must be non-negative, got {s}"));
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        let x0 = to_model_space(images);
        let ab = abduct(self.model, self.schedule, &x0)?;
        let clf = self.classifier;
        let out = reverse(self.model, self.schedule, &ab.latent, s, &mut |x, t| {
            clf.log_prob_grad(x, t, targets)
        })?;
        let x_cf = from_model_space(&out);
        Ok((0..n)
            .map(|i| CounterfactualPair {
                x: images.row(i).to_vec(),
                y: labels[i],
                y_cf: targets[i],
                x_cf: x_cf.row(i).to_vec(),
                s,
                latent: ab.latent.row(i).to_vec(),
                x_cf_true: None,
            })
            .collect())
    }

    /// Full pipeline: choose targets by `strategy`, then generate.
    pub fn generate<R: Rng>(
        &self,
        images: &Tensor,
        labels: &[usize],
        s: f64,
        strategy: Strategy,
        rng: &mut R,
    ) -> Result<Vec<CounterfactualPair>> {
        let targets = self.choose_targets(images, labels, strategy, rng)?;
        self.generate_towards(images, labels, &targets, s)
    }
}
