//! Prompt training over a static counterfactual dataset.

use rand::seq::SliceRandom;
use rand::Rng;

use super::loss::total_loss_and_grad;
use super::prompt::{accuracy, PromptState};
use crate::error::{contract, Result};
use crate::numerics::{Adam, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct PromptTraining {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub lambda: f64,
    pub optimizer: Adam,
}

impl Default for PromptTraining {
    fn default() -> Self {
        PromptTraining {
            epochs: 30,
            batch: 16,
            lr: 5e-3,
            lambda: 1.0,
            optimizer: Adam::default(),
        }
    }
}

/// Embeddings of the train images, their labels and the embeddings of
/// their counterfactuals, row-aligned.
pub struct PromptData<'a> {
    pub v: &'a Tensor,
    pub v_cf: &'a Tensor,
    pub labels: &'a [usize],
}

/// Held-out embeddings scored after every epoch.
pub struct EvalSet<'a> {
    pub v: &'a Tensor,
    pub labels: &'a [usize],
    pub seen: &'a [usize],
    pub unseen: &'a [usize],
}

impl EvalSet<'_> {
    fn subset(&self, classes: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let (_, d) = self.v.dims2()?;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (i, y) in self.labels.iter().enumerate() {
            if classes.contains(y) {
                rows.extend_from_slice(self.v.row(i));
                labels.push(*y);
            }
        }
        Ok((Tensor::new(vec![labels.len(), d], rows)?, labels))
    }

    /// Seen accuracy over the seen classes and unseen accuracy over the
    /// unseen classes.
    pub fn score(&self, state: &PromptState) -> Result<(f64, f64)> {
        let (vs, ys) = self.subset(self.seen)?;
        let seen = accuracy(state, &vs, &ys, self.seen)?;
        let unseen = if self.unseen.is_empty() {
            0.0
        } else {
            let (vu, yu) = self.subset(self.unseen)?;
            accuracy(state, &vu, &yu, self.unseen)?
        };
        Ok((seen, unseen))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub basic: f64,
    pub cf: f64,
    pub total: f64,
    pub seen_acc: Option<f64>,
    pub unseen_acc: Option<f64>,
}

/// Cosine annealing from `base` at the first epoch towards zero.
pub fn cosine_lr(base: f64, epoch: usize, epochs: usize) -> f64 {
    0.5 * base * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos())
}

/// Updates the context vectors and meta network of `state`; the frozen
/// text path is never touched.
pub fn train_prompts<R: Rng>(
    state: &mut PromptState,
    data: &PromptData<'_>,
    classes: &[usize],
    training: &PromptTraining,
    eval: Option<&EvalSet<'_>>,
    rng: &mut R,
) -> Result<Vec<EpochLog>> {
    let (n, d) = data.v.dims2()?;
    if data.v_cf.dims2()?.0 != n {
        return contract(format!(
            "{n} train embeddings but {} counterfactual embeddings",
            data.v_cf.dims2()?.0
        ));
    }
    if data.labels.len() != n || n == 0 {
        return contract(format!("{} labels for {n} train embeddings", data.labels.len()));
    }
    if training.batch == 0 {
        return contract("batch size must be positive");
    }
    let frozen = state.frozen_checksum();
    let opt = training.optimizer;
    let mut order: Vec<usize> = (0..n).collect();
    let mut logs = Vec::with_capacity(training.epochs);
    for epoch in 0..training.epochs {
        let lr = cosine_lr(training.lr, epoch, training.epochs);
        order.shuffle(rng);
        let (mut basic, mut cf, mut total, mut batches) = (0.0, 0.0, 0.0, 0.0);
        for chunk in order.chunks(training.batch) {
            let gather = |t: &Tensor| -> Result<Tensor> {
                let mut rows = Vec::with_capacity(chunk.len() * d);
                for &i in chunk {
                    rows.extend_from_slice(t.row(i));
                }
                Tensor::new(vec![chunk.len(), d], rows)
            };
            let vb = gather(data.v)?;
            let cb = gather(data.v_cf)?;
            let yb: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let (parts, grads) = total_loss_and_grad(state, &vb, &cb, &yb, classes, training.lambda)?;
            opt.step(&mut state.learned, &grads, lr)?;
            basic += parts.basic;
            cf += parts.cf;
            total += parts.total;
            batches += 1.0;
        }
        let (seen_acc, unseen_acc) = match eval {
            Some(e) => {
                let (s, u) = e.score(state)?;
                (Some(s), Some(u))
            }
            None => (None, None),
        };
        logs.push(EpochLog {
            epoch: epoch + 1,
            basic: basic / batches,
            cf: cf / batches,
            total: total / batches,
            seen_acc,
            unseen_acc,
        });
    }
    debug_assert_eq!(frozen, state.frozen_checksum());
    Ok(logs)
}
