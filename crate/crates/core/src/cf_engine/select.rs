//! Counterfactual label selection.

use rand::Rng;

use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// The runner-up class under the classifier, lowest index on ties.
    Similarity,
    /// Uniform over the other classes.
    Random,
}

impl Strategy {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "similarity" => Some(Strategy::Similarity),
            "random" => Some(Strategy::Random),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Similarity => "similarity",
            Strategy::Random => "random",
        }
    }
}

/// Picks a counterfactual index `!= y` from a probability vector over
/// indices `0..K`.
pub fn select_cf_label<R: Rng + ?Sized>(probs: &[f64], y: usize, strategy: Strategy, rng: &mut R) -> Result<usize> {
    let k = probs.len();
    if k < 2 {
        return contract(format!("counterfactual selection needs K >= 2, got {k}"));
    }
    if y >= k {
        return contract(format!("factual label {y} out of range for K = {k}"));
    }
    Ok(match strategy {
        Strategy::Similarity => {
            let mut best: Option<usize> = None;
            for (c, p) in probs.iter().enumerate() {
                if c != y && best.is_none_or(|b| *p > probs[b]) {
                    best = Some(c);
                }
            }
            best.expect("K >= 2")
        }
        Strategy::Random => {
            let r = rng.random_range(0..k - 1);
            if r >= y {
                r + 1
            } else {
                r
            }
        }
    })
}
