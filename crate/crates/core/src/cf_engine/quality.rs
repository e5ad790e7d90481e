//! Distances, flip checks and the quality proxy for counterfactual pairs.

use super::generate::CounterfactualPair;
use crate::anticausal::AntiCausalClassifier;
use crate::error::{contract, Result};
use crate::numerics::Tensor;
use crate::scm::glyph::{union_mask, PIXELS};
use crate::stats::{argmax, l2_distance, linf_distance};

#[derive(Clone, Debug, PartialEq)]
pub struct CfQualityReport {
    pub l2: f64,
    pub linf: f64,
    pub label_flipped: bool,
    /// `p(y_cf | x_cf, t = 0)`.
    pub flip_confidence: f64,
    /// L2 distance over pixels outside both glyph masks.
    pub non_causal_leakage: f64,
    /// L2 distance over pixels inside the union of the glyph masks.
    pub causal_distance: f64,
    /// Root-mean-square change per pixel outside / inside the masks.
    pub leakage_rms: f64,
    pub causal_rms: f64,
    /// `l2 / sqrt(m) + (1 - flip_confidence)`; lower is better.
    pub quality_score: f64,
}

/// Scores pairs against the classifier at `t = 0` and the glyph masks of
/// the image model.
pub fn evaluate_quality(
    pairs: &[CounterfactualPair],
    classifier: &AntiCausalClassifier,
) -> Result<Vec<CfQualityReport>> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let m = pairs[0].x.len();
    if m != PIXELS || pairs.iter().any(|p| p.x.len() != m || p.x_cf.len() != m) {
        return contract(format!("quality evaluation needs {PIXELS}-pixel images"));
    }
    let mut flat = Vec::with_capacity(pairs.len() * m);
    for p in pairs {
        flat.extend_from_slice(&p.x_cf);
    }
    let probs = classifier.predict_probs_pixels(&Tensor::new(vec![pairs.len(), m], flat)?)?;
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let row = probs.row(i);
            let local = classifier.local_index(p.y_cf)?;
            let mask = union_mask(p.y, p.y_cf)
                .ok_or_else(|| crate::Error::Contract(format!("no glyph for classes {} / {}", p.y, p.y_cf)))?;
            let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0usize, 0.0, 0usize);
            for px in 0..m {
                let d = p.x_cf[px] - p.x[px];
                if mask[px] {
                    inside += d * d;
                    n_in += 1;
                } else {
                    outside += d * d;
                    n_out += 1;
                }
            }
            let l2 = l2_distance(&p.x, &p.x_cf);
            let conf = row[local];
            Ok(CfQualityReport {
                l2,
                linf: linf_distance(&p.x, &p.x_cf),
                label_flipped: argmax(row) == local,
                flip_confidence: conf,
                non_causal_leakage: outside.sqrt(),
                causal_distance: inside.sqrt(),
                leakage_rms: (outside / n_out.max(1) as f64).sqrt(),
                causal_rms: (inside / n_in.max(1) as f64).sqrt(),
                quality_score: l2 / (m as f64).sqrt() + (1.0 - conf),
            })
        })
        .collect()
}

/// Means over a set of reports.
#[derive(Clone, Debug, PartialEq)]
pub struct QualitySummary {
    pub count: usize,
    pub flip_rate: f64,
    pub mean_flip_confidence: f64,
    pub mean_l2: f64,
    pub mean_linf: f64,
    pub mean_leakage_rms: f64,
    pub mean_causal_rms: f64,
    pub mean_quality: f64,
}

pub fn summarize(reports: &[CfQualityReport]) -> QualitySummary {
    let n = reports.len().max(1) as f64;
    let mean = |f: fn(&CfQualityReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    QualitySummary {
        count: reports.len(),
        flip_rate: reports.iter().filter(|r| r.label_flipped).count() as f64 / n,
        mean_flip_confidence: mean(|r| r.flip_confidence),
        mean_l2: mean(|r| r.l2),
        mean_linf: mean(|r| r.linf),
        mean_leakage_rms: mean(|r| r.leakage_rms),
        mean_causal_rms: mean(|r| r.causal_rms),
        mean_quality: mean(|r| r.quality_score),
    }
}
