//! Checks of the identifiability conditions and the counterfactual error
//! bounds on analytic vector models.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{contract, Result};
use crate::numerics::gradcheck::numeric_jacobian;
use crate::rng::derive_rng;
use crate::scm::analytic::{is_positive_definite, scaled_orthogonality_defect, AnalyticScm};
use crate::stats::{correlation, l2_distance};

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub trials: usize,
    pub max_reconstruction_error: f64,
    pub max_counterfactual_error: f64,
    /// Trials whose counterfactual error exceeded their reconstruction error.
    pub cf_exceeds_reconstruction: usize,
}

fn other_class<R: Rng>(scm: &AnalyticScm, y: usize, rng: &mut R) -> usize {
    let r = rng.random_range(0..scm.num_classes - 1);
    if r >= y {
        r + 1
    } else {
        r
    }
}

/// Runs `trials` abduction/action/prediction rounds with an abduction map
/// `g` and reconstruction `h`, measuring L2 errors against `f`.
fn run_pair<G, H>(scm: &AnalyticScm, trials: usize, seed: u64, tag: &str, g: G, h: H) -> Result<BoundReport>
where
    G: Fn(&[f64]) -> Result<Vec<f64>>,
    H: Fn(&[f64], usize, usize) -> Result<Vec<f64>>,
{
    let mut rng = derive_rng(seed, tag, 0);
    let mut report = BoundReport {
        trials,
        max_reconstruction_error: 0.0,
        max_counterfactual_error: 0.0,
        cf_exceeds_reconstruction: 0,
    };
    for _ in 0..trials {
        let s = scm.sample(&mut rng)?;
        let y_cf = other_class(scm, s.y, &mut rng);
        let truth = scm.structural(y_cf, s.style, &s.u_x)?;
        let latent = g(&s.x)?;
        let rec = l2_distance(&h(&latent, s.y, s.style)?, &s.x);
        let cf = l2_distance(&h(&latent, y_cf, s.style)?, &truth);
        report.max_reconstruction_error = report.max_reconstruction_error.max(rec);
        report.max_counterfactual_error = report.max_counterfactual_error.max(cf);
        if cf > rec {
            report.cf_exceeds_reconstruction += 1;
        }
    }
    Ok(report)
}

/// The exact pair `(g*, h*)` with `g` shifted by a fixed latent offset of
/// L2 norm `delta` along a seeded unit direction.
pub fn corollary_harness(scm: &AnalyticScm, delta: f64, trials: usize, seed: u64) -> Result<BoundReport> {
    if !(delta >= 0.0) {
        return contract(format!("distortion must be non-negative, got {delta}"));
    }
    let mut rng = derive_rng(seed, "distortion-direction", 0);
    let mut dir: Vec<f64> = (0..scm.dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|v| *v *= delta / norm);
    run_pair(
        scm,
        trials,
        seed,
        "corollary-trials",
        |x| {
            let mut l = scm.abduct(x)?;
            l.iter_mut().zip(&dir).for_each(|(a, d)| *a += d);
            Ok(l)
        },
        |l, y, style| scm.reconstruct(l, y, style),
    )
}

/// A pair violating independence of the recovered latent: `g` is the
/// identity, so the latent carries the label, and `h` ignores the label.
/// Reconstruction is exact while counterfactuals are not.
pub fn violation_probe(scm: &AnalyticScm, trials: usize, seed: u64) -> Result<BoundReport> {
    run_pair(
        scm,
        trials,
        seed,
        "violation-trials",
        |x| Ok(x.to_vec()),
        |l, _, _| Ok(l.to_vec()),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionReport {
    /// Points at which the Jacobian of `f` in `u_x` was positive definite.
    pub pd_points: usize,
    pub points: usize,
    /// Largest absolute correlation between a latent coordinate and the
    /// label or a style coordinate.
    pub max_latent_correlation: f64,
    /// Largest `max |J^T J - s^2 I|` of the Jacobian of `q = g* o f`.
    pub max_q_defect: f64,
}

/// Numerical checks of the identifiability conditions.
pub fn check_conditions(scm: &AnalyticScm, points: usize, draws: usize, seed: u64) -> Result<ConditionReport> {
    let dim = scm.dim;
    let mut rng = derive_rng(seed, "condition-points", 0);
    let mut pd_points = 0;
    let mut max_q_defect: f64 = 0.0;
    for _ in 0..points {
        let y = rng.random_range(0..scm.num_classes);
        let style = rng.random_range(0..scm.num_styles());
        let u: Vec<f64> = (0..dim).map(|_| rng.random_range(0.01..0.99)).collect();
        let jf = numeric_jacobian(|p| scm.structural(y, style, p).expect("valid configuration"), &u, 1e-5);
        if is_positive_definite(&jf, dim) {
            pd_points += 1;
        }
        // q is linear in u for both families, so a wide step loses nothing
        // to truncation and keeps rounding error small
        let jq = numeric_jacobian(
            |p| {
                let x = scm.structural(y, style, p).expect("valid configuration");
                scm.abduct(&x).expect("x lies in the support")
            },
            &u,
            1e-3,
        );
        max_q_defect = max_q_defect.max(scaled_orthogonality_defect(&jq, dim).1);
    }

    let mut rng = derive_rng(seed, "condition-draws", 0);
    let mut latents: Vec<Vec<f64>> = vec![Vec::with_capacity(draws); dim];
    let mut parents: Vec<Vec<f64>> = vec![Vec::with_capacity(draws); dim + 1];
    for _ in 0..draws {
        let s = scm.sample(&mut rng)?;
        let l = scm.abduct(&s.x)?;
        for (col, v) in latents.iter_mut().zip(&l) {
            col.push(*v);
        }
        parents[0].push(s.y as f64);
        for (j, v) in scm.styles[s.style].iter().enumerate() {
            parents[j + 1].push(*v);
        }
    }
    let mut max_latent_correlation: f64 = 0.0;
    for l in &latents {
        for p in &parents {
            max_latent_correlation = max_latent_correlation.max(correlation(l, p).abs());
        }
    }
    Ok(ConditionReport {
        pd_points,
        points,
        max_latent_correlation,
        max_q_defect,
    })
}
