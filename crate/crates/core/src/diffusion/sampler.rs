//! Deterministic forward abduction and guided reverse sampling.

use super::model::NoisePredictor;
use super::schedule::NoiseSchedule;
use crate::error::{contract, Error, Result};
use crate::numerics::Tensor;

/// One deterministic transition between noise levels `ab_from` and `ab_to`:
/// `sqrt(ab_to) (x - sqrt(1 - ab_from) eps) / sqrt(ab_from) + sqrt(1 - ab_to) eps`.
pub fn ddim_transition(x: &Tensor, eps: &Tensor, ab_from: f64, ab_to: f64) -> Result<Tensor> {
    let a = (ab_to / ab_from).sqrt();
    let c = (1.0 - ab_to).sqrt() - a * (1.0 - ab_from).sqrt();
    x.zip_map(eps, |xv, ev| a * xv + c * ev)
}

fn ensure_finite(x: &Tensor, stage: &str, t: usize) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            at: format!("{stage} at timestep {t}"),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Abduction {
    /// `x` at the last grid index.
    pub latent: Tensor,
    /// `x_0 .. x_{T-1}`; the first entry is the input.
    pub trajectory: Vec<Tensor>,
}

/// Runs the forward implicit process from model-space `x` at index 0 to the
/// last grid index, one `eps_theta(x_t, t)` evaluation per transition.
pub fn abduct(model: &dyn NoisePredictor, schedule: &NoiseSchedule, x: &Tensor) -> Result<Abduction> {
    let mut trajectory = Vec::with_capacity(schedule.steps());
    trajectory.push(x.clone());
    let mut cur = x.clone();
    for t in 0..schedule.last() {
        let eps = model
            .predict(&cur, t)
            .map_err(|e| e.in_stage(&format!("abduction at timestep {t}")))?;
        cur = ddim_transition(&cur, &eps, schedule.alpha_bar(t), schedule.alpha_bar(t + 1))?;
        ensure_finite(&cur, "abduction", t + 1)?;
        trajectory.push(cur.clone());
    }
    Ok(Abduction {
        latent: cur,
        trajectory,
    })
}

/// `x_t -> x_{t-1}` with the noise estimate shifted by the scaled guidance,
/// `eps = eps_theta(x_t, t) - s sqrt(1 - ab_t) guidance`, used in both terms.
pub fn guided_reverse_step(
    model: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    x_t: &Tensor,
    t: usize,
    guidance: &Tensor,
    s: f64,
) -> Result<Tensor> {
    if !(s >= 0.0) {
        return contract(format!("guidance scale must be non-negative, got {s}"));
    }
    if t == 0 || t >= schedule.steps() {
        return contract(format!("reverse step needs 1 <= t < {}, got {t}", schedule.steps()));
    }
    if guidance.shape() != x_t.shape() {
        return Err(Error::Shape {
            op: "guided_reverse_step",
            expected: x_t.shape().to_vec(),
            got: guidance.shape().to_vec(),
        });
    }
    let ab = schedule.alpha_bar(t);
    let mut eps = model
        .predict(x_t, t)
        .map_err(|e| e.in_stage(&format!("estimation at timestep {t}")))?;
    if s != 0.0 {
        eps.add_assign_scaled(guidance, -s * (1.0 - ab).sqrt());
    }
    let out = ddim_transition(x_t, &eps, ab, schedule.alpha_bar(t - 1))?;
    ensure_finite(&out, "estimation", t - 1)?;
    Ok(out)
}

/// Runs reverse steps from the last grid index down to 0. `guidance` is
/// called with `(x_t, t)` before each step and must return
/// `grad_x log p(y_cf | x_t)`; it is not called when `s == 0`.
pub fn reverse(
    model: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    latent: &Tensor,
    s: f64,
    guidance: &mut dyn FnMut(&Tensor, usize) -> Result<Tensor>,
) -> Result<Tensor> {
    let mut cur = latent.clone();
    let zeros = Tensor::zeros(latent.shape());
    for t in (1..schedule.steps()).rev() {
        cur = if s == 0.0 {
            guided_reverse_step(model, schedule, &cur, t, &zeros, 0.0)?
        } else {
            let g = guidance(&cur, t)?;
            guided_reverse_step(model, schedule, &cur, t, &g, s)?
        };
    }
    Ok(cur)
}

/// Unguided reconstruction `reverse(abduct(x), s = 0)`.
pub fn reconstruct(model: &dyn NoisePredictor, schedule: &NoiseSchedule, x: &Tensor) -> Result<Tensor> {
    let ab = abduct(model, schedule, x)?;
    reverse(model, schedule, &ab.latent, 0.0, &mut |_, _| unreachable!())
}
