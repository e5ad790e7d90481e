//! Variance schedules.

use crate::error::{contract, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule from explicit betas, each in `(0, 1)`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.len() < 2 {
            return contract(format!("a schedule needs at least 2 steps, got {}", betas.len()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return contract(format!("beta {b} outside (0, 1)"));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(NoiseSchedule { betas, alpha_bars })
    }

    /// Number of grid points `T`; timesteps are `0..T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn last(&self) -> usize {
        self.betas.len() - 1
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }
}

/// Linear betas from `beta_min` to `beta_max` over `t_steps` points.
pub fn make_schedule(t_steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if t_steps < 2 {
        return contract(format!("T must be at least 2, got {t_steps}"));
    }
    if !(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0) {
        return contract(format!(
            "need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"
        ));
    }
    let span = beta_max - beta_min;
    let betas = (0..t_steps)
        .map(|i| beta_min + span * i as f64 / (t_steps - 1) as f64)
        .collect();
    NoiseSchedule::from_betas(betas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cumulative_products() {
        let s = make_schedule(2, 0.1, 0.1).unwrap();
        assert!((s.alpha_bars()[0] - 0.9).abs() < 1e-15);
        assert!((s.alpha_bars()[1] - 0.81).abs() < 1e-15);
        let s = make_schedule(3, 0.1, 0.1).unwrap();
        assert!((s.alpha_bars()[2] - 0.729).abs() < 1e-15);
    }

    #[test]
    fn endpoints_are_linear() {
        let s = make_schedule(50, 1e-3, 0.05).unwrap();
        assert_eq!(s.betas()[0], 1e-3);
        assert!((s.betas()[49] - 0.05).abs() < 1e-15);
        assert!((s.betas()[1] - s.betas()[0] - 0.049 / 49.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_ranges_rejected() {
        assert!(make_schedule(1, 0.1, 0.2).is_err());
        assert!(make_schedule(10, 0.0, 0.2).is_err());
        assert!(make_schedule(10, 0.3, 0.2).is_err());
        assert!(make_schedule(10, 0.1, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn alpha_bars_decrease_and_telescope(t in 2usize..200, lo in 1e-5f64..0.5, span in 0.0f64..0.49) {
            let s = make_schedule(t, lo, lo + span).unwrap();
            let ab = s.alpha_bars();
            for i in 0..t {
                prop_assert!(ab[i] > 0.0 && ab[i] < 1.0);
                if i > 0 {
                    prop_assert!(ab[i] < ab[i - 1]);
                    prop_assert!((ab[i] - ab[i - 1] * (1.0 - s.betas()[i])).abs() <= 1e-15);
                }
            }
            let prod: f64 = s.betas()[1..].iter().map(|b| 1.0 - b).product();
            prop_assert!((ab[t - 1] / ab[0] - prod).abs() < 1e-12);
        }
    }
}
