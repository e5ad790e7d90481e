//! Image structural causal model: `y <- u_y`, `n <- u_n`, `x = f(y, n, u_x)`.
//!
//! The causal feature is a class glyph painted at [`GLYPH_LEVEL`]; the
//! non-causal feature is a sinusoidal stripe background parameterised by
//! `n = [angle, frequency, phase, intensity]`; `u_x` adds centred per-pixel
//! texture of amplitude `sigma_x`.

use std::f64::consts::PI;

use rand::Rng;

use super::glyph::{glyph_mask, MAX_CLASSES, PIXELS, SIDE};
use crate::error::{contract, Error, Result};
use crate::rng::derive_rng;

pub const GLYPH_LEVEL: f64 = 0.9;
pub const BACKGROUND_FLOOR: f64 = 0.1;
pub const STYLE_DIM: usize = 4;
/// Stripe frequency range in radians per pixel.
pub const FREQ_RANGE: (f64, f64) = (0.6, 1.8);
/// Number of orientation buckets used to describe a background's dominant angle.
pub const ORIENTATION_BUCKETS: usize = 4;
/// Largest stripe intensity: the brightest stripe then reaches the glyph level.
pub const MAX_INTENSITY: f64 = GLYPH_LEVEL - BACKGROUND_FLOOR;

#[derive(Clone, Debug, PartialEq)]
pub struct ScmSpec {
    pub num_classes: usize,
    pub image_dim: usize,
    /// Texture amplitude, in `[0, 0.2]`.
    pub sigma_x: f64,
    /// Stripe intensity range; the background spans
    /// `[BACKGROUND_FLOOR, BACKGROUND_FLOOR + intensity]`.
    pub intensity_range: (f64, f64),
}

impl Default for ScmSpec {
    fn default() -> Self {
        ScmSpec {
            num_classes: 6,
            image_dim: PIXELS,
            sigma_x: 0.02,
            intensity_range: (0.5, 0.8),
        }
    }
}

impl ScmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 3 || self.num_classes > MAX_CLASSES {
            return contract(format!(
                "num_classes must be in [3, {MAX_CLASSES}], got {}",
                self.num_classes
            ));
        }
        if self.image_dim != PIXELS {
            return contract(format!("image_dim must be {PIXELS}, got {}", self.image_dim));
        }
        if !(0.0..=0.2).contains(&self.sigma_x) {
            return contract(format!("sigma_x must be in [0, 0.2], got {}", self.sigma_x));
        }
        let (lo, hi) = self.intensity_range;
        if !(0.0 <= lo && lo <= hi && hi <= MAX_INTENSITY) {
            return contract(format!(
                "intensity range must satisfy 0 <= lo <= hi <= {MAX_INTENSITY}, got ({lo}, {hi})"
            ));
        }
        Ok(())
    }

    /// Maps exogenous `u_n` in `[0,1]^4` to the style vector `n`.
    pub fn style_from_exogenous(&self, u_n: &[f64]) -> Vec<f64> {
        let (lo, hi) = self.intensity_range;
        vec![
            PI * u_n[0],
            FREQ_RANGE.0 + (FREQ_RANGE.1 - FREQ_RANGE.0) * u_n[1],
            2.0 * PI * u_n[2],
            lo + (hi - lo) * u_n[3],
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScmSample {
    pub y: usize,
    pub n: Vec<f64>,
    pub u_x: Vec<f64>,
    /// Label and style noise; not persisted in dataset files.
    pub u_y: Option<f64>,
    pub u_n: Option<Vec<f64>>,
    pub x: Vec<f64>,
}

impl ScmSample {
    /// Which of [`ORIENTATION_BUCKETS`] equal angle ranges the stripes fall into.
    pub fn orientation_bucket(&self) -> usize {
        orientation_bucket(self.n[0])
    }
}

pub fn orientation_bucket(angle: f64) -> usize {
    let b = (angle.rem_euclid(PI) / PI * ORIENTATION_BUCKETS as f64) as usize;
    b.min(ORIENTATION_BUCKETS - 1)
}

/// Background stripe value at pixel `(r, c)` for style `n`.
fn stripe(n: &[f64], r: f64, c: f64) -> f64 {
    let (angle, freq, phase, intensity) = (n[0], n[1], n[2], n[3]);
    let s = (freq * (r * angle.cos() + c * angle.sin()) + phase).sin();
    BACKGROUND_FLOOR + intensity * (0.5 + 0.5 * s)
}

/// `x = f(y, n, u_x)`: glyph over stripes plus centred texture, clamped to `[0, 1]`.
pub fn render_image(spec: &ScmSpec, y: usize, n: &[f64], u_x: &[f64]) -> Result<Vec<f64>> {
    if y >= spec.num_classes {
        return contract(format!("class {y} out of range for K = {}", spec.num_classes));
    }
    if n.len() != STYLE_DIM || u_x.len() != spec.image_dim {
        return Err(Error::Shape {
            op: "render_image",
            expected: vec![STYLE_DIM, spec.image_dim],
            got: vec![n.len(), u_x.len()],
        });
    }
    let mask = glyph_mask(y).expect("class bounded by MAX_CLASSES");
    let img = (0..PIXELS)
        .map(|i| {
            let (r, c) = ((i / SIDE) as f64, (i % SIDE) as f64);
            let base = if mask[i] { GLYPH_LEVEL } else { stripe(n, r, c) };
            (base + spec.sigma_x * (u_x[i] - 0.5)).clamp(0.0, 1.0)
        })
        .collect();
    Ok(img)
}

/// One draw of the full model from `seed`.
pub fn sample_scm(spec: &ScmSpec, seed: u64) -> Result<ScmSample> {
    spec.validate()?;
    let mut rng = derive_rng(seed, "scm-sample", 0);
    let u_y: f64 = rng.random();
    let u_n: Vec<f64> = (0..STYLE_DIM).map(|_| rng.random()).collect();
    let u_x: Vec<f64> = (0..spec.image_dim).map(|_| rng.random()).collect();
    let y = ((u_y * spec.num_classes as f64) as usize).min(spec.num_classes - 1);
    let n = spec.style_from_exogenous(&u_n);
    let x = render_image(spec, y, &n, &u_x)?;
    Ok(ScmSample {
        y,
        n,
        u_x,
        u_y: Some(u_y),
        u_n: Some(u_n),
        x,
    })
}

/// Ground-truth counterfactual `f(y_cf, n, u_x)` with the sample's own
/// exogenous texture and style.
pub fn true_counterfactual(spec: &ScmSpec, sample: &ScmSample, y_cf: usize) -> Result<Vec<f64>> {
    if y_cf == sample.y {
        return contract(format!("counterfactual label equals factual label {y_cf}"));
    }
    render_image(spec, y_cf, &sample.n, &sample.u_x)
}
