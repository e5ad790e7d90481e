//! Vector structural causal models with closed-form abduction.
//!
//! `x = phi(c(y, n) · A · u_x + b(y, n))` where `A` is orthogonal with a
//! positive definite symmetric part, `c > 0` is a scalar per parent
//! configuration, `b` places every `(y, n)` configuration in its own region of
//! `R^m`, and `phi` is the identity (additive-orthogonal family) or the
//! strictly increasing `z + 0.1 tanh z` applied elementwise (post-nonlinear
//! family). Because the regions are disjoint, `x` alone determines the parent
//! configuration, so the abduction map `g*(x) = (phi^{-1}(x) - b) / c = A u_x`
//! is a function of `x` only, invertible on the support, and its output is
//! independent of `(y, n)`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{contract, Error, Result};
use crate::rng::derive_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnalyticFamily {
    AdditiveOrthogonal,
    PostNonlinear,
}

impl AnalyticFamily {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "additive-orthogonal" => Some(AnalyticFamily::AdditiveOrthogonal),
            "post-nonlinear" => Some(AnalyticFamily::PostNonlinear),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AnalyticFamily::AdditiveOrthogonal => "additive-orthogonal",
            AnalyticFamily::PostNonlinear => "post-nonlinear",
        }
    }
}

const PNL_GAIN: f64 = 0.1;
const MAX_ROTATION: f64 = std::f64::consts::PI / 3.0;
const SUPPORT_TOL: f64 = 1e-9;

fn phi(z: f64) -> f64 {
    z + PNL_GAIN * z.tanh()
}

fn phi_inverse(x: f64) -> f64 {
    let mut z = x;
    for _ in 0..60 {
        let t = z.tanh();
        let step = (z + PNL_GAIN * t - x) / (1.0 + PNL_GAIN * (1.0 - t * t));
        z -= step;
        if step.abs() <= 1e-16 * (1.0 + z.abs()) {
            break;
        }
    }
    z
}

/// Square row-major matrix times vector.
fn mat_vec(a: &[f64], v: &[f64]) -> Vec<f64> {
    let m = v.len();
    (0..m)
        .map(|i| a[i * m..(i + 1) * m].iter().zip(v).map(|(x, y)| x * y).sum())
        .collect()
}

fn mat_t_vec(a: &[f64], v: &[f64]) -> Vec<f64> {
    let m = v.len();
    (0..m).map(|j| (0..m).map(|i| a[i * m + j] * v[i]).sum()).collect()
}

fn mat_mul(a: &[f64], b: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for k in 0..m {
            let aik = a[i * m + k];
            for j in 0..m {
                out[i * m + j] += aik * b[k * m + j];
            }
        }
    }
    out
}

fn transpose(a: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            out[j * m + i] = a[i * m + j];
        }
    }
    out
}

/// Random orthogonal matrix by Gram-Schmidt on Gaussian columns.
fn random_orthogonal<R: Rng>(m: usize, rng: &mut R) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(m);
    while cols.len() < m {
        let mut v: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for c in &cols {
                let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                for (vi, ci) in v.iter_mut().zip(c) {
                    *vi -= d * ci;
                }
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            cols.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    let mut q = vec![0.0; m * m];
    for (j, c) in cols.iter().enumerate() {
        for i in 0..m {
            q[i * m + j] = c[i];
        }
    }
    q
}

/// `Q R Q^T` with `R` block-diagonal 2-D rotations by angles below 60 degrees,
/// so the symmetric part `Q diag(cos θ) Q^T` is positive definite.
fn positive_rotation<R: Rng>(m: usize, rng: &mut R) -> Vec<f64> {
    let q = random_orthogonal(m, rng);
    let mut r = vec![0.0; m * m];
    let mut i = 0;
    while i < m {
        if i + 1 < m {
            let theta = rng.random_range(-MAX_ROTATION..MAX_ROTATION);
            let (s, c) = theta.sin_cos();
            r[i * m + i] = c;
            r[i * m + i + 1] = -s;
            r[(i + 1) * m + i] = s;
            r[(i + 1) * m + i + 1] = c;
            i += 2;
        } else {
            r[i * m + i] = 1.0;
            i += 1;
        }
    }
    mat_mul(&mat_mul(&q, &r, m), &transpose(&q, m), m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticScm {
    pub dim: usize,
    pub family: AnalyticFamily,
    pub num_classes: usize,
    /// Candidate style vectors `n ∈ R^m`.
    pub styles: Vec<Vec<f64>>,
    /// Orthogonal mixing matrix, row-major `m x m`.
    pub mixing: Vec<f64>,
    scales: Vec<f64>,
    offsets: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorSample {
    pub y: usize,
    pub style: usize,
    pub u_x: Vec<f64>,
    pub x: Vec<f64>,
}

impl AnalyticScm {
    /// Builds a family member from `seed`. With `unit_scale` the scale
    /// `c(y, n)` is identically 1; otherwise it is drawn from `[0.5, 1.5]`.
    pub fn new(dim: usize, family: AnalyticFamily, unit_scale: bool, seed: u64) -> Result<Self> {
        if dim < 3 {
            return contract(format!("analytic SCM needs dimension >= 3, got {dim}"));
        }
        let num_classes = 3;
        let num_styles = 4;
        let mut rng = derive_rng(seed, "analytic-scm", dim as u64);
        let mixing = positive_rotation(dim, &mut rng);
        let styles: Vec<Vec<f64>> = (0..num_styles)
            .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
            .collect();
        let configs = num_classes * num_styles;
        let scales: Vec<f64> = (0..configs)
            .map(|_| if unit_scale { 1.0 } else { rng.random_range(0.5..1.5) })
            .collect();
        let mut dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v /= norm);
        // region k lies within 2.5 sqrt(m) of spacing * k * dir: the mixed
        // latent has norm at most 1.5 sqrt(m) and a style vector at most sqrt(m)
        let spacing = 6.0 * (dim as f64).sqrt() + 1.0;
        let offsets = (0..configs)
            .map(|k| {
                let style = &styles[k % num_styles];
                dir.iter().zip(style).map(|(d, s)| spacing * k as f64 * d + s).collect()
            })
            .collect();
        Ok(AnalyticScm {
            dim,
            family,
            num_classes,
            styles,
            mixing,
            scales,
            offsets,
        })
    }

    fn config(&self, y: usize, style: usize) -> Result<usize> {
        if y >= self.num_classes || style >= self.styles.len() {
            return contract(format!("parent configuration ({y}, {style}) out of range"));
        }
        Ok(y * self.styles.len() + style)
    }

    pub fn num_styles(&self) -> usize {
        self.styles.len()
    }

    pub fn scale(&self, y: usize, style: usize) -> Result<f64> {
        Ok(self.scales[self.config(y, style)?])
    }

    fn outer(&self, z: f64) -> f64 {
        match self.family {
            AnalyticFamily::AdditiveOrthogonal => z,
            AnalyticFamily::PostNonlinear => phi(z),
        }
    }

    fn outer_inverse(&self, x: f64) -> f64 {
        match self.family {
            AnalyticFamily::AdditiveOrthogonal => x,
            AnalyticFamily::PostNonlinear => phi_inverse(x),
        }
    }

    /// The structural function `f(y, n, u_x)`.
    pub fn structural(&self, y: usize, style: usize, u_x: &[f64]) -> Result<Vec<f64>> {
        let k = self.config(y, style)?;
        let au = mat_vec(&self.mixing, u_x);
        Ok(au
            .iter()
            .zip(&self.offsets[k])
            .map(|(a, b)| self.outer(self.scales[k] * a + b))
            .collect())
    }

    /// Exact reconstruction `h*(l, y, n) = phi(c l + b)`.
    pub fn reconstruct(&self, latent: &[f64], y: usize, style: usize) -> Result<Vec<f64>> {
        let k = self.config(y, style)?;
        Ok(latent
            .iter()
            .zip(&self.offsets[k])
            .map(|(l, b)| self.outer(self.scales[k] * l + b))
            .collect())
    }

    /// Exact abduction `g*(x) = A u_x`, identifying the parent configuration
    /// from the region `x` lies in.
    pub fn abduct(&self, x: &[f64]) -> Result<Vec<f64>> {
        let inner: Vec<f64> = x.iter().map(|&v| self.outer_inverse(v)).collect();
        for k in 0..self.offsets.len() {
            let latent: Vec<f64> = inner
                .iter()
                .zip(&self.offsets[k])
                .map(|(z, b)| (z - b) / self.scales[k])
                .collect();
            let u = mat_t_vec(&self.mixing, &latent);
            if u.iter().all(|v| (-SUPPORT_TOL..=1.0 + SUPPORT_TOL).contains(v)) {
                return Ok(latent);
            }
        }
        Err(Error::Contract("observation lies outside the model's support".into()))
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<VectorSample> {
        let y = rng.random_range(0..self.num_classes);
        let style = rng.random_range(0..self.styles.len());
        let u_x: Vec<f64> = (0..self.dim).map(|_| rng.random::<f64>()).collect();
        let x = self.structural(y, style, &u_x)?;
        Ok(VectorSample { y, style, u_x, x })
    }
}

/// One draw from a freshly built family member, returned with the model that
/// provides the exact inverse pair (`abduct`, `reconstruct`).
pub fn analytic_scm_sample(dim: usize, family: AnalyticFamily, seed: u64) -> Result<(VectorSample, AnalyticScm)> {
    let scm = AnalyticScm::new(dim, family, false, seed)?;
    let mut rng = derive_rng(seed, "analytic-sample", 0);
    let sample = scm.sample(&mut rng)?;
    Ok((sample, scm))
}

/// Whether `x^T M x > 0` for all `x`, via a Cholesky factorisation of the
/// symmetric part of the row-major square matrix `m`.
pub fn is_positive_definite(mat: &[f64], dim: usize) -> bool {
    let mut s = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            s[i * dim + j] = 0.5 * (mat[i * dim + j] + mat[j * dim + i]);
        }
    }
    let mut l = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut sum = s[i * dim + j];
            for k in 0..j {
                sum -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return false;
                }
                l[i * dim + i] = sum.sqrt();
            } else {
                l[i * dim + j] = sum / l[j * dim + j];
            }
        }
    }
    true
}

/// Largest deviation of `J^T J` from `s^2 I`, where `s^2` is the mean diagonal
/// of `J^T J`. Zero exactly when `J` is a scalar times an orthogonal matrix.
pub fn scaled_orthogonality_defect(jac: &[f64], dim: usize) -> (f64, f64) {
    let jt = transpose(jac, dim);
    let jtj = mat_mul(&jt, jac, dim);
    let s2 = (0..dim).map(|i| jtj[i * dim + i]).sum::<f64>() / dim as f64;
    let mut worst: f64 = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            let target = if i == j { s2 } else { 0.0 };
            worst = worst.max((jtj[i * dim + j] - target).abs());
        }
    }
    (s2.sqrt(), worst)
}
