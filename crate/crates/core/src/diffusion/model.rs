//! Noise-prediction network `eps_theta(x_t, t)`.

use rand::Rng;
use rand_distr::StandardNormal;

use super::schedule::NoiseSchedule;
use crate::checkpoint::Checkpoint;
use crate::error::{contract, Error, Result};
use crate::numerics::{forward_and_grad, Activation, Adam, Graph, MlpSpec, ParamSet, ParamVars, Tensor, Var};

/// Sinusoidal embedding of timestep `t`: `dim / 2` sines followed by as many
/// cosines at geometrically spaced frequencies.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
        let a = t as f64 * freq;
        out[i] = a.sin();
        out[half + i] = a.cos();
    }
    out
}

/// `[n, dim]` embeddings for a timestep per row.
pub fn time_embedding_rows(ts: &[usize], dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        data.extend(time_embedding(t, dim));
    }
    Tensor::new(vec![ts.len(), dim], data).expect("sized above")
}

/// Anything that predicts the noise in a batch `[n, m]` of model-space images.
pub trait NoisePredictor {
    fn predict(&self, x: &Tensor, t: usize) -> Result<Tensor>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserConfig {
    pub hidden: usize,
    pub depth: usize,
    pub emb_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            hidden: 512,
            depth: 2,
            emb_dim: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel {
    pub params: ParamSet,
    pub image_dim: usize,
    pub config: DenoiserConfig,
    mlp: MlpSpec,
}

fn denoiser_spec(image_dim: usize, config: &DenoiserConfig) -> Result<MlpSpec> {
    if config.depth == 0 || config.hidden == 0 || config.emb_dim < 2 {
        return contract(format!("invalid denoiser configuration {config:?}"));
    }
    let mut sizes = vec![image_dim + config.emb_dim];
    sizes.extend(std::iter::repeat_n(config.hidden, config.depth));
    sizes.push(image_dim);
    Ok(MlpSpec::new("eps", sizes, Activation::Silu))
}

impl DenoiserModel {
    pub fn new<R: Rng>(image_dim: usize, config: DenoiserConfig, rng: &mut R) -> Result<Self> {
        let mlp = denoiser_spec(image_dim, &config)?;
        let mut params = ParamSet::new();
        mlp.init(&mut params, rng, 1.0)?;
        Ok(DenoiserModel {
            params,
            image_dim,
            config,
            mlp,
        })
    }

    /// Records `eps_theta` for a batch with one timestep per row.
    pub fn forward(&self, graph: &mut Graph, pv: &ParamVars<'_>, x: Var, ts: &[usize]) -> Result<Var> {
        let (n, m) = graph.value(x).dims2()?;
        if m != self.image_dim || n != ts.len() {
            return Err(Error::Shape {
                op: "denoiser",
                expected: vec![ts.len(), self.image_dim],
                got: vec![n, m],
            });
        }
        let temb = graph.constant(time_embedding_rows(ts, self.config.emb_dim));
        let input = graph.concat_cols(&[x, temb])?;
        self.mlp.forward(graph, pv, input)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.params.clone())
            .with("kind", "denoiser")
            .with("image_dim", self.image_dim)
            .with("hidden", self.config.hidden)
            .with("depth", self.config.depth)
            .with("emb_dim", self.config.emb_dim)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta_str("kind")? != "denoiser" {
            return contract(format!("checkpoint holds a {}, not a denoiser", ck.meta_str("kind")?));
        }
        let image_dim = ck.meta_parse("image_dim")?;
        let config = DenoiserConfig {
            hidden: ck.meta_parse("hidden")?,
            depth: ck.meta_parse("depth")?,
            emb_dim: ck.meta_parse("emb_dim")?,
        };
        let mlp = denoiser_spec(image_dim, &config)?;
        for l in 0..mlp.layers() {
            let w = ck.params.get(&mlp.weight_name(l));
            if w.map(|w| w.shape() != [mlp.sizes[l], mlp.sizes[l + 1]]).unwrap_or(true) {
                return contract(format!("denoiser checkpoint layer {l} missing or misshapen"));
            }
        }
        Ok(DenoiserModel {
            params: ck.params.clone(),
            image_dim,
            config,
            mlp,
        })
    }
}

impl NoisePredictor for DenoiserModel {
    fn predict(&self, x: &Tensor, t: usize) -> Result<Tensor> {
        let n = x.dims2()?.0;
        let mut graph = Graph::new();
        let pv = self.params.bind(&mut graph, false);
        let xv = graph.constant(x.clone());
        let out = self.forward(&mut graph, &pv, xv, &vec![t; n])?;
        Ok(graph.value(out).clone())
    }
}

/// Rescales `[0, 1]` pixels to the model's `[-1, 1]` domain.
pub fn to_model_space(images: &Tensor) -> Tensor {
    images.map(|v| 2.0 * v - 1.0)
}

/// Maps model-space values back to pixels, clamping to `[0, 1]`.
pub fn from_model_space(x: &Tensor) -> Tensor {
    x.map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0))
}

/// Denoising loss `mean((eps - eps_theta(sqrt(ab_t) x0 + sqrt(1 - ab_t) eps, t))^2)`
/// for model-space `x0`, explicit timesteps and noise. Returns the loss and
/// parameter gradients.
pub fn ddpm_loss(
    model: &DenoiserModel,
    schedule: &NoiseSchedule,
    x0: &Tensor,
    ts: &[usize],
    eps: &Tensor,
) -> Result<(f64, Vec<Tensor>)> {
    let (n, m) = x0.dims2()?;
    if eps.shape() != x0.shape() || ts.len() != n {
        return Err(Error::Shape {
            op: "ddpm_loss",
            expected: vec![n, m],
            got: eps.shape().to_vec(),
        });
    }
    if let Some(t) = ts.iter().find(|t| **t >= schedule.steps()) {
        return contract(format!("timestep {t} outside schedule of {} steps", schedule.steps()));
    }
    let mut xt = x0.clone();
    for (i, &t) in ts.iter().enumerate() {
        let ab = schedule.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let row = &mut xt.data_mut()[i * m..(i + 1) * m];
        for (v, e) in row.iter_mut().zip(eps.row(i)) {
            *v = a * *v + b * e;
        }
    }
    forward_and_grad(&model.params, |g, pv| {
        let x = g.constant(xt);
        let target = g.constant(eps.clone());
        let pred = model.forward(g, pv, x, ts)?;
        let diff = g.sub(pred, target)?;
        let sq = g.square(diff)?;
        g.mean(sq)
    })
}

/// One optimizer step on a batch `[n, m]` of `[0, 1]` images with uniformly
/// drawn timesteps and Gaussian noise. Returns the pre-update loss.
pub fn ddpm_train_step<R: Rng>(
    model: &mut DenoiserModel,
    schedule: &NoiseSchedule,
    batch: &Tensor,
    rng: &mut R,
    optimizer: &Adam,
    lr: f64,
) -> Result<f64> {
    let (n, m) = batch.dims2()?;
    if batch.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return contract("training images must lie in [0, 1]");
    }
    let x0 = to_model_space(batch);
    let ts: Vec<usize> = (0..n).map(|_| rng.random_range(0..schedule.steps())).collect();
    let eps = Tensor::new(vec![n, m], (0..n * m).map(|_| rng.sample(StandardNormal)).collect())?;
    let (loss, grads) = ddpm_loss(model, schedule, &x0, &ts, &eps)?;
    optimizer.step(&mut model.params, &grads, lr)?;
    Ok(loss)
}
