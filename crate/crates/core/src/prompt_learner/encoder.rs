//! Frozen image encoder producing unit-norm embeddings.

use rand::Rng;

use crate::checkpoint::Checkpoint;
use crate::diffusion::to_model_space;
use crate::error::{contract, Error, Result};
use crate::numerics::{forward_and_grad, Activation, Adam, Graph, MlpSpec, ParamSet, ParamVars, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden: 128,
            embed_dim: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    pub params: ParamSet,
    pub image_dim: usize,
    pub config: EncoderConfig,
    mlp: MlpSpec,
}

fn encoder_spec(image_dim: usize, config: &EncoderConfig) -> Result<MlpSpec> {
    if config.hidden == 0 || config.embed_dim < 2 {
        return contract(format!("invalid encoder configuration {config:?}"));
    }
    Ok(MlpSpec::new(
        "enc",
        vec![image_dim, config.hidden, config.embed_dim],
        Activation::Silu,
    ))
}

impl EncoderState {
    pub fn new<R: Rng>(image_dim: usize, config: EncoderConfig, rng: &mut R) -> Result<Self> {
        let mlp = encoder_spec(image_dim, &config)?;
        let mut params = ParamSet::new();
        mlp.init(&mut params, rng, 1.0)?;
        Ok(EncoderState {
            params,
            image_dim,
            config,
            mlp,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    /// Records unit-norm embeddings of `[0, 1]` images given as a graph node.
    pub fn forward(&self, graph: &mut Graph, pv: &ParamVars<'_>, images: Var) -> Result<Var> {
        let raw = self.mlp.forward(graph, pv, images)?;
        graph.normalize_rows(raw)
    }

    /// Unit-norm embeddings `[n, d]` of `[0, 1]` images `[n, m]`.
    pub fn embed(&self, images: &Tensor) -> Result<Tensor> {
        let (_, m) = images.dims2()?;
        if m != self.image_dim {
            return Err(Error::Shape {
                op: "encoder",
                expected: vec![self.image_dim],
                got: vec![m],
            });
        }
        let mut graph = Graph::new();
        let pv = self.params.bind(&mut graph, false);
        let x = graph.constant(to_model_space(images));
        let out = self.forward(&mut graph, &pv, x)?;
        Ok(graph.value(out).clone())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.params.clone())
            .with("kind", "encoder")
            .with("image_dim", self.image_dim)
            .with("hidden", self.config.hidden)
            .with("embed_dim", self.config.embed_dim)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta_str("kind")? != "encoder" {
            return contract(format!("checkpoint holds a {}, not an encoder", ck.meta_str("kind")?));
        }
        let image_dim = ck.meta_parse("image_dim")?;
        let config = EncoderConfig {
            hidden: ck.meta_parse("hidden")?,
            embed_dim: ck.meta_parse("embed_dim")?,
        };
        let mlp = encoder_spec(image_dim, &config)?;
        for l in 0..mlp.layers() {
            let w = ck.params.get(&mlp.weight_name(l));
            if w.map(|w| w.shape() != [mlp.sizes[l], mlp.sizes[l + 1]]).unwrap_or(true) {
                return contract(format!("encoder checkpoint layer {l} missing or misshapen"));
            }
        }
        Ok(EncoderState {
            params: ck.params.clone(),
            image_dim,
            config,
            mlp,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderTraining {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: Adam,
}

impl Default for EncoderTraining {
    fn default() -> Self {
        EncoderTraining {
            steps: 1500,
            batch: 64,
            lr: 1e-3,
            optimizer: Adam::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderReport {
    pub final_loss: f64,
    pub train_accuracy: f64,
}

/// Softmax cross-entropy of `v . anchor_c / tau` against class ids, for
/// `[0, 1]` images. `anchors` is `[K, d]`, one unit row per class id.
pub fn alignment_loss(
    encoder: &EncoderState,
    anchors: &Tensor,
    images: &Tensor,
    labels: &[usize],
    tau: f64,
) -> Result<(f64, Vec<Tensor>)> {
    let (n, _) = images.dims2()?;
    let (k, d) = anchors.dims2()?;
    if d != encoder.embed_dim() || labels.len() != n {
        return contract("alignment loss inputs disagree in size");
    }
    let mut select = Tensor::zeros(&[n, k]);
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return contract(format!("label {y} has no anchor"));
        }
        select.data_mut()[i * k + y] = 1.0;
    }
    forward_and_grad(&encoder.params, |g, pv| {
        let x = g.constant(to_model_space(images));
        let v = encoder.forward(g, pv, x)?;
        let a = g.constant(anchors.clone());
        let logits = g.matmul_bt(v, a)?;
        let logits = g.scale(logits, 1.0 / tau)?;
        let logp = g.log_softmax_rows(logits)?;
        let sel = g.constant(select);
        let picked = g.mul(logp, sel)?;
        let total = g.sum(picked)?;
        g.scale(total, -1.0 / n as f64)
    })
}

/// Aligns image embeddings with fixed per-class anchors, after which the
/// encoder is frozen.
pub fn pretrain_image_encoder<R: Rng>(
    encoder: &mut EncoderState,
    anchors: &Tensor,
    images: &Tensor,
    labels: &[usize],
    tau: f64,
    training: &EncoderTraining,
    rng: &mut R,
) -> Result<EncoderReport> {
    let (n, m) = images.dims2()?;
    if n == 0 || labels.len() != n {
        return contract(format!("{} labels for {n} images", labels.len()));
    }
    let opt = training.optimizer;
    let tail = (training.steps / 10).max(1);
    let mut tail_loss = 0.0;
    for step in 0..training.steps {
        let idx: Vec<usize> = (0..training.batch).map(|_| rng.random_range(0..n)).collect();
        let mut xb = Vec::with_capacity(idx.len() * m);
        for &i in &idx {
            xb.extend_from_slice(images.row(i));
        }
        let xb = Tensor::new(vec![idx.len(), m], xb)?;
        let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let (loss, grads) = alignment_loss(encoder, anchors, &xb, &yb, tau)?;
        opt.step(&mut encoder.params, &grads, training.lr)?;
        if step + tail >= training.steps {
            tail_loss += loss / tail as f64;
        }
    }
    let v = encoder.embed(images)?;
    let scores = v.matmul(&transpose(anchors)?)?;
    let correct = (0..n)
        .filter(|&i| crate::stats::argmax(scores.row(i)) == labels[i])
        .count();
    Ok(EncoderReport {
        final_loss: tail_loss,
        train_accuracy: correct as f64 / n as f64,
    })
}

pub(crate) fn transpose(t: &Tensor) -> Result<Tensor> {
    let (r, c) = t.dims2()?;
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{central_difference, relative_error};
    use crate::rng::rng_from;

    fn small(seed: u64) -> EncoderState {
        let cfg = EncoderConfig {
            hidden: 6,
            embed_dim: 4,
        };
        EncoderState::new(5, cfg, &mut rng_from(seed)).unwrap()
    }

    fn images(seed: u64, n: usize) -> Tensor {
        let mut rng = rng_from(seed);
        Tensor::new(vec![n, 5], (0..n * 5).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn anchors() -> Tensor {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Tensor::from_rows(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, s, s, 0.0], &[0.0, 0.0, 0.0, 1.0]]).unwrap()
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let v = small(0).embed(&images(1, 7)).unwrap();
        for i in 0..7 {
            let n = v.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn alignment_gradient_matches_finite_differences() {
        for seed in 0..20 {
            let e = small(seed);
            let x = images(100 + seed, 4);
            let y = [0, 2, 1, (seed % 3) as usize];
            let (_, grads) = alignment_loss(&e, &anchors(), &x, &y, 0.5).unwrap();
            let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
            let numeric = central_difference(
                |p| {
                    let mut ee = e.clone();
                    ee.params.assign_flat(p).unwrap();
                    alignment_loss(&ee, &anchors(), &x, &y, 0.5).unwrap().0
                },
                &e.params.flatten(),
                1e-6,
            );
            assert!(relative_error(&analytic, &numeric, 1e-8) < 1e-4, "seed {seed}");
        }
    }

    #[test]
    fn pretraining_aligns_separable_classes() {
        let mut rng = rng_from(3);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            let y = i % 3;
            for j in 0..5 {
                let on = if j == y { 0.9 } else { 0.1 };
                rows.push(on + 0.05 * rng.random::<f64>());
            }
            labels.push(y);
        }
        let x = Tensor::new(vec![60, 5], rows).unwrap();
        let mut e = small(4);
        let training = EncoderTraining {
            steps: 300,
            batch: 16,
            lr: 1e-2,
            optimizer: Adam::default(),
        };
        let report = pretrain_image_encoder(&mut e, &anchors(), &x, &labels, 0.5, &training, &mut rng).unwrap();
        assert_eq!(report.train_accuracy, 1.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let e = small(9);
        let ck = Checkpoint::decode(&e.to_checkpoint().encode(), std::path::Path::new("mem")).unwrap();
        assert_eq!(EncoderState::from_checkpoint(&ck).unwrap(), e);
    }

    #[test]
    fn rejects_label_without_anchor() {
        assert!(alignment_loss(&small(0), &anchors(), &images(0, 2), &[0, 3], 0.5).is_err());
    }
}
