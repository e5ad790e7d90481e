//! Timestep-conditioned classifier `p_phi(y | x_t, t)` over a fixed class
//! list, trained on noised images and used for guidance gradients.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::checkpoint::Checkpoint;
use crate::diffusion::{time_embedding_rows, to_model_space, NoiseSchedule};
use crate::error::{contract, Error, Result};
use crate::numerics::{forward_and_grad, softmax, Activation, Adam, Graph, MlpSpec, ParamSet, ParamVars, Tensor, Var};

pub const LABEL_SMOOTHING: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub depth: usize,
    pub emb_dim: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: 256,
            depth: 2,
            emb_dim: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AntiCausalClassifier {
    pub params: ParamSet,
    /// Class ids in logit order.
    pub classes: Vec<usize>,
    pub image_dim: usize,
    pub config: ClassifierConfig,
    mlp: MlpSpec,
}

fn classifier_spec(image_dim: usize, k: usize, config: &ClassifierConfig) -> Result<MlpSpec> {
    if config.depth == 0 || config.hidden == 0 || config.emb_dim < 2 {
        return contract(format!("invalid classifier configuration {config:?}"));
    }
    let mut sizes = vec![image_dim + config.emb_dim];
    sizes.extend(std::iter::repeat_n(config.hidden, config.depth));
    sizes.push(k);
    Ok(MlpSpec::new("cls", sizes, Activation::Silu))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierReport {
    /// Mean training loss over the last tenth of the steps.
    pub final_loss: f64,
    /// Accuracy on the training images at `t = 0`.
    pub clean_train_accuracy: f64,
}

impl AntiCausalClassifier {
    pub fn new<R: Rng>(image_dim: usize, classes: Vec<usize>, config: ClassifierConfig, rng: &mut R) -> Result<Self> {
        if classes.len() < 2 {
            return contract(format!("a classifier needs at least 2 classes, got {}", classes.len()));
        }
        let mut sorted = classes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != classes.len() {
            return contract("classifier class list has duplicates");
        }
        let mlp = classifier_spec(image_dim, classes.len(), &config)?;
        let mut params = ParamSet::new();
        mlp.init(&mut params, rng, 1.0)?;
        Ok(AntiCausalClassifier {
            params,
            classes,
            image_dim,
            config,
            mlp,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn local_index(&self, class: usize) -> Result<usize> {
        self.classes.iter().position(|c| *c == class).ok_or_else(|| {
            Error::Contract(format!(
                "class {class} is not among the classifier's classes {:?}",
                self.classes
            ))
        })
    }

    /// Records logits `[n, K]` for model-space `x` with one timestep per row.
    pub fn forward(&self, graph: &mut Graph, pv: &ParamVars<'_>, x: Var, ts: &[usize]) -> Result<Var> {
        let (n, m) = graph.value(x).dims2()?;
        if m != self.image_dim || n != ts.len() {
            return Err(Error::Shape {
                op: "classifier",
                expected: vec![ts.len(), self.image_dim],
                got: vec![n, m],
            });
        }
        let temb = graph.constant(time_embedding_rows(ts, self.config.emb_dim));
        let input = graph.concat_cols(&[x, temb])?;
        self.mlp.forward(graph, pv, input)
    }

    pub fn logits(&self, x: &Tensor, t: usize) -> Result<Tensor> {
        let n = x.dims2()?.0;
        let mut graph = Graph::new();
        let pv = self.params.bind(&mut graph, false);
        let xv = graph.constant(x.clone());
        let out = self.forward(&mut graph, &pv, xv, &vec![t; n])?;
        Ok(graph.value(out).clone())
    }

    /// Class probabilities `[n, K]` for model-space `x` at timestep `t`.
    pub fn predict_probs(&self, x: &Tensor, t: usize) -> Result<Tensor> {
        let logits = self.logits(x, t)?;
        let (n, k) = logits.dims2()?;
        let mut data = Vec::with_capacity(n * k);
        for i in 0..n {
            data.extend(softmax(logits.row(i)));
        }
        Tensor::new(vec![n, k], data)
    }

    /// Probabilities for `[0, 1]` pixel images at `t = 0`.
    pub fn predict_probs_pixels(&self, images: &Tensor) -> Result<Tensor> {
        self.predict_probs(&to_model_space(images), 0)
    }

    /// Per-row gradients `grad_x log p(target_i | x_i, t)` for model-space
    /// `x`; `targets` are class ids.
    pub fn log_prob_grad(&self, x: &Tensor, t: usize, targets: &[usize]) -> Result<Tensor> {
        let (n, _) = x.dims2()?;
        if targets.len() != n {
            return contract(format!("{} targets for {n} images", targets.len()));
        }
        let k = self.num_classes();
        let mut select = Tensor::zeros(&[n, k]);
        for (i, &c) in targets.iter().enumerate() {
            select.data_mut()[i * k + self.local_index(c)?] = 1.0;
        }
        let mut graph = Graph::new();
        let pv = self.params.bind(&mut graph, false);
        let xv = graph.input(x.clone());
        let logits = self.forward(&mut graph, &pv, xv, &vec![t; n])?;
        let logp = graph.log_softmax_rows(logits)?;
        let sel = graph.constant(select);
        let picked = graph.mul(logp, sel)?;
        let total = graph.sum(picked)?;
        let mut grads = graph.backward(total)?;
        Ok(grads.take_or_zeros(xv, x.shape()))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let classes: Vec<String> = self.classes.iter().map(|c| c.to_string()).collect();
        Checkpoint::new(self.params.clone())
            .with("kind", "classifier")
            .with("image_dim", self.image_dim)
            .with("classes", classes.join(","))
            .with("hidden", self.config.hidden)
            .with("depth", self.config.depth)
            .with("emb_dim", self.config.emb_dim)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta_str("kind")? != "classifier" {
            return contract(format!("checkpoint holds a {}, not a classifier", ck.meta_str("kind")?));
        }
        let classes = ck
            .meta_str("classes")?
            .split(',')
            .map(|c| c.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Contract("malformed classifier class list".into()))?;
        let image_dim = ck.meta_parse("image_dim")?;
        let config = ClassifierConfig {
            hidden: ck.meta_parse("hidden")?,
            depth: ck.meta_parse("depth")?,
            emb_dim: ck.meta_parse("emb_dim")?,
        };
        let mlp = classifier_spec(image_dim, classes.len(), &config)?;
        for l in 0..mlp.layers() {
            let w = ck.params.get(&mlp.weight_name(l));
            if w.map(|w| w.shape() != [mlp.sizes[l], mlp.sizes[l + 1]]).unwrap_or(true) {
                return contract(format!("classifier checkpoint layer {l} missing or misshapen"));
            }
        }
        Ok(AntiCausalClassifier {
            params: ck.params.clone(),
            classes,
            image_dim,
            config,
            mlp,
        })
    }
}

/// Smoothed cross-entropy on already-noised model-space inputs `x_t`.
/// `labels` are local indices.
pub fn classifier_loss(
    clf: &AntiCausalClassifier,
    x_t: &Tensor,
    ts: &[usize],
    labels: &[usize],
    smoothing: f64,
) -> Result<(f64, Vec<Tensor>)> {
    let (n, _) = x_t.dims2()?;
    let k = clf.num_classes();
    if labels.len() != n {
        return contract(format!("{} labels for {n} images", labels.len()));
    }
    let mut target = Tensor::full(&[n, k], smoothing / k as f64);
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return contract(format!("label {y} out of range for {k} classes"));
        }
        target.data_mut()[i * k + y] += 1.0 - smoothing;
    }
    forward_and_grad(&clf.params, |g, pv| {
        let x = g.constant(x_t.clone());
        let logits = clf.forward(g, pv, x, ts)?;
        let logp = g.log_softmax_rows(logits)?;
        let tv = g.constant(target);
        let prod = g.mul(logp, tv)?;
        let total = g.sum(prod)?;
        g.scale(total, -1.0 / n as f64)
    })
}

/// Noises model-space `x0` row-wise: `sqrt(ab_t) x0 + sqrt(1 - ab_t) eps`.
pub fn noise_rows<R: Rng>(schedule: &NoiseSchedule, x0: &Tensor, ts: &[usize], rng: &mut R) -> Result<Tensor> {
    let (_, m) = x0.dims2()?;
    let mut out = x0.clone();
    for (i, &t) in ts.iter().enumerate() {
        let ab = schedule.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        for v in &mut out.data_mut()[i * m..(i + 1) * m] {
            let e: f64 = rng.sample(StandardNormal);
            *v = a * *v + b * e;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierTraining {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: Adam,
}

impl Default for ClassifierTraining {
    fn default() -> Self {
        ClassifierTraining {
            steps: 1500,
            batch: 64,
            lr: 1e-3,
            optimizer: Adam::default(),
        }
    }
}

/// Trains on `[0, 1]` `images` with class-id `labels`, drawing `t`
/// uniformly over the whole schedule for every example.
pub fn train_classifier<R: Rng>(
    clf: &mut AntiCausalClassifier,
    schedule: &NoiseSchedule,
    images: &Tensor,
    labels: &[usize],
    training: &ClassifierTraining,
    rng: &mut R,
) -> Result<ClassifierReport> {
    let (n, m) = images.dims2()?;
    if n == 0 || labels.len() != n {
        return contract(format!("{} labels for {n} images", labels.len()));
    }
    let local: Vec<usize> = labels.iter().map(|c| clf.local_index(*c)).collect::<Result<_>>()?;
    let x0 = to_model_space(images);
    let opt = training.optimizer;
    let tail = (training.steps / 10).max(1);
    let mut tail_loss = 0.0;
    for step in 0..training.steps {
        let idx: Vec<usize> = (0..training.batch).map(|_| rng.random_range(0..n)).collect();
        let mut xb = Vec::with_capacity(idx.len() * m);
        for &i in &idx {
            xb.extend_from_slice(x0.row(i));
        }
        let xb = Tensor::new(vec![idx.len(), m], xb)?;
        let ts: Vec<usize> = idx.iter().map(|_| rng.random_range(0..schedule.steps())).collect();
        let yb: Vec<usize> = idx.iter().map(|&i| local[i]).collect();
        let xt = noise_rows(schedule, &xb, &ts, rng)?;
        let (loss, grads) = classifier_loss(clf, &xt, &ts, &yb, LABEL_SMOOTHING)?;
        opt.step(&mut clf.params, &grads, training.lr)?;
        if step + tail >= training.steps {
            tail_loss += loss / tail as f64;
        }
    }
    Ok(ClassifierReport {
        final_loss: tail_loss,
        clean_train_accuracy: accuracy(clf, images, labels, 0)?,
    })
}

/// Fraction of clean `[0, 1]` images classified correctly when presented
/// with timestep label `t`.
pub fn accuracy(clf: &AntiCausalClassifier, images: &Tensor, labels: &[usize], t: usize) -> Result<f64> {
    let probs = clf.predict_probs(&to_model_space(images), t)?;
    let (n, _) = probs.dims2()?;
    let mut correct = 0;
    for i in 0..n {
        if clf.classes[crate::stats::argmax(probs.row(i))] == labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / n.max(1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoisedScores {
    pub accuracy: f64,
    /// Mean over images of the largest class probability.
    pub mean_max_prob: f64,
}

/// Accuracy and confidence on `[0, 1]` images after forward noising to `t`.
pub fn noised_scores<R: Rng>(
    clf: &AntiCausalClassifier,
    schedule: &NoiseSchedule,
    images: &Tensor,
    labels: &[usize],
    t: usize,
    rng: &mut R,
) -> Result<NoisedScores> {
    let (n, _) = images.dims2()?;
    if labels.len() != n {
        return contract(format!("{} labels for {n} images", labels.len()));
    }
    let xt = noise_rows(schedule, &to_model_space(images), &vec![t; n], rng)?;
    let probs = clf.predict_probs(&xt, t)?;
    let (mut correct, mut conf) = (0usize, 0.0);
    for (i, y) in labels.iter().enumerate() {
        let row = probs.row(i);
        let best = crate::stats::argmax(row);
        correct += usize::from(clf.classes[best] == *y);
        conf += row[best];
    }
    let n = n.max(1) as f64;
    Ok(NoisedScores {
        accuracy: correct as f64 / n,
        mean_max_prob: conf / n,
    })
}
