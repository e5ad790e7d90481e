//! Instance-conditioned class prompts over a frozen text path.
//!
//! For class `c` and image embedding `v` the prompt is
//! `g(w^c(v)) = normalize(T([ctx_1 + meta(v), ..., ctx_L + meta(v), tok_c]))`
//! where the tokens and the text map `T` are frozen and the context vectors
//! and the meta network are learned.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::checkpoint::Checkpoint;
use crate::error::{contract, Error, Result};
use crate::numerics::{Activation, Graph, MlpSpec, ParamSet, ParamVars, Tensor, Var};
use crate::rng::derive_rng;

#[derive(Clone, Debug, PartialEq)]
pub struct PromptConfig {
    pub embed_dim: usize,
    pub prompt_len: usize,
    pub tau: f64,
    /// Width of the frozen tanh layer of the text path; 0 makes it linear.
    pub text_hidden: usize,
    /// Standard deviation of the initial context vectors around the
    /// hand-written (zero) context.
    pub ctx_init_std: f64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            embed_dim: 32,
            prompt_len: 4,
            tau: 0.07,
            text_hidden: 0,
            ctx_init_std: 0.0,
        }
    }
}

impl PromptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 2 || self.prompt_len == 0 {
            return contract(format!("invalid prompt configuration {self:?}"));
        }
        if !(self.tau > 0.0) {
            return contract(format!("temperature must be positive, got {}", self.tau));
        }
        Ok(())
    }

    pub fn meta_hidden(&self) -> usize {
        (self.embed_dim / 2).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptState {
    pub config: PromptConfig,
    pub num_classes: usize,
    /// Class tokens `tok` (`[K, d]`) and the text map.
    pub frozen: ParamSet,
    /// `ctx.{l}` (`[d]`) and the meta network.
    pub learned: ParamSet,
    meta: MlpSpec,
}

const TOKENS: &str = "tok";

fn ctx_name(l: usize) -> String {
    format!("ctx.{l}")
}

fn proj_ctx_name(l: usize) -> String {
    format!("text.ctx{l}")
}

fn gaussian<R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect(),
    )
    .expect("sized from shape")
}

impl PromptState {
    /// Builds the frozen text path from `frozen_seed` and the learnable part
    /// from `learn_seed`. Frozen parts are drawn so that tokens and the
    /// token map do not depend on the prompt length, and the map of the
    /// `l`-th context slot does not depend on how many slots follow it.
    pub fn new(config: PromptConfig, num_classes: usize, frozen_seed: u64, learn_seed: u64) -> Result<Self> {
        config.validate()?;
        if num_classes < 2 {
            return contract(format!("need at least 2 classes, got {num_classes}"));
        }
        let d = config.embed_dim;
        let out = if config.text_hidden > 0 { config.text_hidden } else { d };
        let block_std = 1.0 / (d as f64).sqrt();
        let mut frozen = ParamSet::new();
        frozen.insert(
            TOKENS,
            gaussian(&mut derive_rng(frozen_seed, "tokens", 0), &[num_classes, d], 1.0),
        )?;
        frozen.insert(
            "text.tok",
            gaussian(&mut derive_rng(frozen_seed, "text-tok", 0), &[d, out], block_std),
        )?;
        if config.text_hidden > 0 {
            let h = config.text_hidden;
            frozen.insert(
                "text.out",
                gaussian(
                    &mut derive_rng(frozen_seed, "text-out", 0),
                    &[h, d],
                    1.0 / (h as f64).sqrt(),
                ),
            )?;
        }
        for l in 0..config.prompt_len {
            frozen.insert(
                proj_ctx_name(l),
                gaussian(&mut derive_rng(frozen_seed, "text-ctx", l as u64), &[d, out], block_std),
            )?;
        }

        let mut learned = ParamSet::new();
        for l in 0..config.prompt_len {
            let ctx = gaussian(
                &mut derive_rng(learn_seed, "ctx-init", l as u64),
                &[d],
                config.ctx_init_std,
            );
            learned.insert(ctx_name(l), ctx)?;
        }
        let meta = MlpSpec::new("meta", vec![d, config.meta_hidden(), d], Activation::Silu);
        // zero read-out: the untrained prompt is the hand-written one for every image
        meta.init(&mut learned, &mut derive_rng(learn_seed, "meta-init", 0), 0.0)?;

        let state = PromptState {
            config,
            num_classes,
            frozen,
            learned,
            meta,
        };
        state.check_distinct()?;
        Ok(state)
    }

    /// Tokens must differ pairwise, and so must their unconditioned prompts.
    fn check_distinct(&self) -> Result<()> {
        let tok = self.frozen.get(TOKENS).expect("inserted at construction");
        let d = self.config.embed_dim;
        let v = Tensor::zeros(&[1, d]);
        let mut prompts = Vec::with_capacity(self.num_classes);
        for c in 0..self.num_classes {
            prompts.push(self.prompt_embed(c, v.row(0))?);
        }
        for a in 0..self.num_classes {
            for b in a + 1..self.num_classes {
                let dt = crate::stats::l2_distance(tok.row(a), tok.row(b));
                let dp = crate::stats::l2_distance(&prompts[a], &prompts[b]);
                if dt < 1e-6 || dp < 1e-6 {
                    return contract(format!("class tokens {a} and {b} are not distinct"));
                }
            }
        }
        Ok(())
    }

    pub fn frozen_checksum(&self) -> u64 {
        self.frozen.checksum()
    }

    /// Records `[n, d]` unit prompts for `class_of_row[i]` conditioned on row
    /// `i` of `v`. `frozen` must be bound as constants.
    pub fn prompts_graph(
        &self,
        graph: &mut Graph,
        learned: &ParamVars<'_>,
        frozen: &ParamVars<'_>,
        v: Var,
        class_of_row: &[usize],
    ) -> Result<Var> {
        let (n, d) = graph.value(v).dims2()?;
        if d != self.config.embed_dim || class_of_row.len() != n {
            return Err(Error::Shape {
                op: "prompts",
                expected: vec![class_of_row.len(), self.config.embed_dim],
                got: vec![n, d],
            });
        }
        let tok = self.frozen.get(TOKENS).expect("inserted at construction");
        let mut tok_rows = Vec::with_capacity(n * d);
        for &c in class_of_row {
            if c >= self.num_classes {
                return contract(format!("unknown class {c} (K = {})", self.num_classes));
            }
            tok_rows.extend_from_slice(tok.row(c));
        }
        let tok_rows = graph.constant(Tensor::new(vec![n, d], tok_rows)?);
        let offset = self.meta.forward(graph, learned, v)?;
        let mut pre = {
            let w = frozen.var("text.tok")?;
            graph.matmul(tok_rows, w)?
        };
        for l in 0..self.config.prompt_len {
            let slot = graph.add_bias(offset, learned.var(&ctx_name(l))?)?;
            let w = frozen.var(&proj_ctx_name(l))?;
            let part = graph.matmul(slot, w)?;
            pre = graph.add(pre, part)?;
        }
        let out = if self.config.text_hidden > 0 {
            let h = graph.activation(pre, Activation::Tanh)?;
            let w = frozen.var("text.out")?;
            graph.matmul(h, w)?
        } else {
            pre
        };
        graph.normalize_rows(out)
    }

    /// `[n, d]` prompts for fixed embeddings, without gradients.
    pub fn prompts(&self, v: &Tensor, class_of_row: &[usize]) -> Result<Tensor> {
        let mut graph = Graph::new();
        let lp = self.learned.bind(&mut graph, false);
        let fp = self.frozen.bind(&mut graph, false);
        let vv = graph.constant(v.clone());
        let out = self.prompts_graph(&mut graph, &lp, &fp, vv, class_of_row)?;
        Ok(graph.value(out).clone())
    }

    /// `g(w^c(v))` for a single embedding.
    pub fn prompt_embed(&self, class: usize, v: &[f64]) -> Result<Vec<f64>> {
        let t = Tensor::new(vec![1, v.len()], v.to_vec())?;
        Ok(self.prompts(&t, &[class])?.into_data())
    }

    /// Similarity logits `[n, |C|]`, `v_i . g(w^c(v_i)) / tau`.
    pub fn logits(&self, v: &Tensor, classes: &[usize]) -> Result<Tensor> {
        let (n, _) = v.dims2()?;
        let mut cols = Vec::with_capacity(classes.len());
        for &c in classes {
            let g = self.prompts(v, &vec![c; n])?;
            cols.push(
                (0..n)
                    .map(|i| dot(v.row(i), g.row(i)) / self.config.tau)
                    .collect::<Vec<f64>>(),
            );
        }
        let k = classes.len();
        let mut data = vec![0.0; n * k];
        for (j, col) in cols.iter().enumerate() {
            for i in 0..n {
                data[i * k + j] = col[i];
            }
        }
        Tensor::new(vec![n, k], data)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut params = ParamSet::new();
        for (name, t) in self.frozen.names().iter().zip(self.frozen.values()) {
            params
                .insert(format!("frozen.{name}"), t.clone())
                .expect("unique names");
        }
        for (name, t) in self.learned.names().iter().zip(self.learned.values()) {
            params
                .insert(format!("learned.{name}"), t.clone())
                .expect("unique names");
        }
        Checkpoint::new(params)
            .with("kind", "prompts")
            .with("num_classes", self.num_classes)
            .with("embed_dim", self.config.embed_dim)
            .with("prompt_len", self.config.prompt_len)
            .with("tau", self.config.tau)
            .with("text_hidden", self.config.text_hidden)
            .with("ctx_init_std", self.config.ctx_init_std)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta_str("kind")? != "prompts" {
            return contract(format!("checkpoint holds a {}, not prompts", ck.meta_str("kind")?));
        }
        let config = PromptConfig {
            embed_dim: ck.meta_parse("embed_dim")?,
            prompt_len: ck.meta_parse("prompt_len")?,
            tau: ck.meta_parse("tau")?,
            text_hidden: ck.meta_parse("text_hidden")?,
            ctx_init_std: ck.meta_parse("ctx_init_std")?,
        };
        config.validate()?;
        let num_classes = ck.meta_parse("num_classes")?;
        let (mut frozen, mut learned) = (ParamSet::new(), ParamSet::new());
        for (name, t) in ck.params.names().iter().zip(ck.params.values()) {
            if let Some(rest) = name.strip_prefix("frozen.") {
                frozen.insert(rest, t.clone())?;
            } else if let Some(rest) = name.strip_prefix("learned.") {
                learned.insert(rest, t.clone())?;
            } else {
                return contract(format!("unexpected prompt tensor {name}"));
            }
        }
        let meta = MlpSpec::new(
            "meta",
            vec![config.embed_dim, config.meta_hidden(), config.embed_dim],
            Activation::Silu,
        );
        let state = PromptState {
            config,
            num_classes,
            frozen,
            learned,
            meta,
        };
        // probe every tensor the forward pass needs
        state.check_distinct()?;
        Ok(state)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Prediction over `classes` for one embedding: the arg-max class and the
/// softmax probabilities at temperature `tau`.
pub fn classify(state: &PromptState, v: &[f64], classes: &[usize]) -> Result<(usize, Vec<f64>)> {
    if classes.is_empty() {
        return contract("classification needs at least one class");
    }
    let t = Tensor::new(vec![1, v.len()], v.to_vec())?;
    let logits = state.logits(&t, classes)?;
    let probs = crate::numerics::softmax(logits.row(0));
    Ok((classes[crate::stats::argmax(&probs)], probs))
}

/// Accuracy of arg-max prediction over `classes` for embedding rows.
pub fn accuracy(state: &PromptState, v: &Tensor, labels: &[usize], classes: &[usize]) -> Result<f64> {
    let (n, _) = v.dims2()?;
    if n == 0 {
        return Ok(0.0);
    }
    let logits = state.logits(v, classes)?;
    let correct = (0..n)
        .filter(|&i| classes[crate::stats::argmax(logits.row(i))] == labels[i])
        .count();
    Ok(correct as f64 / n as f64)
}

/// Unconditioned prompts `[K, d]` of an untrained state: the anchors the
/// image encoder is aligned to.
pub fn class_anchors(state: &PromptState) -> Result<Tensor> {
    let d = state.config.embed_dim;
    let k = state.num_classes;
    let mut zero = state.clone();
    for name in state.learned.names() {
        zero.learned.get_mut(name).expect("same names").data_mut().fill(0.0);
    }
    let classes: Vec<usize> = (0..k).collect();
    zero.prompts(&Tensor::zeros(&[k, d]), &classes)
}
