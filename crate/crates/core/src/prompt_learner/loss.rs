//! Conditional-context loss, counterfactual contrastive loss and their sum.

use super::prompt::PromptState;
use crate::error::{contract, Result};
use crate::numerics::{forward_and_grad, log_sum_exp, Graph, ParamVars, Tensor, Var};

/// `-log softmax_{y}` over `{v . g(w^c(v)) / tau : c in C}`, averaged over rows.
pub fn loss_basic_graph(
    state: &PromptState,
    graph: &mut Graph,
    learned: &ParamVars<'_>,
    frozen: &ParamVars<'_>,
    v: Var,
    labels: &[usize],
    classes: &[usize],
) -> Result<Var> {
    if classes.is_empty() {
        return contract("the class set is empty");
    }
    let (n, _) = graph.value(v).dims2()?;
    let k = classes.len();
    let mut select = Tensor::zeros(&[n, k]);
    for (i, y) in labels.iter().enumerate() {
        let j = classes
            .iter()
            .position(|c| c == y)
            .ok_or_else(|| crate::Error::Contract(format!("label {y} is not in the class set {classes:?}")))?;
        select.data_mut()[i * k + j] = 1.0;
    }
    let mut scores = Vec::with_capacity(k);
    for &c in classes {
        let g = state.prompts_graph(graph, learned, frozen, v, &vec![c; n])?;
        scores.push(graph.row_dot(v, g)?);
    }
    let logits = graph.concat_cols(&scores)?;
    let logits = graph.scale(logits, 1.0 / state.config.tau)?;
    let logp = graph.log_softmax_rows(logits)?;
    let sel = graph.constant(select);
    let picked = graph.mul(logp, sel)?;
    let total = graph.sum(picked)?;
    graph.scale(total, -1.0 / n as f64)
}

/// `-log [e^{v.g/tau} / (e^{v.g/tau} + e^{v_cf.g/tau})]` with the factual
/// conditional prompt `g = g(w^y(v))` as anchor, averaged over rows.
pub fn loss_cf_graph(
    state: &PromptState,
    graph: &mut Graph,
    learned: &ParamVars<'_>,
    frozen: &ParamVars<'_>,
    v: Var,
    v_cf: Var,
    labels: &[usize],
) -> Result<Var> {
    let (n, _) = graph.value(v).dims2()?;
    if graph.value(v_cf).shape() != graph.value(v).shape() || labels.len() != n {
        return contract(format!(
            "{n} factual embeddings with {:?} counterfactual embeddings and {} labels",
            graph.value(v_cf).shape(),
            labels.len()
        ));
    }
    let g = state.prompts_graph(graph, learned, frozen, v, labels)?;
    let pos = graph.row_dot(v, g)?;
    let neg = graph.row_dot(v_cf, g)?;
    let logits = graph.concat_cols(&[pos, neg])?;
    let logits = graph.scale(logits, 1.0 / state.config.tau)?;
    let logp = graph.log_softmax_rows(logits)?;
    let first = graph.constant(Tensor::new(vec![n, 2], [1.0, 0.0].repeat(n))?);
    let picked = graph.mul(logp, first)?;
    let total = graph.sum(picked)?;
    graph.scale(total, -1.0 / n as f64)
}

/// The counterfactual loss for one pair of raw similarity scores.
pub fn cf_loss_from_scores(pos: f64, neg: f64, tau: f64) -> f64 {
    -pos / tau + log_sum_exp(&[pos / tau, neg / tau])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub basic: f64,
    pub cf: f64,
    pub total: f64,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) {
        return contract(format!("lambda must be non-negative, got {lambda}"));
    }
    Ok(())
}

fn eval_scalar(
    state: &PromptState,
    build: impl FnOnce(&mut Graph, &ParamVars<'_>, &ParamVars<'_>) -> Result<Var>,
) -> Result<f64> {
    let mut graph = Graph::new();
    let lp = state.learned.bind(&mut graph, false);
    let fp = state.frozen.bind(&mut graph, false);
    let out = build(&mut graph, &lp, &fp)?;
    Ok(graph.value(out).item())
}

pub fn loss_basic(state: &PromptState, v: &Tensor, labels: &[usize], classes: &[usize]) -> Result<f64> {
    eval_scalar(state, |g, lp, fp| {
        let vv = g.constant(v.clone());
        loss_basic_graph(state, g, lp, fp, vv, labels, classes)
    })
}

pub fn loss_cf(state: &PromptState, v: &Tensor, v_cf: &Tensor, labels: &[usize]) -> Result<f64> {
    eval_scalar(state, |g, lp, fp| {
        let vv = g.constant(v.clone());
        let vc = g.constant(v_cf.clone());
        loss_cf_graph(state, g, lp, fp, vv, vc, labels)
    })
}

/// `L_basic + lambda L_cf` with the gradient for every learned parameter.
pub fn total_loss_and_grad(
    state: &PromptState,
    v: &Tensor,
    v_cf: &Tensor,
    labels: &[usize],
    classes: &[usize],
    lambda: f64,
) -> Result<(LossParts, Vec<Tensor>)> {
    check_lambda(lambda)?;
    let mut parts = LossParts {
        basic: 0.0,
        cf: 0.0,
        total: 0.0,
    };
    let (total, grads) = forward_and_grad(&state.learned, |g, lp| {
        let fp = state.frozen.bind(g, false);
        let vv = g.constant(v.clone());
        let vc = g.constant(v_cf.clone());
        let basic = loss_basic_graph(state, g, lp, &fp, vv, labels, classes)?;
        let cf = loss_cf_graph(state, g, lp, &fp, vv, vc, labels)?;
        parts.basic = g.value(basic).item();
        parts.cf = g.value(cf).item();
        let weighted = g.scale(cf, lambda)?;
        g.add(basic, weighted)
    })?;
    parts.total = total;
    Ok((parts, grads))
}

pub fn total_loss(
    state: &PromptState,
    v: &Tensor,
    v_cf: &Tensor,
    labels: &[usize],
    classes: &[usize],
    lambda: f64,
) -> Result<f64> {
    check_lambda(lambda)?;
    let basic = loss_basic(state, v, labels, classes)?;
    let cf = loss_cf(state, v, v_cf, labels)?;
    Ok(basic + lambda * cf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{central_difference, relative_error};
    use crate::prompt_learner::prompt::{class_anchors, PromptConfig};
    use crate::rng::rng_from;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn config(tau: f64) -> PromptConfig {
        PromptConfig {
            embed_dim: 6,
            prompt_len: 2,
            tau,
            text_hidden: 0,
            ctx_init_std: 0.0,
        }
    }

    fn unit_rows(seed: u64, n: usize, d: usize) -> Tensor {
        let mut rng = rng_from(seed);
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            let row: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            data.extend(row.iter().map(|v| v / norm));
        }
        Tensor::new(vec![n, d], data).unwrap()
    }

    /// A state whose learned parameters are all non-zero, so every gradient
    /// path is exercised.
    fn perturbed(seed: u64, text_hidden: usize) -> PromptState {
        let mut cfg = config(0.5);
        cfg.text_hidden = text_hidden;
        let mut s = PromptState::new(cfg, 5, seed, seed + 1).unwrap();
        let mut rng = rng_from(seed + 2);
        let flat: Vec<f64> = s
            .learned
            .flatten()
            .iter()
            .map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        s.learned.assign_flat(&flat).unwrap();
        s
    }

    fn grad_of(
        state: &PromptState,
        build: impl Fn(&mut Graph, &ParamVars<'_>, &ParamVars<'_>) -> Result<Var>,
    ) -> Vec<f64> {
        let (_, grads) = forward_and_grad(&state.learned, |g, lp| {
            let fp = state.frozen.bind(g, false);
            build(g, lp, &fp)
        })
        .unwrap();
        grads.iter().flat_map(|g| g.data().to_vec()).collect()
    }

    #[test]
    fn scalar_cf_oracle() {
        let want = (1.0 + (-2.0f64).exp()).ln();
        assert!((cf_loss_from_scores(2.0, 0.0, 1.0) - want).abs() < 1e-6);
        assert!((cf_loss_from_scores(2.0, 0.0, 1.0) - 0.126_928_011_042_972_6).abs() < 1e-12);
        assert!((cf_loss_from_scores(0.3, 0.3, 0.07) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cf_loss_matches_oracle_end_to_end() {
        // zero meta: the prompt is the anchor, so v = g gives v.g = 1 and an
        // orthogonal v_cf gives 0; at tau = 0.5 the logits are (2, 0)
        let s = PromptState::new(config(0.5), 3, 4, 5).unwrap();
        let anchors = class_anchors(&s).unwrap();
        let g = anchors.row(1).to_vec();
        let mut other = unit_rows(9, 1, 6).into_data();
        let proj = crate::prompt_learner::prompt::dot(&other, &g);
        for (o, gi) in other.iter_mut().zip(&g) {
            *o -= proj * gi;
        }
        let norm = other.iter().map(|v| v * v).sum::<f64>().sqrt();
        other.iter_mut().for_each(|o| *o /= norm);
        let v = Tensor::new(vec![1, 6], g).unwrap();
        let v_cf = Tensor::new(vec![1, 6], other).unwrap();
        let loss = loss_cf(&s, &v, &v_cf, &[1]).unwrap();
        assert!((loss - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-6, "{loss}");
    }

    #[test]
    fn equal_cf_scores_give_log_two() {
        let s = perturbed(3, 0);
        let v = unit_rows(1, 4, 6);
        let loss = loss_cf(&s, &v, &v, &[0, 1, 2, 3]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_basic_is_log_class_count() {
        let s = perturbed(0, 0);
        let v = Tensor::zeros(&[3, 6]);
        for classes in [vec![0, 1], vec![0, 2, 4], vec![0, 1, 2, 3, 4]] {
            let loss = loss_basic(&s, &v, &[0, 0, classes[1]], &classes).unwrap();
            assert!((loss - (classes.len() as f64).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn single_class_basic_is_zero() {
        let s = perturbed(1, 0);
        let v = unit_rows(2, 3, 6);
        assert!(loss_basic(&s, &v, &[2, 2, 2], &[2]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn total_is_linear_in_lambda() {
        let s = perturbed(5, 0);
        let v = unit_rows(6, 4, 6);
        let v_cf = unit_rows(7, 4, 6);
        let labels = [0, 1, 2, 0];
        let classes = [0, 1, 2];
        let basic = loss_basic(&s, &v, &labels, &classes).unwrap();
        let cf = loss_cf(&s, &v, &v_cf, &labels).unwrap();
        let (_, g0) = total_loss_and_grad(&s, &v, &v_cf, &labels, &classes, 0.0).unwrap();
        let (_, g1) = total_loss_and_grad(&s, &v, &v_cf, &labels, &classes, 1.0).unwrap();
        for lambda in [0.0, 0.25, 1.0, 3.5] {
            let t = total_loss(&s, &v, &v_cf, &labels, &classes, lambda).unwrap();
            assert!((t - (basic + lambda * cf)).abs() < 1e-12);
            let (parts, g) = total_loss_and_grad(&s, &v, &v_cf, &labels, &classes, lambda).unwrap();
            assert!((parts.total - t).abs() < 1e-12);
            assert!((parts.basic - basic).abs() < 1e-12 && (parts.cf - cf).abs() < 1e-12);
            for ((a, b), c) in g.iter().zip(&g0).zip(&g1) {
                for ((x, y), z) in a.data().iter().zip(b.data()).zip(c.data()) {
                    assert!((x - (y + lambda * (z - y))).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn contract_violations() {
        let s = perturbed(2, 0);
        let v = unit_rows(1, 2, 6);
        assert!(total_loss(&s, &v, &v, &[0, 1], &[0, 1], -0.1).is_err());
        assert!(total_loss_and_grad(&s, &v, &v, &[0, 1], &[0, 1], f64::NAN).is_err());
        assert!(loss_basic(&s, &v, &[0, 1], &[]).is_err());
        assert!(loss_basic(&s, &v, &[0, 3], &[0, 1]).is_err());
        assert!(loss_cf(&s, &v, &unit_rows(1, 3, 6), &[0, 1]).is_err());
        assert!(loss_cf(&s, &v, &v, &[0]).is_err());
    }

    fn check_gradient(
        state: &PromptState,
        f: impl Fn(&mut Graph, &ParamVars<'_>, &ParamVars<'_>) -> Result<Var> + Copy,
        seed: u64,
    ) {
        let analytic = grad_of(state, f);
        let numeric = central_difference(
            |p| {
                let mut s = state.clone();
                s.learned.assign_flat(p).unwrap();
                eval_scalar(&s, |g, lp, fp| f(g, lp, fp)).unwrap()
            },
            &state.learned.flatten(),
            1e-6,
        );
        let err = relative_error(&analytic, &numeric, 1e-8);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            let hidden = if seed % 2 == 0 { 0 } else { 5 };
            let s = perturbed(100 + seed, hidden);
            let v = unit_rows(200 + seed, 4, 6);
            let v_cf = unit_rows(300 + seed, 4, 6);
            let labels = [0, 2, 1, (seed % 3) as usize];
            let classes = [0, 1, 2];
            let lambda = 0.5 + seed as f64 / 10.0;
            let st = &s;
            check_gradient(
                st,
                |g, lp, fp| {
                    let vv = g.constant(v.clone());
                    loss_basic_graph(st, g, lp, fp, vv, &labels, &classes)
                },
                seed,
            );
            check_gradient(
                st,
                |g, lp, fp| {
                    let vv = g.constant(v.clone());
                    let vc = g.constant(v_cf.clone());
                    loss_cf_graph(st, g, lp, fp, vv, vc, &labels)
                },
                seed,
            );
            check_gradient(
                st,
                |g, lp, fp| {
                    let vv = g.constant(v.clone());
                    let vc = g.constant(v_cf.clone());
                    let b = loss_basic_graph(st, g, lp, fp, vv, &labels, &classes)?;
                    let c = loss_cf_graph(st, g, lp, fp, vv, vc, &labels)?;
                    let w = g.scale(c, lambda)?;
                    g.add(b, w)
                },
                seed,
            );
            let (_, grads) = total_loss_and_grad(st, &v, &v_cf, &labels, &classes, lambda).unwrap();
            let flat: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
            let numeric = central_difference(
                |p| {
                    let mut s2 = st.clone();
                    s2.learned.assign_flat(p).unwrap();
                    total_loss(&s2, &v, &v_cf, &labels, &classes, lambda).unwrap()
                },
                &st.learned.flatten(),
                1e-6,
            );
            assert!(relative_error(&flat, &numeric, 1e-8) < 1e-4);
        }
    }
}
