//! Fully connected networks over [`ParamSet`]s.

use rand::Rng;
use rand_distr::StandardNormal;

use super::graph::{Activation, Graph, Var};
use super::params::{ParamSet, ParamVars};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Layer widths and activation for a multilayer perceptron whose parameters
/// live under `prefix` in a [`ParamSet`] as `{prefix}.w{i}` (`[in, out]`) and
/// `{prefix}.b{i}` (`[out]`). The activation follows every layer but the last.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub prefix: String,
    pub sizes: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(prefix: impl Into<String>, sizes: Vec<usize>, activation: Activation) -> Self {
        MlpSpec {
            prefix: prefix.into(),
            sizes,
            activation,
        }
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.w{layer}", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.b{layer}", self.prefix)
    }

    /// Registers normally distributed weights with standard deviation
    /// `1/sqrt(fan_in)` and zero biases. The last layer is scaled by
    /// `last_layer_gain`.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R, last_layer_gain: f64) -> Result<()> {
        if self.sizes.len() < 2 {
            return Err(Error::Contract("an MLP needs at least two layer sizes".into()));
        }
        for l in 0..self.layers() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let gain = if l + 1 == self.layers() { last_layer_gain } else { 1.0 };
            let std = gain / (fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            params.insert(self.weight_name(l), Tensor::new(vec![fan_in, fan_out], w)?)?;
            params.insert(self.bias_name(l), Tensor::zeros(&[fan_out]))?;
        }
        Ok(())
    }

    /// Records the forward pass of a `[batch, in]` input on `graph`.
    pub fn forward(&self, graph: &mut Graph, pv: &ParamVars<'_>, input: Var) -> Result<Var> {
        let width = graph.value(input).dims2()?.1;
        if width != self.input_width() {
            return Err(Error::Shape {
                op: "mlp_apply",
                expected: vec![self.input_width()],
                got: vec![width],
            });
        }
        let mut h = input;
        for l in 0..self.layers() {
            let w = pv.var(&self.weight_name(l))?;
            let b = pv.var(&self.bias_name(l))?;
            h = graph.matmul(h, w)?;
            h = graph.add_bias(h, b)?;
            if l + 1 < self.layers() {
                h = graph.activation(h, self.activation)?;
            }
        }
        Ok(h)
    }
}

/// Evaluates the network on a `[batch, in]` tensor without recording gradients.
pub fn mlp_apply(params: &ParamSet, input: &Tensor, spec: &MlpSpec) -> Result<Tensor> {
    let mut graph = Graph::new();
    let pv = params.bind(&mut graph, false);
    let x = graph.constant(input.clone());
    let out = spec.forward(&mut graph, &pv, x)?;
    Ok(graph.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let spec = MlpSpec::new("id", vec![3, 3], Activation::Silu);
        let mut p = ParamSet::new();
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        p.insert("id.w0", eye).unwrap();
        p.insert("id.b0", Tensor::zeros(&[3])).unwrap();
        let x = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 3.0, 0.0, -0.25]).unwrap();
        assert_eq!(mlp_apply(&p, &x, &spec).unwrap(), x);
    }

    #[test]
    fn zero_network_gives_zero() {
        let spec = MlpSpec::new("z", vec![4, 5, 2], Activation::Silu);
        let mut p = ParamSet::new();
        spec.init(&mut p, &mut ChaCha8Rng::seed_from_u64(1), 1.0).unwrap();
        let zeros = vec![0.0; p.numel()];
        p.assign_flat(&zeros).unwrap();
        let x = Tensor::full(&[3, 4], 0.7);
        let y = mlp_apply(&p, &x, &spec).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = MlpSpec::new("m", vec![4, 8, 2], Activation::Silu);
        let run = || {
            let mut p = ParamSet::new();
            spec.init(&mut p, &mut ChaCha8Rng::seed_from_u64(9), 1.0).unwrap();
            let x = Tensor::new(vec![1, 4], vec![0.1, 0.2, -0.3, 0.4]).unwrap();
            mlp_apply(&p, &x, &spec).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn width_mismatch_rejected() {
        let spec = MlpSpec::new("m", vec![4, 2], Activation::Silu);
        let mut p = ParamSet::new();
        spec.init(&mut p, &mut ChaCha8Rng::seed_from_u64(0), 1.0).unwrap();
        let x = Tensor::zeros(&[1, 5]);
        assert!(matches!(mlp_apply(&p, &x, &spec), Err(Error::Shape { .. })));
    }
}
