//! Named parameter tensors with adaptive-moment optimizer state.

use std::collections::HashMap;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    index: HashMap<String, usize>,
    values: Vec<Tensor>,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step: u64,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            index: HashMap::new(),
            values: Vec::new(),
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step: 0,
        }
    }

    /// Registers a parameter. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter {name}")));
        }
        let idx = self.values.len();
        self.first_moment.push(Tensor::zeros(value.shape()));
        self.second_moment.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.index.insert(name.clone(), idx);
        self.names.push(name);
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.values[i])
    }

    pub fn moments(&self, i: usize) -> (&Tensor, &Tensor) {
        (&self.first_moment[i], &self.second_moment[i])
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Flattens all parameter values in registration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Inverse of [`ParamSet::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.numel() {
            return Err(Error::Shape {
                op: "assign_flat",
                expected: vec![self.numel()],
                got: vec![flat.len()],
            });
        }
        let mut offset = 0;
        for t in &mut self.values {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Puts every parameter on `graph`; `trainable` selects whether they
    /// receive gradients.
    pub fn bind<'p>(&'p self, graph: &mut Graph, trainable: bool) -> ParamVars<'p> {
        let vars = self
            .values
            .iter()
            .map(|t| {
                if trainable {
                    graph.input(t.clone())
                } else {
                    graph.constant(t.clone())
                }
            })
            .collect();
        ParamVars { params: self, vars }
    }

    pub(crate) fn step_mut(&mut self) -> (&mut [Tensor], &mut [Tensor], &mut [Tensor], &mut u64) {
        (
            &mut self.values,
            &mut self.first_moment,
            &mut self.second_moment,
            &mut self.step,
        )
    }

    /// FNV-1a over names, shapes and value bits; changes whenever any value
    /// changes.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut feed = |bytes: &[u8]| {
            for b in bytes {
                h ^= *b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (name, t) in self.names.iter().zip(&self.values) {
            feed(name.as_bytes());
            for d in t.shape() {
                feed(&(*d as u64).to_le_bytes());
            }
            for v in t.data() {
                feed(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

/// Parameters bound to one [`Graph`].
pub struct ParamVars<'p> {
    params: &'p ParamSet,
    vars: Vec<Var>,
}

impl ParamVars<'_> {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.params
            .index_of(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Evaluates a scalar-valued computation over `params` and returns its value
/// with the gradient for every parameter (zeros where it has no influence).
pub fn forward_and_grad<F>(params: &ParamSet, computation: F) -> Result<(f64, Vec<Tensor>)>
where
    F: FnOnce(&mut Graph, &ParamVars<'_>) -> Result<Var>,
{
    let mut graph = Graph::new();
    let pv = params.bind(&mut graph, true);
    let out = computation(&mut graph, &pv)?;
    let value = graph.value(out);
    if !value.is_scalar() {
        return Err(Error::Contract(format!(
            "forward_and_grad needs a scalar output, got shape {:?}",
            value.shape()
        )));
    }
    let loss = value.item();
    let mut grads = graph.backward(out)?;
    let out_grads = pv
        .vars()
        .iter()
        .zip(params.values())
        .map(|(&v, t)| grads.take_or_zeros(v, t.shape()))
        .collect();
    Ok((loss, out_grads))
}
