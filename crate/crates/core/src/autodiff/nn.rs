//! Layers built from graph ops, and the named parameter store they read from.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::{Axis, Graph, Matrix, Var};
use crate::math;
use crate::{Error, Result};

/// Named, ordered parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Matrix>,
}

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.tensors[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Replaces every tensor with the one of the same name and shape in `other`.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Contract(alloc::format!(
                "parameter count {} != {}",
                other.len(),
                self.len()
            )));
        }
        for (i, (name, tensor)) in other.iter().enumerate() {
            if self.names[i] != name {
                return Err(Error::Contract(alloc::format!(
                    "parameter {i} is {name}, expected {}",
                    self.names[i]
                )));
            }
            if self.tensors[i].shape() != tensor.shape() {
                return Err(Error::Dimension {
                    op: "load_params",
                    left: self.tensors[i].shape(),
                    right: tensor.shape(),
                });
            }
            self.tensors[i] = tensor.clone();
        }
        Ok(())
    }

    /// Registers every tensor as a leaf of `graph`, in store order.
    pub fn register(&self, graph: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| graph.leaf(t.clone())).collect()
    }

    /// Gradients of the registered leaves, in store order.
    pub fn gradients(&self, graph: &Graph, vars: &[Var]) -> Vec<Matrix> {
        vars.iter().map(|&v| graph.grad(v).clone()).collect()
    }
}

/// Affine map `x W + b`, with `W: in x out` and `b: 1 x out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Weights uniform in `±1/sqrt(fan_in)`, zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / math::sqrt(fan_in as f64);
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let weight = store.push(
            alloc::format!("{name}.weight"),
            Matrix::from_vec(fan_in, fan_out, data).expect("sized"),
        );
        let bias = store.push(alloc::format!("{name}.bias"), Matrix::zeros(1, fan_out));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let rows = g.shape(x).0;
        let xw = g.matmul(x, vars[self.weight.0])?;
        let b = g.broadcast_rows(vars[self.bias.0], rows)?;
        g.add(xw, b)
    }
}

/// Fully connected stack with ReLU between layers and none after the last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        rng: &mut R,
    ) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &alloc::format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.fan_in)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, vars, h)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - p)`.
pub fn dropout<R: Rng + ?Sized>(g: &mut Graph, x: Var, p: f64, rng: &mut R) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(alloc::format!("dropout probability {p}")));
    }
    if p == 0.0 {
        return Ok(x);
    }
    let (r, c) = g.shape(x);
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..r * c)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    let m = g.leaf(Matrix::from_vec(r, c, mask)?);
    g.mul(x, m)
}

/// Batch normalisation over the rows of a `batch x features` tensor.
///
/// Training uses the batch statistics and folds them into running averages;
/// evaluation uses the running averages.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, features: usize) -> Self {
        let gamma = store.push(
            alloc::format!("{name}.gamma"),
            Matrix::filled(1, features, 1.0),
        );
        let beta = store.push(alloc::format!("{name}.beta"), Matrix::zeros(1, features));
        Self {
            gamma,
            beta,
            running_mean: alloc::vec![0.0; features],
            running_var: alloc::vec![1.0; features],
            momentum: 0.9,
            eps: 1e-5,
        }
    }

    pub fn forward(&mut self, g: &mut Graph, vars: &[Var], x: Var, train: bool) -> Result<Var> {
        let (rows, cols) = g.shape(x);
        if cols != self.running_mean.len() {
            return Err(Error::Dimension {
                op: "batch_norm",
                left: (rows, cols),
                right: (rows, self.running_mean.len()),
            });
        }
        let normalized = if train && rows > 1 {
            let mean = g.mean(x, Some(Axis::Rows));
            let mean_b = g.broadcast_rows(mean, rows)?;
            let centered = g.sub(x, mean_b)?;
            let sq = g.mul(centered, centered)?;
            let var = g.mean(sq, Some(Axis::Rows));
            // Running variance uses the unbiased estimate.
            let unbias = rows as f64 / (rows as f64 - 1.0);
            let m = self.momentum;
            for (j, rm) in self.running_mean.iter_mut().enumerate() {
                *rm = m * *rm + (1.0 - m) * g.value(mean).get(0, j);
            }
            for (j, rv) in self.running_var.iter_mut().enumerate() {
                *rv = m * *rv + (1.0 - m) * g.value(var).get(0, j) * unbias;
            }
            let var_eps = g.offset(var, self.eps);
            let std = g.sqrt(var_eps);
            let std_b = g.broadcast_rows(std, rows)?;
            g.div(centered, std_b)?
        } else {
            let mean = g.leaf(Matrix::row_vector(&self.running_mean));
            let inv_std: Vec<f64> = self
                .running_var
                .iter()
                .map(|v| 1.0 / math::sqrt(v + self.eps))
                .collect();
            let inv = g.leaf(Matrix::row_vector(&inv_std));
            let mean_b = g.broadcast_rows(mean, rows)?;
            let inv_b = g.broadcast_rows(inv, rows)?;
            let centered = g.sub(x, mean_b)?;
            g.mul(centered, inv_b)?
        };
        let gamma = g.broadcast_rows(vars[self.gamma.0], rows)?;
        let beta = g.broadcast_rows(vars[self.beta.0], rows)?;
        let scaled = g.mul(normalized, gamma)?;
        g.add(scaled, beta)
    }
}
