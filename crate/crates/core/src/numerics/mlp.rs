//! Fully connected network with a recorded tape for exact reverse mode.
//!
//! Activations are batched: a batch of `B` inputs is a `B x in` matrix and
//! layer `i` computes `z = h Wᵢᵀ + bᵢ` with `Wᵢ` stored `out x in`.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::matrix::{gemm, Matrix, Transpose};
use crate::error::{Error, Result};

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Silu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Silu => z * sigmoid(z),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Silu => {
                let s = sigmoid(z);
                s * (1.0 + z * (1.0 - s))
            }
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `out x in`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::Dimension(format!(
                "bias of length {} for {}x{} weight",
                bias.len(),
                weight.rows(),
                weight.cols()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Linear layers with `hidden` applied between them; the last layer is linear.
#[derive(Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
    hidden: Activation,
    version: u64,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Self { layers: self.layers.clone(), hidden: self.hidden, version: fresh_version() }
    }
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.hidden == other.hidden
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct MlpTape {
    version: u64,
    /// Input to every layer.
    inputs: Vec<Matrix>,
    /// Pre-activations of every hidden layer.
    pre: Vec<Matrix>,
}

impl MlpTape {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            weights: mlp.layers.iter().map(|l| Matrix::zeros(l.out_dim(), l.in_dim())).collect(),
            biases: mlp.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    /// Parameter blocks in the same order as [`Mlp::blocks_mut`].
    pub fn blocks(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks().iter().flat_map(|b| b.iter()).fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Mlp {
    /// Layer sizes `[in, h1, ..., out]`; weights and biases drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new(sizes: &[usize], hidden: Activation, rng: &mut impl rand::Rng) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
                let bias = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
                Linear { weight: Matrix::from_vec(fan_out, fan_in, weight).expect("checked sizes"), bias }
            })
            .collect();
        Ok(Self { layers, hidden, version: fresh_version() })
    }

    pub fn zeros(sizes: &[usize], hidden: Activation) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| Linear { weight: Matrix::zeros(w[1], w[0]), bias: vec![0.0; w[1]] })
            .collect();
        Ok(Self { layers, hidden, version: fresh_version() })
    }

    pub fn from_layers(layers: Vec<Linear>, hidden: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Dimension("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Dimension(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::Dimension(format!("layer {i} bias length {}", l.bias.len())));
            }
            if !l.weight.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::NonFinite(format!("parameters of layer {i}")));
            }
        }
        Ok(Self { layers, hidden, version: fresh_version() })
    }

    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Dimension(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.as_slice().len() + l.bias.len()).sum()
    }

    /// Mutable parameter blocks `[W0, b0, W1, b1, ...]`. Invalidates tapes.
    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.version = fresh_version();
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()]).collect()
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, MlpTape)> {
        self.run(x, true).map(|(out, tape)| (out, tape.expect("tape requested")))
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.run(x, false).map(|(out, _)| out)
    }

    fn run(&self, x: &Matrix, record: bool) -> Result<(Matrix, Option<MlpTape>)> {
        if x.cols() != self.in_dim() {
            return Err(Error::Dimension(format!("input width {} but network expects {}", x.cols(), self.in_dim())));
        }
        let batch = x.rows();
        let last = self.layers.len() - 1;
        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Matrix::zeros(batch, layer.out_dim());
            for r in 0..batch {
                z.row_mut(r).copy_from_slice(&layer.bias);
            }
            gemm(1.0, &h, Transpose::No, &layer.weight, Transpose::Yes, 1.0, &mut z);
            if !z.is_finite() {
                return Err(Error::NonFiniteActivation { layer: i });
            }
            if i == last {
                if record {
                    inputs.push(h);
                }
                h = z;
            } else {
                let mut a = z.clone();
                for v in a.as_mut_slice() {
                    *v = self.hidden.apply(*v);
                }
                if record {
                    inputs.push(std::mem::replace(&mut h, a));
                    pre.push(z);
                } else {
                    h = a;
                }
            }
        }
        let tape = record.then_some(MlpTape { version: self.version, inputs, pre });
        Ok((h, tape))
    }

    /// Gradients of a scalar loss given `dL/d(output)` for the taped batch.
    pub fn backward(&self, tape: &MlpTape, grad_out: &Matrix) -> Result<MlpGrads> {
        if tape.version != self.version || tape.inputs.len() != self.layers.len() {
            return Err(Error::StaleTape);
        }
        let batch = tape.batch_size();
        if grad_out.rows() != batch || grad_out.cols() != self.out_dim() {
            return Err(Error::Dimension(format!(
                "output gradient {}x{} for batch {} and width {}",
                grad_out.rows(),
                grad_out.cols(),
                batch,
                self.out_dim()
            )));
        }
        let mut grads = MlpGrads::zeros_like(self);
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            gemm(1.0, &g, Transpose::Yes, &tape.inputs[i], Transpose::No, 0.0, &mut grads.weights[i]);
            let db = &mut grads.biases[i];
            for r in 0..batch {
                for (acc, v) in db.iter_mut().zip(g.row(r)) {
                    *acc += v;
                }
            }
            if i > 0 {
                let mut gh = Matrix::zeros(batch, layer.in_dim());
                gemm(1.0, &g, Transpose::No, &layer.weight, Transpose::No, 0.0, &mut gh);
                for (v, z) in gh.as_mut_slice().iter_mut().zip(tape.pre[i - 1].as_slice()) {
                    *v *= self.hidden.derivative(*z);
                }
                g = gh;
            }
        }
        Ok(grads)
    }
}
