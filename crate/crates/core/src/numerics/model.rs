//! The leaf network and the probability network of a posterior-tree model.
//!
//! For an input `y` the leaf network emits `K^d` residuals, giving leaves
//! `y + r_i`; the probability network emits `K^d` logits turned into leaf
//! probabilities by a softmax.

use super::matrix::Matrix;
use super::mlp::{Activation, Mlp, MlpGrads, MlpTape};
use crate::error::{Error, Result};
use crate::rng;

/// Row-wise softmax with max subtraction.
pub fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNet {
    leaf_count: usize,
    dim: usize,
    leaf_net: Mlp,
    prob_net: Mlp,
}

#[derive(Clone, Debug)]
pub struct TreeNetForward {
    /// `B x (leaf_count * dim)`, leaf `i` of sample `b` at `row(b)[i*dim..(i+1)*dim]`.
    pub leaf_values: Matrix,
    /// `B x leaf_count`.
    pub leaf_probs: Matrix,
    leaf_tape: MlpTape,
    prob_tape: Option<MlpTape>,
}

#[derive(Clone, Debug)]
pub struct TreeNetGrads {
    pub leaf: MlpGrads,
    /// `None` when there is a single leaf and the probability head is constant.
    pub prob: Option<MlpGrads>,
}

impl TreeNet {
    /// Two networks of `num_layers` linear layers and `hidden` units, SiLU in between.
    pub fn new(leaf_count: usize, dim: usize, hidden: usize, num_layers: usize, seed: u64) -> Result<Self> {
        let (leaf_sizes, prob_sizes) = Self::sizes(leaf_count, dim, hidden, num_layers)?;
        let leaf_net = Mlp::new(&leaf_sizes, Activation::Silu, &mut rng::seeded(seed, rng::stream::INIT_LEAF))?;
        let prob_net = Mlp::new(&prob_sizes, Activation::Silu, &mut rng::seeded(seed, rng::stream::INIT_PROB))?;
        Self::from_parts(leaf_count, dim, leaf_net, prob_net)
    }

    pub fn zeros(leaf_count: usize, dim: usize, hidden: usize, num_layers: usize) -> Result<Self> {
        let (leaf_sizes, prob_sizes) = Self::sizes(leaf_count, dim, hidden, num_layers)?;
        Self::from_parts(leaf_count, dim, Mlp::zeros(&leaf_sizes, Activation::Silu)?, Mlp::zeros(&prob_sizes, Activation::Silu)?)
    }

    fn sizes(leaf_count: usize, dim: usize, hidden: usize, num_layers: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if num_layers == 0 || hidden == 0 || leaf_count == 0 || dim == 0 {
            return Err(Error::Dimension(format!(
                "leaf_count={leaf_count}, dim={dim}, hidden={hidden}, layers={num_layers}"
            )));
        }
        let mut leaf = vec![dim];
        let mut prob = vec![dim];
        for _ in 1..num_layers {
            leaf.push(hidden);
            prob.push(hidden);
        }
        leaf.push(leaf_count * dim);
        prob.push(leaf_count);
        Ok((leaf, prob))
    }

    pub fn from_parts(leaf_count: usize, dim: usize, leaf_net: Mlp, prob_net: Mlp) -> Result<Self> {
        if leaf_net.in_dim() != dim || prob_net.in_dim() != dim {
            return Err(Error::Dimension(format!(
                "networks take {} and {} inputs, expected {dim}",
                leaf_net.in_dim(),
                prob_net.in_dim()
            )));
        }
        if leaf_net.out_dim() != leaf_count * dim || prob_net.out_dim() != leaf_count {
            return Err(Error::Dimension(format!(
                "networks emit {} and {} outputs for {leaf_count} leaves of dimension {dim}",
                leaf_net.out_dim(),
                prob_net.out_dim()
            )));
        }
        Ok(Self { leaf_count, dim, leaf_net, prob_net })
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn leaf_net(&self) -> &Mlp {
        &self.leaf_net
    }

    pub fn prob_net(&self) -> &Mlp {
        &self.prob_net
    }

    pub fn leaf_net_mut(&mut self) -> &mut Mlp {
        &mut self.leaf_net
    }

    pub fn prob_net_mut(&mut self) -> &mut Mlp {
        &mut self.prob_net
    }

    pub fn forward(&self, ys: &Matrix) -> Result<TreeNetForward> {
        let (residuals, leaf_tape) = self.leaf_net.forward(ys)?;
        let leaf_values = self.add_input(ys, residuals);
        let (leaf_probs, prob_tape) = if self.leaf_count == 1 {
            (Matrix::from_vec(ys.rows(), 1, vec![1.0; ys.rows()])?, None)
        } else {
            let (mut logits, tape) = self.prob_net.forward(ys)?;
            for r in 0..logits.rows() {
                softmax_in_place(logits.row_mut(r));
            }
            (logits, Some(tape))
        };
        Ok(TreeNetForward { leaf_values, leaf_probs, leaf_tape, prob_tape })
    }

    /// Forward pass without recording tapes: `(leaf_values, leaf_probs)`.
    pub fn predict(&self, ys: &Matrix) -> Result<(Matrix, Matrix)> {
        let leaf_values = self.add_input(ys, self.leaf_net.predict(ys)?);
        let leaf_probs = if self.leaf_count == 1 {
            Matrix::from_vec(ys.rows(), 1, vec![1.0; ys.rows()])?
        } else {
            let mut logits = self.prob_net.predict(ys)?;
            for r in 0..logits.rows() {
                softmax_in_place(logits.row_mut(r));
            }
            logits
        };
        Ok((leaf_values, leaf_probs))
    }

    fn add_input(&self, ys: &Matrix, mut residuals: Matrix) -> Matrix {
        for b in 0..ys.rows() {
            let y = ys.row(b);
            for chunk in residuals.row_mut(b).chunks_mut(self.dim) {
                for (v, yi) in chunk.iter_mut().zip(y) {
                    *v += yi;
                }
            }
        }
        residuals
    }

    /// Back-propagates `dL/d(leaf values)` and `dL/d(leaf probabilities)`.
    pub fn backward(&self, fwd: &TreeNetForward, grad_values: &Matrix, grad_probs: &Matrix) -> Result<TreeNetGrads> {
        let leaf = self.leaf_net.backward(&fwd.leaf_tape, grad_values)?;
        let prob = match &fwd.prob_tape {
            None => None,
            Some(tape) => {
                let p = &fwd.leaf_probs;
                if grad_probs.rows() != p.rows() || grad_probs.cols() != p.cols() {
                    return Err(Error::Dimension("probability gradient shape".into()));
                }
                let mut g = Matrix::zeros(p.rows(), p.cols());
                for b in 0..p.rows() {
                    let (pr, gp) = (p.row(b), grad_probs.row(b));
                    let inner: f64 = pr.iter().zip(gp).map(|(a, c)| a * c).sum();
                    for (out, (a, c)) in g.row_mut(b).iter_mut().zip(pr.iter().zip(gp)) {
                        *out = a * (c - inner);
                    }
                }
                Some(self.prob_net.backward(tape, &g)?)
            }
        };
        Ok(TreeNetGrads { leaf, prob })
    }
}
