//! The hierarchical winner-takes-all loss and its annealing schedule.

use serde::{Deserialize, Serialize};

use crate::numerics::matrix::sq_dist;
use crate::tree::{NodeId, PosteriorTree};

/// `eps_t = eps0 * exp(-max(t - t0, 0) / 2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub eps0: f64,
    pub t0: usize,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self { eps0: 1.0, t0: 5 }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        epsilon_at(self, epoch)
    }
}

pub fn epsilon_at(schedule: &EpsilonSchedule, epoch: usize) -> f64 {
    let over = epoch.saturating_sub(schedule.t0) as f64;
    schedule.eps0 * (-over / 2.0).exp()
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchicalLoss {
    pub loss: f64,
    /// Root first, then the winner at each level.
    pub winner_path: Vec<NodeId>,
    /// Weight of each node's squared error, per level.
    pub weights: Vec<Vec<f64>>,
}

impl HierarchicalLoss {
    pub fn winner_leaf(&self) -> usize {
        self.winner_path.last().expect("path contains the root").index
    }
}

/// Greedy descent: from the root, move to the child closest to `x`, ties to
/// the lowest index.
pub(crate) fn greedy_path(tree: &PosteriorTree, x: &[f64]) -> Vec<NodeId> {
    let k = tree.layout().degree();
    let mut path = vec![NodeId::ROOT];
    let mut index = 0;
    for level in 1..=tree.layout().depth() {
        let mut best = (k * index, f64::INFINITY);
        for c in k * index..k * (index + 1) {
            let d = sq_dist(tree.value(level, c), x);
            if d < best.1 {
                best = (c, d);
            }
        }
        index = best.0;
        path.push(NodeId { level, index });
    }
    path
}

/// `|root - x|^2 + sum over levels of (|winner - x|^2 + eps * sum of |sibling - x|^2)`.
pub fn hierarchical_loss(tree: &PosteriorTree, x: &[f64], eps: f64) -> HierarchicalLoss {
    let layout = tree.layout();
    let k = layout.degree();
    let path = greedy_path(tree, x);
    let mut weights: Vec<Vec<f64>> = (0..=layout.depth()).map(|l| vec![0.0; layout.level_size(l)]).collect();
    weights[0][0] = 1.0;
    let mut loss = sq_dist(tree.root(), x);
    for level in 1..=layout.depth() {
        let parent = path[level - 1].index;
        let winner = path[level].index;
        for c in k * parent..k * (parent + 1) {
            let w = if c == winner { 1.0 } else { eps };
            weights[level][c] = w;
            if w != 0.0 {
                loss += w * sq_dist(tree.value(level, c), x);
            }
        }
    }
    HierarchicalLoss { loss, winner_path: path, weights }
}

/// `dL/d(node value)` for every node, scaled by `scale`.
pub fn loss_node_grads(tree: &PosteriorTree, x: &[f64], terms: &HierarchicalLoss, scale: f64) -> Vec<Vec<f64>> {
    let dim = tree.dim();
    terms
        .weights
        .iter()
        .enumerate()
        .map(|(level, w)| {
            let mut g = vec![0.0; w.len() * dim];
            for (i, &wi) in w.iter().enumerate() {
                if wi == 0.0 {
                    continue;
                }
                let v = tree.value(level, i);
                for ((gj, vj), xj) in g[i * dim..(i + 1) * dim].iter_mut().zip(v).zip(x) {
                    *gj = 2.0 * scale * wi * (vj - xj);
                }
            }
            g
        })
        .collect()
}
