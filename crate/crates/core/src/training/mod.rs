//! Training: hierarchical loss, epsilon annealing, the weighted sampler and
//! the epoch loop.

mod config;
mod loss;
mod sampler;

use std::io::Write;
use std::path::Path;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::SliceRandom;

pub use config::{ModelConfig, SamplerConfig, TaskConfig, TrainConfig};
pub use loss::{epsilon_at, hierarchical_loss, loss_node_grads, EpsilonSchedule, HierarchicalLoss};
pub use sampler::{conditional_leaf_probs, loss_reweight, solve_sample_weights, update_association, AssociationMatrix};

pub(crate) use loss::greedy_path;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::numerics::matrix::sq_dist;
use crate::numerics::{Matrix, OptimizerState, PlateauScheduler, TreeNet, TreeNetGrads};
use crate::rng;
use crate::tree::{PosteriorTree, TreeLayout};

/// A network pair together with the tree layout its outputs fill.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeModel {
    pub layout: TreeLayout,
    pub net: TreeNet,
}

impl TreeModel {
    pub fn new(layout: TreeLayout, net: TreeNet) -> Result<Self> {
        if net.leaf_count() != layout.leaf_count() {
            return Err(Error::Dimension(format!(
                "network predicts {} leaves, layout K={} d={} needs {}",
                net.leaf_count(),
                layout.degree(),
                layout.depth(),
                layout.leaf_count()
            )));
        }
        Ok(Self { layout, net })
    }

    pub fn dim(&self) -> usize {
        self.net.dim()
    }

    /// One posterior tree per row of `ys`.
    pub fn trees(&self, ys: &Matrix) -> Result<Vec<PosteriorTree>> {
        let (values, probs) = self.net.predict(ys)?;
        (0..ys.rows()).map(|b| PosteriorTree::build(values.row(b), probs.row(b), self.layout, self.dim())).collect()
    }

    pub fn tree(&self, y: &[f64]) -> Result<PosteriorTree> {
        let ys = Matrix::from_vec(1, y.len(), y.to_vec())?;
        if y.len() != self.dim() {
            return Err(Error::Dimension(format!("input of dimension {}, model expects {}", y.len(), self.dim())));
        }
        Ok(self.trees(&ys)?.remove(0))
    }
}

/// Loss and parameter gradients of one batch.
#[derive(Clone, Debug)]
pub struct BatchGradients {
    /// `sum_b scale_b * loss_b / B`, the quantity differentiated.
    pub objective: f64,
    /// Unscaled per-sample losses.
    pub losses: Vec<f64>,
    pub winners: Vec<usize>,
    pub grads: TreeNetGrads,
}

/// Forward, tree composition, loss and exact backward pass for one batch.
pub fn batch_gradients(model: &TreeModel, xs: &Matrix, ys: &Matrix, eps: f64, scales: &[f64]) -> Result<BatchGradients> {
    let b = ys.rows();
    let dim = model.dim();
    if xs.rows() != b || scales.len() != b || xs.cols() != dim || ys.cols() != dim {
        return Err(Error::Dimension("batch shapes".into()));
    }
    let fwd = model.net.forward(ys)?;
    let leaves = model.layout.leaf_count();
    let mut grad_values = Matrix::zeros(b, leaves * dim);
    let mut grad_probs = Matrix::zeros(b, leaves);
    let mut objective = 0.0;
    let mut losses = Vec::with_capacity(b);
    let mut winners = Vec::with_capacity(b);
    for r in 0..b {
        let tree = PosteriorTree::build(fwd.leaf_values.row(r), fwd.leaf_probs.row(r), model.layout, dim)?;
        let x = xs.row(r);
        let terms = hierarchical_loss(&tree, x, eps);
        if !terms.loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let scale = scales[r] / b as f64;
        objective += scale * terms.loss;
        let (gv, gp) = tree.backward(&loss_node_grads(&tree, x, &terms, scale));
        grad_values.row_mut(r).copy_from_slice(&gv);
        grad_probs.row_mut(r).copy_from_slice(&gp);
        losses.push(terms.loss);
        winners.push(terms.winner_leaf());
    }
    let grads = model.net.backward(&fwd, &grad_values, &grad_probs)?;
    Ok(BatchGradients { objective, losses, winners, grads })
}

/// Per-epoch diagnostics on a fixed evaluation set.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPass {
    pub loss: f64,
    /// Winner-leaf counts.
    pub occupancy: Vec<usize>,
    /// Mean Euclidean distance of each leaf to the ground truth.
    pub leaf_dists: Vec<f64>,
}

impl EvalPass {
    pub fn entropy(&self) -> f64 {
        occupancy_entropy(&self.occupancy)
    }
}

pub fn occupancy_entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum()
}

pub fn evaluate_pass(model: &TreeModel, data: &Dataset, eps: f64) -> Result<EvalPass> {
    let leaves = model.layout.leaf_count();
    let dim = model.dim();
    let mut occupancy = vec![0; leaves];
    let mut dist_sums = vec![0.0; leaves];
    let mut loss = 0.0;
    for chunk in data.pairs.chunks(1024) {
        let ys = Matrix::from_rows(&chunk.iter().map(|p| p.y.as_slice()).collect::<Vec<_>>())?;
        for (tree, pair) in model.trees(&ys)?.iter().zip(chunk) {
            let terms = hierarchical_loss(tree, &pair.x, eps);
            loss += terms.loss;
            occupancy[terms.winner_leaf()] += 1;
            for (i, s) in dist_sums.iter_mut().enumerate() {
                *s += sq_dist(&tree.leaves()[i * dim..(i + 1) * dim], &pair.x).sqrt();
            }
        }
    }
    let n = data.len() as f64;
    Ok(EvalPass { loss: loss / n, occupancy, leaf_dists: dist_sums.into_iter().map(|s| s / n).collect() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub eps: f64,
    pub lr_leaf: f64,
    pub lr_prob: f64,
    pub occupancy_entropy: f64,
    pub leaf_dists: Vec<f64>,
    pub occupancy: Vec<usize>,
    pub sampler_active: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let leaves = self.records.first().map(|r| r.leaf_dists.len()).unwrap_or(0);
        let mut header = String::from("epoch,train_loss,val_loss,eps,lr_leaf,lr_prob,occupancy_entropy,sampler");
        for i in 0..leaves {
            header += &format!(",leaf_dist_{i}");
        }
        for i in 0..leaves {
            header += &format!(",occupancy_{i}");
        }
        writeln!(w, "{header}")?;
        for r in &self.records {
            write!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.epoch, r.train_loss, r.val_loss, r.eps, r.lr_leaf, r.lr_prob, r.occupancy_entropy, r.sampler_active as u8
            )?;
            for d in &r.leaf_dists {
                write!(w, ",{d}")?;
            }
            for c in &r.occupancy {
                write!(w, ",{c}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: TreeModel,
    pub history: History,
    pub leaf_optimizer: OptimizerState,
    pub prob_optimizer: OptimizerState,
    pub warnings: Vec<String>,
}

/// Splits off the validation set with the configured fraction and seed, then trains.
pub fn train_with_split(config: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    if config.val_fraction == 0.0 {
        return train(config, data, None);
    }
    let (tr, val) = data.split(config.val_fraction, config.seed)?;
    train(config, &tr, Some(&val))
}

fn rows(data: &Dataset, pick: impl Fn(&crate::dataset::Pair) -> &[f64]) -> Result<Matrix> {
    Matrix::from_rows(&data.pairs.iter().map(pick).collect::<Vec<_>>())
}

fn gather(m: &Matrix, idx: &[usize]) -> Matrix {
    let c = m.cols();
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        data.extend_from_slice(m.row(i));
    }
    Matrix::from_vec(idx.len(), c, data).expect("non-empty batch")
}

pub fn train(config: &TrainConfig, train_set: &Dataset, val_set: Option<&Dataset>) -> Result<TrainOutcome> {
    let warnings = config.validate()?;
    let layout = config.layout()?;
    if train_set.is_empty() {
        return Err(Error::Invalid("empty dataset".into()));
    }
    let dim = train_set.dim;
    if let Some(v) = val_set {
        if v.dim != dim {
            return Err(Error::Dimension(format!("validation set has dimension {}, training set {dim}", v.dim)));
        }
    }
    let eval_set = val_set.filter(|v| !v.is_empty()).unwrap_or(train_set);
    let net = TreeNet::new(layout.leaf_count(), dim, config.model.hidden, config.model.layers, config.seed)?;
    let mut model = TreeModel::new(layout, net)?;
    let mut leaf_opt =
        OptimizerState::new(config.optimizer, PlateauScheduler::new(config.lr_leaf, config.lr_floor, config.patience));
    let mut prob_opt =
        OptimizerState::new(config.optimizer, PlateauScheduler::new(config.lr_prob, config.lr_floor, config.patience));

    let n = train_set.len();
    let bs = config.batch_size.min(n);
    let xs = rows(train_set, |p| &p.x)?;
    let ys = rows(train_set, |p| &p.y)?;
    let mut assoc = AssociationMatrix::new(layout.leaf_count(), n, bs)?;
    let mut shuffle_rng = rng::seeded(config.seed, rng::stream::SHUFFLE);
    let mut sampler_rng = rng::seeded(config.seed, rng::stream::SAMPLER);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = History::default();

    for epoch in 1..=config.epochs {
        let eps = config.epsilon.at(epoch);
        let (lr_leaf, lr_prob) = (leaf_opt.lr(), prob_opt.lr());
        let sampler_active = config.sampler.enabled && epoch >= config.sampler_start();
        let n_batches = n.div_ceil(bs);
        let (batches, gamma): (Vec<Vec<usize>>, Option<Vec<f64>>) = if sampler_active {
            let q = solve_sample_weights(&conditional_leaf_probs(&assoc), config.sampler.lambda)?;
            let dist = WeightedIndex::new(&q).map_err(|e| Error::Invalid(format!("sample weights: {e}")))?;
            let batches = (0..n_batches).map(|_| (0..bs).map(|_| dist.sample(&mut sampler_rng)).collect()).collect();
            let gamma = q.iter().map(|&qj| if qj > 0.0 { 1.0 / (n as f64 * qj) } else { 0.0 }).collect();
            (batches, Some(gamma))
        } else {
            order.shuffle(&mut shuffle_rng);
            (order.chunks(bs).map(<[usize]>::to_vec).collect(), None)
        };

        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for (bi, batch) in batches.iter().enumerate() {
            let fault = |e: Error| if e.is_numerical() { Error::NonFiniteLoss { epoch, batch: bi } } else { e };
            let scales: Vec<f64> = match &gamma {
                Some(g) => batch.iter().map(|&j| g[j]).collect(),
                None => vec![1.0; batch.len()],
            };
            let step = batch_gradients(&model, &gather(&xs, batch), &gather(&ys, batch), eps, &scales).map_err(fault)?;
            leaf_opt.step(&mut model.net.leaf_net_mut().blocks_mut(), &step.grads.leaf.blocks()).map_err(fault)?;
            if let Some(pg) = &step.grads.prob {
                prob_opt.step(&mut model.net.prob_net_mut().blocks_mut(), &pg.blocks()).map_err(fault)?;
            }
            let assignments: Vec<(usize, usize)> = batch.iter().copied().zip(step.winners.iter().copied()).collect();
            assoc.update(&assignments)?;
            loss_sum += step.losses.iter().sum::<f64>();
            count += batch.len();
        }

        let pass = evaluate_pass(&model, eval_set, eps)
            .map_err(|e| if e.is_numerical() { Error::NonFiniteLoss { epoch, batch: n_batches } } else { e })?;
        if !pass.loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: n_batches });
        }
        leaf_opt.schedule.observe(pass.loss);
        prob_opt.schedule.observe(pass.loss);
        history.records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / count as f64,
            val_loss: pass.loss,
            eps,
            lr_leaf,
            lr_prob,
            occupancy_entropy: pass.entropy(),
            leaf_dists: pass.leaf_dists,
            occupancy: pass.occupancy,
            sampler_active,
        });
    }
    Ok(TrainOutcome { model, history, leaf_optimizer: leaf_opt, prob_optimizer: prob_opt, warnings })
}
