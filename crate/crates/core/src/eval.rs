//! Optimal-path metrics, NLL and tree-to-tree matching.

use std::io::Write;
use std::path::Path;

use crate::clustering::baseline_tree;
use crate::error::{Error, Result};
use crate::gmm::DenoisingTask;
use crate::numerics::matrix::sq_dist;
use crate::rng;
use crate::training::{greedy_path, TreeModel};
use crate::tree::{NodeId, PosteriorTree};

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct PathReport {
    /// Root first, one node per depth.
    pub nodes: Vec<NodeId>,
    /// `|node - x|^2` per depth.
    pub sq_errors: Vec<f64>,
    /// Present when a data range was given.
    pub psnr: Option<Vec<f64>>,
    /// `-ln(max(alpha, floor))` of the path node per depth; zero at the root.
    pub nll: Vec<f64>,
}

/// `10 log10(range^2 * dim / sse)`.
pub fn psnr(sse: f64, range: f64, dim: usize) -> f64 {
    10.0 * (range * range * dim as f64 / sse).log10()
}

fn nll_of(alpha: f64) -> f64 {
    -alpha.max(PROB_FLOOR).ln()
}

/// Greedy descent towards `x`, recording errors and NLL at each depth.
pub fn optimal_path(tree: &PosteriorTree, x: &[f64], range: Option<f64>) -> Result<PathReport> {
    if x.len() != tree.dim() {
        return Err(Error::Dimension(format!("ground truth of dimension {}, tree holds {}", x.len(), tree.dim())));
    }
    let nodes = greedy_path(tree, x);
    let sq_errors: Vec<f64> = nodes.iter().map(|n| sq_dist(tree.value(n.level, n.index), x)).collect();
    let psnr = range.map(|r| sq_errors.iter().map(|&e| psnr(e, r, x.len())).collect());
    let nll = nodes.iter().map(|n| nll_of(tree.prob(n.level, n.index))).collect();
    Ok(PathReport { nodes, sq_errors, psnr, nll })
}

fn check_depth(tree: &PosteriorTree, depth: usize) -> Result<()> {
    if depth == 0 || depth > tree.layout().depth() {
        return Err(Error::OutOfRange(format!("depth {depth} outside 1..={}", tree.layout().depth())));
    }
    Ok(())
}

/// NLL of the optimal-path node at `depth`.
pub fn tree_nll(tree: &PosteriorTree, x: &[f64], depth: usize) -> Result<f64> {
    check_depth(tree, depth)?;
    Ok(optimal_path(tree, x, None)?.nll[depth])
}

/// NLL of the node nearest to `x` among all nodes at `depth`.
pub fn tree_nll_flat(tree: &PosteriorTree, x: &[f64], depth: usize) -> Result<f64> {
    check_depth(tree, depth)?;
    if x.len() != tree.dim() {
        return Err(Error::Dimension("ground truth dimension".into()));
    }
    let mut best = (0, f64::INFINITY);
    for i in 0..tree.layout().level_size(depth) {
        let d = sq_dist(tree.value(depth, i), x);
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(nll_of(tree.prob(depth, best.0)))
}

/// Node correspondence between two trees of the same layout.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeMatch {
    /// `pairs[l]` maps node indices of tree A to tree B at level `l`.
    pub pairs: Vec<Vec<(usize, usize)>>,
    /// Mean Euclidean distance of matched nodes, per level.
    pub level_dist: Vec<f64>,
    /// Mean `|alpha_a - alpha_b|` of matched nodes, per level.
    pub level_prob_gap: Vec<f64>,
    /// Sum of squared distances of all matched non-root pairs.
    pub cost: f64,
}

impl TreeMatch {
    pub fn leaf_dist(&self) -> f64 {
        *self.level_dist.last().expect("at least the root level")
    }

    pub fn leaf_prob_gap(&self) -> f64 {
        *self.level_prob_gap.last().expect("at least the root level")
    }
}

pub const MAX_MATCH_DEGREE: usize = 8;

/// All permutations of `0..k` in lexicographic order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(k), &mut vec![false; k], &mut out);
    out
}

/// Matches the children of every matched pair by the cheapest bijection,
/// starting from the roots.
pub fn match_trees(a: &PosteriorTree, b: &PosteriorTree) -> Result<TreeMatch> {
    if a.layout() != b.layout() || a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "layout mismatch: K={} d={} dim={} vs K={} d={} dim={}",
            a.layout().degree(),
            a.layout().depth(),
            a.dim(),
            b.layout().degree(),
            b.layout().depth(),
            b.dim()
        )));
    }
    let layout = a.layout();
    let k = layout.degree();
    if k > MAX_MATCH_DEGREE {
        return Err(Error::Invalid(format!("exhaustive matching supports K <= {MAX_MATCH_DEGREE}")));
    }
    let perms = permutations(k);
    let mut pairs = vec![vec![(0, 0)]];
    let mut cost = 0.0;
    for level in 1..=layout.depth() {
        let mut next = Vec::with_capacity(layout.level_size(level));
        for &(pa, pb) in &pairs[level - 1] {
            let d: Vec<Vec<f64>> = (0..k)
                .map(|i| (0..k).map(|j| sq_dist(a.value(level, k * pa + i), b.value(level, k * pb + j))).collect())
                .collect();
            let mut best = (0, f64::INFINITY);
            for (pi, p) in perms.iter().enumerate() {
                let c: f64 = p.iter().enumerate().map(|(i, &j)| d[i][j]).sum();
                if c < best.1 {
                    best = (pi, c);
                }
            }
            cost += best.1;
            for (i, &j) in perms[best.0].iter().enumerate() {
                next.push((k * pa + i, k * pb + j));
            }
        }
        pairs.push(next);
    }
    let mut level_dist = Vec::with_capacity(pairs.len());
    let mut level_prob_gap = Vec::with_capacity(pairs.len());
    for (level, ps) in pairs.iter().enumerate() {
        let n = ps.len() as f64;
        level_dist.push(ps.iter().map(|&(i, j)| sq_dist(a.value(level, i), b.value(level, j)).sqrt()).sum::<f64>() / n);
        level_prob_gap.push(ps.iter().map(|&(i, j)| (a.prob(level, i) - b.prob(level, j)).abs()).sum::<f64>() / n);
    }
    Ok(TreeMatch { pairs, level_dist, level_prob_gap, cost })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub y: Vec<f64>,
    /// Distance from the predicted root to the analytic posterior mean.
    pub root_error: f64,
    /// Per level, mean matched centroid distance to the oracle tree.
    pub level_dist: Vec<f64>,
    pub level_prob_gap: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub oracle_samples: usize,
}

fn mean_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn mean_root_error(&self) -> f64 {
        mean_std(self.rows.iter().map(|r| r.root_error)).0
    }

    pub fn mean_leaf_dist(&self) -> f64 {
        mean_std(self.rows.iter().map(|r| *r.level_dist.last().unwrap())).0
    }

    pub fn mean_leaf_prob_gap(&self) -> f64 {
        mean_std(self.rows.iter().map(|r| *r.level_prob_gap.last().unwrap())).0
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let dim = self.rows.first().map(|r| r.y.len()).unwrap_or(0);
        let depth = self.rows.first().map(|r| r.level_dist.len() - 1).unwrap_or(0);
        writeln!(w, "# one row per test input, then mean and std rows")?;
        writeln!(w, "# y_i: measurement; root_error: |root - analytic posterior mean|")?;
        writeln!(w, "# dist_l: mean distance of matched level-l nodes to the oracle tree built from {} posterior samples", self.oracle_samples)?;
        writeln!(w, "# gap_l: mean |alpha - alpha_oracle| of matched level-l nodes")?;
        let mut header = String::from("row");
        (0..dim).for_each(|i| header += &format!(",y_{i}"));
        header += ",root_error";
        (1..=depth).for_each(|l| header += &format!(",dist_{l}"));
        (1..=depth).for_each(|l| header += &format!(",gap_{l}"));
        writeln!(w, "{header}")?;
        let line = |label: String, y: Vec<f64>, root: f64, dist: Vec<f64>, gap: Vec<f64>| {
            let mut s = label;
            for v in y.iter().chain([root].iter()).chain(&dist).chain(&gap) {
                s += &format!(",{v}");
            }
            s
        };
        for (i, r) in self.rows.iter().enumerate() {
            writeln!(w, "{}", line(i.to_string(), r.y.clone(), r.root_error, r.level_dist[1..].to_vec(), r.level_prob_gap[1..].to_vec()))?;
        }
        if !self.rows.is_empty() {
            let column = |f: &dyn Fn(&EvalRow) -> f64| mean_std(self.rows.iter().map(f));
            for (label, pick) in [("mean", 0usize), ("std", 1)] {
                let sel = |p: (f64, f64)| if pick == 0 { p.0 } else { p.1 };
                let y = (0..dim).map(|i| sel(column(&|r| r.y[i]))).collect();
                let root = sel(column(&|r| r.root_error));
                let dist = (1..=depth).map(|l| sel(column(&|r| r.level_dist[l]))).collect();
                let gap = (1..=depth).map(|l| sel(column(&|r| r.level_prob_gap[l]))).collect();
                writeln!(w, "{}", line(label.into(), y, root, dist, gap))?;
            }
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

/// Compares the model's tree at each `y` with the analytic posterior mean and
/// with a hierarchical K-means tree of `oracle_samples` posterior samples.
pub fn evaluate_model(
    model: &TreeModel,
    task: &DenoisingTask,
    test_ys: &[Vec<f64>],
    oracle_samples: usize,
    seed: u64,
    restarts: usize,
) -> Result<EvalReport> {
    if model.dim() != task.dim() {
        return Err(Error::Dimension(format!("model dimension {} but task dimension {}", model.dim(), task.dim())));
    }
    let layout = model.layout;
    let mut rows = Vec::with_capacity(test_ys.len());
    for (i, y) in test_ys.iter().enumerate() {
        let tree = model.tree(y)?;
        let mean = task.posterior_mean(y)?;
        let s = rng::child_seed(seed, i as u64);
        let samples = task.posterior_sample(y, oracle_samples, s)?;
        let oracle = baseline_tree(&samples, layout.degree(), layout.depth(), s, restarts)?;
        let m = match_trees(&tree, &oracle)?;
        rows.push(EvalRow {
            y: y.clone(),
            root_error: sq_dist(tree.root(), &mean).sqrt(),
            level_dist: m.level_dist,
            level_prob_gap: m.level_prob_gap,
        });
    }
    Ok(EvalReport { rows, oracle_samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::TreeLayout;

    fn two_leaves() -> PosteriorTree {
        PosteriorTree::build(&[0.0, 10.0], &[0.5, 0.5], TreeLayout::new(2, 1).unwrap(), 1).unwrap()
    }

    #[test]
    fn path_errors() {
        let r = optimal_path(&two_leaves(), &[0.1], None).unwrap();
        assert!((r.sq_errors[0] - 24.01).abs() < 1e-12);
        assert!((r.sq_errors[1] - 0.01).abs() < 1e-15);
        assert_eq!(r.nodes, vec![NodeId::ROOT, NodeId { level: 1, index: 0 }]);
        assert!(r.psnr.is_none());
        assert!(optimal_path(&two_leaves(), &[0.1, 0.0], None).is_err());
    }

    #[test]
    fn exact_leaf_has_zero_error() {
        let r = optimal_path(&two_leaves(), &[10.0], Some(1.0)).unwrap();
        assert_eq!(r.sq_errors[1], 0.0);
        assert_eq!(r.psnr.unwrap()[1], f64::INFINITY);
    }

    #[test]
    fn psnr_is_decreasing_in_sse() {
        assert!((psnr(1.0, 1.0, 1) - 0.0).abs() < 1e-15);
        assert!((psnr(0.02, 1.0, 2) - 20.0).abs() < 1e-12);
        assert!(psnr(2.0, 1.0, 3) < psnr(1.0, 1.0, 3));
    }

    #[test]
    fn nll_values() {
        let e = std::f64::consts::E;
        let t = PosteriorTree::build(&[0.0, 10.0], &[1.0 / e, 1.0 - 1.0 / e], TreeLayout::new(2, 1).unwrap(), 1).unwrap();
        assert!((tree_nll(&t, &[0.0], 1).unwrap() - 1.0).abs() < 1e-12);
        let t = PosteriorTree::build(&[0.0, 10.0], &[1.0, 0.0], TreeLayout::new(2, 1).unwrap(), 1).unwrap();
        assert_eq!(tree_nll(&t, &[0.0], 1).unwrap(), 0.0);
        assert!((tree_nll(&t, &[10.0], 1).unwrap() - 27.631021115928547).abs() < 1e-12);
        assert!(tree_nll(&t, &[0.0], 0).is_err());
        assert!(tree_nll(&t, &[0.0], 2).is_err());
    }

    #[test]
    fn flat_and_hierarchical_nll_can_differ() {
        // Leaf 2 is nearest overall but lies under the farther level-1 node.
        let leaves = [0.0, 1.0, 4.0, 100.0];
        let t = PosteriorTree::build(&leaves, &[0.1, 0.2, 0.3, 0.4], TreeLayout::new(2, 2).unwrap(), 1).unwrap();
        let x = [3.0];
        assert!((tree_nll(&t, &x, 2).unwrap() + 0.2f64.ln()).abs() < 1e-12);
        assert!((tree_nll_flat(&t, &x, 2).unwrap() + 0.3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn matching_undoes_a_permutation() {
        let layout = TreeLayout::new(3, 1).unwrap();
        let a = PosteriorTree::build(&[0.0, 1.0, 5.0], &[0.2, 0.3, 0.5], layout, 1).unwrap();
        let b = PosteriorTree::build(&[5.0, 0.0, 1.0], &[0.5, 0.2, 0.3], layout, 1).unwrap();
        let m = match_trees(&a, &b).unwrap();
        assert_eq!(m.cost, 0.0);
        assert_eq!(m.level_dist, vec![0.0, 0.0]);
        assert_eq!(m.pairs[1], vec![(0, 1), (1, 2), (2, 0)]);
        let other = PosteriorTree::build(&[0.0, 1.0], &[0.5, 0.5], TreeLayout::new(2, 1).unwrap(), 1).unwrap();
        assert!(match_trees(&a, &other).is_err());
    }

    #[test]
    fn permutation_count() {
        assert_eq!(permutations(1).len(), 1);
        assert_eq!(permutations(4).len(), 24);
        assert_eq!(permutations(3)[1], vec![0, 2, 1]);
    }
}
