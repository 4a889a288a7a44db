//! K-means (K-means++ seeding, Lloyd iterations, best of several restarts),
//! hierarchical K-means and the sample-based baseline posterior tree.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numerics::matrix::sq_dist;
use crate::rng::{self, Rng};
use crate::tree::{PosteriorTree, TreeLayout};

pub const MAX_ITERATIONS: usize = 300;
pub const DEFAULT_RESTARTS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    /// Cluster id of every point.
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances of points to their centroid.
    pub objective: f64,
    /// Objective after every Lloyd iteration of the selected run.
    pub trace: Vec<f64>,
    /// Restart that produced this partition.
    pub restart: usize,
}

impl Partition {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k()];
        for &a in &self.assignment {
            s[a] += 1;
        }
        s
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignment.iter().enumerate().filter(|(_, &a)| a == cluster).map(|(i, _)| i).collect()
    }
}

fn validate_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points.first().map(|p| p.len()).ok_or_else(|| Error::Invalid("empty point set".into()))?;
    if dim == 0 {
        return Err(Error::Dimension("zero-dimensional points".into()));
    }
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::Dimension(format!("point {i} has dimension {}, expected {dim}", p.len())));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("point {i}")));
        }
    }
    Ok(dim)
}

/// Nearest centroid, ties to the lowest index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.iter().enumerate() {
        let d = sq_dist(point, mu);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn centroids_of(points: &[Vec<f64>], assignment: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignment) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, c) in sums.iter_mut().zip(&counts) {
        let c = *c as f64;
        s.iter_mut().for_each(|v| *v /= c);
    }
    sums
}

fn objective(points: &[Vec<f64>], assignment: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points.iter().zip(assignment).map(|(p, &a)| sq_dist(p, &centroids[a])).sum()
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(points: &[Vec<f64>], assignment: &mut [usize], dist: &mut [f64], k: usize) {
    let mut counts = vec![0usize; k];
    for &a in assignment.iter() {
        counts[a] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let mut far = None;
        for i in 0..points.len() {
            if counts[assignment[i]] > 1 && far.is_none_or(|f: usize| dist[i] > dist[f]) {
                far = Some(i);
            }
        }
        let i = far.expect("at least k points");
        counts[assignment[i]] -= 1;
        counts[c] = 1;
        assignment[i] = c;
        dist[i] = 0.0;
    }
}

fn lloyd(points: &[Vec<f64>], k: usize, dim: usize, rng: &mut Rng) -> (Vec<usize>, Vec<Vec<f64>>, Vec<f64>) {
    let mut centroids = plus_plus_init(points, k, rng);
    let mut assignment: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let (mut next, mut dist): (Vec<usize>, Vec<f64>) = points.iter().map(|p| nearest(p, &centroids)).unzip();
        repair_empty(points, &mut next, &mut dist, k);
        let changed = next != assignment;
        assignment = next;
        centroids = centroids_of(points, &assignment, k, dim);
        trace.push(objective(points, &assignment, &centroids));
        if !changed {
            break;
        }
    }
    (assignment, centroids, trace)
}

/// Best of `restarts` K-means++ initialised Lloyd runs.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> Result<Partition> {
    let dim = validate_points(points)?;
    if k == 0 {
        return Err(Error::Invalid("K must be positive".into()));
    }
    if points.len() < k {
        return Err(Error::Invalid(format!("{} points cannot form {k} clusters", points.len())));
    }
    let mut best: Option<Partition> = None;
    for r in 0..restarts.max(1) {
        let mut rng = rng::seeded(rng::child_seed(seed, r as u64), rng::stream::KMEANS);
        let (assignment, centroids, trace) = lloyd(points, k, dim, &mut rng);
        let obj = *trace.last().expect("at least one iteration");
        if best.as_ref().is_none_or(|b| obj < b.objective) {
            best = Some(Partition { assignment, centroids, objective: obj, trace, restart: r });
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    /// Indices into the clustered point set.
    pub members: Vec<usize>,
    pub centroid: Vec<f64>,
}

/// Nested clusters laid out like a [`PosteriorTree`]; `None` marks children of
/// a cluster too small to split.
#[derive(Clone, Debug, PartialEq)]
pub struct HierarchicalPartition {
    pub layout: TreeLayout,
    pub total: usize,
    pub levels: Vec<Vec<Option<Cluster>>>,
}

impl HierarchicalPartition {
    /// Number of real clusters per level.
    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.iter().filter(|c| c.is_some()).count()).collect()
    }

    /// Checks that every cluster is a subset of its parent and that siblings
    /// partition their parent.
    pub fn check_nesting(&self) -> Result<()> {
        let k = self.layout.degree();
        for level in 0..self.layout.depth() {
            for (i, parent) in self.levels[level].iter().enumerate() {
                let kids: Vec<&Cluster> = self.levels[level + 1][k * i..k * (i + 1)].iter().flatten().collect();
                match parent {
                    None if !kids.is_empty() => {
                        return Err(Error::Invalid(format!("node ({level}, {i}) is padding but has clusters below")))
                    }
                    None => {}
                    Some(_) if kids.is_empty() => {}
                    Some(p) => {
                        let mut union: Vec<usize> = kids.iter().flat_map(|c| c.members.iter().copied()).collect();
                        union.sort_unstable();
                        let mut own = p.members.clone();
                        own.sort_unstable();
                        if union != own {
                            return Err(Error::Invalid(format!("children of ({level}, {i}) do not partition it")));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Tree whose nodes are centroids weighted by cluster fraction. Unsplit
    /// branches repeat their centroid and share its probability evenly.
    pub fn to_tree(&self) -> Result<PosteriorTree> {
        let depth = self.layout.depth();
        let k = self.layout.degree();
        let n = self.total as f64;
        let mut leaves = Vec::with_capacity(self.layout.leaf_count());
        let mut probs = Vec::with_capacity(self.layout.leaf_count());
        for leaf in 0..self.layout.leaf_count() {
            let (mut level, mut index) = (depth, leaf);
            while self.levels[level][index].is_none() {
                level -= 1;
                index /= k;
            }
            let c = self.levels[level][index].as_ref().expect("root is always a cluster");
            let share = self.layout.level_size(depth - level) as f64;
            leaves.push(c.centroid.clone());
            probs.push(c.members.len() as f64 / n / share);
        }
        PosteriorTree::from_leaf_rows(&leaves, &probs, self.layout)
    }
}

/// Splits every cluster into `k` sub-clusters, `depth` times.
pub fn hierarchical_kmeans(points: &[Vec<f64>], k: usize, depth: usize, seed: u64, restarts: usize) -> Result<HierarchicalPartition> {
    let dim = validate_points(points)?;
    let layout = TreeLayout::new(k, depth)?;
    let all: Vec<usize> = (0..points.len()).collect();
    let root = Cluster { centroid: centroids_of(points, &vec![0; points.len()], 1, dim).remove(0), members: all };
    let mut levels = vec![vec![Some(root)]];
    for level in 0..depth {
        let mut next = vec![None; layout.level_size(level + 1)];
        for (i, node) in levels[level].iter().enumerate() {
            let Some(cluster) = node else { continue };
            if cluster.members.len() < k {
                continue;
            }
            let subset: Vec<Vec<f64>> = cluster.members.iter().map(|&m| points[m].clone()).collect();
            let flat = layout.level_size(level) - 1 + i;
            let node_seed = if flat == 0 { seed } else { rng::child_seed(seed, flat as u64) };
            let part = kmeans(&subset, k, node_seed, restarts)?;
            for j in 0..k {
                let members = part.members(j).into_iter().map(|m| cluster.members[m]).collect();
                next[k * i + j] = Some(Cluster { members, centroid: part.centroids[j].clone() });
            }
        }
        levels.push(next);
    }
    Ok(HierarchicalPartition { layout, total: points.len(), levels })
}

/// Hierarchical K-means over posterior samples turned into a posterior tree.
pub fn baseline_tree(samples: &[Vec<f64>], k: usize, depth: usize, seed: u64, restarts: usize) -> Result<PosteriorTree> {
    if samples.is_empty() {
        return Err(Error::Invalid("empty sample set".into()));
    }
    hierarchical_kmeans(samples, k, depth, seed, restarts)?.to_tree()
}
