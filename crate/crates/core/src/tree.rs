//! Posterior trees: a full `K`-ary tree of depth `d` whose nodes carry a
//! value and a probability.
//!
//! Only the `K^d` leaves are free. Every internal node is composed from its
//! children: its probability is the sum of theirs and its value is their
//! probability-weighted mean, so the root is the mean of all leaves under the
//! leaf distribution. Levels are stored as flat arrays; child `j` of node `i`
//! at level `ℓ` is node `K i + j` at level `ℓ + 1`.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Children whose total probability is below this are averaged uniformly.
pub const ZERO_MASS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TreeLayout {
    degree: usize,
    depth: usize,
}

impl TreeLayout {
    pub const MAX_LEAVES: usize = 4096;

    pub fn new(degree: usize, depth: usize) -> Result<Self> {
        if degree == 0 || depth == 0 {
            return Err(Error::Invalid(format!("tree degree {degree} and depth {depth} must be positive")));
        }
        let leaves = (degree as u128).checked_pow(depth as u32).unwrap_or(u128::MAX);
        if leaves > Self::MAX_LEAVES as u128 {
            return Err(Error::Invalid(format!(
                "degree {degree}, depth {depth} gives {leaves} leaves, more than {}",
                Self::MAX_LEAVES
            )));
        }
        Ok(Self { degree, depth })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn level_size(&self, level: usize) -> usize {
        self.degree.pow(level as u32)
    }

    pub fn leaf_count(&self) -> usize {
        self.level_size(self.depth)
    }

    pub fn node_count(&self) -> usize {
        (0..=self.depth).map(|l| self.level_size(l)).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId {
    pub level: usize,
    pub index: usize,
}

impl NodeId {
    pub const ROOT: NodeId = NodeId { level: 0, index: 0 };
}

/// Value and probability of a parent from its children.
///
/// `child_values` holds the children back to back, `dim` entries each.
pub fn compose_parent(child_values: &[f64], child_probs: &[f64], dim: usize) -> Result<(Vec<f64>, f64)> {
    let k = child_probs.len();
    if k == 0 || child_values.len() != k * dim {
        return Err(Error::Dimension(format!("{} values for {k} children of dimension {dim}", child_values.len())));
    }
    if child_values.iter().chain(child_probs).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("child values or probabilities".into()));
    }
    if child_probs.iter().any(|p| *p < 0.0) {
        return Err(Error::Invalid("negative child probability".into()));
    }
    let mut value = vec![0.0; dim];
    let prob = compose_into(child_values, child_probs, dim, &mut value);
    Ok((value, prob))
}

fn compose_into(child_values: &[f64], child_probs: &[f64], dim: usize, out: &mut [f64]) -> f64 {
    let total: f64 = child_probs.iter().sum();
    out.iter_mut().for_each(|v| *v = 0.0);
    if total < ZERO_MASS {
        let w = 1.0 / child_probs.len() as f64;
        for child in child_values.chunks(dim) {
            for (o, c) in out.iter_mut().zip(child) {
                *o += w * c;
            }
        }
    } else {
        for (child, p) in child_values.chunks(dim).zip(child_probs) {
            for (o, c) in out.iter_mut().zip(child) {
                *o += p * c;
            }
        }
        out.iter_mut().for_each(|v| *v /= total);
    }
    total
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorTree {
    layout: TreeLayout,
    dim: usize,
    /// `values[ℓ]` holds the `K^ℓ` node values of level `ℓ` back to back.
    values: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
}

impl PosteriorTree {
    /// Composes the full tree from `K^d` leaves (flat, `dim` entries each).
    pub fn build(leaves: &[f64], leaf_probs: &[f64], layout: TreeLayout, dim: usize) -> Result<Self> {
        let n = layout.leaf_count();
        if dim == 0 || leaf_probs.len() != n || leaves.len() != n * dim {
            return Err(Error::Dimension(format!(
                "layout needs {n} leaves of dimension {dim}, got {} values and {} probabilities",
                leaves.len(),
                leaf_probs.len()
            )));
        }
        if leaves.iter().chain(leaf_probs).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tree leaves".into()));
        }
        if leaf_probs.iter().any(|p| !(0.0..=1.0 + 1e-12).contains(p)) {
            return Err(Error::Invalid("leaf probabilities must lie in [0, 1]".into()));
        }
        let total: f64 = leaf_probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("leaf probabilities sum to {total}")));
        }
        Ok(Self::compose(leaves.to_vec(), leaf_probs.to_vec(), layout, dim))
    }

    pub fn from_leaf_rows(leaves: &[Vec<f64>], leaf_probs: &[f64], layout: TreeLayout) -> Result<Self> {
        let dim = leaves.first().map(|l| l.len()).unwrap_or(0);
        if leaves.iter().any(|l| l.len() != dim) {
            return Err(Error::Dimension("leaves of differing dimension".into()));
        }
        Self::build(&leaves.concat(), leaf_probs, layout, dim)
    }

    fn compose(leaves: Vec<f64>, leaf_probs: Vec<f64>, layout: TreeLayout, dim: usize) -> Self {
        let depth = layout.depth();
        let k = layout.degree();
        let mut values = vec![Vec::new(); depth + 1];
        let mut probs = vec![Vec::new(); depth + 1];
        values[depth] = leaves;
        probs[depth] = leaf_probs;
        for level in (0..depth).rev() {
            let size = layout.level_size(level);
            let mut v = vec![0.0; size * dim];
            let mut p = vec![0.0; size];
            let (cv, cp) = (&values[level + 1], &probs[level + 1]);
            for i in 0..size {
                p[i] = compose_into(
                    &cv[i * k * dim..(i + 1) * k * dim],
                    &cp[i * k..(i + 1) * k],
                    dim,
                    &mut v[i * dim..(i + 1) * dim],
                );
            }
            values[level] = v;
            probs[level] = p;
        }
        Self { layout, dim, values, probs }
    }

    pub fn layout(&self) -> TreeLayout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root(&self) -> &[f64] {
        &self.values[0]
    }

    pub fn leaves(&self) -> &[f64] {
        &self.values[self.layout.depth()]
    }

    pub fn leaf_probs(&self) -> &[f64] {
        &self.probs[self.layout.depth()]
    }

    pub fn level_values(&self, level: usize) -> &[f64] {
        &self.values[level]
    }

    pub fn level_probs(&self, level: usize) -> &[f64] {
        &self.probs[level]
    }

    /// Unchecked accessors for hot loops.
    #[inline]
    pub fn value(&self, level: usize, index: usize) -> &[f64] {
        &self.values[level][index * self.dim..(index + 1) * self.dim]
    }

    #[inline]
    pub fn prob(&self, level: usize, index: usize) -> f64 {
        self.probs[level][index]
    }

    fn check(&self, level: usize, index: usize) -> Result<()> {
        if level > self.layout.depth() || index >= self.layout.level_size(level) {
            return Err(Error::OutOfRange(format!("node ({level}, {index})")));
        }
        Ok(())
    }

    pub fn node(&self, level: usize, index: usize) -> Result<(&[f64], f64)> {
        self.check(level, index)?;
        Ok((self.value(level, index), self.prob(level, index)))
    }

    pub fn children(&self, level: usize, index: usize) -> Result<Vec<NodeId>> {
        self.check(level, index)?;
        if level == self.layout.depth() {
            return Err(Error::OutOfRange(format!("node ({level}, {index}) is a leaf")));
        }
        let k = self.layout.degree();
        Ok((0..k).map(|j| NodeId { level: level + 1, index: k * index + j }).collect())
    }

    pub fn parent(&self, level: usize, index: usize) -> Result<NodeId> {
        self.check(level, index)?;
        if level == 0 {
            return Err(Error::OutOfRange("the root has no parent".into()));
        }
        Ok(NodeId { level: level - 1, index: index / self.layout.degree() })
    }

    /// `P(child q | parent)` for each child of the node.
    pub fn conditional_child_probs(&self, level: usize, index: usize) -> Result<Vec<f64>> {
        let kids = self.children(level, index)?;
        let parent = self.prob(level, index);
        if !(parent > 0.0) {
            return Err(Error::UndefinedConditional { level, index });
        }
        let mut out: Vec<f64> = kids.iter().map(|c| self.prob(c.level, c.index) / parent).collect();
        let s: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= s);
        Ok(out)
    }

    /// Indices of the leaves below a node.
    pub fn descendant_leaves(&self, level: usize, index: usize) -> std::ops::Range<usize> {
        let span = self.layout.level_size(self.layout.depth() - level);
        index * span..(index + 1) * span
    }

    /// Checks conservation and weighted-mean composition at `tol`.
    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if (self.prob(0, 0) - 1.0).abs() > tol {
            return bad(format!("root probability {}", self.prob(0, 0)));
        }
        if self.leaf_probs().iter().any(|p| !(-tol..=1.0 + tol).contains(p)) {
            return bad("leaf probability outside [0, 1]".into());
        }
        let k = self.layout.degree();
        for level in 0..self.layout.depth() {
            let level_total: f64 = self.probs[level].iter().sum();
            if (level_total - 1.0).abs() > tol {
                return bad(format!("level {level} probabilities sum to {level_total}"));
            }
            for i in 0..self.layout.level_size(level) {
                let kids = k * i..k * (i + 1);
                let cp = &self.probs[level + 1][kids.clone()];
                let total: f64 = cp.iter().sum();
                if (self.prob(level, i) - total).abs() > tol {
                    return bad(format!("node ({level}, {i}) probability is not the sum of its children"));
                }
                let cv = &self.values[level + 1][kids.start * self.dim..kids.end * self.dim];
                let mut want = vec![0.0; self.dim];
                compose_into(cv, cp, self.dim, &mut want);
                for (a, b) in self.value(level, i).iter().zip(&want) {
                    if (a - b).abs() > tol * (1.0 + b.abs()) {
                        return bad(format!("node ({level}, {i}) value is not the weighted mean of its children"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Reverse pass through the composition.
    ///
    /// `node_grads[ℓ]` is `dL/d(value)` for every node of level `ℓ` holding the
    /// loss's direct dependence on it. Returns `dL/d(leaf values)` and
    /// `dL/d(leaf probabilities)` with the composition chained in.
    pub fn backward(&self, node_grads: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let depth = self.layout.depth();
        let k = self.layout.degree();
        let dim = self.dim;
        assert_eq!(node_grads.len(), depth + 1, "one gradient array per level");
        let mut gv = node_grads[0].clone();
        let mut ga = vec![0.0; 1];
        for level in 0..depth {
            let size = self.layout.level_size(level);
            let mut next_v = node_grads[level + 1].clone();
            let mut next_a = vec![0.0; size * k];
            for i in 0..size {
                let g = &gv[i * dim..(i + 1) * dim];
                let total = self.prob(level, i);
                let parent = self.value(level, i);
                for j in 0..k {
                    let c = k * i + j;
                    let child = self.value(level + 1, c);
                    let slot = &mut next_v[c * dim..(c + 1) * dim];
                    if total < ZERO_MASS {
                        let w = 1.0 / k as f64;
                        slot.iter_mut().zip(g).for_each(|(s, gi)| *s += w * gi);
                    } else {
                        let w = self.prob(level + 1, c) / total;
                        slot.iter_mut().zip(g).for_each(|(s, gi)| *s += w * gi);
                        let shift: f64 = g.iter().zip(child.iter().zip(parent)).map(|(gi, (cv, pv))| gi * (cv - pv)).sum();
                        next_a[c] += shift / total;
                    }
                    next_a[c] += ga[i];
                }
            }
            gv = next_v;
            ga = next_a;
        }
        (gv, ga)
    }

    pub fn to_text(&self, manifest: Option<&str>) -> String {
        let mut s = String::from("# ptree-tree v1\n");
        if let Some(m) = manifest {
            let _ = writeln!(s, "# manifest {m}");
        }
        let _ = writeln!(s, "layout K={} d={} dim={}", self.layout.degree(), self.layout.depth(), self.dim);
        for level in 0..=self.layout.depth() {
            let _ = writeln!(s, "level {level}");
            for i in 0..self.layout.level_size(level) {
                let _ = write!(s, "p={:.16e} v=", self.prob(level, i));
                for (j, v) in self.value(level, i).iter().enumerate() {
                    let sep = if j == 0 { "" } else { "," };
                    let _ = write!(s, "{sep}{v:.16e}");
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn save(&self, path: &Path, manifest: Option<&str>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_text(manifest).as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, path)
    }

    /// Parses the text format. The stored internal nodes must agree with the
    /// composition of the stored leaves.
    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let err = |m: String| Error::parse(origin, m);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let head = lines.next().ok_or_else(|| err("empty tree file".into()))?;
        let fields: Vec<&str> = head.split_whitespace().collect();
        let get = |key: &str| -> Result<usize> {
            fields
                .iter()
                .find_map(|f| f.strip_prefix(key))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| err(format!("layout line lacks {key}")))
        };
        if fields.first() != Some(&"layout") {
            return Err(err("expected a layout line".into()));
        }
        let layout = TreeLayout::new(get("K=")?, get("d=")?)?;
        let dim = get("dim=")?;
        let mut values = Vec::new();
        let mut probs = Vec::new();
        for level in 0..=layout.depth() {
            let tag = lines.next().ok_or_else(|| err(format!("missing level {level}")))?;
            if tag.trim() != format!("level {level}") {
                return Err(err(format!("expected 'level {level}', found {tag:?}")));
            }
            let mut v = Vec::new();
            let mut p = Vec::new();
            for i in 0..layout.level_size(level) {
                let line = lines.next().ok_or_else(|| err(format!("level {level} is missing node {i}")))?;
                let (pp, vv) = line
                    .trim()
                    .strip_prefix("p=")
                    .and_then(|r| r.split_once(" v="))
                    .ok_or_else(|| err(format!("malformed node line {line:?}")))?;
                p.push(pp.parse::<f64>().map_err(|e| err(format!("{e} in {line:?}")))?);
                let parsed: Vec<f64> =
                    vv.split(',').map(str::parse).collect::<std::result::Result<_, _>>().map_err(|e| err(format!("{e} in {line:?}")))?;
                if parsed.len() != dim {
                    return Err(err(format!("node ({level}, {i}) has {} coordinates", parsed.len())));
                }
                v.extend(parsed);
            }
            values.push(v);
            probs.push(p);
        }
        let tree = Self { layout, dim, values, probs };
        tree.check_invariants(1e-9).map_err(|e| err(e.to_string()))?;
        Ok(tree)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(k: usize, d: usize) -> TreeLayout {
        TreeLayout::new(k, d).unwrap()
    }

    #[test]
    fn layout_guards() {
        assert!(TreeLayout::new(0, 2).is_err());
        assert!(TreeLayout::new(2, 0).is_err());
        assert!(TreeLayout::new(2, 13).is_err());
        assert!(TreeLayout::new(4096, 1).is_ok());
        assert_eq!(layout(3, 2).node_count(), 13);
        assert_eq!(layout(1, 1).leaf_count(), 1);
    }

    #[test]
    fn compose_parent_examples() {
        let (v, p) = compose_parent(&[1.0, 3.0], &[0.25, 0.75], 1).unwrap();
        assert_eq!((v, p), (vec![2.5], 1.0));
        let (v, _) = compose_parent(&[1.0, 2.0, 7.0, 9.0], &[0.0, 0.4], 2).unwrap();
        assert_eq!(v, vec![7.0, 9.0]);
        let (v, p) = compose_parent(&[1.0, 3.0, 8.0], &[0.0, 0.0, 0.0], 1).unwrap();
        assert_eq!((v, p), (vec![4.0], 0.0));
        assert!(compose_parent(&[f64::NAN, 1.0], &[0.5, 0.5], 1).is_err());
        assert!(compose_parent(&[1.0], &[0.5, 0.5], 1).is_err());
    }

    #[test]
    fn small_tree_example() {
        let t = PosteriorTree::build(&[0.0, 2.0, 4.0, 6.0], &[0.25; 4], layout(2, 2), 1).unwrap();
        assert_eq!(t.root(), &[3.0]);
        assert_eq!(t.level_values(1), &[1.0, 5.0]);
        assert_eq!(t.level_probs(1), &[0.5, 0.5]);
        t.check_invariants(1e-12).unwrap();
    }

    #[test]
    fn build_rejects_bad_input() {
        assert!(PosteriorTree::build(&[0.0, 1.0], &[0.5, 0.5], layout(2, 2), 1).is_err());
        assert!(PosteriorTree::build(&[0.0, 1.0], &[0.5, 0.6], layout(2, 1), 1).is_err());
        assert!(PosteriorTree::build(&[0.0, f64::INFINITY], &[0.5, 0.5], layout(2, 1), 1).is_err());
    }

    #[test]
    fn navigation() {
        let t = PosteriorTree::build(&[0.0; 9], &[1.0 / 9.0; 9], layout(3, 2), 1).unwrap();
        let kids = t.children(0, 0).unwrap();
        assert_eq!(kids.iter().map(|n| (n.level, n.index)).collect::<Vec<_>>(), vec![(1, 0), (1, 1), (1, 2)]);
        assert_eq!(t.parent(2, 4).unwrap(), NodeId { level: 1, index: 1 });
        for level in 0..2 {
            for i in 0..t.layout().level_size(level) {
                for c in t.children(level, i).unwrap() {
                    assert_eq!(t.parent(c.level, c.index).unwrap(), NodeId { level, index: i });
                }
            }
        }
        assert!(t.node(1, 3).is_err());
        assert!(t.children(2, 0).is_err());
        assert!(t.parent(0, 0).is_err());
    }

    #[test]
    fn conditional_probabilities() {
        let probs = [0.1, 0.3, 0.1, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0];
        let t = PosteriorTree::build(&[0.0; 9], &probs, layout(3, 2), 1).unwrap();
        let c = t.conditional_child_probs(1, 0).unwrap();
        for (a, b) in c.iter().zip([0.2, 0.6, 0.2]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(t.conditional_child_probs(1, 1).unwrap(), vec![1.0, 0.0, 0.0]);
        assert!(matches!(t.conditional_child_probs(1, 2), Err(Error::UndefinedConditional { level: 1, index: 2 })));
    }

    #[test]
    fn backward_matches_finite_differences() {
        // L = Σ over nodes of c_n · value_n with fixed random weights c_n.
        let lay = layout(2, 2);
        let leaves = [0.3, -1.0, 2.0, 0.5, -0.7, 1.1, 0.9, 0.2];
        let probs = [0.1, 0.2, 0.3, 0.4];
        let weights: Vec<Vec<f64>> = (0..=2)
            .map(|l| (0..lay.level_size(l) * 2).map(|i| ((i + 3 * l) as f64 * 0.37).sin()).collect())
            .collect();
        let loss = |lv: &[f64], lp: &[f64]| {
            let t = PosteriorTree::compose(lv.to_vec(), lp.to_vec(), lay, 2);
            (0..=2).map(|l| t.level_values(l).iter().zip(&weights[l]).map(|(a, b)| a * b).sum::<f64>()).sum::<f64>()
        };
        let t = PosteriorTree::build(&leaves, &probs, lay, 2).unwrap();
        let (gv, ga) = t.backward(&weights);
        let h = 1e-6;
        for i in 0..leaves.len() {
            let (mut a, mut b) = (leaves, leaves);
            a[i] += h;
            b[i] -= h;
            let fd = (loss(&a, &probs) - loss(&b, &probs)) / (2.0 * h);
            assert!((fd - gv[i]).abs() < 1e-8, "value {i}: {fd} vs {}", gv[i]);
        }
        for i in 0..probs.len() {
            let (mut a, mut b) = (probs, probs);
            a[i] += h;
            b[i] -= h;
            let fd = (loss(&leaves, &a) - loss(&leaves, &b)) / (2.0 * h);
            assert!((fd - ga[i]).abs() < 1e-8, "prob {i}: {fd} vs {}", ga[i]);
        }
    }

    #[test]
    fn text_roundtrip_is_exact() {
        let t = PosteriorTree::build(&[0.1, 1.0 / 3.0, -2.0, 7.5, 1e-7, 3.0], &[0.2, 0.3, 0.5], layout(3, 1), 2).unwrap();
        let text = t.to_text(Some("cafe"));
        assert!(text.contains("# manifest cafe"));
        let back = PosteriorTree::from_text(&text, Path::new("mem")).unwrap();
        assert_eq!(back, t);
        let broken = text.replace("level 1", "level 2");
        assert!(PosteriorTree::from_text(&broken, Path::new("mem")).is_err());
    }
}
