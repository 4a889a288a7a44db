//! Occupancy-balancing sampler.
//!
//! An association matrix `A` (leaves x samples) tracks, with momentum, which
//! leaf wins for each training sample. Sample probabilities `q` are chosen so
//! that every leaf receives a similar share of the winners, and the loss of a
//! drawn sample is scaled by `1 / (N q_j)` to keep the objective unbiased.

use crate::error::{Error, Result};
use crate::numerics::linalg::{cholesky, cholesky_solve};
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct AssociationMatrix {
    leaves: usize,
    samples: usize,
    momentum: f64,
    /// Column-major: the column of sample `j` is `data[j * leaves..(j + 1) * leaves]`.
    data: Vec<f64>,
    updates: u64,
}

impl AssociationMatrix {
    /// Zero matrix with momentum `2^(-batch / samples)`.
    pub fn new(leaves: usize, samples: usize, batch: usize) -> Result<Self> {
        if leaves == 0 || samples == 0 || batch == 0 {
            return Err(Error::Invalid("association matrix needs leaves, samples and a batch size".into()));
        }
        let momentum = (-(batch as f64) / samples as f64).exp2();
        Ok(Self { leaves, samples, momentum, data: vec![0.0; leaves * samples], updates: 0 })
    }

    pub fn leaves(&self) -> usize {
        self.leaves
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    /// Number of batch updates applied so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn get(&self, leaf: usize, sample: usize) -> f64 {
        self.data[sample * self.leaves + leaf]
    }

    pub fn column(&self, sample: usize) -> &[f64] {
        &self.data[sample * self.leaves..(sample + 1) * self.leaves]
    }

    /// Blends in one batch of `(sample, winner leaf)` assignments. Columns of
    /// samples outside the batch are untouched; a sample drawn twice is
    /// blended twice.
    pub fn update(&mut self, assignments: &[(usize, usize)]) -> Result<()> {
        for &(j, leaf) in assignments {
            if j >= self.samples || leaf >= self.leaves {
                return Err(Error::OutOfRange(format!("assignment (sample {j}, leaf {leaf})")));
            }
        }
        let mu = self.momentum;
        for &(j, leaf) in assignments {
            let col = &mut self.data[j * self.leaves..(j + 1) * self.leaves];
            col.iter_mut().for_each(|a| *a *= mu);
            col[leaf] += 1.0 - mu;
        }
        self.updates += 1;
        Ok(())
    }
}

pub fn update_association(a: &mut AssociationMatrix, assignments: &[(usize, usize)]) -> Result<()> {
    a.update(assignments)
}

/// `P(leaf | sample)` as a `leaves x samples` matrix; empty columns are uniform.
pub fn conditional_leaf_probs(a: &AssociationMatrix) -> Matrix {
    let (l, n) = (a.leaves, a.samples);
    let mut p = Matrix::zeros(l, n);
    for j in 0..n {
        let col = a.column(j);
        let total: f64 = col.iter().sum();
        for i in 0..l {
            p[(i, j)] = if total > 0.0 { col[i] / total } else { 1.0 / l as f64 };
        }
    }
    p
}

/// Sample probabilities `q ∝ (I - Pᵀ(PPᵀ + λI)⁻¹P) 1`, negatives clipped.
pub fn solve_sample_weights(p: &Matrix, lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Invalid(format!("lambda must be positive, got {lambda}")));
    }
    let (l, n) = (p.rows(), p.cols());
    let mut gram = Matrix::zeros(l, l);
    for a in 0..l {
        for b in 0..=a {
            let s: f64 = p.row(a).iter().zip(p.row(b)).map(|(u, v)| u * v).sum();
            gram[(a, b)] = s;
            gram[(b, a)] = s;
        }
        gram[(a, a)] += lambda;
    }
    let factor = cholesky(&gram)?;
    let mut z: Vec<f64> = (0..l).map(|i| p.row(i).iter().sum()).collect();
    cholesky_solve(&factor, &mut z);
    let mut q = vec![1.0; n];
    for (i, zi) in z.iter().enumerate() {
        for (qj, pij) in q.iter_mut().zip(p.row(i)) {
            *qj -= pij * zi;
        }
    }
    let total: f64 = q.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::NonFinite("sample weights".into()));
    }
    q.iter_mut().for_each(|v| *v = (*v / total).max(0.0));
    let total: f64 = q.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NonFinite("sample weights".into()));
    }
    q.iter_mut().for_each(|v| *v /= total);
    Ok(q)
}

/// Loss scale `1 / (N q_j)` for a sample drawn with probability `q_j`.
pub fn loss_reweight(q: &[f64], n: usize, j: usize) -> Result<f64> {
    let qj = *q.get(j).ok_or_else(|| Error::OutOfRange(format!("sample {j}")))?;
    if !(qj > 0.0) {
        return Err(Error::Invalid(format!("sample {j} has zero probability")));
    }
    Ok(1.0 / (n as f64 * qj))
}
