//! Gaussian-mixture priors and the analytic posterior of `y = x + n`,
//! `n ~ N(0, σ² I)`.
//!
//! With prior `Σ_ℓ π_ℓ N(μ_ℓ, Σ_ℓ)` the posterior is again a mixture with
//!
//! ```text
//! w_ℓ ∝ π_ℓ N(y; μ_ℓ, Σ_ℓ + σ² I)
//! μ̃_ℓ = μ_ℓ + Σ_ℓ (Σ_ℓ + σ² I)⁻¹ (y - μ_ℓ)
//! Σ̃_ℓ = Σ_ℓ - Σ_ℓ (Σ_ℓ + σ² I)⁻¹ Σ_ℓ
//! ```

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Pair;
use crate::error::{Error, Result};
use crate::numerics::linalg::{cholesky, cholesky_solve, forward_substitute, log_det_from_cholesky};
use crate::numerics::Matrix;
use crate::rng::{self, Rng};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureRecord", into = "MixtureRecord")]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Matrix>,
    #[serde(skip)]
    factors: Vec<Matrix>,
}

#[derive(Serialize, Deserialize)]
struct MixtureRecord {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<MixtureRecord> for GaussianMixture {
    type Error = Error;
    fn try_from(r: MixtureRecord) -> Result<Self> {
        let covs = r.covariances.iter().map(|c| Matrix::from_rows(c)).collect::<Result<Vec<_>>>()?;
        GaussianMixture::new(r.weights, r.means, covs)
    }
}

impl From<GaussianMixture> for MixtureRecord {
    fn from(g: GaussianMixture) -> Self {
        let covariances = g
            .covariances
            .iter()
            .map(|c| (0..c.rows()).map(|i| c.row(i).to_vec()).collect())
            .collect();
        MixtureRecord { weights: g.weights, means: g.means, covariances }
    }
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Matrix>) -> Result<Self> {
        let n = weights.len();
        if n == 0 || means.len() != n || covariances.len() != n {
            return Err(Error::Dimension(format!(
                "{} weights, {} means, {} covariances",
                n,
                means.len(),
                covariances.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Invalid("mixture weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!("mixture weights sum to {total}, not 1")));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::Dimension("zero-dimensional mixture".into()));
        }
        let mut factors = Vec::with_capacity(n);
        for (l, (mu, cov)) in means.iter().zip(&covariances).enumerate() {
            if mu.len() != dim || cov.rows() != dim || cov.cols() != dim {
                return Err(Error::Dimension(format!("component {l} does not have dimension {dim}")));
            }
            if mu.iter().any(|v| !v.is_finite()) || !cov.is_finite() {
                return Err(Error::NonFinite(format!("component {l}")));
            }
            for i in 0..dim {
                for j in 0..i {
                    if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * (1.0 + cov[(i, j)].abs()) {
                        return Err(Error::Invalid(format!("covariance {l} is not symmetric")));
                    }
                }
            }
            factors.push(cholesky(cov)?);
        }
        Ok(Self { weights, means, covariances, factors })
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[Matrix] {
        &self.covariances
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            for (acc, v) in m.iter_mut().zip(mu) {
                *acc += w * v;
            }
        }
        m
    }

    /// Per-coordinate variance of the mixture (diagonal of its covariance).
    pub fn marginal_variances(&self) -> Vec<f64> {
        let mean = self.mean();
        (0..self.dim())
            .map(|i| {
                self.weights
                    .iter()
                    .zip(&self.means)
                    .zip(&self.covariances)
                    .map(|((w, mu), c)| w * (c[(i, i)] + (mu[i] - mean[i]).powi(2)))
                    .sum()
            })
            .collect()
    }

    fn component_log_density(&self, l: usize, x: &[f64]) -> f64 {
        gaussian_log_density(x, &self.means[l], &self.factors[l])
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.len())
            .filter(|&l| self.weights[l] > 0.0)
            .map(|l| self.weights[l].ln() + self.component_log_density(l, x))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }

    fn sample_component(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (l, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return l;
            }
        }
        self.weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }

    /// Draws one point and reports the component it came from.
    pub fn sample_one(&self, rng: &mut Rng) -> (Vec<f64>, usize) {
        let l = self.sample_component(rng);
        let z: Vec<f64> = (0..self.dim()).map(|_| StandardNormal.sample(rng)).collect();
        let f = &self.factors[l];
        let x = (0..self.dim())
            .map(|i| self.means[l][i] + (0..=i).map(|k| f[(i, k)] * z[k]).sum::<f64>())
            .collect();
        (x, l)
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample_one(rng).0).collect()
    }
}

fn gaussian_log_density(x: &[f64], mean: &[f64], factor: &Matrix) -> f64 {
    let mut z: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    forward_substitute(factor, &mut z);
    let quad: f64 = z.iter().map(|v| v * v).sum();
    -0.5 * (quad + log_det_from_cholesky(factor) + x.len() as f64 * LN_2PI)
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Four equally weighted unit-covariance components in a rhombus layout.
pub fn default_rhombus_prior() -> GaussianMixture {
    let means = vec![vec![-6.0, 2.5], vec![1.0, 2.5], vec![-2.5, 6.0], vec![-2.5, -1.5]];
    GaussianMixture::new(vec![0.25; 4], means, vec![Matrix::identity(2); 4]).expect("valid built-in prior")
}

/// Denoising with additive white Gaussian noise of standard deviation `noise_std`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoisingTask {
    pub prior: GaussianMixture,
    noise_std: f64,
    pub seed: u64,
}

impl DenoisingTask {
    pub const DEFAULT_NOISE_STD: f64 = 1.0;

    pub fn new(prior: GaussianMixture, noise_std: f64, seed: u64) -> Result<Self> {
        if !noise_std.is_finite() || noise_std < 0.0 {
            return Err(Error::Invalid(format!("noise standard deviation {noise_std} must be finite and >= 0")));
        }
        Ok(Self { prior, noise_std, seed })
    }

    pub fn rhombus(noise_std: f64, seed: u64) -> Result<Self> {
        Self::new(default_rhombus_prior(), noise_std, seed)
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    /// `n` pairs `(x, y)` from the task seed.
    pub fn sample_pairs(&self, n: usize) -> Result<Vec<Pair>> {
        self.sample_pairs_with(n, &mut rng::seeded(self.seed, rng::stream::DATA))
    }

    pub fn sample_pairs_with(&self, n: usize, rng: &mut Rng) -> Result<Vec<Pair>> {
        if n == 0 {
            return Err(Error::Invalid("empty dataset".into()));
        }
        Ok((0..n).map(|_| self.sample_pair(rng).0).collect())
    }

    /// One pair plus the prior component `x` was drawn from.
    pub fn sample_pair(&self, rng: &mut Rng) -> (Pair, usize) {
        let (x, l) = self.prior.sample_one(rng);
        let y = x
            .iter()
            .map(|v| {
                let n: f64 = StandardNormal.sample(rng);
                v + self.noise_std * n
            })
            .collect();
        (Pair { x, y }, l)
    }

    fn check_measurement(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim() {
            return Err(Error::Dimension(format!("measurement of dimension {} for a {}-D task", y.len(), self.dim())));
        }
        if self.noise_std == 0.0 {
            return Err(Error::Invalid("posterior is degenerate for zero noise".into()));
        }
        Ok(())
    }

    /// Log-likelihood `ln p(y | x)`.
    pub fn log_likelihood(&self, y: &[f64], x: &[f64]) -> f64 {
        let s2 = self.noise_std * self.noise_std;
        let sq: f64 = y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        -0.5 * (sq / s2 + y.len() as f64 * (LN_2PI + s2.ln()))
    }

    /// Log-evidence `ln p(y)`.
    pub fn log_evidence(&self, y: &[f64]) -> Result<f64> {
        self.check_measurement(y)?;
        let terms = self.component_terms(y)?;
        Ok(log_sum_exp(&terms.iter().map(|t| t.log_weight).collect::<Vec<_>>()))
    }

    /// Closed-form posterior mixture `p(x | y)`.
    pub fn posterior(&self, y: &[f64]) -> Result<GaussianMixture> {
        self.check_measurement(y)?;
        let terms = self.component_terms(y)?;
        let logs: Vec<f64> = terms.iter().map(|t| t.log_weight).collect();
        let norm = log_sum_exp(&logs);
        let mut weights: Vec<f64> = logs.iter().map(|l| (l - norm).exp()).collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        let (means, covs) = terms.into_iter().map(|t| (t.mean, t.cov)).unzip();
        GaussianMixture::new(weights, means, covs)
    }

    pub fn posterior_mean(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.posterior(y)?.mean())
    }

    pub fn posterior_sample(&self, y: &[f64], n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let post = self.posterior(y)?;
        Ok(post.sample(n, &mut rng::seeded(seed, rng::stream::POSTERIOR)))
    }

    fn component_terms(&self, y: &[f64]) -> Result<Vec<ComponentTerm>> {
        let d = self.dim();
        let s2 = self.noise_std * self.noise_std;
        let prior = &self.prior;
        (0..prior.len())
            .map(|l| {
                let cov = &prior.covariances[l];
                let mu = &prior.means[l];
                let mut s = cov.clone();
                for i in 0..d {
                    s[(i, i)] += s2;
                }
                let fs = cholesky(&s)?;
                let log_q = gaussian_log_density(y, mu, &fs);
                let log_weight = if prior.weights[l] > 0.0 { prior.weights[l].ln() + log_q } else { f64::NEG_INFINITY };

                // S⁻¹ (y - μ) and S⁻¹ Σ, then the gain Σ S⁻¹ applied.
                let mut r: Vec<f64> = y.iter().zip(mu).map(|(a, b)| a - b).collect();
                cholesky_solve(&fs, &mut r);
                let mean: Vec<f64> = (0..d).map(|i| mu[i] + (0..d).map(|k| cov[(i, k)] * r[k]).sum::<f64>()).collect();

                let mut s_inv_cov = Matrix::zeros(d, d);
                for j in 0..d {
                    let mut col: Vec<f64> = (0..d).map(|i| cov[(i, j)]).collect();
                    cholesky_solve(&fs, &mut col);
                    for i in 0..d {
                        s_inv_cov[(i, j)] = col[i];
                    }
                }
                let reduce = cov.matmul(&s_inv_cov)?;
                let mut post = Matrix::zeros(d, d);
                for i in 0..d {
                    for j in 0..d {
                        post[(i, j)] = cov[(i, j)] - 0.5 * (reduce[(i, j)] + reduce[(j, i)]);
                    }
                }
                Ok(ComponentTerm { log_weight, mean, cov: post })
            })
            .collect()
    }
}

struct ComponentTerm {
    log_weight: f64,
    mean: Vec<f64>,
    cov: Matrix,
}
