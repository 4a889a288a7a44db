//! Posterior trees.
//!
//! A single network predicts `K^d` leaves and their probabilities for a
//! measurement `y`; the rest of a degree-`K`, depth-`d` tree is composed
//! bottom-up by probability-weighted averaging, so the root is the MMSE
//! estimate and every internal node is the conditional mean of its cell.
//!
//! The crate is organised by subsystem:
//!
//! - [`numerics`]: dense kernels, the two-network leaf/probability model with
//!   exact reverse-mode gradients, optimizers and the plateau scheduler.
//! - [`gmm`]: Gaussian-mixture priors and the closed-form posterior of the 2-D
//!   denoising toy problem.
//! - [`tree`]: the posterior-tree data model and bottom-up composition.
//! - [`clustering`]: K-means, hierarchical K-means and the sample-based
//!   baseline tree.
//! - [`training`]: the hierarchical oracle loss, epsilon annealing, the
//!   occupancy-balancing sampler and the training loop.
//! - [`eval`]: optimal-path metrics, NLL and tree-to-tree matching.

pub mod clustering;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gmm;
pub mod manifest;
pub mod numerics;
pub mod rng;
pub mod training;
pub mod tree;

pub use clustering::{baseline_tree, hierarchical_kmeans, kmeans, HierarchicalPartition, Partition};
pub use dataset::{Dataset, Pair};
pub use error::{Error, Result};
pub use eval::{evaluate_model, match_trees, optimal_path, tree_nll, EvalReport, PathReport, TreeMatch};
pub use gmm::{default_rhombus_prior, DenoisingTask, GaussianMixture};
pub use numerics::{Activation, Matrix, Mlp, OptimizerMode, OptimizerState, PlateauScheduler, TreeNet};
pub use training::{train, train_with_split, EpsilonSchedule, History, TrainConfig, TrainOutcome, TreeModel};
pub use tree::{PosteriorTree, TreeLayout};
