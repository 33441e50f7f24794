//! Variational Bayesian DAG structure learning by augmenting graphs with
//! node orderings.
//!
//! A posterior over permutations (Plackett-Luce, sampled through either the
//! exponential-race or the Gumbel-Max construction) is combined with a
//! conditional posterior over DAGs consistent with each permutation. Both are
//! fitted jointly with structural-equation-model parameters by stochastic
//! maximization of a Monte Carlo evidence lower bound, using SoftSort and
//! relaxed Bernoulli reparameterizations for gradients.
//!
//! Modules:
//! - [`perm`]: distributions over permutations.
//! - [`dagdist`]: distributions over DAGs given a permutation, masks, quantization.
//! - [`sem`]: linear and masked-MLP structural equation likelihoods.
//! - [`diff`]: finite-difference oracle and Adam.
//! - [`vi`]: ELBO estimation, training and posterior summaries.
//! - [`synth`]: synthetic ER / scale-free benchmarks.
//! - [`eval`]: SHD, F1, NNZ and ECE.
//! - [`io`]: CSV / JSON persistence.

pub mod dagdist;
pub mod diff;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod numeric;
pub mod perm;
pub mod sem;
pub mod synth;
pub mod vi;

pub use dagdist::{DagDistribution, GraphSample, LinkFamily, Order};
pub use error::{Error, Result};
pub use graph::Adjacency;
pub use perm::{Construction, PermutationDistribution, PermutationSample};
pub use sem::{Dataset, Likelihood, LinearSem, MaskedMlpSem, SemModel};
pub use vi::{PriorSpec, TrainConfig, VariationalState};
