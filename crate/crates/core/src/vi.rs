//! Joint variational posterior over orderings, graphs and SEM parameters.
//!
//! The ELBO is estimated with `S_π` SoftSort permutation samples, each
//! straight-through projected to its exact argsort, and `S_G` graph samples
//! per permutation. Link values stay unquantized inside the objective. Graph
//! KL terms for relaxed Bernoulli links are scored on the pre-sigmoid value,
//! where the sigmoid Jacobian cancels between `q` and the prior.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dagdist::{
    gaussian_log_density, hard_mask, laplace_log_density, permuted_mask_backward, quantize,
    relaxed_bernoulli_log_density_b, relaxed_bernoulli_log_density_b_grad, sample_graph, sample_link_noise,
    DagDistribution, GraphSample, LinkFamily, Order,
};
use crate::diff::{AdamConfig, OptimizerState};
use crate::error::{Error, Result};
use crate::graph::Adjacency;
use crate::numeric::sigmoid;
use crate::perm::{softsort_backward, Construction, PermutationDistribution, PermutationSample};
use crate::sem::{Dataset, Likelihood, LinearSem, MaskedMlpSem, SemModel, DEFAULT_HIDDEN};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemKind {
    #[default]
    Linear,
    Mlp,
}

/// Training and model settings. Every field has a default, so a partial JSON
/// document is a valid configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub perm_samples: usize,
    pub graph_samples: usize,
    /// Zero is allowed and returns the initial state.
    pub iterations: usize,
    pub learning_rate: f64,
    pub perm_temperature: f64,
    pub construction: Construction,
    pub order: Order,
    /// Variational link family with its initial scale or fixed temperature.
    pub link: LinkFamily,
    /// Initial value of every entry of the variational `Θ`.
    pub init_theta: f64,
    /// Whether the shared scale of real-valued links is optimized.
    pub learn_link_scale: bool,
    pub prior_link: LinkFamily,
    pub prior_theta: f64,
    /// Uniform prior when absent.
    pub prior_log_scores: Option<Vec<f64>>,
    pub threshold: f64,
    pub seed: u64,
    pub sem: SemKind,
    pub noise_scale: f64,
    pub hidden: usize,
    pub learn_sem: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            perm_samples: 10,
            graph_samples: 10,
            iterations: 2000,
            learning_rate: 1e-3,
            perm_temperature: 0.5,
            construction: Construction::GumbelMax,
            order: Order::Reverse,
            link: LinkFamily::Gaussian { scale: 0.1 },
            init_theta: 0.0,
            learn_link_scale: true,
            prior_link: LinkFamily::Gaussian { scale: 0.1 },
            prior_theta: 0.0,
            prior_log_scores: None,
            threshold: 0.5,
            seed: 0,
            sem: SemKind::Linear,
            noise_scale: 0.1,
            hidden: DEFAULT_HIDDEN,
            learn_sem: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.perm_samples == 0 || self.graph_samples == 0 {
            return Err(Error::invalid("sample counts must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.perm_temperature > 0.0 && self.perm_temperature.is_finite()) {
            return Err(Error::invalid("permutation temperature must be positive"));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::invalid("noise scale must be positive"));
        }
        if !self.threshold.is_finite() {
            return Err(Error::invalid("threshold must be finite"));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("hidden width must be at least 1"));
        }
        if std::mem::discriminant(&self.link) != std::mem::discriminant(&self.prior_link) {
            return Err(Error::invalid("prior and variational link families must be of the same kind"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// Prior over orderings (`β₀`) and over graphs given an ordering (`Θ₀`).
#[derive(Clone, Debug, PartialEq)]
pub struct PriorSpec {
    pub perm: PermutationDistribution,
    pub dag: DagDistribution,
}

impl PriorSpec {
    pub fn new(perm: PermutationDistribution, dag: DagDistribution) -> Result<Self> {
        if perm.dim() != dag.dim() {
            return Err(Error::DimensionMismatch {
                expected: perm.dim(),
                got: dag.dim(),
            });
        }
        Ok(Self { perm, dag })
    }

    pub fn from_config(d: usize, config: &TrainConfig) -> Result<Self> {
        let scores = config.prior_log_scores.clone().unwrap_or_else(|| vec![0.0; d]);
        let perm = PermutationDistribution::new(scores, config.construction, config.perm_temperature)?;
        let dag = DagDistribution::new(
            DMatrix::from_element(d, d, config.prior_theta),
            config.prior_link,
            config.order,
        )?;
        Self::new(perm, dag)
    }
}

/// Variational `β` (log-scores), `Θ` and the SEM parameters `φ`.
///
/// Flat parameter layout: log-scores, `Θ` row-major, the log link scale for
/// real-valued families, then SEM parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalState {
    pub perm: PermutationDistribution,
    pub dag: DagDistribution,
    pub sem: SemModel,
}

impl VariationalState {
    pub fn new(perm: PermutationDistribution, dag: DagDistribution, sem: SemModel) -> Result<Self> {
        let d = perm.dim();
        if dag.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: dag.dim(),
            });
        }
        let sem_dim = match &sem {
            SemModel::Linear(m) => m.dim(),
            SemModel::Mlp(m) => m.dim(),
        };
        if sem_dim != d {
            return Err(Error::DimensionMismatch { expected: d, got: sem_dim });
        }
        Ok(Self { perm, dag, sem })
    }

    /// Uniform ordering scores, constant `Θ`, and a SEM drawn from `rng`.
    pub fn initialize<R: Rng + ?Sized>(d: usize, config: &TrainConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let perm = PermutationDistribution::uniform(d, config.construction, config.perm_temperature)?;
        let dag = DagDistribution::new(DMatrix::from_element(d, d, config.init_theta), config.link, config.order)?;
        let sem = match config.sem {
            SemKind::Linear if config.link.is_real_valued() => SemModel::Linear(LinearSem::direct(d, config.noise_scale)?),
            SemKind::Linear => SemModel::Linear(LinearSem::gated(d, config.noise_scale, 0.0)?),
            SemKind::Mlp => SemModel::Mlp(MaskedMlpSem::new(d, config.hidden, config.noise_scale, rng)?),
        };
        Self::new(perm, dag, sem)
    }

    pub fn dim(&self) -> usize {
        self.perm.dim()
    }

    fn link_scale(&self) -> Option<f64> {
        match self.dag.family() {
            LinkFamily::Gaussian { scale } | LinkFamily::Laplace { scale } => Some(scale),
            LinkFamily::RelaxedBernoulli { .. } => None,
        }
    }

    fn sem_offset(&self) -> usize {
        let d = self.dim();
        d + d * d + usize::from(self.link_scale().is_some())
    }

    pub fn num_params(&self) -> usize {
        self.sem_offset() + self.sem.num_params()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.perm.log_scores().to_vec();
        p.extend(self.dag.theta().transpose().iter());
        if let Some(s) = self.link_scale() {
            p.push(s.ln());
        }
        p.extend(self.sem.params());
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                term: format!("parameter {i}"),
            });
        }
        let d = self.dim();
        self.perm.set_log_scores(&params[..d])?;
        self.dag.set_theta(DMatrix::from_row_slice(d, d, &params[d..d + d * d]))?;
        let off = self.sem_offset();
        match self.dag.family() {
            LinkFamily::Gaussian { .. } => self.dag.set_family(LinkFamily::Gaussian {
                scale: params[off - 1].exp(),
            })?,
            LinkFamily::Laplace { .. } => self.dag.set_family(LinkFamily::Laplace {
                scale: params[off - 1].exp(),
            })?,
            LinkFamily::RelaxedBernoulli { .. } => {}
        }
        self.sem.set_params(&params[off..])
    }
}

/// Monte Carlo ELBO with its gradient w.r.t. [`VariationalState::params`].
#[derive(Clone, Debug)]
pub struct ElboEstimate {
    pub elbo: f64,
    /// Standard error over the permutation samples.
    pub std_error: f64,
    pub loglik: f64,
    pub kl_perm: f64,
    pub kl_graph: f64,
    /// Per-permutation-sample ELBO values.
    pub samples: Vec<f64>,
    pub grad: Vec<f64>,
}

struct SampleTerms {
    loglik: f64,
    kl_perm: f64,
    kl_graph: f64,
    grad: Vec<f64>,
}

pub fn elbo_estimate<R: Rng + ?Sized>(
    state: &VariationalState,
    prior: &PriorSpec,
    data: &Dataset,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<ElboEstimate> {
    elbo_estimate_with(state, &state.sem, prior, data, config, rng)
}

/// [`elbo_estimate`] with an arbitrary likelihood in place of `state.sem`.
/// The likelihood's parameters take the SEM slot of the gradient.
pub fn elbo_estimate_with<R: Rng + ?Sized>(
    state: &VariationalState,
    lik: &dyn Likelihood,
    prior: &PriorSpec,
    data: &Dataset,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<ElboEstimate> {
    config.validate()?;
    let d = state.dim();
    if data.cols() != d || prior.perm.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: data.cols(),
        });
    }
    if std::mem::discriminant(&prior.dag.family()) != std::mem::discriminant(&state.dag.family()) {
        return Err(Error::invalid("prior and variational link families differ"));
    }
    let seeds: Vec<u64> = (0..config.perm_samples).map(|_| rng.random()).collect();
    let results: Vec<Result<SampleTerms>> = seeds
        .par_iter()
        .map(|&seed| sample_terms(state, lik, prior, data, config.graph_samples, seed))
        .collect();

    let n_params = state.sem_offset() + lik.num_params();
    let s = config.perm_samples as f64;
    let mut grad = vec![0.0; n_params];
    let mut samples = Vec::with_capacity(results.len());
    let (mut loglik, mut kl_perm, mut kl_graph) = (0.0, 0.0, 0.0);
    for r in results {
        let t = r?;
        samples.push(t.loglik - t.kl_perm - t.kl_graph);
        loglik += t.loglik / s;
        kl_perm += t.kl_perm / s;
        kl_graph += t.kl_graph / s;
        for (g, v) in grad.iter_mut().zip(&t.grad) {
            *g += v / s;
        }
    }
    for (name, v) in [("log-likelihood", loglik), ("permutation KL", kl_perm), ("graph KL", kl_graph)] {
        if !v.is_finite() {
            return Err(Error::NonFinite { term: name.into() });
        }
    }
    let elbo = samples.iter().sum::<f64>() / s;
    let std_error = if samples.len() > 1 {
        let var = samples.iter().map(|v| (v - elbo).powi(2)).sum::<f64>() / (s - 1.0);
        (var / s).sqrt()
    } else {
        f64::NAN
    };
    Ok(ElboEstimate {
        elbo,
        std_error,
        loglik,
        kl_perm,
        kl_graph,
        samples,
        grad,
    })
}

fn sample_terms(
    state: &VariationalState,
    lik: &dyn Likelihood,
    prior: &PriorSpec,
    data: &Dataset,
    graph_samples: usize,
    seed: u64,
) -> Result<SampleTerms> {
    let d = state.dim();
    let order = state.dag.order();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let z = state.perm.sample_uniforms(&mut rng);
    let soft = state.perm.soft_from_uniforms(&z)?;
    let scores = state.perm.perturbed_scores(&z);
    let hard = PermutationSample::from_perm(soft.perm().to_vec())?;

    let lq_pi = state.perm.log_prob_sample(&hard)?;
    let lp_pi = prior.perm.log_prob_sample(&hard)?;
    let (gq_scores, gq_matrix) = state.perm.log_prob_sample_backward(&hard)?;
    let (_, gp_matrix) = prior.perm.log_prob_sample_backward(&hard)?;

    let mask = hard_mask(hard.perm(), order);
    let theta = state.dag.theta();
    let theta0 = prior.dag.theta();
    let mut d_mask = DMatrix::<f64>::zeros(d, d);
    let mut d_theta = DMatrix::<f64>::zeros(d, d);
    let mut d_log_scale = 0.0;
    let mut d_sem = vec![0.0; lik.num_params()];
    let (mut loglik, mut kl_graph) = (0.0, 0.0);

    for _ in 0..graph_samples {
        let noise = sample_link_noise(d, state.dag.family(), &mut rng);
        match (state.dag.family(), prior.dag.family()) {
            (LinkFamily::RelaxedBernoulli { temperature: tau }, LinkFamily::RelaxedBernoulli { temperature: tau0 }) => {
                let b = DMatrix::from_fn(d, d, |i, j| (theta[(i, j)] + noise[(i, j)]) / tau);
                let a = b.map(sigmoid);
                let adj = a.component_mul(&mask);
                let sg = lik.loglik_grad(data, &adj)?;
                loglik += sg.value;
                for (acc, g) in d_sem.iter_mut().zip(&sg.params) {
                    *acc += g;
                }
                for i in 0..d {
                    for j in 0..d {
                        if i == j {
                            continue;
                        }
                        let bij = b[(i, j)];
                        let lq = relaxed_bernoulli_log_density_b(bij, tau, theta[(i, j)]);
                        let lp = relaxed_bernoulli_log_density_b(bij, tau0, theta0[(i, j)]);
                        let aij = a[(i, j)];
                        let g_a = sg.adjacency[(i, j)];
                        d_mask[(i, j)] += g_a * aij - lq + lp;
                        if mask[(i, j)] > 0.0 {
                            kl_graph += lq - lp;
                            let (dq_b, dq_theta) = relaxed_bernoulli_log_density_b_grad(bij, tau, theta[(i, j)]);
                            let (dp_b, _) = relaxed_bernoulli_log_density_b_grad(bij, tau0, theta0[(i, j)]);
                            d_theta[(i, j)] += (g_a * aij * (1.0 - aij) + dp_b - dq_b) / tau - dq_theta;
                        }
                    }
                }
            }
            (q_family, p_family) => {
                let (scale, scale0) = match (q_family, p_family) {
                    (LinkFamily::Gaussian { scale }, LinkFamily::Gaussian { scale: s0 })
                    | (LinkFamily::Laplace { scale }, LinkFamily::Laplace { scale: s0 }) => (scale, s0),
                    _ => return Err(Error::invalid("prior and variational link families differ")),
                };
                let laplace = matches!(q_family, LinkFamily::Laplace { .. });
                let w = DMatrix::from_fn(d, d, |i, j| theta[(i, j)] + scale * noise[(i, j)]);
                let adj = w.component_mul(&mask);
                let sg = lik.loglik_grad(data, &adj)?;
                loglik += sg.value;
                for (acc, g) in d_sem.iter_mut().zip(&sg.params) {
                    *acc += g;
                }
                for i in 0..d {
                    for j in 0..d {
                        if i == j {
                            continue;
                        }
                        let (x, mu, mu0) = (w[(i, j)], theta[(i, j)], theta0[(i, j)]);
                        let (lq, lp, dlp) = if laplace {
                            (
                                laplace_log_density(x, mu, scale),
                                laplace_log_density(x, mu0, scale0),
                                -(x - mu0).signum() / scale0,
                            )
                        } else {
                            (
                                gaussian_log_density(x, mu, scale),
                                gaussian_log_density(x, mu0, scale0),
                                -(x - mu0) / (scale0 * scale0),
                            )
                        };
                        let g_a = sg.adjacency[(i, j)];
                        d_mask[(i, j)] += g_a * x - lq + lp;
                        if mask[(i, j)] > 0.0 {
                            kl_graph += lq - lp;
                            let total = g_a + dlp;
                            d_theta[(i, j)] += total;
                            d_log_scale += total * scale * noise[(i, j)] + 1.0;
                        }
                    }
                }
            }
        }
    }

    let sg_count = graph_samples as f64;
    loglik /= sg_count;
    kl_graph /= sg_count;
    d_mask /= sg_count;
    d_theta /= sg_count;
    d_log_scale /= sg_count;
    for g in &mut d_sem {
        *g /= sg_count;
    }

    // straight-through: the gradient w.r.t. the hard matrix is applied to the soft one
    let d_pi = permuted_mask_backward(hard.matrix(), order, &d_mask) + gp_matrix - gq_matrix;
    let d_scores = softsort_backward(&scores, soft.matrix(), soft.perm(), state.perm.temperature(), &d_pi);
    let mut d_log_scores = state.perm.perturbed_scores_backward(&z, &d_scores);
    for (g, q) in d_log_scores.iter_mut().zip(&gq_scores) {
        *g -= q;
    }

    let mut grad = d_log_scores;
    grad.extend(d_theta.transpose().iter());
    if !matches!(state.dag.family(), LinkFamily::RelaxedBernoulli { .. }) {
        grad.push(d_log_scale);
    }
    grad.extend(d_sem);
    Ok(SampleTerms {
        loglik,
        kl_perm: lq_pi - lp_pi,
        kl_graph,
        grad,
    })
}

/// `log q(π) − log p(π) + log q(G | π) − log p(G | π)` averaged over samples.
pub fn kl_estimate(
    state: &VariationalState,
    prior: &PriorSpec,
    samples: &[(PermutationSample, GraphSample)],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("KL estimate needs at least one sample"));
    }
    let mut total = 0.0;
    for (perm, graph) in samples {
        total += state.perm.log_prob_sample(perm)? - prior.perm.log_prob_sample(perm)?;
        total += graph_log_density(graph, &state.dag)? - graph_log_density(graph, &prior.dag)?;
    }
    Ok(total / samples.len() as f64)
}

/// Unquantized graph log-density, pre-sigmoid space for relaxed Bernoulli links.
fn graph_log_density(graph: &GraphSample, dist: &DagDistribution) -> Result<f64> {
    let mask = graph.mask();
    let d = dist.dim();
    let theta = dist.theta();
    let mut total = 0.0;
    for i in 0..d {
        for j in 0..d {
            if mask[(i, j)] == 0.0 {
                continue;
            }
            total += match dist.family() {
                LinkFamily::RelaxedBernoulli { temperature } => {
                    let b = graph
                        .pre_sigmoid
                        .as_ref()
                        .ok_or_else(|| Error::invalid("relaxed Bernoulli sample without pre-sigmoid values"))?;
                    relaxed_bernoulli_log_density_b(b[(i, j)], temperature, theta[(i, j)])
                }
                LinkFamily::Gaussian { scale } => gaussian_log_density(graph.soft[(i, j)], theta[(i, j)], scale),
                LinkFamily::Laplace { scale } => laplace_log_density(graph.soft[(i, j)], theta[(i, j)], scale),
            };
        }
    }
    Ok(total)
}

/// Hard `(π, G)` draws from the variational posterior.
pub fn draw_joint<R: Rng + ?Sized>(state: &VariationalState, n: usize, rng: &mut R) -> Vec<(PermutationSample, GraphSample)> {
    (0..n)
        .map(|_| {
            let p = state.perm.sample(rng);
            let g = sample_graph(&p, &state.dag, rng);
            (p, g)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub elbo: f64,
}

#[derive(Clone, Debug)]
pub struct Fit {
    pub state: VariationalState,
    pub trace: Vec<TraceRow>,
}

/// Training aborted; carries the last state whose parameters were all finite.
#[derive(Debug)]
pub struct FitFailure {
    pub error: Error,
    pub last_good: VariationalState,
    pub trace: Vec<TraceRow>,
    pub iteration: usize,
}

impl std::fmt::Display for FitFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training diverged at iteration {}: {}", self.iteration, self.error)
    }
}

impl std::error::Error for FitFailure {}

/// Initializes from `config.seed` and runs [`fit_from`].
pub fn fit(data: &Dataset, config: &TrainConfig, prior: &PriorSpec) -> std::result::Result<Fit, Box<FitFailure>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let state = VariationalState::initialize(data.cols(), config, &mut rng).map_err(|error| {
        Box::new(FitFailure {
            error,
            last_good: placeholder_state(data.cols()),
            trace: Vec::new(),
            iteration: 0,
        })
    })?;
    fit_from(state, data, config, prior, &mut rng)
}

fn placeholder_state(d: usize) -> VariationalState {
    let d = d.max(2);
    VariationalState {
        perm: PermutationDistribution::uniform(d, Construction::GumbelMax, 0.5).expect("valid"),
        dag: DagDistribution::gaussian(d, 0.0, 0.1, Order::Reverse).expect("valid"),
        sem: SemModel::Linear(LinearSem::direct(d, 1.0).expect("valid")),
    }
}

/// `config.iterations` Adam steps on −ELBO starting from `state`. The trace
/// records the estimate taken before each step.
pub fn fit_from<R: Rng + ?Sized>(
    mut state: VariationalState,
    data: &Dataset,
    config: &TrainConfig,
    prior: &PriorSpec,
    rng: &mut R,
) -> std::result::Result<Fit, Box<FitFailure>> {
    let fail = |error, state: &VariationalState, trace: &[TraceRow], iteration| {
        Box::new(FitFailure {
            error,
            last_good: state.clone(),
            trace: trace.to_vec(),
            iteration,
        })
    };
    if let Err(e) = config.validate() {
        return Err(fail(e, &state, &[], 0));
    }
    let mut params = state.params();
    let mut opt = match OptimizerState::new(params.len(), config.adam()) {
        Ok(o) => o,
        Err(e) => return Err(fail(e, &state, &[], 0)),
    };
    let sem_offset = state.sem_offset();
    let scale_index = state.link_scale().map(|_| sem_offset - 1);
    let mut trace = Vec::with_capacity(config.iterations);
    for iteration in 1..=config.iterations {
        let est = match elbo_estimate(&state, prior, data, config, rng) {
            Ok(e) => e,
            Err(e) => return Err(fail(e, &state, &trace, iteration)),
        };
        trace.push(TraceRow {
            iteration,
            elbo: est.elbo,
        });
        let mut neg: Vec<f64> = est.grad.iter().map(|g| -g).collect();
        if !config.learn_sem {
            neg[sem_offset..].iter_mut().for_each(|g| *g = 0.0);
        }
        if let (false, Some(k)) = (config.learn_link_scale, scale_index) {
            neg[k] = 0.0;
        }
        let mut next = params.clone();
        if let Err(e) = opt.step(&mut next, &neg) {
            return Err(fail(e, &state, &trace, iteration));
        }
        if let Err(e) = state.set_params(&next) {
            // set_params validates before mutating, so `state` is still the last good one
            return Err(fail(e, &state, &trace, iteration));
        }
        params = next;
    }
    Ok(Fit { state, trace })
}

/// Fraction of hard posterior samples containing each directed edge.
pub fn posterior_edge_probs<R: Rng + ?Sized>(
    state: &VariationalState,
    n_samples: usize,
    threshold: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let samples = posterior_samples(state, n_samples, threshold, rng)?;
    let d = state.dim();
    let mut probs = DMatrix::zeros(d, d);
    for g in &samples {
        for (i, j) in g.edges() {
            probs[(i, j)] += 1.0;
        }
    }
    Ok(probs / n_samples as f64)
}

/// `n` quantized (permutation → graph) draws.
pub fn posterior_samples<R: Rng + ?Sized>(
    state: &VariationalState,
    n: usize,
    threshold: f64,
    rng: &mut R,
) -> Result<Vec<Adjacency>> {
    if n == 0 {
        return Err(Error::invalid("at least one posterior sample is required"));
    }
    Ok(draw_joint(state, n, rng)
        .iter()
        .map(|(_, g)| quantize(g, threshold))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{finite_diff_grad, max_relative_error};
    use crate::sem::SemGrad;

    struct ZeroLikelihood;

    impl Likelihood for ZeroLikelihood {
        fn num_params(&self) -> usize {
            0
        }
        fn params(&self) -> Vec<f64> {
            Vec::new()
        }
        fn set_params(&mut self, _: &[f64]) -> Result<()> {
            Ok(())
        }
        fn loglik(&self, _: &Dataset, _: &DMatrix<f64>) -> Result<f64> {
            Ok(0.0)
        }
        fn loglik_grad(&self, data: &Dataset, _: &DMatrix<f64>) -> Result<SemGrad> {
            Ok(SemGrad {
                value: 0.0,
                adjacency: DMatrix::zeros(data.cols(), data.cols()),
                params: Vec::new(),
            })
        }
    }

    fn toy_data(d: usize, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DMatrix::zeros(n, d);
        for r in 0..n {
            for c in 0..d {
                let parent = if c > 0 { x[(r, c - 1)] } else { 0.0 };
                x[(r, c)] = 0.8 * parent + rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.5;
            }
        }
        Dataset::new(x).unwrap()
    }

    #[test]
    fn matched_prior_gives_zero_kl_per_sample() {
        for link in [LinkFamily::Gaussian { scale: 0.1 }, LinkFamily::RelaxedBernoulli { temperature: 0.5 }] {
            let config = TrainConfig {
                link,
                prior_link: link,
                perm_samples: 7,
                graph_samples: 3,
                ..TrainConfig::default()
            };
            let data = toy_data(4, 5, 0);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let state = VariationalState::initialize(4, &config, &mut rng).unwrap();
            let prior = PriorSpec::from_config(4, &config).unwrap();
            let est = elbo_estimate_with(&state, &ZeroLikelihood, &prior, &data, &config, &mut rng).unwrap();
            assert!(est.samples.iter().all(|&v| v == 0.0), "{:?}", est.samples);
            assert_eq!(est.elbo, 0.0);
        }
    }

    fn check_pathwise_gradient(config: &TrainConfig, d: usize) {
        let data = toy_data(d, 30, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut state = VariationalState::initialize(d, config, &mut rng).unwrap();
        // move away from the symmetric start
        let mut p = state.params();
        for (k, v) in p.iter_mut().enumerate().skip(d) {
            *v += 0.3 * ((k * 7919 % 13) as f64 / 13.0 - 0.5);
        }
        state.set_params(&p).unwrap();
        let prior = PriorSpec::from_config(d, config).unwrap();
        let est = elbo_estimate(&state, &prior, &data, config, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let base = state.params();
        let fd = finite_diff_grad(
            |x| {
                let mut s = state.clone();
                let mut q = base.clone();
                q[d..].copy_from_slice(&x[d..]);
                s.set_params(&q)?;
                Ok(elbo_estimate(&s, &prior, &data, config, &mut ChaCha8Rng::seed_from_u64(9))?.elbo)
            },
            &base,
            1e-5,
        )
        .unwrap();
        let err = max_relative_error(&est.grad[d..], &fd[d..], 1e-3);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn gaussian_link_pathwise_gradients_match_finite_differences() {
        let config = TrainConfig {
            perm_samples: 3,
            graph_samples: 2,
            noise_scale: 0.7,
            ..TrainConfig::default()
        };
        check_pathwise_gradient(&config, 3);
    }

    #[test]
    fn relaxed_bernoulli_pathwise_gradients_match_finite_differences() {
        let link = LinkFamily::RelaxedBernoulli { temperature: 0.7 };
        let config = TrainConfig {
            perm_samples: 3,
            graph_samples: 2,
            link,
            prior_link: LinkFamily::RelaxedBernoulli { temperature: 0.5 },
            prior_theta: -0.4,
            noise_scale: 0.7,
            ..TrainConfig::default()
        };
        check_pathwise_gradient(&config, 3);
    }

    #[test]
    fn mlp_pathwise_gradients_match_finite_differences() {
        let config = TrainConfig {
            perm_samples: 2,
            graph_samples: 2,
            sem: SemKind::Mlp,
            hidden: 4,
            noise_scale: 0.8,
            ..TrainConfig::default()
        };
        check_pathwise_gradient(&config, 3);
    }

    #[test]
    fn zero_iterations_return_initial_state() {
        let config = TrainConfig {
            iterations: 0,
            ..TrainConfig::default()
        };
        let data = toy_data(3, 10, 0);
        let prior = PriorSpec::from_config(3, &config).unwrap();
        let fit = fit(&data, &config, &prior).unwrap();
        let initial = VariationalState::initialize(3, &config, &mut ChaCha8Rng::seed_from_u64(config.seed)).unwrap();
        assert_eq!(fit.state, initial);
        assert!(fit.trace.is_empty());
    }

    #[test]
    fn fit_is_deterministic() {
        let config = TrainConfig {
            iterations: 20,
            perm_samples: 4,
            graph_samples: 2,
            seed: 11,
            ..TrainConfig::default()
        };
        let data = toy_data(3, 40, 4);
        let prior = PriorSpec::from_config(3, &config).unwrap();
        let a = fit(&data, &config, &prior).unwrap();
        let b = fit(&data, &config, &prior).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.state.params(), b.state.params());
    }

    #[test]
    fn uniform_two_node_edge_probs_are_a_quarter() {
        let config = TrainConfig {
            link: LinkFamily::RelaxedBernoulli { temperature: 0.5 },
            prior_link: LinkFamily::RelaxedBernoulli { temperature: 0.5 },
            ..TrainConfig::default()
        };
        let state = VariationalState::initialize(2, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let n = 100_000;
        let p = posterior_edge_probs(&state, n, 0.5, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let se = (0.25 * 0.75 / n as f64).sqrt();
        assert!((p[(0, 1)] - 0.25).abs() < 3.0 * se, "{p}");
        assert!((p[(1, 0)] - 0.25).abs() < 3.0 * se, "{p}");
        assert_eq!(p[(0, 0)], 0.0);
    }

    #[test]
    fn degenerate_posterior_concentrates_on_one_graph() {
        let config = TrainConfig::default();
        let mut state = VariationalState::initialize(3, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        state.perm.set_log_scores(&[40.0, 20.0, 0.0]).unwrap();
        let theta = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        state.dag.set_theta(theta).unwrap();
        state.dag.set_family(LinkFamily::Gaussian { scale: 1e-6 }).unwrap();
        let p = posterior_edge_probs(&state, 200, 0.5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(p, expected);
    }

    #[test]
    fn edge_probs_are_valid_marginals() {
        let config = TrainConfig {
            init_theta: 0.6,
            link: LinkFamily::Gaussian { scale: 0.5 },
            ..TrainConfig::default()
        };
        let state = VariationalState::initialize(5, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let p = posterior_edge_probs(&state, 500, 0.5, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for i in 0..5 {
            assert_eq!(p[(i, i)], 0.0);
            for j in 0..5 {
                assert!((0.0..=1.0).contains(&p[(i, j)]));
                assert!(p[(i, j)] + p[(j, i)] <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn empty_state_samples_are_empty() {
        let config = TrainConfig::default();
        let state = VariationalState::initialize(4, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let g = posterior_samples(&state, 20, 0.5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(g.iter().all(|a| a.nnz() == 0));
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            perm_samples: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let mixed = TrainConfig {
            prior_link: LinkFamily::RelaxedBernoulli { temperature: 0.5 },
            ..TrainConfig::default()
        };
        assert!(mixed.validate().is_err());
        let parsed: std::result::Result<TrainConfig, _> = serde_json::from_str(r#"{"iterations": 3, "bogus": 1}"#);
        assert!(parsed.is_err());
    }
}
