//! Distributions over DAGs conditioned on a permutation.
//!
//! A global `D×D` link-parameter matrix `Θ` is masked by the permuted strictly
//! triangular matrix `Πᵀ T Π` (`T = U` for topological order, `T = L` for
//! reverse topological order), so any sample drawn given `π` is acyclic by
//! construction. Links are independent given `π`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Adjacency;
use crate::numeric::{logit, sigmoid, softplus, uniform_open, LN_2PI};
use crate::perm::PermutationSample;

/// Which side of the ordering edges may point to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    /// Edges go from earlier to later items of `π`.
    Topological,
    /// Edges go from later to earlier items of `π`.
    #[default]
    Reverse,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkFamily {
    /// Binary Concrete links; `Θ` holds logits of the probability parameter.
    RelaxedBernoulli { temperature: f64 },
    /// Real-valued links; `Θ` holds means and `scale` is shared by all links.
    Gaussian { scale: f64 },
    /// Real-valued links with Laplace noise; `Θ` holds locations.
    Laplace { scale: f64 },
}

impl LinkFamily {
    fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            LinkFamily::RelaxedBernoulli { temperature } => ("temperature", temperature),
            LinkFamily::Gaussian { scale } | LinkFamily::Laplace { scale } => ("scale", scale),
        };
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(format!("link {name} must be positive, got {v}")));
        }
        Ok(())
    }

    pub fn is_real_valued(&self) -> bool {
        !matches!(self, LinkFamily::RelaxedBernoulli { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DagDistribution {
    theta: DMatrix<f64>,
    family: LinkFamily,
    order: Order,
}

impl DagDistribution {
    pub fn new(theta: DMatrix<f64>, family: LinkFamily, order: Order) -> Result<Self> {
        if theta.nrows() != theta.ncols() {
            return Err(Error::invalid("link parameters must be square"));
        }
        if theta.nrows() < 2 {
            return Err(Error::invalid("a DAG distribution needs at least 2 nodes"));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("link parameters must be finite"));
        }
        family.validate()?;
        Ok(Self {
            theta,
            family,
            order,
        })
    }

    pub fn gaussian(d: usize, mean: f64, scale: f64, order: Order) -> Result<Self> {
        Self::new(DMatrix::from_element(d, d, mean), LinkFamily::Gaussian { scale }, order)
    }

    /// Relaxed Bernoulli links with a common probability parameter in (0, 1).
    pub fn relaxed_bernoulli(d: usize, prob: f64, temperature: f64, order: Order) -> Result<Self> {
        if !(prob > 0.0 && prob < 1.0) {
            return Err(Error::invalid(format!("link probability must lie in (0, 1), got {prob}")));
        }
        Self::new(
            DMatrix::from_element(d, d, logit(prob)),
            LinkFamily::RelaxedBernoulli { temperature },
            order,
        )
    }

    pub fn dim(&self) -> usize {
        self.theta.nrows()
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn set_theta(&mut self, theta: DMatrix<f64>) -> Result<()> {
        if theta.shape() != self.theta.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: theta.nrows(),
            });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite {
                term: "link parameters".into(),
            });
        }
        self.theta = theta;
        Ok(())
    }

    pub fn family(&self) -> LinkFamily {
        self.family
    }

    pub fn set_family(&mut self, family: LinkFamily) -> Result<()> {
        family.validate()?;
        if std::mem::discriminant(&family) != std::mem::discriminant(&self.family) {
            return Err(Error::invalid("cannot change the link family kind"));
        }
        self.family = family;
        Ok(())
    }

    pub fn order(&self) -> Order {
        self.order
    }

    /// Probability parameter `θ = σ(logit)` of relaxed Bernoulli links.
    pub fn link_probs(&self) -> Option<DMatrix<f64>> {
        matches!(self.family, LinkFamily::RelaxedBernoulli { .. }).then(|| self.theta.map(sigmoid))
    }
}

/// Strictly upper (topological) or strictly lower (reverse) 0/1 matrix.
pub fn mask_matrix(d: usize, order: Order) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| {
        let keep = match order {
            Order::Topological => i < j,
            Order::Reverse => i > j,
        };
        if keep {
            1.0
        } else {
            0.0
        }
    })
}

/// `Πᵀ T Π`; soft `Π` gives a soft mask.
pub fn permuted_mask(perm_matrix: &DMatrix<f64>, order: Order) -> DMatrix<f64> {
    let t = mask_matrix(perm_matrix.nrows(), order);
    perm_matrix.transpose() * t * perm_matrix
}

/// Admissibility mask for a hard ordering, computed from ranks.
pub fn hard_mask(perm: &[usize], order: Order) -> DMatrix<f64> {
    let d = perm.len();
    let mut rank = vec![0; d];
    for (pos, &item) in perm.iter().enumerate() {
        rank[item] = pos;
    }
    DMatrix::from_fn(d, d, |i, j| {
        let keep = match order {
            Order::Topological => rank[i] < rank[j],
            Order::Reverse => rank[i] > rank[j],
        };
        if keep {
            1.0
        } else {
            0.0
        }
    })
}

/// Gradient w.r.t. `Π` of a scalar whose gradient w.r.t. `Πᵀ T Π` is `grad_mask`.
pub fn permuted_mask_backward(
    perm_matrix: &DMatrix<f64>,
    order: Order,
    grad_mask: &DMatrix<f64>,
) -> DMatrix<f64> {
    let t = mask_matrix(perm_matrix.nrows(), order);
    &t * perm_matrix * grad_mask.transpose() + t.transpose() * perm_matrix * grad_mask
}

/// `Θ ⊙ (Πᵀ T Π)`.
pub fn mask_params(theta: &DMatrix<f64>, perm: &PermutationSample, order: Order) -> Result<DMatrix<f64>> {
    let pm = perm.matrix();
    if theta.nrows() != theta.ncols() || theta.nrows() != pm.nrows() {
        return Err(Error::DimensionMismatch {
            expected: pm.nrows(),
            got: theta.nrows(),
        });
    }
    Ok(theta.component_mul(&permuted_mask(pm, order)))
}

/// A graph drawn given an ordering; zero wherever the ordering forbids a link.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSample {
    pub soft: DMatrix<f64>,
    /// Pre-sigmoid values `b` of relaxed Bernoulli links.
    pub pre_sigmoid: Option<DMatrix<f64>>,
    pub perm: Vec<usize>,
    pub order: Order,
    pub family: LinkFamily,
}

impl GraphSample {
    pub fn mask(&self) -> DMatrix<f64> {
        hard_mask(&self.perm, self.order)
    }
}

/// Standardized link noise for every position: logistic for relaxed
/// Bernoulli links, standard normal for Gaussian, standard Laplace for Laplace.
pub fn sample_link_noise<R: Rng + ?Sized>(d: usize, family: LinkFamily, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |_, _| match family {
        LinkFamily::RelaxedBernoulli { .. } => {
            let u = uniform_open(rng);
            u.ln() - (-u).ln_1p()
        }
        LinkFamily::Gaussian { .. } => rng.sample(StandardNormal),
        LinkFamily::Laplace { .. } => {
            let u = uniform_open(rng) - 0.5;
            -u.signum() * (-2.0 * u.abs()).ln_1p()
        }
    })
}

/// Deterministic reparameterized draw for fixed standardized noise.
pub fn graph_from_noise(perm: &PermutationSample, dist: &DagDistribution, noise: &DMatrix<f64>) -> GraphSample {
    let d = dist.dim();
    let mask = hard_mask(perm.perm(), dist.order);
    let theta = &dist.theta;
    let (soft, pre_sigmoid) = match dist.family {
        LinkFamily::RelaxedBernoulli { temperature } => {
            let b = DMatrix::from_fn(d, d, |i, j| {
                if mask[(i, j)] > 0.0 {
                    (theta[(i, j)] + noise[(i, j)]) / temperature
                } else {
                    0.0
                }
            });
            let a = DMatrix::from_fn(d, d, |i, j| if mask[(i, j)] > 0.0 { sigmoid(b[(i, j)]) } else { 0.0 });
            (a, Some(b))
        }
        LinkFamily::Gaussian { scale } | LinkFamily::Laplace { scale } => {
            let a = DMatrix::from_fn(d, d, |i, j| {
                if mask[(i, j)] > 0.0 {
                    theta[(i, j)] + scale * noise[(i, j)]
                } else {
                    0.0
                }
            });
            (a, None)
        }
    };
    GraphSample {
        soft,
        pre_sigmoid,
        perm: perm.perm().to_vec(),
        order: dist.order,
        family: dist.family,
    }
}

/// Draws every admissible link independently given the ordering.
pub fn sample_graph<R: Rng + ?Sized>(perm: &PermutationSample, dist: &DagDistribution, rng: &mut R) -> GraphSample {
    let noise = sample_link_noise(dist.dim(), dist.family, rng);
    graph_from_noise(perm, dist, &noise)
}

/// Log-density of the stored (unquantized) link values given the ordering.
/// Relaxed Bernoulli links are scored on `a ∈ (0, 1)` from the stored `b`.
pub fn log_prob_graph(sample: &GraphSample, perm: &PermutationSample, dist: &DagDistribution) -> Result<f64> {
    let d = dist.dim();
    check_sample(sample, perm, dist)?;
    let mask = hard_mask(perm.perm(), dist.order);
    let mut total = 0.0;
    for i in 0..d {
        for j in 0..d {
            if mask[(i, j)] == 0.0 {
                continue;
            }
            let theta = dist.theta[(i, j)];
            total += match dist.family {
                LinkFamily::RelaxedBernoulli { temperature } => {
                    let b = sample.pre_sigmoid.as_ref().map(|b| b[(i, j)]).unwrap_or_else(|| logit(sample.soft[(i, j)]));
                    // ln a = −softplus(−b), ln(1 − a) = −softplus(b)
                    relaxed_bernoulli_log_density_b(b, temperature, theta) + softplus(-b) + softplus(b)
                }
                LinkFamily::Gaussian { scale } => gaussian_log_density(sample.soft[(i, j)], theta, scale),
                LinkFamily::Laplace { scale } => laplace_log_density(sample.soft[(i, j)], theta, scale),
            };
        }
    }
    Ok(total)
}

/// Gradient of [`log_prob_graph`] w.r.t. `Θ` at fixed link values.
pub fn log_prob_graph_grad_theta(
    sample: &GraphSample,
    perm: &PermutationSample,
    dist: &DagDistribution,
) -> Result<DMatrix<f64>> {
    let d = dist.dim();
    check_sample(sample, perm, dist)?;
    let mask = hard_mask(perm.perm(), dist.order);
    Ok(DMatrix::from_fn(d, d, |i, j| {
        if mask[(i, j)] == 0.0 {
            return 0.0;
        }
        let theta = dist.theta[(i, j)];
        let x = sample.soft[(i, j)];
        match dist.family {
            LinkFamily::RelaxedBernoulli { temperature } => {
                let b = sample.pre_sigmoid.as_ref().map(|b| b[(i, j)]).unwrap_or_else(|| logit(x));
                1.0 - 2.0 * sigmoid(theta - temperature * b)
            }
            LinkFamily::Gaussian { scale } => (x - theta) / (scale * scale),
            LinkFamily::Laplace { scale } => (x - theta).signum() / scale,
        }
    }))
}

fn check_sample(sample: &GraphSample, perm: &PermutationSample, dist: &DagDistribution) -> Result<()> {
    let d = dist.dim();
    if perm.dim() != d || sample.soft.nrows() != d || sample.soft.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: sample.soft.nrows(),
        });
    }
    let mask = hard_mask(perm.perm(), dist.order);
    for i in 0..d {
        for j in 0..d {
            if mask[(i, j)] == 0.0 && sample.soft[(i, j)] != 0.0 {
                return Err(Error::Inconsistent { from: i, to: j });
            }
        }
    }
    Ok(())
}

pub fn gaussian_log_density(x: f64, mean: f64, scale: f64) -> f64 {
    let z = (x - mean) / scale;
    -0.5 * z * z - scale.ln() - 0.5 * LN_2PI
}

pub fn laplace_log_density(x: f64, loc: f64, scale: f64) -> f64 {
    -(2.0 * scale).ln() - (x - loc).abs() / scale
}

/// Relaxed Bernoulli draw with probability parameter `prob = α / (1 + α)` for a
/// fixed uniform `u`. Returns `(a, b)` with `a = σ(b)`.
pub fn relaxed_bernoulli_from_uniform(temperature: f64, prob: f64, u: f64) -> Result<(f64, f64)> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::invalid(format!("probability must lie in (0, 1), got {prob}")));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    let l = u.ln() - (-u).ln_1p();
    let b = (logit(prob) + l) / temperature;
    Ok((sigmoid(b), b))
}

pub fn relaxed_bernoulli_sample<R: Rng + ?Sized>(temperature: f64, prob: f64, rng: &mut R) -> Result<(f64, f64)> {
    relaxed_bernoulli_from_uniform(temperature, prob, uniform_open(rng))
}

/// Log-density of the pre-sigmoid value `b`.
pub fn relaxed_bernoulli_log_density_b(b: f64, temperature: f64, log_alpha: f64) -> f64 {
    temperature.ln() + log_alpha - temperature * b - 2.0 * softplus(log_alpha - temperature * b)
}

/// Gradients of [`relaxed_bernoulli_log_density_b`] w.r.t. `b` and `ln α`.
pub fn relaxed_bernoulli_log_density_b_grad(b: f64, temperature: f64, log_alpha: f64) -> (f64, f64) {
    let s = sigmoid(log_alpha - temperature * b);
    (-temperature + 2.0 * temperature * s, 1.0 - 2.0 * s)
}

/// Log-density of `a ∈ (0, 1)` under RelaxedBernoulli(τ, α).
pub fn relaxed_bernoulli_log_density(a: f64, temperature: f64, alpha: f64) -> Result<f64> {
    check_rb_args(a, temperature, alpha)?;
    let b = logit(a);
    Ok(relaxed_bernoulli_log_density_b(b, temperature, alpha.ln()) - a.ln() - (-a).ln_1p())
}

/// Gradients of [`relaxed_bernoulli_log_density`] w.r.t. `a` and `α`.
pub fn relaxed_bernoulli_log_density_grad(a: f64, temperature: f64, alpha: f64) -> Result<(f64, f64)> {
    check_rb_args(a, temperature, alpha)?;
    let b = logit(a);
    let (db, dla) = relaxed_bernoulli_log_density_b_grad(b, temperature, alpha.ln());
    let da = db / (a * (1.0 - a)) - 1.0 / a + 1.0 / (1.0 - a);
    Ok((da, dla / alpha))
}

fn check_rb_args(a: f64, temperature: f64, alpha: f64) -> Result<()> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Domain(format!("relaxed Bernoulli value must lie in (0, 1), got {a}")));
    }
    if !(temperature > 0.0) || !(alpha > 0.0) {
        return Err(Error::invalid("temperature and α must be positive"));
    }
    Ok(())
}

/// Binary graph: relaxed Bernoulli links with `a > threshold`, real-valued
/// links with `|a| > threshold`. Forbidden positions never become edges.
pub fn quantize(sample: &GraphSample, threshold: f64) -> Adjacency {
    let mask = sample.mask();
    let real = sample.family.is_real_valued();
    Adjacency::from_fn(sample.soft.nrows(), |i, j| {
        let v = sample.soft[(i, j)];
        mask[(i, j)] > 0.0 && if real { v.abs() > threshold } else { v > threshold }
    })
}

pub fn is_acyclic(adj: &Adjacency) -> Result<bool> {
    if adj.has_self_loop() {
        return Err(Error::invalid("adjacency has a nonzero diagonal"));
    }
    Ok(adj.topological_order().is_some())
}
