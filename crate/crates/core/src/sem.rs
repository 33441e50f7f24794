//! Additive-noise structural equation likelihoods.
//!
//! Every model scores `x_j − f_j(x)` under `Normal(0, σ²)` where `f_j` only
//! sees the coordinates gated by column `j` of the adjacency sample. Soft
//! adjacency values scale the inputs; exact zeros sever them.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{sigmoid, LN_2PI};

/// Hidden width of the per-node conditioner networks.
pub const DEFAULT_HIDDEN: usize = 10;

/// Observations (`N × D`) with sufficient statistics for the linear model.
#[derive(Clone, Debug)]
pub struct Dataset {
    x: DMatrix<f64>,
    names: Vec<String>,
    gram: DMatrix<f64>,
    sums: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        let names = (0..x.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(x, names)
    }

    pub fn with_names(x: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::invalid("dataset must have at least one row and one column"));
        }
        if names.len() != x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                got: names.len(),
            });
        }
        for row in 0..x.nrows() {
            for column in 0..x.ncols() {
                let v = x[(row, column)];
                if !v.is_finite() {
                    return Err(Error::Data {
                        row: row + 1,
                        column: column + 1,
                        message: format!("non-finite value {v}"),
                    });
                }
            }
        }
        let gram = x.transpose() * &x;
        let sums = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum()));
        Ok(Self { x, names, gram, sums })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn cols(&self) -> usize {
        self.x.ncols()
    }

    /// `XᵀX`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Column sums.
    pub fn sums(&self) -> &DVector<f64> {
        &self.sums
    }
}

/// Log-likelihood value with gradients w.r.t. the adjacency sample and the
/// model parameters (in [`Likelihood::params`] order).
#[derive(Clone, Debug)]
pub struct SemGrad {
    pub value: f64,
    pub adjacency: DMatrix<f64>,
    pub params: Vec<f64>,
}

pub trait Likelihood: Send + Sync {
    fn num_params(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, params: &[f64]) -> Result<()>;
    fn loglik(&self, data: &Dataset, adj: &DMatrix<f64>) -> Result<f64>;
    fn loglik_grad(&self, data: &Dataset, adj: &DMatrix<f64>) -> Result<SemGrad>;
}

fn check_shapes(data: &Dataset, adj: &DMatrix<f64>) -> Result<()> {
    let d = data.cols();
    if adj.nrows() != d || adj.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: adj.nrows(),
        });
    }
    Ok(())
}

fn check_noise(noise_scale: f64) -> Result<()> {
    if !(noise_scale > 0.0 && noise_scale.is_finite()) {
        return Err(Error::invalid(format!("noise scale must be positive, got {noise_scale}")));
    }
    Ok(())
}

fn gaussian_constant(n: usize, d: usize, noise_scale: f64) -> f64 {
    -((n * d) as f64) * (noise_scale.ln() + 0.5 * LN_2PI)
}

/// Linear Gaussian SEM: `mean_j = Σ_i E_ij x_i + b_j`.
///
/// In direct mode `E = A` (real-valued links carry the weights). In gated mode
/// `E = A ⊙ W` with a learned weight matrix `W`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSem {
    noise_scale: f64,
    bias: DVector<f64>,
    weights: Option<DMatrix<f64>>,
}

impl LinearSem {
    pub fn direct(d: usize, noise_scale: f64) -> Result<Self> {
        check_noise(noise_scale)?;
        Ok(Self {
            noise_scale,
            bias: DVector::zeros(d),
            weights: None,
        })
    }

    pub fn gated(d: usize, noise_scale: f64, initial_weight: f64) -> Result<Self> {
        check_noise(noise_scale)?;
        Ok(Self {
            noise_scale,
            bias: DVector::zeros(d),
            weights: Some(DMatrix::from_fn(d, d, |i, j| if i == j { 0.0 } else { initial_weight })),
        })
    }

    pub fn from_parts(noise_scale: f64, bias: DVector<f64>, weights: Option<DMatrix<f64>>) -> Result<Self> {
        check_noise(noise_scale)?;
        if let Some(w) = &weights {
            if w.nrows() != bias.len() || w.ncols() != bias.len() {
                return Err(Error::DimensionMismatch {
                    expected: bias.len(),
                    got: w.nrows(),
                });
            }
        }
        Ok(Self {
            noise_scale,
            bias,
            weights,
        })
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn weights(&self) -> Option<&DMatrix<f64>> {
        self.weights.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    fn effective(&self, adj: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.weights {
            Some(w) => adj.component_mul(w),
            None => adj.clone(),
        }
    }

    pub fn conditional_mean(&self, x: &[f64], adj: &DMatrix<f64>, node: usize) -> f64 {
        let e = self.effective(adj);
        (0..x.len()).map(|i| e[(i, node)] * x[i]).sum::<f64>() + self.bias[node]
    }

    /// Residual sums of squares per node from `XᵀX` and the column sums.
    fn rss(&self, data: &Dataset, e: &DMatrix<f64>) -> Vec<f64> {
        let s = data.gram();
        let m = data.sums();
        let n = data.rows() as f64;
        let se = s * e;
        (0..data.cols())
            .map(|j| {
                let col = e.column(j);
                let b = self.bias[j];
                let rss = s[(j, j)] - 2.0 * col.dot(&s.column(j)) + col.dot(&se.column(j))
                    - 2.0 * b * (m[j] - col.dot(m))
                    + n * b * b;
                rss.max(0.0)
            })
            .collect()
    }
}

impl Likelihood for LinearSem {
    fn num_params(&self) -> usize {
        self.bias.len() + self.weights.as_ref().map_or(0, |w| w.len())
    }

    /// Bias first, then gated weights row-major.
    fn params(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.bias.iter().copied().collect();
        if let Some(w) = &self.weights {
            p.extend(w.transpose().iter());
        }
        p
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        let d = self.bias.len();
        self.bias.copy_from_slice(&params[..d]);
        if let Some(w) = &mut self.weights {
            *w = DMatrix::from_row_slice(d, d, &params[d..]);
        }
        Ok(())
    }

    fn loglik(&self, data: &Dataset, adj: &DMatrix<f64>) -> Result<f64> {
        check_shapes(data, adj)?;
        let e = self.effective(adj);
        let rss: f64 = self.rss(data, &e).iter().sum();
        let var = self.noise_scale * self.noise_scale;
        Ok(-0.5 * rss / var + gaussian_constant(data.rows(), data.cols(), self.noise_scale))
    }

    fn loglik_grad(&self, data: &Dataset, adj: &DMatrix<f64>) -> Result<SemGrad> {
        check_shapes(data, adj)?;
        let d = data.cols();
        let e = self.effective(adj);
        let rss: f64 = self.rss(data, &e).iter().sum();
        let var = self.noise_scale * self.noise_scale;
        let value = -0.5 * rss / var + gaussian_constant(data.rows(), d, self.noise_scale);

        let s = data.gram();
        let m = data.sums();
        let n = data.rows() as f64;
        // d/dE_{:,j} = (S_{:,j} − S e_j − b_j m) / σ²
        let mut grad_e = s - s * &e;
        for j in 0..d {
            let b = self.bias[j];
            for i in 0..d {
                grad_e[(i, j)] = (grad_e[(i, j)] - b * m[i]) / var;
            }
        }
        let etm = e.transpose() * m;
        let grad_bias: Vec<f64> = (0..d).map(|j| (m[j] - etm[j] - n * self.bias[j]) / var).collect();

        let (grad_adj, mut params) = match &self.weights {
            None => (grad_e, grad_bias),
            Some(w) => {
                let ga = grad_e.component_mul(w);
                let gw = grad_e.component_mul(adj);
                let mut p = grad_bias;
                p.extend(gw.transpose().iter());
                (ga, p)
            }
        };
        params.shrink_to_fit();
        Ok(SemGrad {
            value,
            adjacency: grad_adj,
            params,
        })
    }
}

/// One single-hidden-layer sigmoid network per node, fed with `a_{·j} ⊙ x`.
///
/// Parameters are stored per node as `[W1 (H×D row-major), b1 (H), w2 (H), b2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedMlpSem {
    d: usize,
    hidden: usize,
    noise_scale: f64,
    params: Vec<f64>,
}

impl MaskedMlpSem {
    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn new<R: Rng + ?Sized>(d: usize, hidden: usize, noise_scale: f64, rng: &mut R) -> Result<Self> {
        check_noise(noise_scale)?;
        if d == 0 || hidden == 0 {
            return Err(Error::invalid("MLP needs at least one input and one hidden unit"));
        }
        let mut model = Self {
            d,
            hidden,
            noise_scale,
            params: vec![0.0; d * (hidden * d + 2 * hidden + 1)],
        };
        let in_bound = 1.0 / (d as f64).sqrt();
        let out_bound = 1.0 / (hidden as f64).sqrt();
        for j in 0..d {
            let off = model.block_offset(j);
            for k in 0..hidden * d {
                model.params[off + k] = rng.random_range(-in_bound..in_bound);
            }
            let w2 = off + hidden * d + hidden;
            for k in 0..hidden {
                model.params[w2 + k] = rng.random_range(-out_bound..out_bound);
            }
        }
        Ok(model)
    }

    pub fn from_params(d: usize, hidden: usize, noise_scale: f64, params: Vec<f64>) -> Result<Self> {
        check_noise(noise_scale)?;
        let expected = d * (hidden * d + 2 * hidden + 1);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        Ok(Self {
            d,
            hidden,
            noise_scale,
            params,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    fn block_len(&self) -> usize {
        self.hidden * self.d + 2 * self.hidden + 1
    }

    fn block_offset(&self, node: usize) -> usize {
        node * self.block_len()
    }

    /// Writes hidden activations into `h` and returns the node's mean.
    fn forward_node(&self, x: &[f64], adj: &DMatrix<f64>, node: usize, h: &mut [f64]) -> f64 {
        let (d, hd) = (self.d, self.hidden);
        let off = self.block_offset(node);
        let w1 = &self.params[off..off + hd * d];
        let b1 = &self.params[off + hd * d..off + hd * d + hd];
        let w2 = &self.params[off + hd * d + hd..off + hd * d + 2 * hd];
        let b2 = self.params[off + hd * d + 2 * hd];
        let mut out = b2;
        for k in 0..hd {
            let row = &w1[k * d..(k + 1) * d];
            let mut pre = b1[k];
            for i in 0..d {
                pre += row[i] * adj[(i, node)] * x[i];
            }
            h[k] = sigmoid(pre);
            out += w2[k] * h[k];
        }
        out
    }

    pub fn conditional_mean(&self, x: &[f64], adj: &DMatrix<f64>, node: usize) -> f64 {
        let mut h = vec![0.0; self.hidden];
        self.forward_node(x, adj, node, &mut h)
    }
}

impl Likelihood for MaskedMlpSem {
    fn num_params(&self) -> usize {
        self.params.len()
    }

    fn params(&self) -> Vec<f64> {
        self.params.clone()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn loglik(&self, data: &Dataset, adj: &DMatrix<f64>) -> Result<f64> {
        check_shapes(data, adj)?;
        let mut h = vec![0.0; self.hidden];
        let mut rss = 0.0;
        let mut row = vec![0.0; self.d];
        for n in 0..data.rows() {
            for (i, r) in row.iter_mut().enumerate() {
                *r = data.x()[(n, i)];
            }
            for j in 0..self.d {
                let r = row[j] - self.forward_node(&row, adj, j, &mut h);
                rss += r * r;
            }
        }
        let var = self.noise_scale * self.noise_scale;
        Ok(-0.5 * rss / var + gaussian_constant(data.rows(), self.d, self.noise_scale))
    }

    fn loglik_grad(&self, data: &Dataset, adj: &DMatrix<f64>) -> Result<SemGrad> {
        check_shapes(data, adj)?;
        let (d, hd) = (self.d, self.hidden);
        let var = self.noise_scale * self.noise_scale;
        let mut grad = vec![0.0; self.params.len()];
        let mut grad_adj = DMatrix::zeros(d, d);
        let mut h = vec![0.0; hd];
        let mut row = vec![0.0; d];
        let mut rss = 0.0;
        for n in 0..data.rows() {
            for (i, r) in row.iter_mut().enumerate() {
                *r = data.x()[(n, i)];
            }
            for j in 0..d {
                let mean = self.forward_node(&row, adj, j, &mut h);
                let r = row[j] - mean;
                rss += r * r;
                let g = r / var;
                let off = self.block_offset(j);
                let w1_off = off;
                let b1_off = off + hd * d;
                let w2_off = b1_off + hd;
                let b2_off = w2_off + hd;
                grad[b2_off] += g;
                for k in 0..hd {
                    grad[w2_off + k] += g * h[k];
                    let gpre = g * self.params[w2_off + k] * h[k] * (1.0 - h[k]);
                    grad[b1_off + k] += gpre;
                    for i in 0..d {
                        let w = self.params[w1_off + k * d + i];
                        grad[w1_off + k * d + i] += gpre * adj[(i, j)] * row[i];
                        grad_adj[(i, j)] += gpre * w * row[i];
                    }
                }
            }
        }
        Ok(SemGrad {
            value: -0.5 * rss / var + gaussian_constant(data.rows(), d, self.noise_scale),
            adjacency: grad_adj,
            params: grad,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SemModel {
    Linear(LinearSem),
    Mlp(MaskedMlpSem),
}

impl SemModel {
    pub fn noise_scale(&self) -> f64 {
        match self {
            SemModel::Linear(m) => m.noise_scale(),
            SemModel::Mlp(m) => m.noise_scale(),
        }
    }

    pub fn conditional_mean(&self, x: &[f64], adj: &DMatrix<f64>, node: usize) -> f64 {
        match self {
            SemModel::Linear(m) => m.conditional_mean(x, adj, node),
            SemModel::Mlp(m) => m.conditional_mean(x, adj, node),
        }
    }

    fn inner(&self) -> &dyn Likelihood {
        match self {
            SemModel::Linear(m) => m,
            SemModel::Mlp(m) => m,
        }
    }
}

impl Likelihood for SemModel {
    fn num_params(&self) -> usize {
        self.inner().num_params()
    }

    fn params(&self) -> Vec<f64> {
        self.inner().params()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        match self {
            SemModel::Linear(m) => m.set_params(params),
            SemModel::Mlp(m) => m.set_params(params),
        }
    }

    fn loglik(&self, data: &Dataset, adj: &DMatrix<f64>) -> Result<f64> {
        self.inner().loglik(data, adj)
    }

    fn loglik_grad(&self, data: &Dataset, adj: &DMatrix<f64>) -> Result<SemGrad> {
        self.inner().loglik_grad(data, adj)
    }
}
