//! Distributions over permutations.
//!
//! Rates are `β = softmax(log_scores)`. A permutation `π` lists items in
//! selection order: `π[0]` is the item with the smallest exponential arrival
//! time (equivalently the largest Gumbel-perturbed log-score), and
//!
//! ```text
//! log p(π) = Σ_k [ ln β_{π_k} − ln Σ_{j ≥ k} β_{π_j} ]
//! ```
//!
//! Permutation matrices follow `Π[i][j] = 1` iff `j == π[i]`, so `Π·β` lists the
//! rates in selection order.
//!
//! Two hard samplers induce this law: an exponential race (sort arrival times
//! ascending) and Gumbel-Max (sort perturbed log-scores descending). A third,
//! [`PermutationDistribution::sample_hard_categorical`], draws one item at a time
//! from the remaining set. Soft samples replace the argsort by SoftSort.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{
    argsort_ascending, argsort_descending, is_permutation, log_softmax, log_softmax_backward,
    softmax, uniform_open,
};

/// Relaxation temperature used when none is given.
pub const DEFAULT_TEMPERATURE: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    /// Exponential (Gamma with unit shape) arrival times sorted ascending.
    GammaExponential,
    /// Log-scores perturbed with unit-scale Gumbel noise sorted descending.
    #[default]
    GumbelMax,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PermutationDistribution {
    log_scores: Vec<f64>,
    construction: Construction,
    temperature: f64,
}

impl PermutationDistribution {
    pub fn new(log_scores: Vec<f64>, construction: Construction, temperature: f64) -> Result<Self> {
        if log_scores.len() < 2 {
            return Err(Error::invalid("a permutation distribution needs at least 2 items"));
        }
        if log_scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("log-scores must be finite"));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
        }
        Ok(Self {
            log_scores,
            construction,
            temperature,
        })
    }

    pub fn uniform(d: usize, construction: Construction, temperature: f64) -> Result<Self> {
        Self::new(vec![0.0; d], construction, temperature)
    }

    /// Builds the distribution from strictly positive, possibly unnormalized rates.
    pub fn from_rates(rates: &[f64], construction: Construction, temperature: f64) -> Result<Self> {
        if rates.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::invalid("rates must be strictly positive and finite"));
        }
        Self::new(rates.iter().map(|r| r.ln()).collect(), construction, temperature)
    }

    /// Only the unit (exponential) shape is supported.
    pub fn with_shape(self, shape: f64) -> Result<Self> {
        if shape != 1.0 {
            return Err(Error::invalid(format!(
                "only Gamma shape 1 is supported, got {shape}"
            )));
        }
        Ok(self)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.log_scores.len()
    }

    pub fn log_scores(&self) -> &[f64] {
        &self.log_scores
    }

    pub fn set_log_scores(&mut self, log_scores: &[f64]) -> Result<()> {
        if log_scores.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: log_scores.len(),
            });
        }
        if log_scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite {
                term: "permutation log-scores".into(),
            });
        }
        self.log_scores.copy_from_slice(log_scores);
        Ok(())
    }

    pub fn construction(&self) -> Construction {
        self.construction
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Normalized rates `β`.
    pub fn rates(&self) -> Vec<f64> {
        softmax(&self.log_scores)
    }

    pub fn log_rates(&self) -> Vec<f64> {
        log_softmax(&self.log_scores)
    }

    pub fn log_prob(&self, perm: &[usize]) -> Result<f64> {
        self.check_perm(perm)?;
        let rates = self.rates();
        let ordered: Vec<f64> = perm.iter().map(|&p| rates[p]).collect();
        Ok(plackett_luce_log_prob(&ordered))
    }

    /// Log-probability of a matrix-represented sample, evaluated on `Π·β`.
    pub fn log_prob_sample(&self, sample: &PermutationSample) -> Result<f64> {
        let ordered = permute_params(sample, &self.rates())?;
        Ok(plackett_luce_log_prob(&ordered))
    }

    /// Gradients of [`Self::log_prob_sample`] w.r.t. the log-scores and the
    /// sample's permutation matrix.
    pub fn log_prob_sample_backward(&self, sample: &PermutationSample) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let rates = self.rates();
        let ordered = permute_params(sample, &rates)?;
        let grad_ordered = plackett_luce_log_prob_grad(&ordered);
        let d = self.dim();
        let matrix = sample.matrix();
        let mut grad_rates = vec![0.0; d];
        let mut grad_matrix = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                grad_rates[j] += matrix[(i, j)] * grad_ordered[i];
                grad_matrix[(i, j)] = grad_ordered[i] * rates[j];
            }
        }
        let grad_log_rates: Vec<f64> = grad_rates.iter().zip(&rates).map(|(g, r)| g * r).collect();
        Ok((log_softmax_backward(&rates, &grad_log_rates), grad_matrix))
    }

    /// Distribution of the index of the first arrival: `β_k / Σ_j β_j`.
    pub fn min_index_pmf(&self) -> Vec<f64> {
        self.rates()
    }

    /// Exponential arrival times `v_j = −ln(1 − z_j) / β_j` for uniforms `z`.
    pub fn exponential_times(&self, uniforms: &[f64]) -> Vec<f64> {
        self.rates()
            .iter()
            .zip(uniforms)
            .map(|(b, z)| -(-z).ln_1p() / b)
            .collect()
    }

    /// Gumbel-perturbed log-scores `ln β_i − ln(−ln z_i)`.
    pub fn gumbel_scores(&self, uniforms: &[f64]) -> Vec<f64> {
        self.log_rates()
            .iter()
            .zip(uniforms)
            .map(|(lb, z)| lb - (-z.ln()).ln())
            .collect()
    }

    /// Perturbed scores under the configured construction, oriented so that a
    /// descending sort yields the permutation (exponential times are negated).
    pub fn perturbed_scores(&self, uniforms: &[f64]) -> Vec<f64> {
        match self.construction {
            Construction::GumbelMax => self.gumbel_scores(uniforms),
            Construction::GammaExponential => {
                self.exponential_times(uniforms).into_iter().map(|v| -v).collect()
            }
        }
    }

    /// Pulls a gradient w.r.t. [`Self::perturbed_scores`] back to the log-scores,
    /// holding the uniforms fixed.
    pub fn perturbed_scores_backward(&self, uniforms: &[f64], grad_scores: &[f64]) -> Vec<f64> {
        let rates = self.rates();
        let grad_log_rates: Vec<f64> = match self.construction {
            Construction::GumbelMax => grad_scores.to_vec(),
            // −v = ln(1 − z) / β, so d(−v)/d ln β = v
            Construction::GammaExponential => self
                .exponential_times(uniforms)
                .iter()
                .zip(grad_scores)
                .map(|(v, g)| g * v)
                .collect(),
        };
        log_softmax_backward(&rates, &grad_log_rates)
    }

    pub fn sample_uniforms<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim()).map(|_| uniform_open(rng)).collect()
    }

    /// Exponential race: sort arrival times ascending.
    pub fn sample_hard<R: Rng + ?Sized>(&self, rng: &mut R) -> PermutationSample {
        let z = self.sample_uniforms(rng);
        let v = self.exponential_times(&z);
        PermutationSample::hard_unchecked(argsort_ascending(&v))
    }

    /// Sequential categorical draws on the shrinking set of remaining items.
    pub fn sample_hard_categorical<R: Rng + ?Sized>(&self, rng: &mut R) -> PermutationSample {
        let rates = self.rates();
        let mut remaining: Vec<usize> = (0..self.dim()).collect();
        let mut perm = Vec::with_capacity(self.dim());
        while remaining.len() > 1 {
            let total: f64 = remaining.iter().map(|&k| rates[k]).sum();
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = remaining.len() - 1;
            for (pos, &k) in remaining.iter().enumerate() {
                acc += rates[k];
                if target < acc {
                    pick = pos;
                    break;
                }
            }
            perm.push(remaining.remove(pick));
        }
        perm.push(remaining[0]);
        PermutationSample::hard_unchecked(perm)
    }

    pub fn gumbel_perturbed_scores<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = self.sample_uniforms(rng);
        self.gumbel_scores(&z)
    }

    /// Gumbel-Max: sort perturbed log-scores descending.
    pub fn sample_hard_gumbel<R: Rng + ?Sized>(&self, rng: &mut R) -> PermutationSample {
        PermutationSample::hard_unchecked(argsort_descending(&self.gumbel_perturbed_scores(rng)))
    }

    /// Hard sample using the configured construction.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PermutationSample {
        match self.construction {
            Construction::GammaExponential => self.sample_hard(rng),
            Construction::GumbelMax => self.sample_hard_gumbel(rng),
        }
    }

    pub fn sample_soft<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PermutationSample> {
        let z = self.sample_uniforms(rng);
        self.soft_from_uniforms(&z)
    }

    /// SoftSort sample for fixed uniforms; records the exact argsort as well.
    pub fn soft_from_uniforms(&self, uniforms: &[f64]) -> Result<PermutationSample> {
        if uniforms.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: uniforms.len(),
            });
        }
        let scores = self.perturbed_scores(uniforms);
        let (matrix, perm) = softsort(&scores, self.temperature)?;
        Ok(PermutationSample {
            perm,
            matrix,
            is_hard: false,
            scores: Some(scores),
        })
    }

    fn check_perm(&self, perm: &[usize]) -> Result<()> {
        if perm.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: perm.len(),
            });
        }
        if !is_permutation(perm) {
            return Err(Error::invalid(format!("{perm:?} is not a permutation")));
        }
        Ok(())
    }
}

/// A permutation together with its (hard or SoftSort) matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PermutationSample {
    perm: Vec<usize>,
    matrix: DMatrix<f64>,
    is_hard: bool,
    scores: Option<Vec<f64>>,
}

impl PermutationSample {
    pub fn from_perm(perm: Vec<usize>) -> Result<Self> {
        if !is_permutation(&perm) {
            return Err(Error::invalid(format!("{perm:?} is not a permutation")));
        }
        Ok(Self::hard_unchecked(perm))
    }

    pub fn identity(d: usize) -> Self {
        Self::hard_unchecked((0..d).collect())
    }

    fn hard_unchecked(perm: Vec<usize>) -> Self {
        let matrix = permutation_matrix(&perm);
        Self {
            perm,
            matrix,
            is_hard: true,
            scores: None,
        }
    }

    /// Selection order; for soft samples this is the exact argsort of the scores.
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn is_hard(&self) -> bool {
        self.is_hard
    }

    /// Perturbed scores that produced a soft sample.
    pub fn scores(&self) -> Option<&[f64]> {
        self.scores.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Position of each item in the selection order.
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0; self.perm.len()];
        for (pos, &item) in self.perm.iter().enumerate() {
            ranks[item] = pos;
        }
        ranks
    }
}

pub fn permutation_matrix(perm: &[usize]) -> DMatrix<f64> {
    let d = perm.len();
    let mut m = DMatrix::zeros(d, d);
    for (i, &p) in perm.iter().enumerate() {
        m[(i, p)] = 1.0;
    }
    m
}

/// Plackett-Luce log-probability of rates already arranged in selection order.
pub fn plackett_luce_log_prob(ordered: &[f64]) -> f64 {
    let mut remaining: f64 = ordered.iter().sum();
    let mut total = 0.0;
    for &v in ordered {
        total += v.ln() - remaining.ln();
        remaining -= v;
    }
    total
}

pub fn plackett_luce_log_prob_grad(ordered: &[f64]) -> Vec<f64> {
    let d = ordered.len();
    // tail[k] = Σ_{j ≥ k} v_j, accumulated from the back for accuracy
    let mut tail = vec![0.0; d];
    let mut acc = 0.0;
    for k in (0..d).rev() {
        acc += ordered[k];
        tail[k] = acc;
    }
    let mut inv_prefix = 0.0;
    (0..d)
        .map(|m| {
            inv_prefix += 1.0 / tail[m];
            1.0 / ordered[m] - inv_prefix
        })
        .collect()
}

/// Row-wise `softmax(−|sort(s)·1ᵀ − 1·sᵀ| / τ)` with a descending sort.
/// Returns the soft matrix and the exact descending argsort.
pub fn softsort(scores: &[f64], temperature: f64) -> Result<(DMatrix<f64>, Vec<usize>)> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    let d = scores.len();
    let perm = argsort_descending(scores);
    let mut m = DMatrix::zeros(d, d);
    let mut row = vec![0.0; d];
    for i in 0..d {
        let sorted = scores[perm[i]];
        for j in 0..d {
            row[j] = -(sorted - scores[j]).abs() / temperature;
        }
        for (j, p) in softmax(&row).into_iter().enumerate() {
            m[(i, j)] = p;
        }
    }
    Ok((m, perm))
}

/// Vector-Jacobian product of [`softsort`] w.r.t. the scores.
pub fn softsort_backward(
    scores: &[f64],
    soft: &DMatrix<f64>,
    perm: &[usize],
    temperature: f64,
    grad: &DMatrix<f64>,
) -> Vec<f64> {
    let d = scores.len();
    let mut out = vec![0.0; d];
    for i in 0..d {
        let sorted = scores[perm[i]];
        let dot: f64 = (0..d).map(|k| grad[(i, k)] * soft[(i, k)]).sum();
        let mut grad_sorted = 0.0;
        for j in 0..d {
            let grad_logit = soft[(i, j)] * (grad[(i, j)] - dot);
            let sign = sign(sorted - scores[j]);
            out[j] += grad_logit * sign / temperature;
            grad_sorted -= grad_logit * sign / temperature;
        }
        out[perm[i]] += grad_sorted;
    }
    out
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Hard matrix for the forward pass. Under the straight-through contract the
/// gradient w.r.t. the returned matrix is applied to the soft matrix unchanged.
///
/// Uses the row-wise argmax when it is a bijection, and the recorded exact
/// argsort otherwise.
pub fn straight_through_project(sample: &PermutationSample) -> PermutationSample {
    if sample.is_hard {
        return sample.clone();
    }
    let m = &sample.matrix;
    let argmax: Vec<usize> = (0..m.nrows())
        .map(|i| {
            let mut best = 0;
            for j in 1..m.ncols() {
                if m[(i, j)] > m[(i, best)] {
                    best = j;
                }
            }
            best
        })
        .collect();
    let perm = if is_permutation(&argmax) {
        argmax
    } else {
        sample.perm.clone()
    };
    let mut hard = PermutationSample::hard_unchecked(perm);
    hard.scores = sample.scores.clone();
    hard
}

/// `Π · params`.
pub fn permute_params(sample: &PermutationSample, params: &[f64]) -> Result<Vec<f64>> {
    let m = &sample.matrix;
    if m.ncols() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: m.ncols(),
            got: params.len(),
        });
    }
    Ok((0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * params[j]).sum())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(rates: &[f64]) -> PermutationDistribution {
        PermutationDistribution::from_rates(rates, Construction::GammaExponential, 0.5).unwrap()
    }

    #[test]
    fn two_item_symmetric_log_prob() {
        let lp = dist(&[0.5, 0.5]).log_prob(&[0, 1]).unwrap();
        assert!((lp - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn three_item_hand_chain() {
        let lp = dist(&[0.7, 0.2, 0.1]).log_prob(&[0, 1, 2]).unwrap();
        let expected = (0.7f64 * (0.2 / 0.3)).ln();
        assert!((lp - expected).abs() < 1e-12);
        assert!((lp - (-0.76214)).abs() < 1e-5);
    }

    #[test]
    fn uniform_is_inverse_factorial() {
        for d in 2..=7usize {
            let u = PermutationDistribution::uniform(d, Construction::GumbelMax, 0.5).unwrap();
            let perm: Vec<usize> = (0..d).rev().collect();
            let log_fact: f64 = (1..=d).map(|k| (k as f64).ln()).sum();
            assert!((u.log_prob(&perm).unwrap() + log_fact).abs() < 1e-12);
        }
    }

    #[test]
    fn log_prob_rejects_bad_input() {
        let d = dist(&[0.2, 0.3, 0.5]);
        assert!(matches!(d.log_prob(&[0, 0, 1]), Err(Error::InvalidArgument(_))));
        assert!(matches!(d.log_prob(&[0, 1]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn construction_rejects_degenerate_inputs() {
        assert!(PermutationDistribution::uniform(1, Construction::GumbelMax, 0.5).is_err());
        assert!(PermutationDistribution::uniform(3, Construction::GumbelMax, 0.0).is_err());
        let d = PermutationDistribution::uniform(3, Construction::GumbelMax, 0.5).unwrap();
        assert!(d.clone().with_shape(2.0).is_err());
        assert!(d.with_shape(1.0).is_ok());
    }

    #[test]
    fn rates_are_normalized() {
        let d = PermutationDistribution::new(vec![3.0, -1.0, 0.2, 7.5], Construction::GumbelMax, 0.5).unwrap();
        let s: f64 = d.rates().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(d.rates().iter().all(|&r| r > 0.0));
    }

    #[test]
    fn min_index_pmf_is_normalized_rates() {
        let p = dist(&[0.5, 0.3, 0.2]).min_index_pmf();
        for (a, b) in p.iter().zip([0.5, 0.3, 0.2]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn exponential_times_by_hand() {
        let d = dist(&[0.5, 0.5]);
        let v = d.exponential_times(&[0.1, 0.9]);
        assert!((v[0] - 0.21072).abs() < 1e-5);
        assert!((v[1] - 4.60517).abs() < 1e-5);
        assert_eq!(argsort_ascending(&v), vec![0, 1]);
        let v = d.exponential_times(&[0.9, 0.1]);
        assert_eq!(argsort_ascending(&v), vec![1, 0]);
    }

    #[test]
    fn equal_gumbel_perturbations_tie_by_index() {
        let d = PermutationDistribution::uniform(2, Construction::GumbelMax, 0.5).unwrap();
        let e = (-1.0f64).exp();
        let s = d.gumbel_scores(&[e, e]);
        assert!((s[0] - 0.5f64.ln()).abs() < 1e-12);
        assert_eq!(s[0], s[1]);
        assert_eq!(argsort_descending(&s), vec![0, 1]);
    }

    #[test]
    fn negative_log_exponential_equals_gumbel_score() {
        let d = dist(&[0.6, 0.3, 0.1]);
        let z = [0.2, 0.55, 0.97];
        // race with 1 − z gives arrival −ln(z)/β
        let flipped: Vec<f64> = z.iter().map(|u| 1.0 - u).collect();
        let v = d.exponential_times(&flipped);
        let g = d.gumbel_scores(&z);
        for (vi, gi) in v.iter().zip(&g) {
            assert!((-vi.ln() - gi).abs() < 1e-9);
        }
    }

    #[test]
    fn softsort_row_by_hand() {
        let (m, perm) = softsort(&[3.0, 1.0, 2.0], 1.0).unwrap();
        assert_eq!(perm, vec![0, 2, 1]);
        let expected = [0.66524, 0.09003, 0.24473];
        for j in 0..3 {
            assert!((m[(0, j)] - expected[j]).abs() < 1e-5);
        }
        for i in 0..3 {
            assert!((m.row(i).sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn softsort_zero_temperature_limit_is_hard() {
        let (m, perm) = softsort(&[3.0, 1.0, 2.0], 1e-3).unwrap();
        let hard = permutation_matrix(&perm);
        assert!((m - hard).abs().max() < 1e-12);
        assert!(softsort(&[1.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn projection_by_row_argmax() {
        let soft = PermutationSample {
            perm: vec![0, 1, 2],
            matrix: DMatrix::from_row_slice(3, 3, &[0.7, 0.2, 0.1, 0.1, 0.8, 0.1, 0.2, 0.1, 0.7]),
            is_hard: false,
            scores: None,
        };
        let hard = straight_through_project(&soft);
        assert!(hard.is_hard());
        assert_eq!(hard.matrix(), &DMatrix::<f64>::identity(3, 3));
        assert_eq!(straight_through_project(&hard), hard);
    }

    #[test]
    fn projection_falls_back_on_argmax_collision() {
        let soft = PermutationSample {
            perm: vec![1, 0],
            matrix: DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]),
            is_hard: false,
            scores: None,
        };
        assert_eq!(straight_through_project(&soft).perm(), &[1, 0]);
    }

    #[test]
    fn permute_params_swaps_and_checks_dims() {
        let s = PermutationSample::from_perm(vec![1, 0]).unwrap();
        assert_eq!(permute_params(&s, &[2.0, 5.0]).unwrap(), vec![5.0, 2.0]);
        let id = PermutationSample::identity(3);
        assert_eq!(permute_params(&id, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(permute_params(&id, &[1.0]).is_err());
    }

    #[test]
    fn soft_permuted_params_approach_hard_reorder() {
        let d = PermutationDistribution::new(vec![0.1, 0.5, -0.3, 0.9], Construction::GumbelMax, 0.5).unwrap();
        let z = [0.3, 0.8, 0.45, 0.1];
        let params = [1.0, 2.0, 3.0, 4.0];
        let mut prev = f64::INFINITY;
        for &tau in &[0.5, 0.1, 0.02, 0.002, 0.0002] {
            let d = PermutationDistribution::new(d.log_scores().to_vec(), Construction::GumbelMax, tau).unwrap();
            let soft = d.soft_from_uniforms(&z).unwrap();
            let hard = straight_through_project(&soft);
            let ps = permute_params(&soft, &params).unwrap();
            let ph = permute_params(&hard, &params).unwrap();
            let err: f64 = ps.iter().zip(&ph).map(|(a, b)| (a - b).abs()).sum();
            assert!(err <= prev + 1e-15);
            prev = err;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn matrix_log_prob_matches_vector_log_prob() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for construction in [Construction::GumbelMax, Construction::GammaExponential] {
            let d = PermutationDistribution::new(vec![0.4, -1.0, 2.0, 0.0, 0.3], construction, 0.5).unwrap();
            for _ in 0..50 {
                let s = straight_through_project(&d.sample_soft(&mut rng).unwrap());
                let a = d.log_prob_sample(&s).unwrap();
                let b = d.log_prob(s.perm()).unwrap();
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scale_invariance_of_rates() {
        let a = dist(&[0.7, 0.2, 0.1]);
        let b = dist(&[7.0, 2.0, 1.0]);
        for perm in [[0, 1, 2], [2, 0, 1], [1, 2, 0]] {
            assert!((a.log_prob(&perm).unwrap() - b.log_prob(&perm).unwrap()).abs() < 1e-12);
        }
    }
}
