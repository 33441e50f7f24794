//! Synthetic benchmarks: Erdős-Rényi and scale-free DAGs with linear Gaussian
//! or random-MLP structural equations.

use nalgebra::DMatrix;
use rand::seq::{index::sample_weighted, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Adjacency;
use crate::sem::{MaskedMlpSem, DEFAULT_HIDDEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Er,
    Sf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimKind {
    LinearGaussian,
    RandomMlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub d: usize,
    pub expected_edges: f64,
    pub graph: GraphKind,
    pub sem: SimKind,
    pub n: usize,
    pub noise_var: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::invalid("at least 2 nodes are required"));
        }
        if !(self.expected_edges >= 0.0 && self.expected_edges.is_finite()) {
            return Err(Error::invalid("expected edge count must be nonnegative"));
        }
        let max = (self.d * (self.d - 1) / 2) as f64;
        if self.expected_edges > max {
            return Err(Error::invalid(format!(
                "expected edge count {} exceeds the maximum {max} for {} nodes",
                self.expected_edges, self.d
            )));
        }
        if self.n == 0 {
            return Err(Error::invalid("at least one sample is required"));
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return Err(Error::invalid("noise variance must be positive"));
        }
        Ok(())
    }

    /// Ground-truth graph and `n × d` data, fully determined by the spec.
    pub fn generate(&self) -> Result<(Adjacency, DMatrix<f64>)> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let graph = match self.graph {
            GraphKind::Er => gen_er_dag(self.d, self.expected_edges, &mut rng)?,
            GraphKind::Sf => gen_sf_dag(self.d, self.expected_edges, &mut rng)?,
        };
        let data = match self.sem {
            SimKind::LinearGaussian => simulate_linear(&graph, self.n, self.noise_var, &mut rng)?,
            SimKind::RandomMlp => simulate_mlp(&graph, self.n, self.noise_var, &mut rng)?,
        };
        Ok((graph, data))
    }
}

/// Each edge admissible under a uniformly random order is kept with
/// probability `Ē / (D(D−1)/2)`.
pub fn gen_er_dag<R: Rng + ?Sized>(d: usize, expected_edges: f64, rng: &mut R) -> Result<Adjacency> {
    let pairs = (d * d.saturating_sub(1) / 2) as f64;
    if !(expected_edges >= 0.0) || expected_edges > pairs {
        return Err(Error::invalid(format!(
            "expected edge count {expected_edges} is outside [0, {pairs}]"
        )));
    }
    let p = if pairs > 0.0 { expected_edges / pairs } else { 0.0 };
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(rng);
    let mut adj = Adjacency::empty(d);
    for a in 0..d {
        for b in a + 1..d {
            if rng.random::<f64>() < p {
                adj.set(order[a], order[b], true);
            }
        }
    }
    Ok(adj)
}

/// Preferential attachment with `m = round(Ē/D)`: the first `m` arrivals form
/// a clique, then every arrival links to `m` distinct earlier nodes chosen
/// with weight `degree + 1`. Edges point from the newer node to the older.
pub fn gen_sf_dag<R: Rng + ?Sized>(d: usize, expected_edges: f64, rng: &mut R) -> Result<Adjacency> {
    let m = (expected_edges / d as f64).round() as usize;
    if m < 1 {
        return Err(Error::invalid(format!(
            "scale-free graphs need round(Ē/D) ≥ 1, got Ē={expected_edges}, D={d}"
        )));
    }
    if d < m + 1 {
        return Err(Error::invalid(format!("scale-free graphs need D ≥ m + 1 = {}", m + 1)));
    }
    let mut arrival: Vec<usize> = (0..d).collect();
    arrival.shuffle(rng);
    let mut adj = Adjacency::empty(d);
    let mut degree = vec![0usize; d];
    for t in 1..m {
        for s in 0..t {
            adj.set(arrival[t], arrival[s], true);
            degree[arrival[t]] += 1;
            degree[arrival[s]] += 1;
        }
    }
    for t in m..d {
        let existing = &arrival[..t];
        let chosen = sample_weighted(rng, t, |k| (degree[existing[k]] + 1) as f64, m)
            .map_err(|e| Error::invalid(format!("attachment sampling failed: {e}")))?;
        let targets: Vec<usize> = chosen.iter().map(|k| existing[k]).collect();
        for old in targets {
            adj.set(arrival[t], old, true);
            degree[arrival[t]] += 1;
            degree[old] += 1;
        }
    }
    Ok(adj)
}

fn topological(adj: &Adjacency) -> Result<Vec<usize>> {
    adj.topological_order()
        .ok_or_else(|| Error::invalid("cannot simulate from a cyclic graph"))
}

/// `N(0, noise_var)` draws, filled row by row.
pub fn gaussian_noise<R: Rng + ?Sized>(n: usize, d: usize, noise_var: f64, rng: &mut R) -> DMatrix<f64> {
    let sd = noise_var.sqrt();
    let mut z = DMatrix::zeros(n, d);
    for r in 0..n {
        for c in 0..d {
            z[(r, c)] = sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    z
}

/// Unit weights, zero biases.
pub fn simulate_linear<R: Rng + ?Sized>(adj: &Adjacency, n: usize, noise_var: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    let order = topological(adj)?;
    let noise = gaussian_noise(n, adj.nodes(), noise_var, rng);
    simulate_linear_with_noise(adj, &adj.to_matrix(), &noise, &order)
}

/// `x_j = Σ_i W_ij x_i + z_j` evaluated along `order`.
pub fn simulate_linear_with_noise(
    adj: &Adjacency,
    weights: &DMatrix<f64>,
    noise: &DMatrix<f64>,
    order: &[usize],
) -> Result<DMatrix<f64>> {
    let d = adj.nodes();
    if noise.ncols() != d || weights.nrows() != d || weights.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: noise.ncols(),
        });
    }
    let mut x = noise.clone();
    for &j in order {
        for i in 0..d {
            if adj.get(i, j) {
                let w = weights[(i, j)];
                for r in 0..x.nrows() {
                    x[(r, j)] += w * x[(r, i)];
                }
            }
        }
    }
    Ok(x)
}

/// Per-node sigmoid networks (hidden width 10) with weights and biases
/// uniform in `±1`.
pub fn random_mlp<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<MaskedMlpSem> {
    let len = d * (DEFAULT_HIDDEN * d + 2 * DEFAULT_HIDDEN + 1);
    let params = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    MaskedMlpSem::from_params(d, DEFAULT_HIDDEN, 1.0, params)
}

pub fn simulate_mlp<R: Rng + ?Sized>(adj: &Adjacency, n: usize, noise_var: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    topological(adj)?;
    let mlp = random_mlp(adj.nodes(), rng)?;
    let noise = gaussian_noise(n, adj.nodes(), noise_var, rng);
    simulate_mlp_with_noise(adj, &mlp, &noise)
}

pub fn simulate_mlp_with_noise(adj: &Adjacency, mlp: &MaskedMlpSem, noise: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let order = topological(adj)?;
    let d = adj.nodes();
    if noise.ncols() != d || mlp.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: noise.ncols(),
        });
    }
    let mask = adj.to_matrix();
    let mut x = noise.clone();
    let mut row = vec![0.0; d];
    for r in 0..x.nrows() {
        for &j in &order {
            for (i, v) in row.iter_mut().enumerate() {
                *v = x[(r, i)];
            }
            x[(r, j)] += mlp.conditional_mean(&row, &mask, j);
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn er_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(gen_er_dag(6, 0.0, &mut rng).unwrap().nnz(), 0);
        let full = gen_er_dag(6, 15.0, &mut rng).unwrap();
        assert_eq!(full.nnz(), 15);
        assert!(full.topological_order().is_some());
        assert!(gen_er_dag(6, 15.5, &mut rng).is_err());
    }

    #[test]
    fn er_mean_edge_count_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (d, e, reps) = (16, 16.0, 10_000);
        let p = e / 120.0;
        let mut total = 0usize;
        for _ in 0..reps {
            let g = gen_er_dag(d, e, &mut rng).unwrap();
            assert!(g.topological_order().is_some());
            total += g.nnz();
        }
        let mean = total as f64 / reps as f64;
        let se = (120.0 * p * (1.0 - p) / reps as f64).sqrt();
        assert!((mean - e).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn sf_small_tree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let g = gen_sf_dag(3, 3.0, &mut rng).unwrap();
            assert_eq!(g.nnz(), 2);
            assert!(g.topological_order().is_some());
        }
    }

    #[test]
    fn sf_edge_count_is_deterministic_and_acyclic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(d, e) in &[(16usize, 16.0), (16, 64.0), (10, 30.0)] {
            let m = (e / d as f64).round() as usize;
            for _ in 0..200 {
                let g = gen_sf_dag(d, e, &mut rng).unwrap();
                assert_eq!(g.nnz(), m * (m - 1) / 2 + m * (d - m));
                assert!(g.topological_order().is_some());
            }
        }
        assert!(gen_sf_dag(4, 1.0, &mut rng).is_err());
        assert!(gen_sf_dag(3, 9.0, &mut rng).is_err());
    }

    #[test]
    fn sf_hubs_exceed_er_max_in_degree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let max_in = |g: &Adjacency| (0..g.nodes()).map(|j| (0..g.nodes()).filter(|&i| g.get(i, j)).count()).max().unwrap();
        let (mut sf, mut er) = (0usize, 0usize);
        for _ in 0..1000 {
            sf += max_in(&gen_sf_dag(16, 16.0, &mut rng).unwrap());
            er += max_in(&gen_er_dag(16, 16.0, &mut rng).unwrap());
        }
        assert!(sf > er, "sf {sf} er {er}");
    }

    #[test]
    fn linear_empty_graph_has_noise_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 20_000;
        let x = simulate_linear(&Adjacency::empty(3), n, 0.25, &mut rng).unwrap();
        for c in 0..3 {
            let col = x.column(c);
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            // Var of the sample variance is 2σ⁴/(n−1)
            let se = (2.0 * 0.25f64.powi(2) / (n - 1) as f64).sqrt();
            assert!((var - 0.25).abs() < 3.0 * se, "var {var}");
        }
    }

    #[test]
    fn degenerate_noise_copies_parent() {
        let adj = Adjacency::from_edges(2, &[(0, 1)]).unwrap();
        let mut noise = DMatrix::zeros(5, 2);
        for r in 0..5 {
            noise[(r, 0)] = r as f64 - 2.0;
        }
        let x = simulate_linear_with_noise(&adj, &adj.to_matrix(), &noise, &[0, 1]).unwrap();
        assert_eq!(x.column(0), x.column(1));
    }

    #[test]
    fn cyclic_graphs_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cyc = Adjacency::from_edges(2, &[(0, 1), (1, 0)]).unwrap();
        assert!(simulate_linear(&cyc, 3, 1.0, &mut rng).is_err());
        assert!(simulate_mlp(&cyc, 3, 1.0, &mut rng).is_err());
    }

    #[test]
    fn regeneration_with_same_noise_is_bit_exact() {
        let spec = SynthSpec {
            d: 6,
            expected_edges: 6.0,
            graph: GraphKind::Er,
            sem: SimKind::RandomMlp,
            n: 50,
            noise_var: 1.0,
            seed: 9,
        };
        assert_eq!(spec.generate().unwrap(), spec.generate().unwrap());
    }

    #[test]
    fn mlp_child_ignores_non_parents() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let adj = Adjacency::from_edges(3, &[(0, 2)]).unwrap();
        let mlp = random_mlp(3, &mut rng).unwrap();
        let noise = gaussian_noise(100, 3, 1.0, &mut rng);
        let a = simulate_mlp_with_noise(&adj, &mlp, &noise).unwrap();
        let mut perturbed = noise.clone();
        for r in 0..100 {
            perturbed[(r, 1)] += 5.0;
        }
        let b = simulate_mlp_with_noise(&adj, &mlp, &perturbed).unwrap();
        assert_eq!(a.column(2), b.column(2));
        assert_ne!(a.column(1), b.column(1));
    }

    #[test]
    fn mlp_empty_graph_is_constant_plus_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mlp = random_mlp(2, &mut rng).unwrap();
        let noise = gaussian_noise(10, 2, 1.0, &mut rng);
        let x = simulate_mlp_with_noise(&Adjacency::empty(2), &mlp, &noise).unwrap();
        let offset = x[(0, 0)] - noise[(0, 0)];
        for r in 0..10 {
            assert!((x[(r, 0)] - noise[(r, 0)] - offset).abs() < 1e-12);
        }
    }
}
