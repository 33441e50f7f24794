use dagperm::perm::{plackett_luce_log_prob, Construction, PermutationDistribution};
use itertools::Itertools;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::collections::HashMap;

/// Π_k β_{π_k} / Σ_{j ≥ k} β_{π_j}, written out from the sequential-choice definition.
fn sequential_choice_prob(rates: &[f64], perm: &[usize]) -> f64 {
    let mut remaining: Vec<usize> = (0..rates.len()).collect();
    let mut p = 1.0;
    for &item in perm {
        let mass: f64 = remaining.iter().map(|&r| rates[r]).sum();
        p *= rates[item] / mass;
        remaining.retain(|&r| r != item);
    }
    p
}

fn counts<F: FnMut() -> Vec<usize>>(n: usize, mut draw: F) -> HashMap<Vec<usize>, usize> {
    let mut c = HashMap::new();
    for _ in 0..n {
        *c.entry(draw()).or_insert(0) += 1;
    }
    c
}

proptest! {
    #[test]
    fn probabilities_sum_to_one(scores in proptest::collection::vec(-3.0f64..3.0, 2..=5)) {
        let dist = PermutationDistribution::new(scores.clone(), Construction::GumbelMax, 0.5).unwrap();
        let d = scores.len();
        let total: f64 = (0..d).permutations(d).map(|p| dist.log_prob(&p).unwrap().exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn log_prob_matches_sequential_choice(scores in proptest::collection::vec(-3.0f64..3.0, 4)) {
        let dist = PermutationDistribution::new(scores, Construction::GumbelMax, 0.5).unwrap();
        let rates = dist.rates();
        for p in (0..4).permutations(4) {
            let a = dist.log_prob(&p).unwrap();
            let b = sequential_choice_prob(&rates, &p).ln();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_sample_records_exact_argsort(scores in proptest::collection::vec(-3.0f64..3.0, 5), seed in any::<u64>()) {
        let dist = PermutationDistribution::new(scores, Construction::GammaExponential, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = dist.sample_uniforms(&mut rng);
        let soft = dist.soft_from_uniforms(&z).unwrap();
        let v = dist.exponential_times(&z);
        let mut expected: Vec<usize> = (0..5).collect();
        expected.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        prop_assert_eq!(soft.perm(), &expected[..]);
    }
}

#[test]
fn unnormalized_scores_give_the_same_distribution() {
    let ordered = [0.4, 0.1, 0.3, 0.2];
    let scaled: Vec<f64> = ordered.iter().map(|v| v * 17.0).collect();
    assert!((plackett_luce_log_prob(&ordered) - plackett_luce_log_prob(&scaled)).abs() < 1e-12);
}

#[test]
fn first_arrival_follows_normalized_rates() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let dist = PermutationDistribution::from_rates(&[0.1, 0.2, 0.3, 0.4], Construction::GammaExponential, 0.5).unwrap();
    let n = 100_000;
    let mut first = [0usize; 4];
    for _ in 0..n {
        first[dist.sample_hard(&mut rng).perm()[0]] += 1;
    }
    for (k, &p) in dist.min_index_pmf().iter().enumerate() {
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((first[k] as f64 / n as f64 - p).abs() < 3.0 * se, "item {k}");
    }
}

#[test]
fn every_sampler_fits_the_exact_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let scores: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dist = PermutationDistribution::new(scores, Construction::GumbelMax, 0.5).unwrap();
    let rates = dist.rates();
    let n = 50_000;
    let critical = ChiSquared::new(23.0).unwrap().inverse_cdf(1.0 - 1e-3);
    let samplers: [(&str, Box<dyn Fn(&mut ChaCha8Rng) -> Vec<usize>>); 3] = [
        ("exponential race", Box::new(|r| dist.sample_hard(r).perm().to_vec())),
        ("categorical", Box::new(|r| dist.sample_hard_categorical(r).perm().to_vec())),
        ("gumbel", Box::new(|r| dist.sample_hard_gumbel(r).perm().to_vec())),
    ];
    for (name, sampler) in samplers.iter() {
        let c = counts(n, || sampler(&mut rng));
        let stat: f64 = (0..4)
            .permutations(4)
            .map(|p| {
                let expected = n as f64 * sequential_choice_prob(&rates, &p);
                let observed = *c.get(&p).unwrap_or(&0) as f64;
                (observed - expected).powi(2) / expected
            })
            .sum();
        assert!(stat < critical, "{name}: chi-square {stat} ≥ {critical}");
    }
}
