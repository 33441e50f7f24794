use dagperm::dagdist::{relaxed_bernoulli_log_density, relaxed_bernoulli_log_density_grad, relaxed_bernoulli_sample};
use dagperm::diff::{finite_diff_grad, max_relative_error};
use dagperm::numeric::sigmoid;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// ∫₀¹ p(a) da after substituting a = σ(b), trapezoid rule on |b| ≤ 36.
fn total_mass(tau: f64, alpha: f64) -> f64 {
    let (lo, hi, steps) = (-36.0, 36.0, 144_000);
    let h = (hi - lo) / steps as f64;
    let f = |b: f64| {
        let a = sigmoid(b);
        relaxed_bernoulli_log_density(a, tau, alpha).unwrap().exp() * a * (1.0 - a)
    };
    let mut sum = 0.5 * (f(lo) + f(hi));
    for k in 1..steps {
        sum += f(lo + k as f64 * h);
    }
    sum * h
}

#[test]
fn density_integrates_to_one() {
    for &(tau, alpha) in &[(0.5, 1.0), (1.0, 2.0), (2.0, 0.3)] {
        let mass = total_mass(tau, alpha);
        assert!((mass - 1.0).abs() < 1e-6, "τ={tau} α={alpha}: {mass}");
    }
}

#[test]
fn rounding_recovers_the_bernoulli_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 100_000;
    for &theta in &[0.1, 0.5, 0.9] {
        let hits = (0..n)
            .filter(|_| relaxed_bernoulli_sample(0.5, theta, &mut rng).unwrap().0 > 0.5)
            .count();
        let se = (theta * (1.0 - theta) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - theta).abs() < 3.0 * se, "θ={theta}");
    }
}

#[test]
fn density_gradients_match_finite_differences() {
    for &(a, tau, alpha) in &[(0.3, 1.0, 2.0), (0.8, 0.5, 0.4), (0.05, 2.0, 1.3)] {
        let (da, dalpha) = relaxed_bernoulli_log_density_grad(a, tau, alpha).unwrap();
        let fd = finite_diff_grad(|x| relaxed_bernoulli_log_density(x[0], tau, x[1]), &[a, alpha], 1e-6).unwrap();
        assert!(max_relative_error(&[da, dalpha], &fd, 1e-8) < 1e-6, "{fd:?} vs {da} {dalpha}");
    }
}
