use dagperm::io::Checkpoint;
use dagperm::sem::Dataset;
use dagperm::synth::{GraphKind, SimKind, SynthSpec};
use dagperm::vi::{fit, PriorSpec, SemKind, TrainConfig};
use dagperm::LinkFamily;

fn round_trip(cfg: TrainConfig) {
    let spec = SynthSpec {
        d: 3,
        expected_edges: 2.0,
        graph: GraphKind::Er,
        sem: SimKind::LinearGaussian,
        n: 50,
        noise_var: 0.1,
        seed: 4,
    };
    let (_, x) = spec.generate().unwrap();
    let data = Dataset::new(x).unwrap();
    let prior = PriorSpec::from_config(3, &cfg).unwrap();
    let state = fit(&data, &cfg, &prior).unwrap().state;
    let ckpt = Checkpoint {
        names: vec!["a".into(), "b".into(), "c".into()],
        threshold: cfg.threshold,
        state,
        prior,
    };

    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.json");
    let second = dir.path().join("second.json");
    ckpt.save(&first).unwrap();
    let loaded = Checkpoint::load(&first).unwrap();
    assert_eq!(loaded.state, ckpt.state);
    assert_eq!(loaded.prior, ckpt.prior);
    assert_eq!(loaded.names, ckpt.names);
    loaded.save(&second).unwrap();
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
}

#[test]
fn linear_gaussian_checkpoint_round_trips() {
    round_trip(TrainConfig {
        iterations: 20,
        ..TrainConfig::default()
    });
}

#[test]
fn gated_relaxed_bernoulli_checkpoint_round_trips() {
    round_trip(TrainConfig {
        iterations: 20,
        link: LinkFamily::RelaxedBernoulli { temperature: 0.5 },
        prior_link: LinkFamily::RelaxedBernoulli { temperature: 0.5 },
        ..TrainConfig::default()
    });
}

#[test]
fn mlp_checkpoint_round_trips() {
    round_trip(TrainConfig {
        iterations: 20,
        sem: SemKind::Mlp,
        ..TrainConfig::default()
    });
}
