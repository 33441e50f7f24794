use std::path::{Path, PathBuf};

use dagperm::eval::{calibration, classify, consensus_graph, MetricsReport};
use dagperm::io::{self, fmt_f64, Checkpoint};
use dagperm::synth::{GraphKind, SimKind, SynthSpec};
use dagperm::vi::{self, PriorSpec};
use dagperm::{Adjacency, Dataset};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::Staged;
use crate::{CliError, EvaluateArgs, FitArgs, GenerateArgs, GraphArg, SampleArgs, SemArg};

fn default_synth(seed: u64) -> SynthSpec {
    SynthSpec {
        d: 16,
        expected_edges: 16.0,
        graph: GraphKind::Er,
        sem: SimKind::LinearGaussian,
        n: 1000,
        noise_var: 0.01,
        seed,
    }
}

fn require_out(flag: &Option<PathBuf>, config: &RunConfig) -> Result<PathBuf, CliError> {
    flag.clone()
        .or_else(|| config.output.clone())
        .ok_or_else(|| CliError::Usage("no output directory given (--out or config `output`)".into()))
}

#[derive(Serialize)]
struct Meta<'a> {
    spec: &'a SynthSpec,
    seed: u64,
    true_edges: usize,
}

fn write_synthetic(dir: &Path, spec: &SynthSpec) -> Result<(Adjacency, Dataset), CliError> {
    let (truth, x) = spec.generate()?;
    let data = Dataset::new(x)?;
    io::write_dataset(&dir.join("data.csv"), &data)?;
    io::write_adjacency_csv(&dir.join("true_adjacency.csv"), &truth)?;
    io::write_adjacency_json(&dir.join("true_adjacency.json"), &truth)?;
    io::write_json(
        &dir.join("meta.json"),
        &Meta {
            spec,
            seed: spec.seed,
            true_edges: truth.nnz(),
        },
    )?;
    Ok((truth, data))
}

pub fn generate(args: &GenerateArgs) -> Result<(), CliError> {
    let config = RunConfig::load_or_default(args.config.as_deref())?;
    let mut spec = config
        .synth
        .clone()
        .unwrap_or_else(|| default_synth(config.seed.unwrap_or(0)));
    if let Some(v) = args.nodes {
        spec.d = v;
    }
    if let Some(v) = args.edges {
        spec.expected_edges = v;
    }
    if let Some(v) = args.graph {
        spec.graph = match v {
            GraphArg::Er => GraphKind::Er,
            GraphArg::Sf => GraphKind::Sf,
        };
    }
    if let Some(v) = args.sem {
        spec.sem = match v {
            SemArg::LinearGaussian => SimKind::LinearGaussian,
            SemArg::RandomMlp => SimKind::RandomMlp,
        };
    }
    if let Some(v) = args.samples {
        spec.n = v;
    }
    if let Some(v) = args.noise_var {
        spec.noise_var = v;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    if args.replicates == 0 {
        return Err(CliError::Usage("--replicates must be at least 1".into()));
    }
    spec.validate()?;
    let out = require_out(&args.out, &config)?;
    let staged = Staged::new(&out, args.overwrite)?;
    for r in 0..args.replicates {
        let rep = SynthSpec {
            seed: spec.seed.wrapping_add(r as u64),
            ..spec.clone()
        };
        let dir = if args.replicates == 1 {
            staged.path("")
        } else {
            staged.subdir(&format!("rep_{r:03}"))?
        };
        write_synthetic(&dir, &rep)?;
    }
    let out = staged.commit()?;
    println!("wrote {} replicate(s) to {}", args.replicates, out.display());
    Ok(())
}

pub fn fit(args: &FitArgs) -> Result<(), CliError> {
    let mut config = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(p) = &args.data {
        config.data = Some(p.clone());
        config.synth = None;
    }
    let train = &mut config.train;
    if let Some(v) = args.iterations {
        train.iterations = v;
    }
    if let Some(v) = args.learning_rate {
        train.learning_rate = v;
    }
    if let Some(v) = args.perm_samples {
        train.perm_samples = v;
    }
    if let Some(v) = args.graph_samples {
        train.graph_samples = v;
    }
    if let Some(v) = args.noise_scale {
        train.noise_scale = v;
    }
    if let Some(seed) = args.seed.or(config.seed) {
        train.seed = seed;
    }
    config.seed = Some(config.train.seed);
    config.train.validate()?;
    let out = require_out(&args.out, &config)?;
    config.output = Some(out.clone());

    let loaded = match (&config.data, &config.synth) {
        (Some(path), _) => {
            Some(io::read_dataset(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?)
        }
        (None, Some(spec)) => {
            spec.validate()?;
            None
        }
        (None, None) => return Err(CliError::Usage("no data given (--data, config `data` or `synth`)".into())),
    };

    let staged = Staged::new(&out, args.overwrite)?;
    let data = match (loaded, &config.synth) {
        (Some(data), _) => data,
        (None, Some(spec)) => write_synthetic(&staged.path(""), spec)?.1,
        (None, None) => unreachable!("checked above"),
    };
    let d = data.cols();
    if d < 2 {
        return Err(CliError::Usage("at least 2 variables are required".into()));
    }
    let prior = PriorSpec::from_config(d, &config.train)?;
    io::write_json(&staged.path("config.json"), &config)?;
    let checkpoint = |state: vi::VariationalState| Checkpoint {
        names: data.names().to_vec(),
        threshold: config.train.threshold,
        state,
        prior: prior.clone(),
    };
    match vi::fit(&data, &config.train, &prior) {
        Ok(result) => {
            checkpoint(result.state).save(&staged.path("checkpoint.json"))?;
            io::write_trace(&staged.path("trace.csv"), &result.trace)?;
            let out = staged.commit()?;
            let last = result.trace.last().map_or(f64::NAN, |r| r.elbo);
            println!(
                "fitted {} iterations on {}x{} data; final ELBO estimate {last:.6}; outputs in {}",
                result.trace.len(),
                data.rows(),
                d,
                out.display()
            );
            Ok(())
        }
        Err(failure) if failure.iteration > 0 => {
            checkpoint(failure.last_good).save(&staged.path("checkpoint.json"))?;
            io::write_trace(&staged.path("trace.csv"), &failure.trace)?;
            let out = staged.commit()?;
            Err(CliError::Numerical(format!(
                "training diverged at iteration {}: {}; last good checkpoint in {}",
                failure.iteration,
                failure.error,
                out.display()
            )))
        }
        Err(failure) => Err(failure.error.into()),
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_truth(path: &Path) -> Result<Adjacency, CliError> {
    let read = if path.extension().is_some_and(|e| e == "json") {
        io::read_adjacency_json(path)
    } else {
        io::read_adjacency_csv(path)
    };
    read.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Draws `n` graphs; returns them with their edge frequencies.
fn draw(checkpoint: &Checkpoint, n: usize, seed: u64) -> Result<(Vec<Adjacency>, DMatrix<f64>), CliError> {
    if n == 0 {
        return Err(CliError::Usage("posterior sample count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graphs = vi::posterior_samples(&checkpoint.state, n, checkpoint.threshold, &mut rng)?;
    let d = checkpoint.state.dim();
    let mut probs = DMatrix::zeros(d, d);
    for g in &graphs {
        for (i, j) in g.edges() {
            probs[(i, j)] += 1.0;
        }
    }
    Ok((graphs, probs / n as f64))
}

fn write_samples(path: &Path, graphs: &[Adjacency]) -> Result<(), CliError> {
    let rows = graphs
        .iter()
        .enumerate()
        .flat_map(|(k, g)| g.edges().into_iter().map(move |(i, j)| vec![k.to_string(), i.to_string(), j.to_string()]));
    io::write_table(path, &["sample", "from", "to"], rows)?;
    Ok(())
}

#[derive(Serialize)]
struct EvaluationReport {
    #[serde(flatten)]
    metrics: MetricsReport,
    precision: f64,
    recall: f64,
    consensus_threshold: f64,
    consensus_repaired: bool,
    dropped_edges: Vec<(usize, usize)>,
    posterior_samples: usize,
    seed: u64,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let config = RunConfig::load_or_default(args.config.as_deref())?;
    let mut metrics = config.metrics;
    if let Some(v) = args.posterior_samples {
        metrics.posterior_samples = v;
    }
    if let Some(v) = args.bins {
        metrics.bins = v;
    }
    if let Some(v) = args.threshold {
        metrics.consensus_threshold = v;
    }
    if metrics.bins == 0 {
        return Err(CliError::Usage("--bins must be at least 1".into()));
    }
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let truth = load_truth(&args.truth)?;
    if truth.nodes() != checkpoint.state.dim() {
        return Err(CliError::Data(format!(
            "truth has {} nodes but the checkpoint has {}",
            truth.nodes(),
            checkpoint.state.dim()
        )));
    }
    let (graphs, probs) = draw(&checkpoint, metrics.posterior_samples, args.seed)?;
    let consensus = consensus_graph(&probs, metrics.consensus_threshold)?;
    let cal = calibration(&probs, &truth, metrics.bins)?;
    let cls = classify(&truth, &consensus.graph)?;
    let report = EvaluationReport {
        metrics: MetricsReport::compute(&truth, &consensus.graph, &probs, metrics.bins)?,
        precision: cls.precision,
        recall: cls.recall,
        consensus_threshold: metrics.consensus_threshold,
        consensus_repaired: !consensus.dropped.is_empty(),
        dropped_edges: consensus.dropped.clone(),
        posterior_samples: metrics.posterior_samples,
        seed: args.seed,
    };

    let staged = Staged::new(&args.out, args.overwrite)?;
    io::write_json(&staged.path("metrics.json"), &report)?;
    io::write_matrix(&staged.path("edge_probs.csv"), &probs)?;
    io::write_adjacency_csv(&staged.path("consensus_adjacency.csv"), &consensus.graph)?;
    io::write_adjacency_json(&staged.path("consensus_adjacency.json"), &consensus.graph)?;
    io::write_table(
        &staged.path("calibration.csv"),
        &["bin", "lower", "upper", "count", "accuracy", "confidence"],
        cal.bins.iter().enumerate().map(|(k, b)| {
            vec![
                k.to_string(),
                fmt_f64(b.lower),
                fmt_f64(b.upper),
                b.count.to_string(),
                fmt_f64(b.accuracy),
                fmt_f64(b.confidence),
            ]
        }),
    )?;
    let m = &report.metrics;
    io::write_table(
        &staged.path("plot_data.csv"),
        &["metric", "replicate", "value"],
        [
            ("shd", m.shd.to_string()),
            ("f1", fmt_f64(m.f1)),
            ("nnz", m.nnz.to_string()),
            ("ece", fmt_f64(m.ece)),
        ]
        .into_iter()
        .map(|(k, v)| vec![k.to_string(), args.replicate.clone(), v]),
    )?;
    write_samples(&staged.subdir("samples")?.join("graphs.csv"), &graphs)?;
    let out = staged.commit()?;
    println!(
        "shd {} f1 {:.4} nnz {} ece {:.4}{}; outputs in {}",
        m.shd,
        m.f1,
        m.nnz,
        m.ece,
        if report.consensus_repaired { " (consensus repaired)" } else { "" },
        out.display()
    );
    Ok(())
}

pub fn sample(args: &SampleArgs) -> Result<(), CliError> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let (graphs, probs) = draw(&checkpoint, args.n, args.seed)?;
    let staged = Staged::new(&args.out, args.overwrite)?;
    write_samples(&staged.path("graphs.csv"), &graphs)?;
    io::write_matrix(&staged.path("edge_probs.csv"), &probs)?;
    let out = staged.commit()?;
    println!("wrote {} posterior samples to {}", graphs.len(), out.display());
    Ok(())
}
