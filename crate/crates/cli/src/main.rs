use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use hypermatch::eval::{score_assignment, summarize, truth_available, PairMetrics};
use hypermatch::io::{self, LoadedPair, Split};
use hypermatch::learning::{
    train, write_train_log_csv, FixedPoints, Preconditioner, TrainConfig, TrainingInstance,
};
use hypermatch::matching::build_match_hypergraph;
use hypermatch::synth::label_candidates;
use hypermatch::{
    BpOptions, Error, HypergraphParams, MatchAssignment, MatcherConfig, MatcherRegistry,
    PipelineParams, SynthConfig, Transform, Variant,
};

#[derive(Parser)]
#[command(
    name = "hypermatch",
    version,
    about = "Learned hypergraph labeling for feature matching"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset bundle.
    Generate(GenerateArgs),
    /// Learn penalty functions from the training split.
    Train(TrainArgs),
    /// Match every pair of a split and write one assignment CSV per pair.
    Match(MatchArgs),
    /// Score assignment CSVs against ground truth.
    Eval(EvalArgs),
    /// Match and score several methods on the same split.
    Compare(CompareArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    train_pairs: usize,
    #[arg(long, default_value_t = 20)]
    test_pairs: usize,
    #[arg(long, default_value_t = 30)]
    n_points: usize,
    /// `shear:F`, `rotate:DEG` or `composite:F:DEG`.
    #[arg(long, default_value = "shear:1.5")]
    transform: Transform,
    #[arg(long, default_value_t = 0.005)]
    jitter: f64,
    #[arg(long, default_value_t = 8)]
    descriptor_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    descriptor_noise: f64,
    #[arg(long, default_value_t = 0)]
    distractors: usize,
}

#[derive(Args, Clone, Copy)]
struct GraphArgs {
    /// Candidates per left feature.
    #[arg(long, default_value_t = 3)]
    m: usize,
    /// Nearest neighbours used for left triangles.
    #[arg(long, default_value_t = 5)]
    knn: usize,
    /// Angle-difference threshold.
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    #[arg(long, default_value_t = 200)]
    bp_max_iters: usize,
    #[arg(long, default_value_t = 0.5)]
    bp_damping: f64,
}

impl GraphArgs {
    fn hypergraph(&self) -> HypergraphParams {
        HypergraphParams {
            m: self.m,
            knn: self.knn,
            delta: self.delta,
        }
    }

    fn bp(&self) -> BpOptions {
        BpOptions {
            max_iters: self.bp_max_iters,
            damping: self.bp_damping,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for `model.json` and `train_log.csv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "discrete")]
    variant: Variant,
    #[arg(long, default_value_t = 1e-2)]
    l2: f64,
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    grad_tolerance: f64,
    /// Step direction: `clique-fisher` or `identity` (plain gradient).
    #[arg(long, default_value = "clique-fisher")]
    preconditioner: Preconditioner,
    /// Sum-product fixed points in the surrogate: `pooled` or `uniform`.
    #[arg(long, default_value = "pooled")]
    fixed_points: FixedPoints,
    #[command(flatten)]
    graph: GraphArgs,
}

#[derive(Args)]
struct MethodArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Penalty model JSON, required by `learned`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Global one-to-one discretization for hypergraph methods.
    #[arg(long)]
    one_to_one: bool,
    #[command(flatten)]
    graph: GraphArgs,
}

#[derive(Args)]
struct MatchArgs {
    #[command(flatten)]
    common: MethodArgs,
    #[arg(long, default_value = "learned")]
    method: String,
    /// Output directory for `<pair>.csv` files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Directory of `<pair>.csv` assignments written by `match`.
    #[arg(long)]
    assignments: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Label for the method column.
    #[arg(long, default_value = "assignment")]
    method: String,
    /// Candidates per left feature used to decide truth availability.
    #[arg(long, default_value_t = 3)]
    m: usize,
    /// Metrics CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: MethodArgs,
    /// Comma-separated methods; defaults to every method usable with the given inputs.
    #[arg(long)]
    method: Option<String>,
    /// Side-by-side metrics CSV path.
    #[arg(long)]
    out: PathBuf,
}

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Internal(_) => 4,
        }
    }
}

fn classify(err: &anyhow::Error) -> Failure {
    let text = format!("{err:#}");
    if let Some(f) = err.downcast_ref::<Failure>() {
        return match f {
            Failure::Usage(_) => Failure::Usage(text),
            Failure::Data(_) => Failure::Data(text),
            Failure::Internal(_) => Failure::Internal(text),
        };
    }
    match err.downcast_ref::<Error>() {
        Some(
            Error::InvalidConfig(_) | Error::UnknownMethod { .. } | Error::MissingGroundTruth(_),
        ) => Failure::Usage(text),
        Some(
            Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_)
            | Error::Data(_)
            | Error::MissingDescriptors(_)
            | Error::DegenerateDescriptor(_)
            | Error::DimensionMismatch(_)
            | Error::InvalidModel(_)
            | Error::InvalidLabel { .. }
            | Error::InvalidEdge(_)
            | Error::ModelSize { .. },
        ) => Failure::Data(text),
        Some(_) => Failure::Internal(text),
        None if err.downcast_ref::<std::io::Error>().is_some() => Failure::Data(text),
        None => Failure::Internal(text),
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Internal(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

fn parse_split(s: &str) -> anyhow::Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(Failure::Usage(format!("unknown split `{other}` (train|test)")).into()),
    }
}

fn load_pairs(dataset: &Path, split: Split) -> anyhow::Result<Vec<LoadedPair>> {
    io::load_split(dataset, split).with_context(|| format!("loading dataset {}", dataset.display()))
}

fn cmd_generate(args: &GenerateArgs) -> anyhow::Result<()> {
    let configs: Vec<(Split, SynthConfig)> = (0..args.train_pairs + args.test_pairs)
        .map(|i| {
            let split = if i < args.train_pairs {
                Split::Train
            } else {
                Split::Test
            };
            let config = SynthConfig {
                n_points: args.n_points,
                transform: args.transform,
                jitter_sigma: args.jitter,
                descriptor_dim: args.descriptor_dim,
                descriptor_noise_sigma: args.descriptor_noise,
                distractor_count: args.distractors,
                seed: args.seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
            };
            (split, config)
        })
        .collect();
    let manifest = io::write_synthetic_bundle(&args.out, &configs)?;
    println!(
        "wrote {} pairs ({} train, {} test) to {}",
        manifest.pairs.len(),
        manifest.split(Split::Train).count(),
        manifest.split(Split::Test).count(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> anyhow::Result<()> {
    let pairs = load_pairs(&args.dataset, Split::Train)?;
    if pairs.is_empty() {
        return Err(Failure::Usage("dataset has no training pairs".into()).into());
    }
    let hp = args.graph.hypergraph();
    let mut instances = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let truth = pair.truth.as_ref().ok_or_else(|| {
            Failure::Usage(format!("training pair {} has no ground truth", pair.name))
        })?;
        let (graph, report) = build_match_hypergraph(&pair.left, &pair.right, &hp)?;
        let labels = label_candidates(&graph, truth)?;
        println!(
            "{}: {} candidates, {} hyperedges",
            pair.name,
            graph.node_count(),
            report.hyperedges
        );
        instances.push(TrainingInstance::new(graph, labels)?);
    }
    let config = TrainConfig {
        step_size: args.step,
        max_iters: args.max_iters,
        grad_tolerance: args.grad_tolerance,
        l2_strength: args.l2,
        variant: args.variant,
        k_max: 3,
        preconditioner: args.preconditioner,
        fixed_points: args.fixed_points,
        bp: args.graph.bp(),
    };
    let outcome = train(&instances, &config)?;
    fs::create_dir_all(&args.out)?;
    io::write_model(&args.out.join("model.json"), &outcome.model)?;
    write_train_log_csv(
        &outcome.log,
        fs::File::create(args.out.join("train_log.csv"))?,
    )?;
    let last = outcome.log.last().expect("log has a starting row");
    println!(
        "trained {} model with {} parameters: {} accepted steps, objective {:.6}, gradient max-norm {:.3e}{}",
        outcome.model.variant(),
        outcome.model.params().len(),
        last.iteration,
        last.objective,
        last.grad_max_norm,
        if outcome.converged { "" } else { " (not converged)" }
    );
    Ok(())
}

fn matcher_config(args: &MethodArgs) -> anyhow::Result<MatcherConfig> {
    let model = match &args.model {
        Some(p) => {
            Some(io::read_model(p).with_context(|| format!("reading model {}", p.display()))?)
        }
        None => None,
    };
    Ok(MatcherConfig {
        model,
        pipeline: PipelineParams {
            hypergraph: args.graph.hypergraph(),
            bp: args.graph.bp(),
            one_to_one: args.one_to_one,
        },
        ..Default::default()
    })
}

fn run_method(
    registry: &MatcherRegistry,
    name: &str,
    config: &MatcherConfig,
    pairs: &[LoadedPair],
) -> anyhow::Result<Vec<MatchAssignment>> {
    let matcher = registry.create(name, config)?;
    pairs
        .iter()
        .map(|p| {
            matcher
                .match_pair(&p.left, &p.right)
                .with_context(|| format!("matching {} with {name}", p.name))
        })
        .collect()
}

fn cmd_match(args: &MatchArgs) -> anyhow::Result<()> {
    let pairs = load_pairs(&args.common.dataset, parse_split(&args.common.split)?)?;
    let config = matcher_config(&args.common)?;
    let assignments = run_method(
        &MatcherRegistry::with_builtins(),
        &args.method,
        &config,
        &pairs,
    )?;
    fs::create_dir_all(&args.out)?;
    for (pair, a) in pairs.iter().zip(&assignments) {
        io::write_assignment_csv(
            &args.out.join(format!("{}.csv", pair.name)),
            a,
            pair.truth.as_ref(),
        )?;
    }
    println!(
        "{}: matched {} pairs into {}",
        args.method,
        pairs.len(),
        args.out.display()
    );
    Ok(())
}

fn score_pair(
    pair: &LoadedPair,
    assignment: &MatchAssignment,
    m: usize,
) -> anyhow::Result<PairMetrics> {
    let truth = pair
        .truth
        .as_ref()
        .ok_or_else(|| Failure::Usage(format!("pair {} has no ground truth", pair.name)))?;
    if let Some(&(l, r)) = assignment
        .pairs
        .iter()
        .find(|(l, r)| *l >= pair.left.len() || *r >= pair.right.len())
    {
        return Err(Failure::Data(format!(
            "pair {}: assignment ({l}, {r}) out of range",
            pair.name
        ))
        .into());
    }
    let available = truth_available(&pair.left, &pair.right, truth, m)?;
    Ok(score_assignment(assignment, truth, &available))
}

fn print_summary(method: &str, metrics: &[PairMetrics]) {
    let s = summarize(metrics);
    println!(
        "{method}: {} pairs, correct {:.2} ± {:.2}, incorrect {:.2} ± {:.2}, pct_incorrect {:.2} ± {:.2}",
        s.pairs, s.n_correct.mean, s.n_correct.std, s.n_incorrect.mean, s.n_incorrect.std, s.pct_incorrect.mean, s.pct_incorrect.std
    );
}

fn cmd_eval(args: &EvalArgs) -> anyhow::Result<()> {
    let pairs = load_pairs(&args.dataset, parse_split(&args.split)?)?;
    let mut rows = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let path = args.assignments.join(format!("{}.csv", pair.name));
        if !path.exists() {
            return Err(
                Failure::Data(format!("missing assignment file {}", path.display())).into(),
            );
        }
        let assignment = io::read_assignment_csv(&path)?;
        rows.push((
            pair.name.clone(),
            args.method.clone(),
            score_pair(pair, &assignment, args.m)?,
        ));
    }
    io::write_metrics_csv(&args.out, &rows)?;
    print_summary(&args.method, &rows.iter().map(|r| r.2).collect::<Vec<_>>());
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> anyhow::Result<()> {
    let pairs = load_pairs(&args.common.dataset, parse_split(&args.common.split)?)?;
    let config = matcher_config(&args.common)?;
    let registry = MatcherRegistry::with_builtins();
    let mut methods: Vec<String> = match &args.method {
        Some(list) => list
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect(),
        None => registry
            .names()
            .into_iter()
            .filter(|n| *n != "learned" || config.model.is_some())
            .map(String::from)
            .collect(),
    };
    methods.sort();
    methods.dedup();
    if methods.is_empty() {
        return Err(Failure::Usage("no methods to compare".into()).into());
    }
    let mut rows = Vec::new();
    for method in &methods {
        let assignments = run_method(&registry, method, &config, &pairs)?;
        let mut metrics = Vec::with_capacity(pairs.len());
        for (pair, a) in pairs.iter().zip(&assignments) {
            let m = score_pair(pair, a, args.common.graph.m)?;
            metrics.push(m);
            rows.push((pair.name.clone(), method.clone(), m));
        }
        print_summary(method, &metrics);
    }
    rows.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
    io::write_metrics_csv(&args.out, &rows)?;
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Match(a) => cmd_match(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let failure = classify(&err);
            eprintln!("error: {failure}");
            ExitCode::from(failure.code())
        }
    }
}
