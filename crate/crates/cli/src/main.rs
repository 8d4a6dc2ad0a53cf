//! `gem`: train models, serve them over HTTP and run black-box attacks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gem::attacks::AttackMethod;
use gem::harness::{
    load_mnist_idx, run_experiment, AttackSpec, DataSource, Dataset, ExperimentConfig, ModelSource, OracleSpec,
    OutputPaths, ReductionSpec,
};
use gem::losses::LossKind;
use gem::model::{
    adversarial_train, load_model, save_model, train, AdvTrainKind, AdvVariant, ArchSpec, MlpModel, TrainConfig,
};
use gem::numerics::pca_fit;
use gem::oracle::{serve_mock, FaultPlan, MockServerConfig, OracleEndpoint};
use gem::query_reduction::ResidualDivisor;

#[derive(Parser)]
#[command(
    name = "gem",
    version,
    about = "Black-box adversarial examples via gradient estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a classifier on IDX data and save it as JSON.
    Train(TrainArgs),
    /// Train with adversarial examples mixed into every minibatch.
    AdvTrain(AdvTrainArgs),
    /// Attack a model (or a remote service) and write CSV/JSON reports.
    Attack(AttackArgs),
    /// Serve a model over the mock HTTP inference protocol.
    Serve(ServeArgs),
    /// Report a model's accuracy on IDX data.
    Eval(EvalArgs),
    /// Fit principal components of a dataset and save them as JSON.
    PcaFit(PcaFitArgs),
}

#[derive(Args)]
struct DataArgs {
    /// IDX image file (optionally gzipped).
    #[arg(long)]
    images: PathBuf,
    /// IDX label file (optionally gzipped).
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Held-out IDX images used to report test accuracy.
    #[arg(long, requires = "test_labels")]
    test_images: Option<PathBuf>,
    #[arg(long, requires = "test_images")]
    test_labels: Option<PathBuf>,
    /// Architecture preset: mlp-128, mlp-d or linear.
    #[arg(long, default_value = "mlp-128")]
    arch: String,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    #[arg(long, env = "GEM_SEED", default_value_t = 0)]
    seed: u64,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AdvVariantArg {
    Fgs,
    Ifgs,
    Ensemble,
}

#[derive(Args)]
struct AdvTrainArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// L∞ budget of the training perturbations.
    #[arg(long)]
    eps: f64,
    #[arg(long, value_enum, default_value = "fgs")]
    variant: AdvVariantArg,
    /// Weight of the benign half of the loss.
    #[arg(long, default_value_t = 0.5)]
    mix: f64,
    /// IFGS iterations.
    #[arg(long, default_value_t = 10)]
    iterations: usize,
    /// IFGS step; defaults to eps/4.
    #[arg(long)]
    step: Option<f64>,
    /// Source model files for the ensemble variant.
    #[arg(long = "source")]
    sources: Vec<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Xent,
    Logit,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Xent => LossKind::Xent,
            LossArg::Logit => LossKind::Logit,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReductionArg {
    None,
    Rg,
    Pca,
}

#[derive(Args)]
struct AttackArgs {
    /// Experiment config (JSON); replaces all other options.
    #[arg(long, conflicts_with_all = ["model", "images", "labels"])]
    config: Option<PathBuf>,
    /// Model file; the target itself unless --remote is given.
    #[arg(long, required_unless_present = "config")]
    model: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    images: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    labels: Option<PathBuf>,
    /// Attack the service at this base URL instead of the local model.
    #[arg(long)]
    remote: Option<String>,
    /// fd, ifd, spsa, fgs, ifgs, random-noise, diff-of-means, transfer-fgs or transfer-ifgs.
    #[arg(long, default_value = "fd", value_parser = parse_method)]
    method: AttackMethod,
    #[arg(long, value_enum, default_value = "logit")]
    loss: LossArg,
    #[arg(long)]
    targeted: bool,
    #[arg(long, default_value_t = 0.3)]
    eps: f64,
    /// Finite-difference step; 1.0 for xent and 0.01 for logit by default.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, value_enum, default_value = "none")]
    reduction: ReductionArg,
    /// Group size or number of components.
    #[arg(long, default_value_t = 8)]
    k: usize,
    /// Divide the short final random group by its actual size.
    #[arg(long)]
    actual_size_residual: bool,
    /// Random-start magnitude.
    #[arg(long, default_value_t = 0.0)]
    rand_init: f64,
    #[arg(long)]
    spsa_steps: Option<usize>,
    /// Surrogate models for transfer attacks.
    #[arg(long = "surrogate")]
    surrogates: Vec<PathBuf>,
    /// Attack this many samples (all by default).
    #[arg(long)]
    samples: Option<usize>,
    /// Shuffle samples with this seed before taking --samples.
    #[arg(long)]
    selection_seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    target_seed: u64,
    /// Falls back to GEM_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Falls back to GEM_THREADS; 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "report.csv")]
    out_csv: PathBuf,
    #[arg(long, default_value = "report.json")]
    out_json: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
    /// Require this bearer token.
    #[arg(long)]
    auth_token: Option<String>,
    /// Comma-separated category names in class order.
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    /// Reply with a label-keyed scores object instead of an array.
    #[arg(long)]
    named_scores: bool,
    /// Answer the first N classify requests with 503.
    #[arg(long, default_value_t = 0)]
    fail_first: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct PcaFitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 100)]
    k: usize,
    /// Use only the first N samples.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_method(s: &str) -> Result<AttackMethod, String> {
    AttackMethod::from_id(s).ok_or_else(|| {
        let ids: Vec<&str> = AttackMethod::ALL.iter().map(|m| m.id()).collect();
        format!("unknown method `{s}`; expected one of {}", ids.join(", "))
    })
}

/// Failure classes mapped to exit codes 1 and 2.
enum Failure {
    User(String),
    Internal(String),
}

impl From<gem::Error> for Failure {
    fn from(e: gem::Error) -> Self {
        use gem::Error::*;
        match e {
            Argument(_) | Format { .. } | Io(_) | Json(_) => Failure::User(e.to_string()),
            _ => Failure::Internal(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn load_data(args: &DataArgs) -> CliResult<Dataset> {
    Ok(load_mnist_idx(&args.images, &args.labels)?)
}

fn train_config(args: &TrainArgs) -> TrainConfig {
    TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.lr,
        seed: args.seed,
        dropout_rate: args.dropout,
    }
}

fn train_inputs(args: &TrainArgs) -> CliResult<(Dataset, Option<Dataset>, ArchSpec)> {
    let data = load_data(&args.data)?;
    let test = match (&args.test_images, &args.test_labels) {
        (Some(i), Some(l)) => Some(load_mnist_idx(i, l)?),
        _ => None,
    };
    let arch = ArchSpec::named(&args.arch, data.input_dim(), data.num_classes(), data.data_range())?;
    Ok((data, test, arch))
}

fn print_json<T: serde::Serialize>(value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Internal(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn finish_training(model: &MlpModel, report: &gem::model::TrainReport, out: &Path) -> CliResult {
    save_model(model, out)?;
    print_json(report)
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let (data, test, arch) = train_inputs(&args)?;
    let (model, report) = train(&data, test.as_ref(), &arch, &train_config(&args))?;
    finish_training(&model, &report, &args.out)
}

fn cmd_adv_train(args: AdvTrainArgs) -> CliResult {
    let (data, test, arch) = train_inputs(&args.train)?;
    let variant = match args.variant {
        AdvVariantArg::Fgs => AdvVariant::StandardFgs,
        AdvVariantArg::Ifgs => AdvVariant::IterativeIfgs {
            iterations: args.iterations,
            step: args.step.unwrap_or(args.eps / 4.0),
        },
        AdvVariantArg::Ensemble => AdvVariant::Ensemble {
            sources: args
                .sources
                .iter()
                .map(|p| load_model(p).map(Arc::new))
                .collect::<gem::Result<_>>()?,
        },
    };
    let kind = AdvTrainKind {
        variant,
        epsilon: args.eps,
        mix: args.mix,
    };
    let (model, report) = adversarial_train(&data, test.as_ref(), &arch, &train_config(&args.train), &kind)?;
    finish_training(&model, &report, &args.train.out)
}

fn attack_config(args: AttackArgs) -> CliResult<ExperimentConfig> {
    if let Some(path) = &args.config {
        return Ok(ExperimentConfig::load(path)?);
    }
    let reduction = match args.reduction {
        ReductionArg::None => ReductionSpec::None,
        ReductionArg::Rg => ReductionSpec::Rg {
            k: args.k,
            residual: if args.actual_size_residual {
                ResidualDivisor::ActualSize
            } else {
                ResidualDivisor::GroupSize
            },
        },
        ReductionArg::Pca => ReductionSpec::Pca { k: args.k },
    };
    let spec = AttackSpec {
        targeted: args.targeted,
        delta: args.delta,
        alpha: args.alpha,
        iterations: args.iterations,
        reduction,
        rand_init: args.rand_init,
        spsa_steps: args.spsa_steps,
        surrogates: args.surrogates,
        ..AttackSpec::new(args.method, args.loss.into(), args.eps)
    };
    let (Some(model), Some(images), Some(labels)) = (args.model, args.images, args.labels) else {
        return Err(Failure::User("--model, --images and --labels are required".into()));
    };
    Ok(ExperimentConfig {
        name: "attack".into(),
        model: Some(ModelSource::Path(model)),
        oracle: match args.remote {
            Some(url) => OracleSpec::Remote(OracleEndpoint::new(url)),
            None => OracleSpec::Local,
        },
        data: DataSource::Mnist { images, labels },
        train_data: None,
        samples: args.samples,
        selection_seed: args.selection_seed,
        target_seed: args.target_seed,
        seed: args.seed,
        threads: args.threads,
        attacks: vec![spec],
        output: OutputPaths {
            csv: Some(args.out_csv),
            json: Some(args.out_json),
        },
    })
}

fn cmd_attack(args: AttackArgs) -> CliResult {
    let mut config = attack_config(args)?;
    if config.output.csv.is_none() && config.output.json.is_none() {
        config.output.json = Some(PathBuf::from("report.json"));
    }
    let report = run_experiment(&config)?;
    for row in &report.rows {
        match &row.error {
            Some(e) => eprintln!("{}: failed: {e}", row.attack),
            None => println!(
                "{}: success {:.1}% avg L2 {:.2} avg queries {}",
                row.attack, row.success_rate, row.avg_l2, row.avg_queries
            ),
        }
    }
    if report.rows.iter().any(|r| r.error.is_some()) {
        return Err(Failure::Internal("one or more attacks failed".into()));
    }
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> CliResult {
    let model = Arc::new(load_model(&args.model)?);
    let config = MockServerConfig {
        labels: args.labels,
        auth_token: args.auth_token,
        named_scores: args.named_scores,
        faults: FaultPlan {
            fail_first: args.fail_first,
            ..FaultPlan::default()
        },
        ..MockServerConfig::default()
    };
    let handle = serve_mock(model, &args.bind, config)?;
    eprintln!("serving on {}", handle.base_url());
    handle.wait();
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    let model = load_model(&args.model)?;
    let data = load_data(&args.data)?;
    let accuracy = model.accuracy(data.features(), data.labels())?;
    print_json(&serde_json::json!({ "samples": data.len(), "accuracy": accuracy }))
}

fn cmd_pca_fit(args: PcaFitArgs) -> CliResult {
    let mut data = load_data(&args.data)?;
    if let Some(n) = args.samples {
        data = data.head(n)?;
    }
    let basis = pca_fit(&data.features().transpose(), args.k)?;
    let text = serde_json::to_string(&basis).map_err(|e| Failure::Internal(e.to_string()))?;
    std::fs::write(&args.out, text).map_err(|e| Failure::User(format!("{}: {e}", args.out.display())))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let outcome = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::AdvTrain(a) => cmd_adv_train(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Eval(a) => cmd_eval(a),
        Command::PcaFit(a) => cmd_pca_fit(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(2)
        }
    }
}
