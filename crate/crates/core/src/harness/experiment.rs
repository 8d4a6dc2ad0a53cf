use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{
    class_means, diff_of_means, display_name, fd_attack, fgs_whitebox, ifd_attack, ifgs_whitebox, rand_init_then,
    random_perturbation, spsa_attack, transfer_attack, AttackBudget, AttackConfig, AttackMethod, AttackResult,
    Surrogate,
};
use crate::error::{arg_err, Error, Result};
use crate::losses::{AttackMode, LossKind, LossSpec};
use crate::model::{adversarial_train, load_model, train, AdvTrainKind, AdvVariant, ArchSpec, MlpModel, TrainConfig};
use crate::numerics::{pca_fit, Rng};
use crate::oracle::{CountingOracle, LocalOracle, Oracle, OracleEndpoint, QueryLedger, RemoteOracle};
use crate::query_reduction::{Reduction, ResidualDivisor, Scheme};

use super::dataset::{load_mnist_idx, sample_targets, synth_blobs, Dataset};
use super::metrics::{conditioned_success_rate, success_rate};

/// Where samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum DataSource {
    Mnist {
        images: PathBuf,
        labels: PathBuf,
    },
    Blobs {
        seed: u64,
        n: usize,
        d: usize,
        classes: usize,
        spread: f64,
    },
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Mnist { images, labels } => load_mnist_idx(images, labels),
            DataSource::Blobs {
                seed,
                n,
                d,
                classes,
                spread,
            } => synth_blobs(*seed, *n, *d, *classes, *spread),
        }
    }
}

/// Adversarial training settings inside a [`TrainSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvTrainSpec {
    /// `fgs`, `ifgs` or `ensemble`.
    pub variant: String,
    pub epsilon: f64,
    #[serde(default = "default_mix")]
    pub mix: f64,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub step: Option<f64>,
    /// Source model files for the ensemble variant.
    #[serde(default)]
    pub sources: Vec<PathBuf>,
}

fn default_mix() -> f64 {
    0.5
}

impl AdvTrainSpec {
    pub fn to_kind(&self) -> Result<AdvTrainKind> {
        let variant = match self.variant.as_str() {
            "fgs" => AdvVariant::StandardFgs,
            "ifgs" => AdvVariant::IterativeIfgs {
                iterations: self.iterations.unwrap_or(10),
                step: self.step.unwrap_or(self.epsilon / 4.0),
            },
            "ensemble" => AdvVariant::Ensemble {
                sources: self
                    .sources
                    .iter()
                    .map(|p| load_model(p).map(Arc::new))
                    .collect::<Result<_>>()?,
            },
            other => return arg_err(format!("unknown adversarial training variant `{other}`")),
        };
        Ok(AdvTrainKind {
            variant,
            epsilon: self.epsilon,
            mix: self.mix,
        })
    }
}

/// Train a model as part of the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    /// Architecture name: `mlp-128`, `mlp-d` or `linear`.
    pub arch: String,
    #[serde(default)]
    pub config: TrainConfig,
    #[serde(default)]
    pub adversarial: Option<AdvTrainSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    /// A saved model file.
    Path(PathBuf),
    /// Train on `train_data` before attacking.
    Train(TrainSpec),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleSpec {
    /// Query the experiment's model in process.
    #[default]
    Local,
    /// Query a remote classification service.
    Remote(OracleEndpoint),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum ReductionSpec {
    #[default]
    None,
    /// Random grouping with `k` coordinates per group.
    Rg {
        k: usize,
        #[serde(default)]
        residual: ResidualDivisor,
    },
    /// Top-`k` principal components of the attacked samples.
    Pca { k: usize },
}

/// One attack row of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub method: AttackMethod,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default)]
    pub targeted: bool,
    pub epsilon: f64,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub reduction: ReductionSpec,
    /// Random-start magnitude; 0 disables the random start.
    #[serde(default)]
    pub rand_init: f64,
    #[serde(default)]
    pub spsa_steps: Option<usize>,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default)]
    pub freeze_runner_up: bool,
    /// Surrogate model files for transfer attacks.
    #[serde(default)]
    pub surrogates: Vec<PathBuf>,
}

fn default_loss() -> LossKind {
    LossKind::Logit
}

/// Default number of SPSA steps (2 queries each).
pub const DEFAULT_SPSA_STEPS: usize = 4000;

impl AttackSpec {
    pub fn new(method: AttackMethod, loss: LossKind, epsilon: f64) -> Self {
        Self {
            method,
            loss,
            targeted: false,
            epsilon,
            delta: None,
            alpha: None,
            iterations: None,
            reduction: ReductionSpec::None,
            rand_init: 0.0,
            spsa_steps: None,
            kappa: 0.0,
            freeze_runner_up: false,
            surrogates: Vec::new(),
        }
    }

    fn uses_estimation(&self) -> bool {
        matches!(self.method, AttackMethod::Fd | AttackMethod::Ifd | AttackMethod::Spsa)
    }

    fn uses_iterations(&self) -> bool {
        matches!(
            self.method,
            AttackMethod::Ifd | AttackMethod::Ifgs | AttackMethod::TransferIfgs
        )
    }

    fn uses_alpha(&self) -> bool {
        self.uses_iterations() || self.method == AttackMethod::Spsa
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub json: Option<PathBuf>,
}

/// A complete experiment description, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    /// Needed for local oracles and white-box attacks.
    #[serde(default)]
    pub model: Option<ModelSource>,
    #[serde(default)]
    pub oracle: OracleSpec,
    /// Samples to attack.
    pub data: DataSource,
    /// Training data for `model.train` and class means; defaults to `data`.
    #[serde(default)]
    pub train_data: Option<DataSource>,
    /// Number of samples to attack; all when absent.
    #[serde(default)]
    pub samples: Option<usize>,
    /// Shuffle before taking `samples`; the first samples are used when
    /// absent.
    #[serde(default)]
    pub selection_seed: Option<u64>,
    #[serde(default)]
    pub target_seed: u64,
    /// Falls back to `GEM_SEED`, then 0.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Falls back to `GEM_THREADS`, then 0 (one per core).
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    #[serde(default)]
    pub output: OutputPaths,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Outcome of one attack on one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub label: usize,
    pub target: Option<usize>,
    pub originally_correct: bool,
    pub success: bool,
    pub predicted: usize,
    pub queries: u64,
    pub l2: f64,
    pub linf: f64,
}

/// Aggregated results of one attack over the sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub attack: String,
    pub method: AttackMethod,
    pub loss: Option<LossKind>,
    pub mode: String,
    pub epsilon: f64,
    pub delta: Option<f64>,
    pub alpha: Option<f64>,
    pub iterations: Option<usize>,
    pub reduction: String,
    pub k: Option<usize>,
    pub success_rate: f64,
    pub conditioned_success_rate: Option<f64>,
    pub avg_l2: f64,
    pub avg_linf: f64,
    pub avg_queries: f64,
    /// Set when the row aborted; metrics are then zero.
    pub error: Option<String>,
    pub samples: Vec<SampleRecord>,
    /// Wall-clock seconds per sample. Kept out of the JSON report so that
    /// reruns are byte-identical.
    #[serde(skip)]
    pub sec_per_sample: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub seed: u64,
    pub dataset: String,
    pub num_samples: usize,
    /// Percentage of attacked samples the oracle classified correctly.
    pub clean_accuracy: f64,
    pub rows: Vec<AttackRow>,
}

impl ExperimentReport {
    pub fn row(&self, attack: &str) -> Option<&AttackRow> {
        self.rows.iter().find(|r| r.attack == attack)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Everything an attack row may need besides the samples.
pub struct AttackEnv {
    pub oracle: Arc<dyn Oracle>,
    /// White-box access for FGS/IFGS.
    pub model: Option<Arc<MlpModel>>,
    /// Used by transfer rows that name no surrogate files.
    pub surrogates: Vec<Arc<MlpModel>>,
    /// Per-class means for difference-of-means.
    pub class_means: Option<Vec<Vec<f64>>>,
}

impl AttackEnv {
    pub fn local(model: Arc<MlpModel>) -> Self {
        Self {
            oracle: Arc::new(LocalOracle::new(model.clone())),
            model: Some(model),
            surrogates: Vec::new(),
            class_means: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub seed: u64,
    pub target_seed: u64,
    /// 0 means one worker per core.
    pub threads: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            seed: resolve_seed(None),
            target_seed: 0,
            threads: resolve_threads(None),
        }
    }
}

/// `explicit`, else `GEM_SEED`, else 0.
pub fn resolve_seed(explicit: Option<u64>) -> u64 {
    explicit
        .or_else(|| std::env::var("GEM_SEED").ok().and_then(|s| s.trim().parse().ok()))
        .unwrap_or(0)
}

/// `explicit`, else `GEM_THREADS`, else 0.
pub fn resolve_threads(explicit: Option<usize>) -> usize {
    explicit
        .or_else(|| std::env::var("GEM_THREADS").ok().and_then(|s| s.trim().parse().ok()))
        .unwrap_or(0)
}

/// Per-row state shared by all samples.
struct RowPlan {
    reduction: Reduction,
    surrogates: Vec<Surrogate>,
}

fn plan_row(spec: &AttackSpec, env: &AttackEnv, data: &Dataset) -> Result<RowPlan> {
    if !(spec.epsilon >= 0.0 && spec.epsilon.is_finite()) {
        return arg_err(format!("epsilon must be non-negative, got {}", spec.epsilon));
    }
    if spec.targeted && !spec.method.supports_targeted() {
        return arg_err(format!("{} has no targeted form", spec.method.id()));
    }
    let reduction = match &spec.reduction {
        ReductionSpec::None => Reduction::None,
        ReductionSpec::Rg { k, residual } => Reduction::RandomGroups {
            k: *k,
            residual: *residual,
        },
        ReductionSpec::Pca { k } => {
            let basis = pca_fit(&data.features().transpose(), *k)?;
            Reduction::Pca { basis: Arc::new(basis) }
        }
    };
    if !matches!(reduction, Reduction::None) && !matches!(spec.method, AttackMethod::Fd | AttackMethod::Ifd) {
        return arg_err("query reduction applies only to fd and ifd");
    }
    let surrogates = match spec.method {
        AttackMethod::TransferFgs | AttackMethod::TransferIfgs => {
            let models: Vec<Arc<MlpModel>> = if spec.surrogates.is_empty() {
                env.surrogates.clone()
            } else {
                spec.surrogates
                    .iter()
                    .map(|p| load_model(p).map(Arc::new))
                    .collect::<Result<_>>()?
            };
            if models.is_empty() {
                return arg_err("transfer attack needs at least one surrogate model");
            }
            Surrogate::uniform(&models)
        }
        _ => Vec::new(),
    };
    if matches!(spec.method, AttackMethod::Fgs | AttackMethod::Ifgs) && env.model.is_none() {
        return arg_err("white-box attacks need a model");
    }
    if spec.method == AttackMethod::DiffOfMeans && env.class_means.is_none() {
        return arg_err("difference-of-means needs class means");
    }
    Ok(RowPlan { reduction, surrogates })
}

fn attack_config(
    spec: &AttackSpec,
    plan: &RowPlan,
    data: &Dataset,
    mode: AttackMode,
    seed: u64,
) -> Result<AttackConfig> {
    let mut loss = LossSpec::new(spec.loss, mode);
    loss.kappa = spec.kappa;
    let mut cfg = AttackConfig::new(AttackBudget::new(spec.epsilon, data.data_range())?, loss);
    if let Some(d) = spec.delta {
        cfg.delta = d;
    }
    if let Some(a) = spec.alpha {
        cfg.alpha = a;
    }
    if let Some(t) = spec.iterations {
        cfg.iterations = t;
    }
    cfg.reduction = plan.reduction.clone();
    cfg.init_rand_magnitude = spec.rand_init;
    cfg.seed = seed;
    cfg.freeze_runner_up = spec.freeze_runner_up;
    Ok(cfg)
}

fn query_label<O: Oracle + ?Sized>(oracle: &O, x: &[f64]) -> Result<usize> {
    Ok(oracle.query_probs(x)?.argmax())
}

/// Runs one attack on one sample against `oracle`.
fn attack_sample<O: Oracle + ?Sized>(
    spec: &AttackSpec,
    plan: &RowPlan,
    env: &AttackEnv,
    oracle: &O,
    x: &[f64],
    label: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    let target = cfg.loss.mode.is_targeted().then(|| cfg.loss.mode.class());
    let mut rng = Rng::seeded(cfg.seed);
    let zero_query = |x_adv: Vec<f64>| -> Result<AttackResult> {
        let predicted = query_label(oracle, &x_adv)?;
        Ok(AttackResult::new(x, x_adv, predicted, &cfg.loss, 1))
    };
    let single = |start: &[f64], c: &AttackConfig| -> Result<AttackResult> {
        match spec.method {
            AttackMethod::Fd => fd_attack(oracle, start, c),
            AttackMethod::Ifd => ifd_attack(oracle, start, c),
            AttackMethod::Spsa => spsa_attack(oracle, start, c, spec.spsa_steps.unwrap_or(DEFAULT_SPSA_STEPS)),
            AttackMethod::Fgs => fgs_whitebox(env.model.as_ref().expect("checked in plan"), start, c),
            AttackMethod::Ifgs => ifgs_whitebox(env.model.as_ref().expect("checked in plan"), start, c),
            AttackMethod::TransferFgs => transfer_attack(&plan.surrogates, oracle, start, c, false),
            AttackMethod::TransferIfgs => transfer_attack(&plan.surrogates, oracle, start, c, true),
            AttackMethod::RandomNoise | AttackMethod::DiffOfMeans => unreachable!("baselines are handled separately"),
        }
    };
    match spec.method {
        AttackMethod::RandomNoise => zero_query(random_perturbation(x, &cfg.budget, &mut rng)),
        AttackMethod::DiffOfMeans => {
            let means = env.class_means.as_ref().expect("checked in plan");
            zero_query(diff_of_means(x, label, means, &cfg.budget, target)?)
        }
        _ if cfg.init_rand_magnitude > 0.0 => rand_init_then(x, cfg, single),
        _ => single(x, cfg),
    }
}

fn run_row(
    spec: &AttackSpec,
    env: &AttackEnv,
    data: &Dataset,
    targets: &[usize],
    correct: &[bool],
    seed: u64,
) -> Result<AttackRow> {
    let plan = plan_row(spec, env, data)?;
    let start = Instant::now();
    let outcomes: Vec<Result<SampleRecord>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let (x, label) = data.sample(i);
            let mode = if spec.targeted {
                AttackMode::Targeted { target: targets[i] }
            } else {
                AttackMode::Untargeted { label }
            };
            let cfg = attack_config(spec, &plan, data, mode, seed ^ i as u64)?;
            let counted = CountingOracle::new(env.oracle.as_ref(), QueryLedger::new());
            let result = attack_sample(spec, &plan, env, &counted, x, label, &cfg)?;
            let queries = counted.ledger().total();
            if queries != result.queries {
                return Err(Error::Numeric(format!(
                    "sample {i}: attack reported {} queries, ledger counted {queries}",
                    result.queries
                )));
            }
            Ok(SampleRecord {
                index: i,
                label,
                target: spec.targeted.then_some(targets[i]),
                originally_correct: correct[i],
                success: result.success,
                predicted: result.predicted,
                queries,
                l2: result.l2_distortion,
                linf: result.linf_distortion,
            })
        })
        .collect();
    let elapsed = start.elapsed().as_secs_f64();
    let samples = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let successes: Vec<bool> = samples.iter().map(|s| s.success).collect();
    let n = samples.len().max(1) as f64;
    Ok(AttackRow {
        success_rate: success_rate(&successes)?,
        conditioned_success_rate: conditioned_success_rate(&successes, correct).ok(),
        avg_l2: samples.iter().map(|s| s.l2).sum::<f64>() / n,
        avg_linf: samples.iter().map(|s| s.linf).sum::<f64>() / n,
        avg_queries: samples.iter().map(|s| s.queries as f64).sum::<f64>() / n,
        sec_per_sample: elapsed / n,
        samples,
        ..empty_row(spec, plan.reduction.scheme())
    })
}

fn empty_row(spec: &AttackSpec, scheme: Scheme) -> AttackRow {
    AttackRow {
        attack: display_name(spec.method, spec.loss, spec.targeted, &scheme, spec.rand_init > 0.0),
        method: spec.method,
        loss: spec.method.uses_loss().then_some(spec.loss),
        mode: if spec.targeted { "targeted" } else { "untargeted" }.to_string(),
        epsilon: spec.epsilon,
        delta: spec
            .uses_estimation()
            .then(|| spec.delta.unwrap_or(crate::attacks::default_delta(spec.loss))),
        alpha: spec.uses_alpha().then(|| spec.alpha.unwrap_or(0.01)),
        iterations: spec.uses_iterations().then(|| spec.iterations.unwrap_or(40)),
        reduction: match scheme {
            Scheme::None => "none",
            Scheme::RandomGroups { .. } => "rg",
            Scheme::Pca { .. } => "pca",
        }
        .to_string(),
        k: scheme.k(),
        success_rate: 0.0,
        conditioned_success_rate: None,
        avg_l2: 0.0,
        avg_linf: 0.0,
        avg_queries: 0.0,
        error: None,
        samples: Vec::new(),
        sec_per_sample: 0.0,
    }
}

impl ReductionSpec {
    pub fn scheme(&self) -> Scheme {
        match *self {
            ReductionSpec::None => Scheme::None,
            ReductionSpec::Rg { k, .. } => Scheme::RandomGroups { k },
            ReductionSpec::Pca { k } => Scheme::Pca { k },
        }
    }
}

/// Runs every attack in `attacks` over all samples of `data`.
///
/// Each sample gets its own query ledger and the seed `options.seed ^ index`,
/// so results do not depend on the number of workers. A failing row records
/// its error and the remaining rows still run.
pub fn run_attacks(
    env: &AttackEnv,
    data: &Dataset,
    attacks: &[AttackSpec],
    options: RunOptions,
) -> Result<ExperimentReport> {
    if data.is_empty() {
        return arg_err("no samples to attack");
    }
    if data.input_dim() != env.oracle.input_dim() {
        return arg_err(format!(
            "samples have {} features, oracle expects {}",
            data.input_dim(),
            env.oracle.input_dim()
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.threads)
        .build()
        .map_err(|e| Error::Argument(format!("cannot start worker pool: {e}")))?;
    let predicted: Vec<usize> = pool.install(|| {
        (0..data.len())
            .into_par_iter()
            .map(|i| query_label(env.oracle.as_ref(), data.features().row(i)))
            .collect::<Result<_>>()
    })?;
    let correct: Vec<bool> = predicted.iter().zip(data.labels()).map(|(p, y)| p == y).collect();
    let targets = sample_targets(data.labels(), data.num_classes(), &mut Rng::seeded(options.target_seed))?;

    let mut rows = Vec::with_capacity(attacks.len());
    for spec in attacks {
        let row = pool.install(|| run_row(spec, env, data, &targets, &correct, options.seed));
        rows.push(row.unwrap_or_else(|e| {
            tracing::warn!(method = spec.method.id(), error = %e, "attack row failed");
            AttackRow {
                error: Some(e.to_string()),
                ..empty_row(spec, spec.reduction.scheme())
            }
        }));
    }
    Ok(ExperimentReport {
        name: String::new(),
        seed: options.seed,
        dataset: data.name().to_string(),
        num_samples: data.len(),
        clean_accuracy: success_rate(&correct)?,
        rows,
    })
}

fn build_model(config: &ExperimentConfig, train_data: &Dataset) -> Result<Option<Arc<MlpModel>>> {
    let model = match &config.model {
        None => return Ok(None),
        Some(ModelSource::Path(p)) => load_model(p)?,
        Some(ModelSource::Train(spec)) => {
            let arch = ArchSpec::named(
                &spec.arch,
                train_data.input_dim(),
                train_data.num_classes(),
                train_data.data_range(),
            )?;
            match &spec.adversarial {
                None => train(train_data, None, &arch, &spec.config)?.0,
                Some(adv) => adversarial_train(train_data, None, &arch, &spec.config, &adv.to_kind()?)?.0,
            }
        }
    };
    Ok(Some(Arc::new(model)))
}

/// Loads data and model, runs all attacks and writes the configured report
/// files.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let full = config.data.load()?;
    let train_data = match &config.train_data {
        Some(src) => src.load()?,
        None => full.clone(),
    };
    let n = config.samples.unwrap_or(full.len());
    if n > full.len() {
        return arg_err(format!("requested {n} samples from a dataset of {}", full.len()));
    }
    let mut order: Vec<usize> = (0..full.len()).collect();
    if let Some(s) = config.selection_seed {
        Rng::seeded(s).shuffle(&mut order);
    }
    order.truncate(n);
    let data = full.subset(&order)?;

    let model = build_model(config, &train_data)?;
    let oracle: Arc<dyn Oracle> = match (&config.oracle, &model) {
        (OracleSpec::Local, Some(m)) => Arc::new(LocalOracle::new(m.clone())),
        (OracleSpec::Local, None) => return arg_err("a local oracle needs `model`"),
        (OracleSpec::Remote(endpoint), _) => Arc::new(RemoteOracle::connect(endpoint.clone())?),
    };
    let needs_means = config.attacks.iter().any(|a| a.method == AttackMethod::DiffOfMeans);
    let env = AttackEnv {
        oracle,
        model,
        surrogates: Vec::new(),
        class_means: needs_means
            .then(|| class_means(train_data.features(), train_data.labels(), train_data.num_classes()))
            .transpose()?,
    };
    let options = RunOptions {
        seed: resolve_seed(config.seed),
        target_seed: config.target_seed,
        threads: resolve_threads(config.threads),
    };
    let mut report = run_attacks(&env, &data, &config.attacks, options)?;
    report.name = config.name.clone();
    if let Some(p) = &config.output.csv {
        write_csv(&report, p)?;
    }
    if let Some(p) = &config.output.json {
        write_json(&report, p)?;
    }
    Ok(report)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes one CSV line per attack row. Rates and distortion are rounded to
/// one decimal.
pub fn write_csv(report: &ExperimentReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record([
        "attack",
        "loss",
        "mode",
        "epsilon",
        "delta",
        "alpha",
        "iterations",
        "reduction",
        "k",
        "success_rate",
        "conditioned_success_rate",
        "avg_l2",
        "avg_queries",
        "sec_per_sample",
    ])
    .map_err(io)?;
    for r in &report.rows {
        w.write_record([
            r.attack.clone(),
            opt(r.loss.map(|l| l.name())),
            r.mode.clone(),
            r.epsilon.to_string(),
            opt(r.delta),
            opt(r.alpha),
            opt(r.iterations),
            r.reduction.clone(),
            opt(r.k),
            format!("{:.1}", r.success_rate),
            opt(r.conditioned_success_rate.map(|c| format!("{c:.1}"))),
            format!("{:.1}", r.avg_l2),
            r.avg_queries.to_string(),
            format!("{:.6}", r.sec_per_sample),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(report: &ExperimentReport, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, report.to_json()?)?;
    Ok(())
}
