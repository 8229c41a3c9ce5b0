//! Experiment configuration: TOML file, command-line overrides, and the
//! resolved sweep plan. Precedence is flags > file > built-in defaults.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Parser;
use serde::Deserialize;

use fedcross::{
    AccelConfig, AccelMode, Activation, AlphaPolicy, AlphaPolicyKind, Method, MlpArchitecture,
    PartitionSpec, SelectionKind, SelectionStrategy, SimConfig, SimilarityVariant, TrainerConfig,
};

/// Deterministic federated-learning simulator: multi-model
/// cross-aggregation (fedcross) with fedavg and fedprox baselines.
#[derive(Debug, Parser)]
#[command(
    name = "fedcross",
    version,
    after_help = "Precedence: command-line flags override config-file values, which override \
                  built-in defaults.\nExit codes: 0 all runs succeeded, 1 configuration error, \
                  2 at least one run failed."
)]
pub struct Cli {
    /// TOML experiment file; omit to run with defaults plus flags.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Training method: fedcross | fedavg | fedprox (replaces the sweep's method list).
    #[arg(long)]
    pub method: Option<String>,

    /// Number of federated rounds.
    #[arg(long)]
    pub rounds: Option<usize>,

    /// Total number of clients.
    #[arg(long)]
    pub clients: Option<usize>,

    /// Fraction of clients sampled per round, in (0, 1].
    #[arg(long)]
    pub participation: Option<f64>,

    /// Host weight for cross-aggregation, in [0.5, 1.0) (replaces the sweep's alpha list).
    #[arg(long)]
    pub alpha: Option<f64>,

    /// Collaborator selection: in-order | highest-sim | lowest-sim
    /// (replaces the sweep's strategy list).
    #[arg(long)]
    pub selection: Option<String>,

    /// Dirichlet concentration for the non-IID partition.
    #[arg(long, conflicts_with = "iid")]
    pub beta: Option<f64>,

    /// Use the IID partition instead of Dirichlet.
    #[arg(long)]
    pub iid: bool,

    /// Acceleration: none | pm | da | pm-da
    #[arg(long)]
    pub accel: Option<String>,

    /// Master seed (replaces the sweep's seed list).
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output directory for metrics, models, and the summary.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Run sweep points on parallel workers instead of sequentially.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub aggregation: AggregationSection,
    #[serde(default)]
    pub trainer: TrainerSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// "synthetic" or "csv".
    pub kind: Option<String>,
    pub classes: Option<usize>,
    pub dim: Option<usize>,
    pub per_class: Option<usize>,
    pub class_sep: Option<f64>,
    pub path: Option<PathBuf>,
    pub has_header: Option<bool>,
    pub test_fraction: Option<f64>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            kind: None,
            classes: None,
            dim: None,
            per_class: None,
            class_sep: None,
            path: None,
            has_header: None,
            test_fraction: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub method: Option<String>,
    pub rounds: Option<usize>,
    pub clients: Option<usize>,
    pub participation: Option<f64>,
    pub eval_every: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    /// "dirichlet" or "iid".
    pub kind: Option<String>,
    pub beta: Option<f64>,
    pub min_per_client: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationSection {
    pub alpha: Option<f64>,
    pub selection: Option<String>,
    /// "standard" or "sum-norm".
    pub similarity: Option<String>,
    /// "fixed" or "dynamic-linear".
    pub alpha_policy: Option<String>,
    pub alpha_start: Option<f64>,
    pub warmup_rounds: Option<usize>,
    pub accel: Option<String>,
    pub pm_rounds: Option<usize>,
    pub da_rounds: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub proximal_mu: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Hidden layer widths; empty gives plain softmax regression.
    pub hidden: Option<Vec<usize>>,
    pub activation: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub seeds: Option<Vec<u64>>,
    pub methods: Option<Vec<String>>,
    pub alphas: Option<Vec<f64>>,
    pub strategies: Option<Vec<String>>,
}

/// Where the samples come from.
#[derive(Debug, Clone)]
pub enum DatasetSpec {
    Synthetic { classes: usize, dim: usize, per_class: usize, class_sep: f64 },
    Csv { path: PathBuf, has_header: bool },
}

/// One run of the sweep cross-product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub seed: u64,
    pub method: Method,
    pub alpha: f64,
    pub strategy: SelectionKind,
}

/// Fully resolved experiment: dataset source, shared simulation settings,
/// and the list of sweep points.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub out_dir: PathBuf,
    pub dataset: DatasetSpec,
    pub test_fraction: f64,
    pub rounds: usize,
    pub clients: usize,
    pub participation: f64,
    pub eval_every: usize,
    pub threads: usize,
    pub similarity: SimilarityVariant,
    pub alpha_policy_kind: AlphaPolicyKind,
    pub alpha_start: f64,
    pub warmup_rounds: usize,
    pub accel: AccelConfig,
    pub trainer: TrainerConfig,
    pub partition: PartitionSpec,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub points: Vec<SweepPoint>,
    pub parallel: bool,
}

impl ResolvedExperiment {
    /// Builds the simulator configuration for one sweep point once the
    /// dataset dimensions are known.
    pub fn sim_config(
        &self,
        point: &SweepPoint,
        input_dim: usize,
        num_classes: usize,
    ) -> Result<SimConfig> {
        let mut layer_sizes = Vec::with_capacity(self.hidden.len() + 2);
        layer_sizes.push(input_dim);
        layer_sizes.extend_from_slice(&self.hidden);
        layer_sizes.push(num_classes);
        let arch = MlpArchitecture::new(layer_sizes, self.activation)
            .context("invalid model architecture")?;
        let cfg = SimConfig {
            method: point.method,
            rounds: self.rounds,
            num_clients: self.clients,
            participation: self.participation,
            strategy: SelectionStrategy::new(point.strategy, self.similarity),
            alpha_policy: AlphaPolicy {
                kind: self.alpha_policy_kind,
                alpha: point.alpha,
                alpha_start: self.alpha_start.min(point.alpha),
                warmup_rounds: self.warmup_rounds,
            },
            accel: self.accel.clone(),
            trainer: self.trainer.clone(),
            arch,
            partition: self.partition.clone(),
            master_seed: point.seed,
            eval_every: self.eval_every,
            threads: self.threads,
        };
        cfg.validate().map_err(anyhow::Error::from)?;
        Ok(cfg)
    }
}

pub fn parse_method(s: &str) -> Result<Method> {
    match s {
        "fedcross" => Ok(Method::FedCross),
        "fedavg" => Ok(Method::FedAvg),
        "fedprox" => Ok(Method::FedProx),
        other => bail!("unknown method {other:?}; expected fedcross, fedavg, or fedprox"),
    }
}

pub fn parse_selection(s: &str) -> Result<SelectionKind> {
    match s {
        "in-order" => Ok(SelectionKind::InOrder),
        "highest-sim" => Ok(SelectionKind::HighestSim),
        "lowest-sim" => Ok(SelectionKind::LowestSim),
        other => bail!(
            "unknown selection {other:?}; expected in-order, highest-sim, or lowest-sim"
        ),
    }
}

pub fn parse_similarity(s: &str) -> Result<SimilarityVariant> {
    match s {
        "standard" => Ok(SimilarityVariant::Standard),
        "sum-norm" => Ok(SimilarityVariant::SumNorm),
        other => bail!("unknown similarity {other:?}; expected standard or sum-norm"),
    }
}

pub fn parse_alpha_policy(s: &str) -> Result<AlphaPolicyKind> {
    match s {
        "fixed" => Ok(AlphaPolicyKind::Fixed),
        "dynamic-linear" => Ok(AlphaPolicyKind::DynamicLinear),
        other => bail!("unknown alpha_policy {other:?}; expected fixed or dynamic-linear"),
    }
}

pub fn parse_accel(s: &str) -> Result<AccelMode> {
    match s {
        "none" => Ok(AccelMode::None),
        "pm" => Ok(AccelMode::Pm),
        "da" => Ok(AccelMode::Da),
        "pm-da" => Ok(AccelMode::PmDa),
        other => bail!("unknown accel {other:?}; expected none, pm, da, or pm-da"),
    }
}

pub fn parse_activation(s: &str) -> Result<Activation> {
    match s {
        "relu" => Ok(Activation::Relu),
        "tanh" => Ok(Activation::Tanh),
        other => bail!("unknown activation {other:?}; expected relu or tanh"),
    }
}

/// Parses the TOML text of an experiment file.
pub fn parse_config(text: &str) -> Result<ExperimentFile> {
    toml::from_str(text).map_err(|e| anyhow::anyhow!("{e}"))
}

/// Loads, overrides, and validates the experiment described by the CLI.
pub fn resolve(cli: &Cli) -> Result<ResolvedExperiment> {
    let file = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))?;
            parse_config(&text)
                .with_context(|| format!("cannot parse config file {}", path.display()))?
        }
        None => ExperimentFile::default(),
    };
    resolve_with_file(cli, file)
}

fn resolve_with_file(cli: &Cli, file: ExperimentFile) -> Result<ResolvedExperiment> {
    let ds = &file.dataset;
    let dataset = match ds.kind.as_deref().unwrap_or("synthetic") {
        "synthetic" => DatasetSpec::Synthetic {
            classes: ds.classes.unwrap_or(10),
            dim: ds.dim.unwrap_or(32),
            per_class: ds.per_class.unwrap_or(500),
            class_sep: ds.class_sep.unwrap_or(4.0),
        },
        "csv" => DatasetSpec::Csv {
            path: ds
                .path
                .clone()
                .ok_or_else(|| anyhow::anyhow!("dataset.kind = \"csv\" requires dataset.path"))?,
            has_header: ds.has_header.unwrap_or(false),
        },
        other => bail!("unknown dataset.kind {other:?}; expected synthetic or csv"),
    };
    let test_fraction = ds.test_fraction.unwrap_or(0.2);
    if !(0.0..1.0).contains(&test_fraction) {
        bail!("dataset.test_fraction must be in [0, 1)");
    }

    let partition = match (cli.iid, cli.beta) {
        (true, _) => PartitionSpec::Iid,
        (false, Some(beta)) => PartitionSpec::Dirichlet {
            beta,
            min_per_client: file.partition.min_per_client.unwrap_or(10),
        },
        (false, None) => match file.partition.kind.as_deref().unwrap_or("dirichlet") {
            "iid" => PartitionSpec::Iid,
            "dirichlet" => PartitionSpec::Dirichlet {
                beta: file.partition.beta.unwrap_or(0.5),
                min_per_client: file.partition.min_per_client.unwrap_or(10),
            },
            other => bail!("unknown partition.kind {other:?}; expected dirichlet or iid"),
        },
    };

    let agg = &file.aggregation;
    let accel_mode = match &cli.accel {
        Some(s) => parse_accel(s)?,
        None => parse_accel(agg.accel.as_deref().unwrap_or("none"))?,
    };
    let accel = AccelConfig {
        mode: accel_mode,
        pm_rounds: agg.pm_rounds.unwrap_or(20),
        da_rounds: agg.da_rounds.unwrap_or(20),
    };

    let trainer = TrainerConfig {
        epochs: file.trainer.epochs.unwrap_or(5),
        batch_size: file.trainer.batch_size.unwrap_or(50),
        lr: file.trainer.lr.unwrap_or(0.01),
        momentum: file.trainer.momentum.unwrap_or(0.5),
        proximal_mu: file.trainer.proximal_mu.unwrap_or(0.01),
    };

    let base_method = match &cli.method {
        Some(s) => s.clone(),
        None => file.sim.method.clone().unwrap_or_else(|| "fedcross".into()),
    };
    let base_alpha = cli.alpha.or(agg.alpha).unwrap_or(0.99);
    let base_selection = match &cli.selection {
        Some(s) => s.clone(),
        None => agg.selection.clone().unwrap_or_else(|| "lowest-sim".into()),
    };
    let base_seed = cli.seed.or(file.sim.seed).unwrap_or(1);

    // A flag pins its sweep axis to a single value.
    let seeds: Vec<u64> = match (cli.seed, &file.sweep.seeds) {
        (Some(s), _) => vec![s],
        (None, Some(seeds)) if !seeds.is_empty() => seeds.clone(),
        _ => vec![base_seed],
    };
    let methods: Vec<Method> = match (&cli.method, &file.sweep.methods) {
        (Some(m), _) => vec![parse_method(m)?],
        (None, Some(ms)) if !ms.is_empty() => {
            ms.iter().map(|m| parse_method(m)).collect::<Result<_>>()?
        }
        _ => vec![parse_method(&base_method)?],
    };
    let alphas: Vec<f64> = match (cli.alpha, &file.sweep.alphas) {
        (Some(a), _) => vec![a],
        (None, Some(alphas)) if !alphas.is_empty() => alphas.clone(),
        _ => vec![base_alpha],
    };
    let strategies: Vec<SelectionKind> = match (&cli.selection, &file.sweep.strategies) {
        (Some(s), _) => vec![parse_selection(s)?],
        (None, Some(ss)) if !ss.is_empty() => {
            ss.iter().map(|s| parse_selection(s)).collect::<Result<_>>()?
        }
        _ => vec![parse_selection(&base_selection)?],
    };

    let mut points = Vec::new();
    for &method in &methods {
        for &alpha in &alphas {
            for &strategy in &strategies {
                for &seed in &seeds {
                    points.push(SweepPoint { seed, method, alpha, strategy });
                }
            }
        }
    }

    let exp = ResolvedExperiment {
        out_dir: cli
            .out
            .clone()
            .or(file.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("results")),
        dataset,
        test_fraction,
        rounds: cli.rounds.or(file.sim.rounds).unwrap_or(100),
        clients: cli.clients.or(file.sim.clients).unwrap_or(100),
        participation: cli.participation.or(file.sim.participation).unwrap_or(0.10),
        eval_every: file.sim.eval_every.unwrap_or(10),
        threads: file.sim.threads.unwrap_or(0),
        similarity: parse_similarity(agg.similarity.as_deref().unwrap_or("standard"))?,
        alpha_policy_kind: parse_alpha_policy(agg.alpha_policy.as_deref().unwrap_or("fixed"))?,
        alpha_start: agg.alpha_start.unwrap_or(0.5),
        warmup_rounds: agg.warmup_rounds.unwrap_or(20),
        accel,
        trainer,
        partition,
        hidden: file.model.hidden.clone().unwrap_or_else(|| vec![64]),
        activation: parse_activation(file.model.activation.as_deref().unwrap_or("relu"))?,
        points,
        parallel: cli.parallel,
    };
    validate_experiment(&exp)?;
    Ok(exp)
}

fn validate_experiment(exp: &ResolvedExperiment) -> Result<()> {
    if exp.points.is_empty() {
        bail!("sweep produced no points");
    }
    // Probe every sweep point against a stand-in architecture so bad
    // values are rejected before any computation starts; alpha domain
    // checks in particular happen here.
    for point in &exp.points {
        exp.sim_config(point, 4, 2).with_context(|| {
            format!(
                "invalid sweep point (method={}, alpha={}, strategy={}, seed={})",
                point.method.as_str(),
                point.alpha,
                point.strategy.as_str(),
                point.seed
            )
        })?;
    }
    Ok(())
}
