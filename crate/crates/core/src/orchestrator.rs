//! End-to-end federated training loops.
//!
//! [`run_fedcross`] keeps a pool of `K` middleware models: every round it
//! samples `K` clients, shuffles the dispatch order, trains each model on
//! its client in parallel, then replaces the pool with cross-aggregated
//! blends. The deployment ("global") model is the pool mean and is only
//! computed for evaluation; it never feeds back into training.
//! [`run_fedavg`] and [`run_fedprox`] are the classical one-to-multi
//! baselines, sharing the same client-sampling streams so runs are
//! comparable seed-for-seed.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::aggregation::{
    co_model_select, cross_aggr, dynamic_alpha, fedavg_aggr, propeller_aggr, AlphaPolicy,
    AlphaPolicyKind, SelectionStrategy,
};
use crate::data::{Dataset, PartitionPlan};
use crate::error::{Error, Result};
use crate::models::{evaluate, init_params, local_train, MlpArchitecture, TrainerConfig};
use crate::params::{mean_of, ParamVector};
use crate::rng::{self, Domain};

/// Training method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    FedCross,
    FedAvg,
    FedProx,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::FedCross => "fedcross",
            Method::FedAvg => "fedavg",
            Method::FedProx => "fedprox",
        }
    }
}

/// Convergence-acceleration variants for the cross-aggregation loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccelMode {
    None,
    /// Two guests per host (round-robin pair) for the first `pm_rounds`.
    Pm,
    /// Ramp alpha from `alpha_start` to `alpha` over the first `da_rounds`.
    Da,
    /// Propeller rounds first, then the alpha ramp.
    PmDa,
}

impl AccelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AccelMode::None => "none",
            AccelMode::Pm => "pm",
            AccelMode::Da => "da",
            AccelMode::PmDa => "pm-da",
        }
    }
}

/// Acceleration mode plus its phase lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct AccelConfig {
    pub mode: AccelMode,
    pub pm_rounds: usize,
    pub da_rounds: usize,
}

impl Default for AccelConfig {
    fn default() -> Self {
        Self { mode: AccelMode::None, pm_rounds: 20, da_rounds: 20 }
    }
}

/// How training samples are spread across clients.
#[derive(Debug, Clone, PartialEq)]
pub enum PartitionSpec {
    Iid,
    Dirichlet { beta: f64, min_per_client: usize },
}

/// Full experiment description for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub method: Method,
    pub rounds: usize,
    pub num_clients: usize,
    /// Fraction of clients sampled each round; the cohort size is
    /// `round(num_clients * participation)`.
    pub participation: f64,
    pub strategy: SelectionStrategy,
    pub alpha_policy: AlphaPolicy,
    pub accel: AccelConfig,
    pub trainer: TrainerConfig,
    pub arch: MlpArchitecture,
    pub partition: PartitionSpec,
    pub master_seed: u64,
    pub eval_every: usize,
    /// Worker threads for local training; 0 uses the ambient thread pool.
    pub threads: usize,
}

impl SimConfig {
    /// Number of clients (and middleware models) participating per round.
    pub fn cohort_size(&self) -> usize {
        (self.num_clients as f64 * self.participation).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if self.num_clients < 1 {
            return Err(Error::Config("num_clients must be >= 1".into()));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::Config("participation must be in (0, 1]".into()));
        }
        let k = self.cohort_size();
        if self.method == Method::FedCross && k < 2 {
            return Err(Error::Config(format!(
                "fedcross needs a cohort of at least 2 (num_clients * participation gave {k})"
            )));
        }
        if k < 1 {
            return Err(Error::Config("cohort size must be at least 1".into()));
        }
        if self.eval_every < 1 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        self.alpha_policy.validate()?;
        self.trainer.validate()?;
        if let PartitionSpec::Dirichlet { beta, .. } = self.partition {
            if !(beta > 0.0) {
                return Err(Error::Config("partition beta must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Train/test halves of one dataset; evaluation always uses `test`.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub train: Dataset,
    pub test: Dataset,
}

/// Per-round record. Accuracy fields are populated only on evaluation
/// rounds; middleware stats only exist for fedcross.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub global_accuracy: Option<f64>,
    pub global_loss: Option<f64>,
    pub middleware_acc_mean: Option<f64>,
    pub middleware_acc_min: Option<f64>,
    pub middleware_acc_max: Option<f64>,
    pub bytes_down: u64,
    pub bytes_up: u64,
    pub alpha_used: f64,
    /// Wall-clock round duration; the only field that is not
    /// deterministic in the seed.
    pub elapsed_ms: u64,
}

impl RoundMetrics {
    /// Equality over every deterministic field (everything but timing).
    pub fn same_payload(&self, other: &Self) -> bool {
        self.round == other.round
            && self.global_accuracy == other.global_accuracy
            && self.global_loss == other.global_loss
            && self.middleware_acc_mean == other.middleware_acc_mean
            && self.middleware_acc_min == other.middleware_acc_min
            && self.middleware_acc_max == other.middleware_acc_max
            && self.bytes_down == other.bytes_down
            && self.bytes_up == other.bytes_up
            && self.alpha_used == other.alpha_used
    }
}

/// Run identity plus one record per round.
#[derive(Debug, Clone)]
pub struct MetricsLog {
    pub method: Method,
    pub strategy: SelectionStrategy,
    pub master_seed: u64,
    pub rounds: Vec<RoundMetrics>,
}

impl MetricsLog {
    /// Metrics of the last round that ran an evaluation.
    pub fn final_eval(&self) -> Option<&RoundMetrics> {
        self.rounds.iter().rev().find(|r| r.global_accuracy.is_some())
    }

    /// Metrics of the evaluation at the given round index, if it fired.
    pub fn eval_at(&self, round: usize) -> Option<&RoundMetrics> {
        self.rounds.iter().find(|r| r.round == round && r.global_accuracy.is_some())
    }
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: MetricsLog,
    pub global_model: ParamVector,
    /// Final middleware pool; empty for the one-to-multi baselines.
    pub middleware_pool: Vec<ParamVector>,
}

/// Uniform sample of `k` distinct client ids from `0..n`.
pub fn select_clients<R: Rng>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    assert!(k <= n, "cannot select {k} clients from {n}");
    rand::seq::index::sample(rng, n, k).into_vec()
}

/// Fisher-Yates permutation of the dispatch order.
pub fn shuffle_dispatch<R: Rng>(mut selected: Vec<usize>, rng: &mut R) -> Vec<usize> {
    use rand::seq::SliceRandom;
    selected.shuffle(rng);
    selected
}

/// Bytes moved in one round: `k` models down, `k` models up, eight bytes
/// per parameter, and nothing else.
pub fn count_communication(cohort: usize, param_count: usize) -> (u64, u64) {
    let bytes = cohort as u64 * param_count as u64 * 8;
    (bytes, bytes)
}

/// Dispatches on `cfg.method` after validating the configuration.
pub fn run(cfg: &SimConfig, data: &SplitData, plan: &PartitionPlan) -> Result<RunOutcome> {
    cfg.validate()?;
    match cfg.method {
        Method::FedCross => run_fedcross(cfg, data, plan),
        Method::FedAvg => run_fedavg(cfg, data, plan),
        Method::FedProx => run_fedprox(cfg, data, plan),
    }
}

/// Multi-to-multi training with a middleware-model pool.
pub fn run_fedcross(cfg: &SimConfig, data: &SplitData, plan: &PartitionPlan) -> Result<RunOutcome> {
    let k = cfg.cohort_size();
    if k < 2 {
        return Err(Error::PoolTooSmall { size: k });
    }
    check_plan(cfg, data, plan)?;
    let workers = build_workers(cfg.threads)?;
    let param_count = cfg.arch.param_count();

    // The proximal term only exists in the fedprox baseline.
    let trainer = TrainerConfig { proximal_mu: 0.0, ..cfg.trainer.clone() };

    let init = init_params(&cfg.arch, rng::derive_seed(cfg.master_seed, Domain::ModelInit, 0, 0));
    let mut pool: Vec<ParamVector> = vec![init; k];
    let mut rounds = Vec::with_capacity(cfg.rounds);

    for round in 0..cfg.rounds {
        let started = Instant::now();
        let dispatched = sample_and_shuffle(cfg, k, round);

        // Local training; results land in the pool slot of the model that
        // was dispatched, never in completion order.
        let trained = install(&workers, || {
            (0..k)
                .into_par_iter()
                .map(|i| {
                    let client = dispatched[i];
                    let mut stream = rng::substream(
                        cfg.master_seed,
                        Domain::LocalTraining,
                        round as u64,
                        client as u64,
                    );
                    local_train(
                        &pool[i],
                        &cfg.arch,
                        &data.train,
                        plan.client(client),
                        &trainer,
                        None,
                        &mut stream,
                    )
                    .map_err(|e| in_round(e, round, i))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        pool = trained;

        let alpha = effective_alpha(round, cfg);
        let next: Vec<ParamVector> = if propeller_round(round, cfg) {
            (0..k)
                .map(|i| {
                    let (a, b) = propeller_partners(i, round, k);
                    propeller_aggr(&pool[i], [&pool[a], &pool[b]], alpha)
                        .map_err(|e| in_round(e, round, i))
                })
                .collect::<Result<_>>()?
        } else {
            let guests: Vec<usize> = (0..k)
                .map(|i| co_model_select(i, round, &pool, &cfg.strategy))
                .collect::<Result<_>>()?;
            (0..k)
                .map(|i| {
                    cross_aggr(&pool[i], &pool[guests[i]], alpha)
                        .map_err(|e| in_round(e, round, i))
                })
                .collect::<Result<_>>()?
        };
        pool = next;
        debug_assert_eq!(pool.len(), k);

        let (bytes_down, bytes_up) = count_communication(k, param_count);
        let mut metrics = RoundMetrics {
            round,
            global_accuracy: None,
            global_loss: None,
            middleware_acc_mean: None,
            middleware_acc_min: None,
            middleware_acc_max: None,
            bytes_down,
            bytes_up,
            alpha_used: alpha,
            elapsed_ms: 0,
        };
        if eval_fires(round, cfg) {
            let global = mean_of(&pool)?;
            let (accuracy, loss) = evaluate(&global, &cfg.arch, &data.test)?;
            metrics.global_accuracy = Some(accuracy);
            metrics.global_loss = Some(loss);

            let mut mw_accs = Vec::with_capacity(k);
            for model in &pool {
                let (acc, _) = evaluate(model, &cfg.arch, &data.test)?;
                mw_accs.push(acc);
            }
            metrics.middleware_acc_mean = Some(mw_accs.iter().sum::<f64>() / k as f64);
            metrics.middleware_acc_min = mw_accs.iter().cloned().reduce(f64::min);
            metrics.middleware_acc_max = mw_accs.iter().cloned().reduce(f64::max);
        }
        metrics.elapsed_ms = started.elapsed().as_millis() as u64;
        rounds.push(metrics);
    }

    let global_model = mean_of(&pool)?;
    Ok(RunOutcome {
        log: MetricsLog {
            method: Method::FedCross,
            strategy: cfg.strategy,
            master_seed: cfg.master_seed,
            rounds,
        },
        global_model,
        middleware_pool: pool,
    })
}

/// Classical single-global-model loop with sample-size weighted averaging.
pub fn run_fedavg(cfg: &SimConfig, data: &SplitData, plan: &PartitionPlan) -> Result<RunOutcome> {
    run_one_to_multi(cfg, data, plan, Method::FedAvg)
}

/// [`run_fedavg`] with the proximal term anchored at the current global
/// model (`proximal_mu` taken from the trainer config).
pub fn run_fedprox(cfg: &SimConfig, data: &SplitData, plan: &PartitionPlan) -> Result<RunOutcome> {
    run_one_to_multi(cfg, data, plan, Method::FedProx)
}

fn run_one_to_multi(
    cfg: &SimConfig,
    data: &SplitData,
    plan: &PartitionPlan,
    method: Method,
) -> Result<RunOutcome> {
    let k = cfg.cohort_size();
    if k < 1 {
        return Err(Error::Config("cohort size must be at least 1".into()));
    }
    check_plan(cfg, data, plan)?;
    let workers = build_workers(cfg.threads)?;
    let param_count = cfg.arch.param_count();

    let proximal = method == Method::FedProx;
    let trainer = TrainerConfig {
        proximal_mu: if proximal { cfg.trainer.proximal_mu } else { 0.0 },
        ..cfg.trainer.clone()
    };

    let mut global =
        init_params(&cfg.arch, rng::derive_seed(cfg.master_seed, Domain::ModelInit, 0, 0));
    let mut rounds = Vec::with_capacity(cfg.rounds);

    for round in 0..cfg.rounds {
        let started = Instant::now();
        let selected = select_clients(
            cfg.num_clients,
            k,
            &mut rng::substream(cfg.master_seed, Domain::ClientSampling, round as u64, 0),
        );

        let anchor = proximal.then(|| global.clone());
        let trained = install(&workers, || {
            selected
                .par_iter()
                .enumerate()
                .map(|(i, &client)| {
                    let mut stream = rng::substream(
                        cfg.master_seed,
                        Domain::LocalTraining,
                        round as u64,
                        client as u64,
                    );
                    local_train(
                        &global,
                        &cfg.arch,
                        &data.train,
                        plan.client(client),
                        &trainer,
                        anchor.as_ref(),
                        &mut stream,
                    )
                    .map_err(|e| in_round(e, round, i))
                })
                .collect::<Result<Vec<_>>>()
        })?;

        let weights: Vec<f64> = selected.iter().map(|&c| plan.client(c).len() as f64).collect();
        global = fedavg_aggr(&trained, &weights)?;

        let (bytes_down, bytes_up) = count_communication(k, param_count);
        let mut metrics = RoundMetrics {
            round,
            global_accuracy: None,
            global_loss: None,
            middleware_acc_mean: None,
            middleware_acc_min: None,
            middleware_acc_max: None,
            bytes_down,
            bytes_up,
            alpha_used: cfg.alpha_policy.alpha,
            elapsed_ms: 0,
        };
        if eval_fires(round, cfg) {
            let (accuracy, loss) = evaluate(&global, &cfg.arch, &data.test)?;
            metrics.global_accuracy = Some(accuracy);
            metrics.global_loss = Some(loss);
        }
        metrics.elapsed_ms = started.elapsed().as_millis() as u64;
        rounds.push(metrics);
    }

    Ok(RunOutcome {
        log: MetricsLog { method, strategy: cfg.strategy, master_seed: cfg.master_seed, rounds },
        global_model: global,
        middleware_pool: Vec::new(),
    })
}

/// Host weight for the round, after applying any acceleration schedule.
fn effective_alpha(round: usize, cfg: &SimConfig) -> f64 {
    let ramp = |start_round: usize| {
        let policy = AlphaPolicy {
            kind: AlphaPolicyKind::DynamicLinear,
            alpha: cfg.alpha_policy.alpha,
            alpha_start: cfg.alpha_policy.alpha_start,
            warmup_rounds: cfg.accel.da_rounds,
        };
        dynamic_alpha(round - start_round, &policy)
    };
    match cfg.accel.mode {
        AccelMode::None | AccelMode::Pm => dynamic_alpha(round, &cfg.alpha_policy),
        AccelMode::Da => ramp(0),
        AccelMode::PmDa => {
            if round < cfg.accel.pm_rounds {
                dynamic_alpha(round, &cfg.alpha_policy)
            } else {
                ramp(cfg.accel.pm_rounds)
            }
        }
    }
}

fn propeller_round(round: usize, cfg: &SimConfig) -> bool {
    matches!(cfg.accel.mode, AccelMode::Pm | AccelMode::PmDa) && round < cfg.accel.pm_rounds
}

/// Two round-robin guests: the partners of this round and the next. For a
/// pool of two the single partner is used twice, which degenerates to
/// plain cross-aggregation.
fn propeller_partners(host: usize, round: usize, k: usize) -> (usize, usize) {
    let first = (host + (round % (k - 1)) + 1) % k;
    let second = (host + ((round + 1) % (k - 1)) + 1) % k;
    (first, second)
}

fn eval_fires(round: usize, cfg: &SimConfig) -> bool {
    (round + 1) % cfg.eval_every == 0 || round + 1 == cfg.rounds
}

fn sample_and_shuffle(cfg: &SimConfig, k: usize, round: usize) -> Vec<usize> {
    let selected = select_clients(
        cfg.num_clients,
        k,
        &mut rng::substream(cfg.master_seed, Domain::ClientSampling, round as u64, 0),
    );
    shuffle_dispatch(
        selected,
        &mut rng::substream(cfg.master_seed, Domain::DispatchShuffle, round as u64, 0),
    )
}

fn check_plan(cfg: &SimConfig, data: &SplitData, plan: &PartitionPlan) -> Result<()> {
    if plan.num_clients() != cfg.num_clients {
        return Err(Error::Config(format!(
            "partition plan covers {} clients, config says {}",
            plan.num_clients(),
            cfg.num_clients
        )));
    }
    let n = data.train.len();
    for client in 0..plan.num_clients() {
        if plan.client(client).iter().any(|&i| i >= n) {
            return Err(Error::Config(format!(
                "partition plan references rows beyond the {n}-sample training set"
            )));
        }
    }
    Ok(())
}

fn in_round(error: Error, round: usize, model: usize) -> Error {
    match error {
        Error::NonFinite { .. } => Error::NonFiniteModel { round, model },
        other => other,
    }
}

fn build_workers(threads: usize) -> Result<Option<rayon::ThreadPool>> {
    if threads == 0 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(Some)
        .map_err(|e| Error::Config(format!("failed to build worker pool: {e}")))
}

fn install<T: Send>(
    workers: &Option<rayon::ThreadPool>,
    work: impl FnOnce() -> Result<T> + Send,
) -> Result<T> {
    match workers {
        Some(pool) => pool.install(work),
        None => work(),
    }
}
