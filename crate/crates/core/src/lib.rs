//! Deterministic single-process simulator for multi-model federated
//! learning.
//!
//! The core protocol keeps a pool of middleware models that circulate
//! among clients and are pairwise cross-aggregated after every round; the
//! deployable global model is generated separately by averaging the pool.
//! FedAvg and FedProx loops are included as baselines, and every source of
//! randomness is derived from a single master seed so identical
//! configurations reproduce bit-identical metrics regardless of worker
//! thread count.

pub mod aggregation;
pub mod data;
pub mod error;
pub mod models;
pub mod orchestrator;
pub mod params;
pub mod rng;

pub use aggregation::{
    co_model_select, cross_aggr, dynamic_alpha, fedavg_aggr, propeller_aggr, AlphaPolicy,
    AlphaPolicyKind, SelectionKind, SelectionStrategy,
};
pub use data::{
    load_csv, make_synthetic, partition_dirichlet, partition_iid, stratified_split, Dataset,
    PartitionPlan,
};
pub use error::{Error, Result};
pub use models::{
    evaluate, init_params, local_train, loss_and_grad, Activation, MlpArchitecture, TrainerConfig,
};
pub use orchestrator::{
    count_communication, run, run_fedavg, run_fedcross, run_fedprox, select_clients,
    shuffle_dispatch, AccelConfig, AccelMode, Method, MetricsLog, PartitionSpec, RoundMetrics,
    RunOutcome, SimConfig, SplitData,
};
pub use params::{cosine_similarity, lin_comb, mean_of, ParamVector, SimilarityVariant};
