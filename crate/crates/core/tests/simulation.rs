//! End-to-end orchestrator behavior: edge cases, baseline reductions,
//! determinism across worker-thread counts, and a hand-traced round.

use fedcross::orchestrator::{run_fedavg, run_fedcross, run_fedprox};
use fedcross::rng::{derive_seed, substream, Domain};
use fedcross::{
    cross_aggr, init_params, local_train, make_synthetic, mean_of, partition_iid, select_clients,
    shuffle_dispatch, stratified_split, AccelConfig, Activation, AlphaPolicy, Method,
    MlpArchitecture, PartitionPlan, PartitionSpec, RunOutcome, SelectionStrategy, SimConfig,
    SplitData, TrainerConfig,
};

fn small_world(seed: u64) -> (SplitData, PartitionPlan) {
    let ds = make_synthetic(3, 4, 100, 4.0, derive_seed(seed, Domain::DataSynthesis, 0, 0)).unwrap();
    let (train, test) =
        stratified_split(&ds, 0.2, derive_seed(seed, Domain::TestSplit, 0, 0)).unwrap();
    let plan = partition_iid(&train, 8, derive_seed(seed, Domain::Partition, 0, 0)).unwrap();
    (SplitData { train, test }, plan)
}

fn small_config(seed: u64) -> SimConfig {
    SimConfig {
        method: Method::FedCross,
        rounds: 6,
        num_clients: 8,
        participation: 0.5,
        strategy: SelectionStrategy::lowest_sim(),
        alpha_policy: AlphaPolicy::fixed(0.99),
        accel: AccelConfig::default(),
        trainer: TrainerConfig {
            epochs: 2,
            batch_size: 10,
            lr: 0.05,
            momentum: 0.5,
            proximal_mu: 0.0,
        },
        arch: MlpArchitecture::new(vec![4, 8, 3], Activation::Relu).unwrap(),
        partition: PartitionSpec::Iid,
        master_seed: seed,
        eval_every: 1,
        threads: 0,
    }
}

fn final_accuracy(outcome: &RunOutcome) -> f64 {
    outcome.log.final_eval().unwrap().global_accuracy.unwrap()
}

#[test]
fn zero_rounds_returns_initialization() {
    let seed = 3;
    let (data, plan) = small_world(seed);
    let mut cfg = small_config(seed);
    cfg.rounds = 0;
    let outcome = run_fedcross(&cfg, &data, &plan).unwrap();
    assert!(outcome.log.rounds.is_empty());

    let init = init_params(&cfg.arch, derive_seed(seed, Domain::ModelInit, 0, 0));
    for i in 0..init.len() {
        assert!((outcome.global_model[i] - init[i]).abs() < 1e-12);
    }
}

#[test]
fn zero_lr_keeps_accuracy_constant() {
    let seed = 4;
    let (data, plan) = small_world(seed);
    let mut cfg = small_config(seed);
    cfg.trainer.lr = 0.0;
    let outcome = run_fedcross(&cfg, &data, &plan).unwrap();
    let accs: Vec<f64> =
        outcome.log.rounds.iter().map(|r| r.global_accuracy.unwrap()).collect();
    assert_eq!(accs.len(), cfg.rounds);
    for &a in &accs[1..] {
        assert_eq!(a, accs[0]);
    }
}

#[test]
fn one_round_matches_hand_traced_pipeline() {
    // Replays round 0 through the public primitives and compares the pool
    // bit for bit: sampling, shuffle, per-client training, selection, and
    // the alpha blend must be wired exactly this way.
    let seed = 5;
    let (data, plan) = small_world(seed);
    let mut cfg = small_config(seed);
    cfg.rounds = 1;
    cfg.participation = 0.25; // cohort of 2
    let k = cfg.cohort_size();
    assert_eq!(k, 2);

    let outcome = run_fedcross(&cfg, &data, &plan).unwrap();

    let init = init_params(&cfg.arch, derive_seed(seed, Domain::ModelInit, 0, 0));
    let selected = select_clients(
        cfg.num_clients,
        k,
        &mut substream(seed, Domain::ClientSampling, 0, 0),
    );
    let dispatched =
        shuffle_dispatch(selected, &mut substream(seed, Domain::DispatchShuffle, 0, 0));
    let trained: Vec<_> = (0..k)
        .map(|i| {
            let client = dispatched[i];
            local_train(
                &init,
                &cfg.arch,
                &data.train,
                plan.client(client),
                &cfg.trainer,
                None,
                &mut substream(seed, Domain::LocalTraining, 0, client as u64),
            )
            .unwrap()
        })
        .collect();
    // With a pool of two every strategy picks the only other model.
    let alpha = cfg.alpha_policy.alpha;
    let expected = [
        cross_aggr(&trained[0], &trained[1], alpha).unwrap(),
        cross_aggr(&trained[1], &trained[0], alpha).unwrap(),
    ];

    assert_eq!(outcome.middleware_pool.len(), 2);
    for (got, want) in outcome.middleware_pool.iter().zip(&expected) {
        assert_eq!(got, want);
    }
    assert_eq!(outcome.global_model, mean_of(&expected).unwrap());
}

#[test]
fn fedavg_single_client_returns_that_clients_model() {
    let seed = 6;
    let (data, plan) = small_world(seed);
    let mut cfg = small_config(seed);
    cfg.method = Method::FedAvg;
    cfg.participation = 0.125; // cohort of 1
    cfg.rounds = 1;

    let outcome = run_fedavg(&cfg, &data, &plan).unwrap();
    let selected = select_clients(
        cfg.num_clients,
        1,
        &mut substream(seed, Domain::ClientSampling, 0, 0),
    );
    let client = selected[0];
    let init = init_params(&cfg.arch, derive_seed(seed, Domain::ModelInit, 0, 0));
    let trainer = TrainerConfig { proximal_mu: 0.0, ..cfg.trainer.clone() };
    let expected = local_train(
        &init,
        &cfg.arch,
        &data.train,
        plan.client(client),
        &trainer,
        None,
        &mut substream(seed, Domain::LocalTraining, 0, client as u64),
    )
    .unwrap();
    for i in 0..expected.len() {
        assert!((outcome.global_model[i] - expected[i]).abs() < 1e-12);
    }
}

#[test]
fn fedprox_with_zero_mu_reduces_to_fedavg() {
    let seed = 7;
    let (data, plan) = small_world(seed);
    let mut cfg = small_config(seed);
    cfg.method = Method::FedAvg;
    let avg = run_fedavg(&cfg, &data, &plan).unwrap();

    cfg.method = Method::FedProx;
    cfg.trainer.proximal_mu = 0.0;
    let prox = run_fedprox(&cfg, &data, &plan).unwrap();

    assert_eq!(avg.global_model, prox.global_model);
    assert_eq!(avg.log.rounds.len(), prox.log.rounds.len());
    for (a, p) in avg.log.rounds.iter().zip(&prox.log.rounds) {
        assert!(a.same_payload(p), "round {} diverged", a.round);
    }
}

#[test]
fn huge_proximal_mu_freezes_the_global_model() {
    let seed = 8;
    let (data, plan) = small_world(seed);
    let mut cfg = small_config(seed);
    cfg.rounds = 5;
    // lr * mu must stay below 1 for stable proximal pull.
    cfg.trainer.lr = 1e-7;

    cfg.method = Method::FedAvg;
    let avg = run_fedavg(&cfg, &data, &plan).unwrap();

    cfg.method = Method::FedProx;
    cfg.trainer.proximal_mu = 1e6;
    let prox = run_fedprox(&cfg, &data, &plan).unwrap();

    let init = init_params(&cfg.arch, derive_seed(seed, Domain::ModelInit, 0, 0));
    let drift_avg = avg.global_model.distance(&init).unwrap();
    let drift_prox = prox.global_model.distance(&init).unwrap();
    assert!(
        drift_prox < drift_avg,
        "proximal drift {drift_prox} not below plain drift {drift_avg}"
    );
}

#[test]
fn runs_are_deterministic_across_thread_counts() {
    let seed = 9;
    let (data, plan) = small_world(seed);
    for method in [Method::FedCross, Method::FedAvg, Method::FedProx] {
        let mut cfg = small_config(seed);
        cfg.method = method;
        cfg.threads = 1;
        let single = fedcross::run(&cfg, &data, &plan).unwrap();
        cfg.threads = 8;
        let many = fedcross::run(&cfg, &data, &plan).unwrap();

        assert_eq!(single.global_model, many.global_model, "{method:?}");
        assert_eq!(single.middleware_pool, many.middleware_pool, "{method:?}");
        for (a, b) in single.log.rounds.iter().zip(&many.log.rounds) {
            assert!(a.same_payload(b), "{method:?} round {} diverged", a.round);
        }
    }
}

#[test]
fn evaluation_cadence_does_not_perturb_training() {
    let seed = 10;
    let (data, plan) = small_world(seed);
    let mut cfg = small_config(seed);
    cfg.eval_every = 1;
    let every_round = run_fedcross(&cfg, &data, &plan).unwrap();
    cfg.eval_every = cfg.rounds;
    let final_only = run_fedcross(&cfg, &data, &plan).unwrap();

    assert_eq!(every_round.global_model, final_only.global_model);
    assert_eq!(
        final_only.log.rounds.iter().filter(|r| r.global_accuracy.is_some()).count(),
        1
    );
    let last_a = every_round.log.final_eval().unwrap();
    let last_b = final_only.log.final_eval().unwrap();
    assert_eq!(last_a.global_accuracy, last_b.global_accuracy);
    assert_eq!(last_a.global_loss, last_b.global_loss);
}

#[test]
fn byte_counters_match_across_methods() {
    let seed = 11;
    let (data, plan) = small_world(seed);
    let expected = 4 * small_config(seed).arch.param_count() as u64 * 8;
    for method in [Method::FedCross, Method::FedAvg, Method::FedProx] {
        let mut cfg = small_config(seed);
        cfg.method = method;
        let outcome = fedcross::run(&cfg, &data, &plan).unwrap();
        for round in &outcome.log.rounds {
            assert_eq!(round.bytes_down, expected, "{method:?}");
            assert_eq!(round.bytes_up, expected, "{method:?}");
        }
    }
}

#[test]
fn middleware_stats_only_exist_for_fedcross() {
    let seed = 12;
    let (data, plan) = small_world(seed);
    let mut cfg = small_config(seed);
    let cross = run_fedcross(&cfg, &data, &plan).unwrap();
    let eval = cross.log.final_eval().unwrap();
    assert!(eval.middleware_acc_mean.is_some());
    assert!(eval.middleware_acc_min.unwrap() <= eval.middleware_acc_mean.unwrap());
    assert!(eval.middleware_acc_mean.unwrap() <= eval.middleware_acc_max.unwrap());

    cfg.method = Method::FedAvg;
    let avg = run_fedavg(&cfg, &data, &plan).unwrap();
    assert!(avg.log.final_eval().unwrap().middleware_acc_mean.is_none());
}

#[test]
fn pool_size_is_invariant() {
    let seed = 13;
    let (data, plan) = small_world(seed);
    let cfg = small_config(seed);
    let outcome = run_fedcross(&cfg, &data, &plan).unwrap();
    assert_eq!(outcome.middleware_pool.len(), cfg.cohort_size());
}
