//! Sweep execution: build each point's world from its seed, run it, and
//! persist metrics, final models, and the cross-seed summary.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use rayon::prelude::*;

use fedcross::rng::{derive_seed, Domain};
use fedcross::{
    load_csv, make_synthetic, partition_dirichlet, partition_iid, stratified_split, Dataset,
    PartitionPlan, PartitionSpec, RunOutcome, SplitData,
};

use crate::config::{DatasetSpec, ResolvedExperiment, SweepPoint};
use crate::output::{emit_metrics, emit_model};

/// One finished sweep point.
#[derive(Debug)]
pub struct PointResult {
    pub point: SweepPoint,
    pub final_accuracy: f64,
    pub metrics_path: PathBuf,
    pub model_path: PathBuf,
    pub elapsed_secs: f64,
}

/// All point outcomes plus the rendered summary.
#[derive(Debug)]
pub struct RunReport {
    pub results: Vec<std::result::Result<PointResult, String>>,
    pub summary_table: String,
    pub summary_path: Option<PathBuf>,
}

impl RunReport {
    pub fn any_failed(&self) -> bool {
        self.results.iter().any(|r| r.is_err())
    }
}

/// Loads the shared CSV dataset up front; synthetic data is generated per
/// point from its seed.
pub fn prepare_shared_dataset(exp: &ResolvedExperiment) -> Result<Option<Dataset>> {
    match &exp.dataset {
        DatasetSpec::Csv { path, has_header } => {
            let ds = load_csv(path, *has_header)
                .with_context(|| format!("cannot load dataset {}", path.display()))?;
            Ok(Some(ds))
        }
        DatasetSpec::Synthetic { .. } => Ok(None),
    }
}

fn build_world(
    exp: &ResolvedExperiment,
    shared: &Option<Dataset>,
    seed: u64,
) -> Result<(SplitData, PartitionPlan)> {
    let ds = match (&exp.dataset, shared) {
        (_, Some(ds)) => ds.clone(),
        (DatasetSpec::Synthetic { classes, dim, per_class, class_sep }, None) => make_synthetic(
            *classes,
            *dim,
            *per_class,
            *class_sep,
            derive_seed(seed, Domain::DataSynthesis, 0, 0),
        )?,
        (DatasetSpec::Csv { .. }, None) => anyhow::bail!("CSV dataset was not preloaded"),
    };
    let (train, test) =
        stratified_split(&ds, exp.test_fraction, derive_seed(seed, Domain::TestSplit, 0, 0))?;
    let plan = match exp.partition {
        PartitionSpec::Iid => {
            partition_iid(&train, exp.clients, derive_seed(seed, Domain::Partition, 0, 0))?
        }
        PartitionSpec::Dirichlet { beta, min_per_client } => partition_dirichlet(
            &train,
            exp.clients,
            beta,
            min_per_client,
            derive_seed(seed, Domain::Partition, 0, 0),
        )?,
    };
    Ok((SplitData { train, test }, plan))
}

/// Runs one sweep point end to end and writes its artifacts.
pub fn run_point(
    exp: &ResolvedExperiment,
    shared: &Option<Dataset>,
    point: &SweepPoint,
) -> Result<PointResult> {
    let started = Instant::now();
    let (data, plan) = build_world(exp, shared, point.seed)?;
    let cfg = exp.sim_config(point, data.train.dim(), data.train.num_classes())?;
    let outcome: RunOutcome = fedcross::run(&cfg, &data, &plan)?;

    let stem = format!(
        "{}_alpha{}_{}_seed{}",
        point.method.as_str(),
        point.alpha,
        point.strategy.as_str(),
        point.seed
    );
    let metrics_path = exp.out_dir.join(format!("{stem}.csv"));
    let model_path = exp.out_dir.join(format!("{stem}.model.bin"));
    emit_metrics(&outcome.log, &metrics_path)?;
    emit_model(&outcome.global_model, &cfg.arch, &model_path)?;

    let final_accuracy = outcome
        .log
        .final_eval()
        .and_then(|r| r.global_accuracy)
        .context("run produced no evaluation round")?;
    Ok(PointResult {
        point: *point,
        final_accuracy,
        metrics_path,
        model_path,
        elapsed_secs: started.elapsed().as_secs_f64(),
    })
}

/// Runs the whole sweep and writes `summary.csv` (mean and standard
/// deviation of final accuracy across seeds, per method/alpha/strategy).
pub fn run_experiments(exp: &ResolvedExperiment, shared: &Option<Dataset>) -> Result<RunReport> {
    std::fs::create_dir_all(&exp.out_dir)
        .with_context(|| format!("cannot create output directory {}", exp.out_dir.display()))?;

    let execute = |point: &SweepPoint| {
        let result = run_point(exp, shared, point).map_err(|e| format!("{e:#}"));
        match &result {
            Ok(r) => println!(
                "{} alpha={} {} seed={}: final accuracy {:.4} ({:.1}s)",
                point.method.as_str(),
                point.alpha,
                point.strategy.as_str(),
                point.seed,
                r.final_accuracy,
                r.elapsed_secs
            ),
            Err(e) => eprintln!(
                "{} alpha={} {} seed={}: FAILED: {e}",
                point.method.as_str(),
                point.alpha,
                point.strategy.as_str(),
                point.seed
            ),
        }
        result
    };

    let results: Vec<std::result::Result<PointResult, String>> = if exp.parallel {
        exp.points.par_iter().map(execute).collect()
    } else {
        exp.points.iter().map(execute).collect()
    };

    let summary_table = summarize(&results);
    let summary_path = exp.out_dir.join("summary.csv");
    std::fs::write(&summary_path, &summary_table)
        .with_context(|| format!("cannot write {}", summary_path.display()))?;

    Ok(RunReport { results, summary_table, summary_path: Some(summary_path) })
}

/// Groups final accuracies by (method, alpha, strategy) across seeds.
fn summarize(results: &[std::result::Result<PointResult, String>]) -> String {
    let mut groups: Vec<((&'static str, String, &'static str), Vec<f64>)> = Vec::new();
    for result in results.iter().flatten() {
        let key = (
            result.point.method.as_str(),
            result.point.alpha.to_string(),
            result.point.strategy.as_str(),
        );
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, accs)) => accs.push(result.final_accuracy),
            None => groups.push((key, vec![result.final_accuracy])),
        }
    }

    let mut out = String::from("method,alpha,strategy,seeds,mean_final_accuracy,std_final_accuracy\n");
    for ((method, alpha, strategy), accs) in &groups {
        let n = accs.len() as f64;
        let mean = accs.iter().sum::<f64>() / n;
        let std = if accs.len() > 1 {
            (accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        out.push_str(&format!(
            "{method},{alpha},{strategy},{},{mean:.6},{std:.6}\n",
            accs.len()
        ));
    }
    out
}
