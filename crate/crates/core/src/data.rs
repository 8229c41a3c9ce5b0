//! Synthetic dataset generation, CSV loading, and client partitioning.
//!
//! Partitioning supports an IID split and a Dirichlet non-IID split where
//! smaller `beta` means more skewed per-client class mixtures.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

/// How many times the Dirichlet partitioner redraws a whole plan before
/// giving up on the per-client minimum.
const MAX_PARTITION_ATTEMPTS: usize = 1000;

/// Labeled classification dataset with a dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
}

impl Dataset {
    /// Validates shapes, label range, and feature finiteness.
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Config("dataset must contain at least one sample".into()));
        }
        if dim == 0 {
            return Err(Error::Config("feature dimension must be >= 1".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                left: features.len(),
                right: labels.len() * dim,
            });
        }
        if let Some(index) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Config(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self { features, labels, dim, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_row(&self, sample: usize) -> &[f64] {
        &self.features[sample * self.dim..(sample + 1) * self.dim]
    }

    pub fn label(&self, sample: usize) -> usize {
        self.labels[sample]
    }

    /// Per-class sample counts.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.num_classes];
        for &l in &self.labels {
            hist[l] += 1;
        }
        hist
    }

    /// Copies the given rows into a new dataset (same class count).
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.feature_row(i));
            labels.push(self.label(i));
        }
        Dataset::new(features, self.dim, labels, self.num_classes)
    }
}

/// Per-client sample assignment produced by a partitioner.
///
/// Index lists are pairwise disjoint and every index is a valid row of the
/// dataset the plan was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    assignments: Vec<Vec<usize>>,
}

impl PartitionPlan {
    /// Builds a plan from explicit per-client index lists, rejecting any
    /// sample assigned to more than one client.
    pub fn new(assignments: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for shard in &assignments {
            for &index in shard {
                if !seen.insert(index) {
                    return Err(Error::Config(format!(
                        "sample {index} assigned to more than one client"
                    )));
                }
            }
        }
        Ok(Self { assignments })
    }

    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn client(&self, client: usize) -> &[usize] {
        &self.assignments[client]
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }
}

/// Gaussian-blob classification data: one unit-covariance blob per class,
/// means drawn uniformly on a sphere of radius `class_sep`.
pub fn make_synthetic(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    class_sep: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::Config("num_classes must be >= 2".into()));
    }
    if dim < 1 {
        return Err(Error::Config("dim must be >= 1".into()));
    }
    if per_class < 1 {
        return Err(Error::Config("per_class must be >= 1".into()));
    }
    if !(class_sep > 0.0) {
        return Err(Error::Config("class_sep must be > 0".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let mut mean: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let mut norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        while norm < 1e-9 {
            mean = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        for v in mean.iter_mut() {
            *v *= class_sep / norm;
        }
        means.push(mean);
    }

    let n = num_classes * per_class;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for &m in mean {
                let noise: f64 = rng.sample(StandardNormal);
                features.push(m + noise);
            }
            labels.push(class);
        }
    }
    Dataset::new(features, dim, labels, num_classes)
}

/// Stratified train/test split; `test_fraction` of every class (rounded)
/// goes to the test set. Row order within each side follows the original
/// dataset order.
pub fn stratified_split(
    ds: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config("test_fraction must be in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_indices = Vec::new();
    let mut train_indices = Vec::new();
    for class in 0..ds.num_classes() {
        let mut class_rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.label(i) == class).collect();
        class_rows.shuffle(&mut rng);
        let mut take = (class_rows.len() as f64 * test_fraction).round() as usize;
        // Never consume a whole class for testing.
        take = take.min(class_rows.len().saturating_sub(1));
        test_indices.extend_from_slice(&class_rows[..take]);
        train_indices.extend_from_slice(&class_rows[take..]);
    }
    train_indices.sort_unstable();
    test_indices.sort_unstable();
    Ok((ds.subset(&train_indices)?, ds.subset(&test_indices)?))
}

/// Dirichlet non-IID partition: for each class, client proportions are
/// drawn from `Dir(beta)` and sample counts allocated by largest
/// remainder so class totals are conserved. The whole plan is redrawn
/// until every client holds at least `min_per_client` samples.
pub fn partition_dirichlet(
    ds: &Dataset,
    num_clients: usize,
    beta: f64,
    min_per_client: usize,
    seed: u64,
) -> Result<PartitionPlan> {
    if num_clients < 1 {
        return Err(Error::Config("num_clients must be >= 1".into()));
    }
    if !(beta > 0.0) {
        return Err(Error::Config("beta must be > 0".into()));
    }
    if ds.len() < num_clients * min_per_client {
        return Err(Error::Config(format!(
            "{} samples cannot give {} clients {} samples each",
            ds.len(),
            num_clients,
            min_per_client
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(beta, 1.0)
        .map_err(|e| Error::Config(format!("invalid Dirichlet beta: {e}")))?;

    let mut class_rows: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
    for i in 0..ds.len() {
        class_rows[ds.label(i)].push(i);
    }

    for _attempt in 0..MAX_PARTITION_ATTEMPTS {
        let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
        for rows in &class_rows {
            if rows.is_empty() {
                continue;
            }
            let mut rows = rows.clone();
            rows.shuffle(&mut rng);

            let proportions = dirichlet_draw(&gamma, num_clients, &mut rng);
            let counts = largest_remainder_counts(&proportions, rows.len());

            let mut offset = 0;
            for (client, &count) in counts.iter().enumerate() {
                assignments[client].extend_from_slice(&rows[offset..offset + count]);
                offset += count;
            }
        }
        if assignments.iter().all(|a| a.len() >= min_per_client) {
            return Ok(PartitionPlan { assignments });
        }
    }
    Err(Error::PartitionFailed { attempts: MAX_PARTITION_ATTEMPTS, min_per_client })
}

/// IID partition: uniform shuffle, then contiguous near-equal chunks
/// (sizes differ by at most one).
pub fn partition_iid(ds: &Dataset, num_clients: usize, seed: u64) -> Result<PartitionPlan> {
    if num_clients < 1 {
        return Err(Error::Config("num_clients must be >= 1".into()));
    }
    if num_clients > ds.len() {
        return Err(Error::Config(format!(
            "cannot split {} samples across {} clients",
            ds.len(),
            num_clients
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<usize> = (0..ds.len()).collect();
    rows.shuffle(&mut rng);

    let base = ds.len() / num_clients;
    let extra = ds.len() % num_clients;
    let mut assignments = Vec::with_capacity(num_clients);
    let mut offset = 0;
    for client in 0..num_clients {
        let size = base + usize::from(client < extra);
        assignments.push(rows[offset..offset + size].to_vec());
        offset += size;
    }
    Ok(PartitionPlan { assignments })
}

/// Loads a dataset from a CSV file whose rows are `d` feature columns
/// followed by one non-negative integer label column.
pub fn load_csv(path: &Path, has_header: bool) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    let mut max_label = 0usize;

    for (line_no, line) in text.lines().enumerate() {
        let row = line_no + 1;
        if has_header && line_no == 0 {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::InputFormat {
                row,
                message: "expected at least one feature column and a label column".into(),
            });
        }
        let row_dim = fields.len() - 1;
        match dim {
            None => dim = Some(row_dim),
            Some(d) if d != row_dim => {
                return Err(Error::InputFormat {
                    row,
                    message: format!("ragged row: expected {d} feature columns, found {row_dim}"),
                })
            }
            _ => {}
        }
        for field in &fields[..row_dim] {
            let value: f64 = field.parse().map_err(|_| Error::InputFormat {
                row,
                message: format!("invalid feature value {field:?}"),
            })?;
            features.push(value);
        }
        let label: i64 = fields[row_dim].parse().map_err(|_| Error::InputFormat {
            row,
            message: format!("invalid label {:?}", fields[row_dim]),
        })?;
        if label < 0 {
            return Err(Error::InputFormat { row, message: format!("negative label {label}") });
        }
        let label = label as usize;
        max_label = max_label.max(label);
        labels.push(label);
    }

    let dim = dim.ok_or_else(|| Error::Config("CSV file contains no data rows".into()))?;
    Dataset::new(features, dim, labels, max_label + 1)
}

fn dirichlet_draw(gamma: &Gamma<f64>, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total.is_finite() && total > 0.0 {
            return draws.into_iter().map(|d| d / total).collect();
        }
        // Extremely small beta can underflow every draw to zero; redraw.
    }
}

/// Integer counts summing exactly to `total`, proportional to `props`.
fn largest_remainder_counts(props: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = Vec::with_capacity(props.len());
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(props.len());
    let mut allocated = 0usize;
    for (i, &p) in props.iter().enumerate() {
        let ideal = p * total as f64;
        let floor = ideal.floor() as usize;
        counts.push(floor);
        allocated += floor;
        remainders.push((i, ideal - floor as f64));
    }
    // Hand out the deficit to the largest remainders, lowest index on ties.
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for &(i, _) in remainders.iter().take(total - allocated) {
        counts[i] += 1;
    }
    counts
}
