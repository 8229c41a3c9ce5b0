//! Flat parameter-vector algebra.
//!
//! Every model in the simulator is a flat `f64` vector, whatever its
//! architecture. Similarity, blending, and averaging all operate on this
//! representation; the shared kernel here is [`lin_comb`].

use crate::error::{Error, Result};

/// Flat, finite-valued model parameter vector.
///
/// Construction and every operation in this module keep two invariants:
/// all entries are finite, and the length never changes for the lifetime
/// of a value.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    /// Wraps a raw vector, rejecting NaN and infinite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Euclidean distance to another vector of the same length.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        check_same_len(self, other)?;
        let sum: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sum.sqrt())
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.values[index]
    }
}

fn check_same_len(x: &ParamVector, y: &ParamVector) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { left: x.len(), right: y.len() });
    }
    Ok(())
}

/// Elementwise linear combination `a*X + b*Y`.
pub fn lin_comb(a: f64, x: &ParamVector, b: f64, y: &ParamVector) -> Result<ParamVector> {
    check_same_len(x, y)?;
    let values = x
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(xi, yi)| a * xi + b * yi)
        .collect();
    ParamVector::new(values)
}

/// Denominator used by [`cosine_similarity`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityVariant {
    /// Product of the two norms. Self-similarity is 1 and all values lie
    /// in [-1, 1]; this is the default everywhere.
    Standard,
    /// Sum of the two norms instead of their product. Not
    /// self-normalizing: a model is not maximally similar to itself.
    /// Kept selectable for fidelity experiments.
    SumNorm,
}

/// Cosine similarity between two equal-length, non-zero vectors.
pub fn cosine_similarity(
    x: &ParamVector,
    y: &ParamVector,
    variant: SimilarityVariant,
) -> Result<f64> {
    check_same_len(x, y)?;
    let mut dot = 0.0;
    let mut xx = 0.0;
    let mut yy = 0.0;
    for (xi, yi) in x.as_slice().iter().zip(y.as_slice()) {
        dot += xi * yi;
        xx += xi * xi;
        yy += yi * yi;
    }
    if xx == 0.0 || yy == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(match variant {
        SimilarityVariant::Standard => (dot / (xx.sqrt() * yy.sqrt())).clamp(-1.0, 1.0),
        SimilarityVariant::SumNorm => dot / (xx.sqrt() + yy.sqrt()),
    })
}

/// Elementwise mean of a non-empty pool of equal-length vectors.
pub fn mean_of(models: &[ParamVector]) -> Result<ParamVector> {
    let first = models.first().ok_or(Error::EmptyPool)?;
    let mut acc = vec![0.0; first.len()];
    for model in models {
        check_same_len(first, model)?;
        for (a, v) in acc.iter_mut().zip(model.as_slice()) {
            *a += v;
        }
    }
    let k = models.len() as f64;
    for a in acc.iter_mut() {
        *a /= k;
    }
    ParamVector::new(acc)
}
