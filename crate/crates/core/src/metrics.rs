//! Distributional similarity and diversity of sample batches.
//!
//! Similarity to a reference batch is the two-sample energy distance
//! (lower is closer); diversity is the mean pairwise Euclidean distance
//! within a batch. Both are exact `O(N^2)` pair sums. Rows are reduced in
//! parallel but always combined in index order, so results are bit-stable
//! across thread counts.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest batch the pairwise metrics accept.
pub const MAX_BATCH: usize = 20_000;

/// Negative energy residue tolerated (and clamped to zero) from rounding.
pub const NEGATIVE_RESIDUE: f64 = 1e-9;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed_start: u64,
    pub sampler: String,
    pub guidance: String,
    pub predictor: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    samples: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

impl SampleBatch {
    pub fn new(samples: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_provenance(samples, Provenance::default())
    }

    pub fn with_provenance(samples: Vec<Vec<f64>>, provenance: Provenance) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::InvalidArgument("sample batch must not be empty".into()));
        };
        let d = first.len();
        if d == 0 || samples.iter().any(|s| s.len() != d) {
            return Err(Error::InvalidArgument(
                "batch samples must share a positive dimension".into(),
            ));
        }
        if samples.len() > MAX_BATCH {
            return Err(Error::InvalidArgument(format!(
                "batch of {} samples exceeds the {MAX_BATCH} limit",
                samples.len()
            )));
        }
        Ok(Self { samples, provenance })
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut m = vec![0.0; self.dim()];
        for s in &self.samples {
            for (a, b) in m.iter_mut().zip(s) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Per-coordinate sample standard deviation.
    pub fn std_dev(&self) -> Vec<f64> {
        let m = self.mean();
        let n = self.len() as f64;
        let mut v = vec![0.0; self.dim()];
        for s in &self.samples {
            for ((acc, x), mu) in v.iter_mut().zip(s).zip(&m) {
                *acc += (x - mu).powi(2);
            }
        }
        v.iter().map(|s| (s / (n - 1.0).max(1.0)).sqrt()).collect()
    }

    /// Same samples moved by `v`.
    pub fn translated(&self, v: &[f64]) -> Result<Self> {
        crate::error::check_dim(self.dim(), v.len())?;
        let samples = self
            .samples
            .iter()
            .map(|s| s.iter().zip(v).map(|(a, b)| a + b).collect())
            .collect();
        Self::with_provenance(samples, self.provenance.clone())
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean of `|a_i - b_j|` over all `n_a * n_b` ordered pairs.
fn all_pairs_mean(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let rows: Vec<f64> = a
        .par_iter()
        .map(|x| b.iter().map(|y| distance(x, y)).sum::<f64>())
        .collect();
    rows.iter().sum::<f64>() / (a.len() as f64 * b.len() as f64)
}

// Total order on batches, used to fix the operand order of the cross term so
// that swapping the arguments cannot change the rounding.
fn batch_order(a: &SampleBatch, b: &SampleBatch) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| {
        a.samples
            .iter()
            .flatten()
            .zip(b.samples.iter().flatten())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Energy distance between the empirical distributions of two batches:
/// `2 E|A - B| - E|A - A'| - E|B - B'|`, every expectation taken over all
/// ordered pairs. Identical batches give exactly zero.
pub fn energy_distance(a: &SampleBatch, b: &SampleBatch) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument(
            "energy distance needs at least two samples per batch".into(),
        ));
    }
    let (first, second) = match batch_order(a, b) {
        Ordering::Greater => (b, a),
        _ => (a, b),
    };
    let cross = all_pairs_mean(&first.samples, &second.samples);
    let within_a = all_pairs_mean(&a.samples, &a.samples);
    let within_b = all_pairs_mean(&b.samples, &b.samples);
    let e = 2.0 * cross - (within_a + within_b);
    if e >= 0.0 {
        Ok(e)
    } else if e >= -NEGATIVE_RESIDUE {
        Ok(0.0)
    } else {
        Err(Error::OutOfRange(format!(
            "energy distance {e} is negative beyond rounding"
        )))
    }
}

/// Mean pairwise distance over unordered pairs `i < j`.
pub fn diversity(batch: &SampleBatch) -> Result<f64> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::InvalidArgument("diversity needs at least two samples".into()));
    }
    let s = &batch.samples;
    let rows: Vec<f64> = (0..n - 1)
        .into_par_iter()
        .map(|i| s[i + 1..].iter().map(|y| distance(&s[i], y)).sum::<f64>())
        .collect();
    let pairs = n as f64 * (n as f64 - 1.0) / 2.0;
    Ok(rows.iter().sum::<f64>() / pairs)
}

/// Energy distance from a guided batch to the batch that shows the desired
/// effect. Lower is better.
pub fn transfer_error(ds_batch: &SampleBatch, oracle_batch: &SampleBatch) -> Result<f64> {
    energy_distance(ds_batch, oracle_batch)
}
