//! Guidance-strength sweeps over a configured triad.

use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::guidance::ProgressRule;
use crate::metrics::{diversity, transfer_error, Provenance, SampleBatch};
use crate::predictor::{Condition, SharedPredictor};
use crate::rng::NoiseSource;
use crate::samplers::{sample_batch, SamplerKind};

use super::config::{BuiltTriad, ExperimentConfig};
use super::spec::ModelSpec;

/// Offset separating oracle seeds from guided-sampling seeds.
pub const ORACLE_SEED_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub sampler: SamplerKind,
    pub transfer_error: f64,
    pub diversity: f64,
    pub n_samples: usize,
    pub seed_base: u64,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub label: String,
    pub batch: SampleBatch,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentResult {
    pub name: String,
    /// One row per (sampler, lambda), sorted by sampler name then lambda.
    pub rows: Vec<SweepRow>,
    /// Oracle batches (one per sampler) and guided batches, in row order.
    pub batches: Vec<LabeledBatch>,
    pub artifacts: Vec<std::path::PathBuf>,
}

impl ExperimentResult {
    /// Row with the lowest transfer error for `sampler`.
    pub fn best_row(&self, sampler: SamplerKind) -> Option<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| r.sampler == sampler)
            .min_by(|a, b| a.transfer_error.total_cmp(&b.transfer_error))
    }

    pub fn batch(&self, label: &str) -> Option<&SampleBatch> {
        self.batches.iter().find(|b| b.label == label).map(|b| &b.batch)
    }
}

pub fn oracle_label(sampler: SamplerKind) -> String {
    format!("oracle {sampler}")
}

pub fn guided_label(sampler: SamplerKind, lambda: f64) -> String {
    format!("{sampler} lambda={lambda}")
}

fn exact_draws(model_spec: &ModelSpec, n: usize, seed: u64, cond: &Condition) -> Result<Option<Vec<Vec<f64>>>> {
    let Some(model) = model_spec.analytic_model()? else {
        return Ok(None);
    };
    let mut noise = NoiseSource::new(seed);
    Ok(Some((0..n).map(|_| model.sample(&mut noise, cond)).collect()))
}

/// Draws `cfg.n_samples` guided samples with seeds `seed_base..`. Each source
/// uses its configured guidance unless `lambda` overrides all of them.
pub fn sample_guided(
    cfg: &ExperimentConfig,
    triad: &BuiltTriad,
    sampler: SamplerKind,
    lambda: Option<f64>,
) -> Result<SampleBatch> {
    let guided: SharedPredictor = Arc::new(triad.guided(lambda)?.into_predictor(ProgressRule::default()));
    let seeds = cfg.seed_base..cfg.seed_base + cfg.n_samples as u64;
    let samples = sample_batch(sampler, &triad.schedule, &guided, seeds)?;
    let guidance = match lambda {
        Some(l) => format!("constant({l})"),
        None => "configured".into(),
    };
    let target = cfg.triad.as_ref().map(|t| t.target.to_string()).unwrap_or_default();
    SampleBatch::with_provenance(
        samples,
        Provenance {
            seed_start: cfg.seed_base,
            sampler: sampler.to_string(),
            guidance,
            predictor: target,
        },
    )
}

fn oracle_batch(cfg: &ExperimentConfig, triad: &BuiltTriad, sampler: SamplerKind) -> Result<SampleBatch> {
    let seed = cfg.seed_base + ORACLE_SEED_OFFSET;
    let n = cfg.n_samples;
    let (spec, model) = match (&cfg.oracle, &cfg.triad) {
        (Some(spec), _) => (spec, triad.oracle.clone().expect("oracle built with triad")),
        (None, Some(t)) => (&t.adapted, triad.pairs[0].1.clone()),
        (None, None) => return Err(Error::Config("config has no [triad] section".into())),
    };
    let samples = match exact_draws(spec, n, seed, &triad.target_condition)? {
        Some(s) => s,
        None => sample_batch(sampler, &triad.schedule, &model, seed..seed + n as u64)?,
    };
    SampleBatch::with_provenance(
        samples,
        Provenance {
            seed_start: seed,
            sampler: if spec.is_analytic() {
                "exact".into()
            } else {
                sampler.to_string()
            },
            guidance: "none".into(),
            predictor: spec.to_string(),
        },
    )
}

/// Runs every (sampler, lambda) grid point with constant guidance applied to
/// all sources and scores each batch against the oracle batch.
pub fn sweep_lambda(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let triad = cfg.build_triad()?;
    let lambdas = cfg.sweep.values();
    let mut samplers = cfg.samplers.clone();
    samplers.sort_by_key(|s| s.to_string());
    samplers.dedup();

    let mut result = ExperimentResult {
        name: cfg.name.clone(),
        ..Default::default()
    };
    for &sampler in &samplers {
        let oracle = oracle_batch(cfg, &triad, sampler).map_err(|e| e.context(format!("oracle for {sampler}")))?;
        for &lambda in &lambdas {
            let start = Instant::now();
            let point = || -> Result<(SampleBatch, f64, f64)> {
                let batch = sample_guided(cfg, &triad, sampler, Some(lambda))?;
                let te = transfer_error(&batch, &oracle)?;
                let div = diversity(&batch)?;
                Ok((batch, te, div))
            };
            let (batch, te, div) = point().map_err(|e| e.context(format!("sampler {sampler}, lambda {lambda}")))?;
            result.rows.push(SweepRow {
                lambda,
                sampler,
                transfer_error: te,
                diversity: div,
                n_samples: cfg.n_samples,
                seed_base: cfg.seed_base,
                wall_time: start.elapsed(),
            });
            result.batches.push(LabeledBatch {
                label: guided_label(sampler, lambda),
                batch,
            });
        }
        result.batches.push(LabeledBatch {
            label: oracle_label(sampler),
            batch: oracle,
        });
    }
    Ok(result)
}
