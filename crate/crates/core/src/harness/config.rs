//! Experiment configuration, read from and written to TOML.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{DeltaSource, GuidedPredictor};
use crate::metrics::MAX_BATCH;
use crate::mlp::TrainConfig;
use crate::predictor::{Condition, SharedPredictor};
use crate::samplers::SamplerKind;
use crate::schedule::{default_beta_range, GuidanceKind, GuidanceSchedule, ScheduleKind, VarianceSchedule};

use super::spec::ModelSpec;

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "DS_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub num_steps: usize,
    pub beta_start: Option<f64>,
    pub beta_end: Option<f64>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::LinearBeta,
            num_steps: 16,
            beta_start: None,
            beta_end: None,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<VarianceSchedule> {
        let (start, end) = default_beta_range(self.num_steps);
        VarianceSchedule::build(
            self.kind,
            self.num_steps,
            self.beta_start.unwrap_or(start),
            self.beta_end.unwrap_or(end),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub kind: GuidanceKind,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub decay_rate: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            kind: GuidanceKind::Constant,
            lambda_max: 1.0,
            lambda_min: 0.0,
            decay_rate: 5.0,
        }
    }
}

impl GuidanceConfig {
    pub fn build(&self) -> Result<GuidanceSchedule> {
        GuidanceSchedule::new(self.kind, self.lambda_max, self.lambda_min, self.decay_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriadConfig {
    pub base: ModelSpec,
    pub adapted: ModelSpec,
    pub target: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_condition: Option<String>,
}

/// An additional base/adapted pair whose residual is added on top of the
/// triad's own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub base: ModelSpec,
    pub adapted: ModelSpec,
    #[serde(default)]
    pub guidance: GuidanceConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_condition: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapted_condition: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            start: 0.0,
            stop: 2.0,
            step: 0.2,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.start.is_finite() && self.stop.is_finite() && self.start <= self.stop) {
            return Err(Error::Config(format!(
                "sweep start {} must be <= stop {}",
                self.start, self.stop
            )));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!("sweep step {} must be > 0", self.step)));
        }
        Ok(())
    }

    /// Grid values `start, start + step, ..` up to `stop`, snapped to 12
    /// decimals so that repeated addition does not leak into the output.
    pub fn values(&self) -> Vec<f64> {
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| ((self.start + i as f64 * self.step) * 1e12).round() / 1e12)
            .collect()
    }
}

/// Inputs for training the base, adapted, target and oracle networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// `two_moons` or `ring`.
    pub dataset: String,
    pub n_points: usize,
    pub noise: f64,
    pub data_seed: u64,
    /// Seed for the target's own draw of the dataset; the base draw when absent.
    pub target_data_seed: Option<u64>,
    /// Translation turning the base dataset into the adaptation dataset.
    pub shift: Vec<f64>,
    pub base_hidden: Vec<usize>,
    pub target_hidden: Vec<usize>,
    pub model_dir: PathBuf,
    pub base: TrainConfig,
    pub fine_tune: TrainConfig,
    pub target: TrainConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            dataset: "two_moons".into(),
            n_points: 4000,
            noise: 0.05,
            data_seed: 0,
            target_data_seed: None,
            shift: vec![1.5, 0.0],
            base_hidden: vec![64, 64],
            target_hidden: vec![96, 96, 96],
            model_dir: "models".into(),
            base: TrainConfig {
                seed: 1,
                ..TrainConfig::default()
            },
            fine_tune: TrainConfig {
                steps: 2000,
                seed: 2,
                ..TrainConfig::default()
            },
            target: TrainConfig {
                seed: 3,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub samplers: Vec<SamplerKind>,
    pub n_samples: usize,
    pub seed_base: u64,
    pub output_dir: PathBuf,
    /// Reference distribution for the transfer error. Analytic oracles are
    /// drawn exactly; model oracles are sampled with the row's sampler. The
    /// adapted model stands in when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<ModelSpec>,
    pub schedule: ScheduleConfig,
    pub sweep: SweepConfig,
    pub guidance: GuidanceConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub triad: Option<TriadConfig>,
    #[serde(rename = "source", skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<SourceConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingConfig>,
    /// Directory relative model paths resolve against; the config file's
    /// directory when loaded from disk.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            samplers: vec![SamplerKind::Euler],
            n_samples: 1000,
            seed_base: 42,
            output_dir: "out".into(),
            oracle: None,
            schedule: ScheduleConfig::default(),
            sweep: SweepConfig::default(),
            guidance: GuidanceConfig::default(),
            triad: None,
            sources: Vec::new(),
            training: None,
            base_dir: PathBuf::from("."),
        }
    }
}

/// Predictors instantiated from a config.
#[derive(Debug, Clone)]
pub struct BuiltTriad {
    pub schedule: Arc<VarianceSchedule>,
    pub target: SharedPredictor,
    pub target_condition: Condition,
    /// Base/adapted pairs: the triad's own first, then extra sources.
    pub pairs: Vec<(SharedPredictor, SharedPredictor, GuidanceSchedule, Condition, Condition)>,
    pub oracle: Option<SharedPredictor>,
}

impl BuiltTriad {
    /// Guided predictor with each source at its configured strength, or at
    /// `lambda` for all of them when given.
    pub fn guided(&self, lambda: Option<f64>) -> Result<GuidedPredictor> {
        let mut gp = GuidedPredictor::new(self.target.clone()).with_condition(self.target_condition.clone());
        for (base, adapted, guidance, bc, ac) in &self.pairs {
            let g = match lambda {
                Some(l) => GuidanceSchedule::constant(l)?,
                None => *guidance,
            };
            gp.push_source(
                DeltaSource::new(base.clone(), adapted.clone(), g)?.with_conditions(bc.clone(), ac.clone()),
            )?;
        }
        Ok(gp)
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| e.context(path.display().to_string()))?;
        cfg.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.sweep.validate()?;
        if self.n_samples < 2 || self.n_samples > MAX_BATCH {
            return Err(Error::Config(format!(
                "n_samples {} must lie in 2..={MAX_BATCH}",
                self.n_samples
            )));
        }
        if self.samplers.is_empty() {
            return Err(Error::Config("at least one sampler is required".into()));
        }
        if self.schedule.num_steps < 2 {
            return Err(Error::Config("schedule.num_steps must be >= 2".into()));
        }
        self.guidance
            .build()
            .map_err(|e| Error::Config(format!("guidance: {e}")))?;
        for s in &self.sources {
            s.guidance
                .build()
                .map_err(|e| Error::Config(format!("source guidance: {e}")))?;
        }
        if self.triad.is_none() && !self.sources.is_empty() {
            return Err(Error::Config("extra sources need a triad".into()));
        }
        Ok(())
    }

    /// The configured output directory unless `DS_OUTPUT_DIR` is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.base_dir.join(&self.output_dir),
        }
    }

    pub fn build_schedule(&self) -> Result<Arc<VarianceSchedule>> {
        Ok(Arc::new(
            self.schedule
                .build()
                .map_err(|e| Error::Config(format!("schedule: {e}")))?,
        ))
    }

    pub fn build_triad(&self) -> Result<BuiltTriad> {
        let triad = self
            .triad
            .as_ref()
            .ok_or_else(|| Error::Config("config has no [triad] section".into()))?;
        let schedule = self.build_schedule()?;
        let build = |spec: &ModelSpec, role: &str| {
            spec.build(&schedule, &self.base_dir)
                .map_err(|e| e.context(role.to_string()))
        };
        let cond = |c: &Option<String>| c.as_ref().map(Condition::token).unwrap_or_default();

        let target = build(&triad.target, "triad.target")?;
        let mut pairs = vec![(
            build(&triad.base, "triad.base")?,
            build(&triad.adapted, "triad.adapted")?,
            self.guidance.build()?,
            Condition::none(),
            Condition::none(),
        )];
        for (i, s) in self.sources.iter().enumerate() {
            pairs.push((
                build(&s.base, &format!("source {i} base"))?,
                build(&s.adapted, &format!("source {i} adapted"))?,
                s.guidance.build()?,
                cond(&s.base_condition),
                cond(&s.adapted_condition),
            ));
        }
        let oracle = self.oracle.as_ref().map(|o| build(o, "oracle")).transpose()?;
        let dim = target.dim();
        let dims = pairs
            .iter()
            .flat_map(|(b, a, ..)| [b.dim(), a.dim()])
            .chain(oracle.iter().map(|o| o.dim()));
        for d in dims {
            if d != dim {
                return Err(Error::Config(format!("model dimensions disagree: {d} vs target {dim}")));
            }
        }
        Ok(BuiltTriad {
            schedule,
            target,
            target_condition: cond(&triad.target_condition),
            pairs,
            oracle,
        })
    }
}
