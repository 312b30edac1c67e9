//! Delta sampling for diffusion models at toy scale.
//!
//! An adaptation learned on a base model is transferred to a different
//! target model at inference time: every reverse step adds the residual
//! `eps_adapted - eps_base`, scaled by a guidance strength, to the target's
//! noise estimate. The crate provides the noise schedules, closed-form and
//! small neural noise predictors, the guided predictor, four samplers,
//! sample-batch metrics and a config-driven experiment harness.
//!
//! ```
//! use std::sync::Arc;
//! use ds_core::{
//!     run_sampler, AnalyticPredictor, DeltaSource, GaussianModel, GuidanceSchedule, GuidedPredictor,
//!     ProgressRule, RunSpec, SamplerKind, SharedPredictor, VarianceSchedule,
//! };
//!
//! let sched = Arc::new(VarianceSchedule::default_linear(32)?);
//! let model = |m: Vec<f64>| -> ds_core::Result<SharedPredictor> {
//!     Ok(Arc::new(AnalyticPredictor::gaussian(GaussianModel::standard(m)?, sched.clone())))
//! };
//! let source = DeltaSource::new(model(vec![0.0])?, model(vec![1.0])?, GuidanceSchedule::constant(1.0)?)?;
//! let guided = GuidedPredictor::new(model(vec![-2.0])?).with_source(source)?;
//! let spec = RunSpec::new(SamplerKind::Euler, sched, Arc::new(guided.into_predictor(ProgressRule::default())), 7);
//! let x0 = run_sampler(&spec)?;
//! assert_eq!(x0.sample().len(), 1);
//! # Ok::<(), ds_core::Error>(())
//! ```

// `!(a < b)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod error;
pub mod guidance;
pub mod harness;
pub mod metrics;
pub mod mlp;
pub mod predictor;
pub mod rng;
pub mod samplers;
pub mod schedule;

pub use analytic::{AnalyticModel, AnalyticPredictor, Covariance, GaussianModel, GmmModel, GridPredictor, Mixture};
pub use error::{Error, Result};
pub use guidance::{DeltaSource, GuidedNoisePredictor, GuidedPredictor, ProgressRule, StateVector};
pub use metrics::{diversity, energy_distance, transfer_error, SampleBatch};
pub use mlp::{MlpDenoiser, PointCloudDataset, TrainConfig};
pub use predictor::{Condition, NoisePredictor, SharedPredictor};
pub use rng::NoiseSource;
pub use samplers::{run_sampler, sample_batch, RunSpec, SamplerKind, Trajectory};
pub use schedule::{GuidanceKind, GuidanceSchedule, ScheduleKind, VarianceSchedule};
