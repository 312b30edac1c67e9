//! Closed-form noise predictors for Gaussian and Gaussian-mixture data, plus
//! a tabulated grid predictor.
//!
//! These stand in for trained base, adapted, and target networks: the
//! optimal noise estimate of a known data distribution is available
//! exactly, so guidance effects can be checked against closed forms.
//! An "adapted" analytic model is simply a second model with perturbed
//! parameters (shifted means, reweighted components, narrower covariances).

mod gaussian;
mod gmm;
mod grid;

use std::sync::Arc;

pub use gaussian::{gaussian_epsilon, gaussian_posterior_mean, Covariance, GaussianModel, MIN_NOISE_FRACTION};
pub use gmm::{gmm_epsilon, GmmModel, Mixture};
pub use grid::{grid_predict, GridPredictor, GRID_MAGIC};

use crate::error::{check_dim, Result};
use crate::predictor::{Condition, NoisePredictor};
use crate::rng::NoiseSource;
use crate::schedule::VarianceSchedule;

#[derive(Debug, Clone, PartialEq)]
pub enum AnalyticModel {
    Gaussian(GaussianModel),
    Gmm(GmmModel),
}

impl AnalyticModel {
    pub fn dim(&self) -> usize {
        match self {
            AnalyticModel::Gaussian(g) => g.dim(),
            AnalyticModel::Gmm(m) => m.dim(),
        }
    }

    pub fn epsilon_at(&self, x: &[f64], alpha_bar: f64, cond: &Condition) -> Result<Vec<f64>> {
        match self {
            AnalyticModel::Gaussian(g) => g.epsilon_at(x, alpha_bar),
            AnalyticModel::Gmm(m) => m.epsilon_at(x, alpha_bar, cond),
        }
    }

    /// An exact draw from the data distribution.
    pub fn sample(&self, noise: &mut NoiseSource, cond: &Condition) -> Vec<f64> {
        match self {
            AnalyticModel::Gaussian(g) => g.sample(noise),
            AnalyticModel::Gmm(m) => m.mixture_for(cond).sample(noise),
        }
    }
}

/// An analytic model bound to a variance schedule.
#[derive(Debug, Clone)]
pub struct AnalyticPredictor {
    model: AnalyticModel,
    sched: Arc<VarianceSchedule>,
}

impl AnalyticPredictor {
    pub fn new(model: AnalyticModel, sched: Arc<VarianceSchedule>) -> Self {
        Self { model, sched }
    }

    pub fn gaussian(model: GaussianModel, sched: Arc<VarianceSchedule>) -> Self {
        Self::new(AnalyticModel::Gaussian(model), sched)
    }

    pub fn gmm(model: GmmModel, sched: Arc<VarianceSchedule>) -> Self {
        Self::new(AnalyticModel::Gmm(model), sched)
    }

    pub fn model(&self) -> &AnalyticModel {
        &self.model
    }

    pub fn schedule(&self) -> &Arc<VarianceSchedule> {
        &self.sched
    }
}

impl NoisePredictor for AnalyticPredictor {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn num_steps(&self) -> usize {
        self.sched.num_steps()
    }

    fn predict(&self, x: &[f64], t: usize, cond: &Condition) -> Result<Vec<f64>> {
        self.sched.check_step(t)?;
        check_dim(self.dim(), x.len())?;
        self.model.epsilon_at(x, self.sched.alpha_bar(t), cond)
    }
}
