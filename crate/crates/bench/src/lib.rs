//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use ds_core::analytic::{AnalyticPredictor, Covariance, GaussianModel, GmmModel, Mixture};
use ds_core::{
    DeltaSource, GuidanceSchedule, GuidedPredictor, NoiseSource, ProgressRule, SampleBatch, SharedPredictor,
    VarianceSchedule,
};

fn gmm(means: &[[f64; 2]], sched: &Arc<VarianceSchedule>) -> SharedPredictor {
    let w = 1.0 / means.len() as f64;
    let parts = means
        .iter()
        .map(|m| (w, GaussianModel::new(m.to_vec(), Covariance::Isotropic(0.25)).unwrap()))
        .collect();
    Arc::new(AnalyticPredictor::gmm(
        GmmModel::new(Mixture::new(parts).unwrap()),
        sched.clone(),
    ))
}

/// Two-component GMM triad whose adaptation moves one component.
pub fn gmm_triad(num_steps: usize) -> (Arc<VarianceSchedule>, GuidedPredictor) {
    let sched = Arc::new(VarianceSchedule::default_linear(num_steps).unwrap());
    let base = gmm(&[[0.0, -2.0], [0.0, 2.0]], &sched);
    let adapted = gmm(&[[2.0, -2.0], [0.0, 2.0]], &sched);
    let target = gmm(&[[0.3, -2.2], [-0.2, 1.8]], &sched);
    let src = DeltaSource::new(base, adapted, GuidanceSchedule::constant(1.0).unwrap()).unwrap();
    let gp = GuidedPredictor::new(target).with_source(src).unwrap();
    (sched, gp)
}

pub fn guided_predictor(num_steps: usize) -> (Arc<VarianceSchedule>, SharedPredictor) {
    let (sched, gp) = gmm_triad(num_steps);
    (sched, Arc::new(gp.into_predictor(ProgressRule::default())))
}

pub fn gaussian_batch(n: usize, shift: f64, seed: u64) -> SampleBatch {
    let mut rng = NoiseSource::new(seed);
    SampleBatch::new((0..n).map(|_| vec![shift + rng.normal(), rng.normal()]).collect()).unwrap()
}
