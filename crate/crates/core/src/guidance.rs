//! Delta guidance: the residual between an adapted predictor and its base,
//! scaled by a guidance schedule and added to a different target predictor.
//!
//! For sources `i` with base `b_i`, adapted `a_i` and strength `l_i(s)`:
//!
//! ```text
//! delta_i(x, t) = a_i(x, t | c'_i) - b_i(x, t | c_i)
//! guided(x, t)  = target(x, t | c) + sum_i l_i(s) * delta_i(x, t)
//! ```
//!
//! `s` is sampling progress in `[0, 1]`; a [`ProgressRule`] maps step
//! indices onto it when the guided predictor is handed to a sampler.

use std::fmt;
use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::predictor::{Condition, NoisePredictor, SharedPredictor};
use crate::schedule::{normalized_time, reverse_progress, GuidanceSchedule};

/// A state on the reverse trajectory: values `x_t` at step `t` (`t = 0` is the sample).
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub values: Vec<f64>,
    pub t: usize,
}

impl StateVector {
    pub fn new(values: Vec<f64>, t: usize) -> Self {
        Self { values, t }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// A base/adapted predictor pair whose prediction difference is injected
/// into a target.
#[derive(Debug, Clone)]
pub struct DeltaSource {
    base: SharedPredictor,
    adapted: SharedPredictor,
    base_condition: Condition,
    adapted_condition: Condition,
    guidance: GuidanceSchedule,
}

impl DeltaSource {
    pub fn new(base: SharedPredictor, adapted: SharedPredictor, guidance: GuidanceSchedule) -> Result<Self> {
        check_dim(base.dim(), adapted.dim())?;
        if base.num_steps() != adapted.num_steps() {
            return Err(Error::InvalidArgument(format!(
                "base and adapted predictors disagree on T ({} vs {})",
                base.num_steps(),
                adapted.num_steps()
            )));
        }
        Ok(Self {
            base,
            adapted,
            base_condition: Condition::none(),
            adapted_condition: Condition::none(),
            guidance,
        })
    }

    pub fn with_conditions(mut self, base: Condition, adapted: Condition) -> Self {
        self.base_condition = base;
        self.adapted_condition = adapted;
        self
    }

    pub fn with_guidance(mut self, guidance: GuidanceSchedule) -> Self {
        self.guidance = guidance;
        self
    }

    pub fn guidance(&self) -> &GuidanceSchedule {
        &self.guidance
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn num_steps(&self) -> usize {
        self.base.num_steps()
    }

    /// `adapted(x, t | c') - base(x, t | c)`.
    pub fn delta(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        let base = self.base.predict(x, t, &self.base_condition)?;
        let adapted = self.adapted.predict(x, t, &self.adapted_condition)?;
        check_dim(base.len(), adapted.len())?;
        Ok(adapted.iter().zip(&base).map(|(a, b)| a - b).collect())
    }
}

/// Residual of one source at a state.
pub fn compute_delta(src: &DeltaSource, x: &StateVector) -> Result<Vec<f64>> {
    src.delta(&x.values, x.t)
}

/// A target predictor plus an ordered list of delta sources.
#[derive(Debug, Clone)]
pub struct GuidedPredictor {
    target: SharedPredictor,
    target_condition: Condition,
    sources: Vec<DeltaSource>,
}

impl GuidedPredictor {
    pub fn new(target: SharedPredictor) -> Self {
        Self {
            target,
            target_condition: Condition::none(),
            sources: Vec::new(),
        }
    }

    pub fn with_condition(mut self, cond: Condition) -> Self {
        self.target_condition = cond;
        self
    }

    pub fn with_source(mut self, src: DeltaSource) -> Result<Self> {
        self.push_source(src)?;
        Ok(self)
    }

    pub fn push_source(&mut self, src: DeltaSource) -> Result<()> {
        check_dim(self.target.dim(), src.dim())?;
        if src.num_steps() != self.target.num_steps() {
            return Err(Error::InvalidArgument(format!(
                "delta source has T = {}, target has T = {}",
                src.num_steps(),
                self.target.num_steps()
            )));
        }
        self.sources.push(src);
        Ok(())
    }

    pub fn sources(&self) -> &[DeltaSource] {
        &self.sources
    }

    pub fn target(&self) -> &SharedPredictor {
        &self.target
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn num_steps(&self) -> usize {
        self.target.num_steps()
    }

    /// `sum_i l_i(progress) * delta_i(x, t)`, or `None` when every strength
    /// is zero (no source is queried then).
    pub fn residual(&self, x: &[f64], t: usize, progress: f64) -> Result<Option<Vec<f64>>> {
        let mut acc: Option<Vec<f64>> = None;
        for src in &self.sources {
            let lambda = src.guidance.strength(progress);
            if lambda == 0.0 {
                continue;
            }
            let delta = src.delta(x, t)?;
            check_dim(x.len(), delta.len())?;
            match acc.as_mut() {
                None => acc = Some(delta.iter().map(|d| lambda * d).collect()),
                Some(sum) => sum.iter_mut().zip(&delta).for_each(|(s, d)| *s += lambda * d),
            }
        }
        Ok(acc)
    }

    /// Guided noise estimate at `x` for the given progress.
    pub fn epsilon(&self, x: &[f64], t: usize, progress: f64) -> Result<Vec<f64>> {
        let mut eps = self.target.predict(x, t, &self.target_condition)?;
        check_dim(x.len(), eps.len())?;
        if let Some(res) = self.residual(x, t, progress)? {
            // zero terms are skipped so an inactive residual leaves the
            // target's output bit-for-bit unchanged
            for (e, r) in eps.iter_mut().zip(res) {
                if r != 0.0 {
                    *e += r;
                }
            }
        }
        Ok(eps)
    }

    pub fn into_predictor(self, rule: ProgressRule) -> GuidedNoisePredictor {
        GuidedNoisePredictor { guided: self, rule }
    }
}

/// Guided noise estimate at a state; see [`GuidedPredictor::epsilon`].
pub fn guided_epsilon(gp: &GuidedPredictor, x: &StateVector, progress: f64) -> Result<Vec<f64>> {
    gp.epsilon(&x.values, x.t, progress)
}

/// Wraps a guided predictor so any sampler can drive it.
pub fn as_noise_predictor(gp: GuidedPredictor, rule: ProgressRule) -> GuidedNoisePredictor {
    gp.into_predictor(rule)
}

/// Maps a step index onto guidance progress `s`.
#[derive(Clone, Default)]
pub enum ProgressRule {
    /// Fraction of completed reverse steps, `(T - t) / (T - 1)`: the first
    /// reverse step gets `s = 0` and therefore the strongest guidance.
    #[default]
    ReverseSteps,
    /// The literal `(t - 1) / (T - 1)`.
    NormalizedTime,
    /// Same progress at every step.
    Constant(f64),
    Custom(Arc<dyn Fn(usize, usize) -> f64 + Send + Sync>),
}

impl ProgressRule {
    pub fn progress(&self, t: usize, num_steps: usize) -> Result<f64> {
        match self {
            ProgressRule::ReverseSteps => reverse_progress(t, num_steps),
            ProgressRule::NormalizedTime => normalized_time(t, num_steps),
            ProgressRule::Constant(s) => Ok(*s),
            ProgressRule::Custom(f) => Ok(f(t, num_steps)),
        }
    }
}

impl fmt::Debug for ProgressRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProgressRule::ReverseSteps => f.write_str("ReverseSteps"),
            ProgressRule::NormalizedTime => f.write_str("NormalizedTime"),
            ProgressRule::Constant(s) => write!(f, "Constant({s})"),
            ProgressRule::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// A [`GuidedPredictor`] behind the plain predictor interface. The condition
/// passed to `predict` is ignored: conditions live on the guided predictor
/// and its sources.
#[derive(Debug, Clone)]
pub struct GuidedNoisePredictor {
    guided: GuidedPredictor,
    rule: ProgressRule,
}

impl GuidedNoisePredictor {
    pub fn guided(&self) -> &GuidedPredictor {
        &self.guided
    }
}

impl NoisePredictor for GuidedNoisePredictor {
    fn dim(&self) -> usize {
        self.guided.dim()
    }

    fn num_steps(&self) -> usize {
        self.guided.num_steps()
    }

    fn predict(&self, x: &[f64], t: usize, _cond: &Condition) -> Result<Vec<f64>> {
        let s = self.rule.progress(t, self.num_steps())?;
        self.guided.epsilon(x, t, s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{AnalyticPredictor, GaussianModel};
    use crate::schedule::VarianceSchedule;

    fn gaussian(mean: &[f64], sched: &Arc<VarianceSchedule>) -> SharedPredictor {
        Arc::new(AnalyticPredictor::gaussian(
            GaussianModel::standard(mean.to_vec()).unwrap(),
            sched.clone(),
        ))
    }

    /// Two-step schedule with `abar_1 = 0.64`.
    fn sched() -> Arc<VarianceSchedule> {
        Arc::new(VarianceSchedule::from_betas(vec![0.36, 0.5]).unwrap())
    }

    #[test]
    fn identical_pair_has_zero_delta() {
        let s = sched();
        let b = gaussian(&[0.3, -1.0], &s);
        let src = DeltaSource::new(b.clone(), b, GuidanceSchedule::constant(1.0).unwrap()).unwrap();
        let d = compute_delta(&src, &StateVector::new(vec![2.0, 0.5], 1)).unwrap();
        assert!(d.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mean_shift_delta_is_constant() {
        let s = sched();
        let src = DeltaSource::new(
            gaussian(&[0.5, 0.5], &s),
            gaussian(&[1.5, 0.5], &s),
            GuidanceSchedule::constant(1.0).unwrap(),
        )
        .unwrap();
        for x in [[0.0, 0.0], [3.0, -2.0], [-1.0, 7.0]] {
            let d = compute_delta(&src, &StateVector::new(x.to_vec(), 1)).unwrap();
            assert!((d[0] + 0.48).abs() < 1e-15, "{d:?}");
            assert!(d[1].abs() < 1e-15);
        }
    }

    #[test]
    fn eq9_arithmetic() {
        // target epsilon (0.2, -0.1), delta (-0.48, 0), lambda 1.5
        #[derive(Debug)]
        struct Fixed(Vec<f64>);
        impl NoisePredictor for Fixed {
            fn dim(&self) -> usize {
                self.0.len()
            }
            fn num_steps(&self) -> usize {
                2
            }
            fn predict(&self, _: &[f64], _: usize, _: &Condition) -> Result<Vec<f64>> {
                Ok(self.0.clone())
            }
        }
        let target: SharedPredictor = Arc::new(Fixed(vec![0.2, -0.1]));
        let base: SharedPredictor = Arc::new(Fixed(vec![0.48, 0.0]));
        let adapted: SharedPredictor = Arc::new(Fixed(vec![0.0, 0.0]));
        let gp = GuidedPredictor::new(target)
            .with_source(DeltaSource::new(base, adapted, GuidanceSchedule::constant(1.5).unwrap()).unwrap())
            .unwrap();
        let e = guided_epsilon(&gp, &StateVector::new(vec![0.0, 0.0], 1), 0.0).unwrap();
        assert!((e[0] + 0.52).abs() < 1e-15 && (e[1] + 0.1).abs() < 1e-15, "{e:?}");
    }

    #[test]
    fn empty_and_zero_strength_reduce_to_target() {
        let s = sched();
        let target = gaussian(&[-2.0, 3.0], &s);
        let plain = GuidedPredictor::new(target.clone());
        let zero = GuidedPredictor::new(target.clone())
            .with_source(
                DeltaSource::new(
                    gaussian(&[0.0, 0.0], &s),
                    gaussian(&[1.0, 0.0], &s),
                    GuidanceSchedule::constant(0.0).unwrap(),
                )
                .unwrap(),
            )
            .unwrap();
        for x in [[0.0, 0.0], [1.0, -4.0]] {
            let want = target.predict(&x, 2, &Condition::none()).unwrap();
            let st = StateVector::new(x.to_vec(), 2);
            assert_eq!(guided_epsilon(&plain, &st, 0.3).unwrap(), want);
            assert_eq!(guided_epsilon(&zero, &st, 0.3).unwrap(), want);
        }
    }

    #[test]
    fn progress_rules() {
        let s = sched();
        let src = DeltaSource::new(
            gaussian(&[0.0], &s),
            gaussian(&[1.0], &s),
            GuidanceSchedule::exponential(2.0, 0.0, 5.0).unwrap(),
        )
        .unwrap();
        let gp = GuidedPredictor::new(gaussian(&[0.0], &s))
            .with_source(src.clone())
            .unwrap();
        let frozen = gp.clone().into_predictor(ProgressRule::Constant(0.0));
        let full = GuidedPredictor::new(gaussian(&[0.0], &s))
            .with_source(src.with_guidance(GuidanceSchedule::constant(2.0).unwrap()))
            .unwrap()
            .into_predictor(ProgressRule::ReverseSteps);
        for t in 1..=2 {
            assert_eq!(
                frozen.predict(&[0.7], t, &Condition::none()).unwrap(),
                full.predict(&[0.7], t, &Condition::none()).unwrap()
            );
        }
        assert_eq!(ProgressRule::ReverseSteps.progress(2, 2).unwrap(), 0.0);
        assert_eq!(ProgressRule::NormalizedTime.progress(2, 2).unwrap(), 1.0);
        let custom = ProgressRule::Custom(Arc::new(|t, n| t as f64 / n as f64));
        assert_eq!(custom.progress(1, 4).unwrap(), 0.25);
    }

    #[test]
    fn mismatched_sources_are_rejected() {
        let s = sched();
        let other = Arc::new(VarianceSchedule::default_linear(5).unwrap());
        assert!(DeltaSource::new(
            gaussian(&[0.0], &s),
            gaussian(&[0.0, 1.0], &s),
            GuidanceSchedule::constant(1.0).unwrap()
        )
        .is_err());
        assert!(DeltaSource::new(
            gaussian(&[0.0], &s),
            gaussian(&[0.0], &other),
            GuidanceSchedule::constant(1.0).unwrap()
        )
        .is_err());
        let src = DeltaSource::new(
            gaussian(&[0.0], &other),
            gaussian(&[1.0], &other),
            GuidanceSchedule::constant(1.0).unwrap(),
        )
        .unwrap();
        assert!(GuidedPredictor::new(gaussian(&[0.0], &s)).with_source(src).is_err());
    }
}
