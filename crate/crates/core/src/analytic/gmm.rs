use std::collections::BTreeMap;

use crate::error::{check_dim, Error, Result};
use crate::predictor::Condition;
use crate::rng::NoiseSource;
use crate::schedule::VarianceSchedule;

use super::gaussian::GaussianModel;

const WEIGHT_TOLERANCE: f64 = 1e-12;

/// Weighted Gaussian components; weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    weights: Vec<f64>,
    components: Vec<GaussianModel>,
}

impl Mixture {
    pub fn new(parts: Vec<(f64, GaussianModel)>) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::InvalidArgument("mixture needs at least one component".into()));
        };
        let d = first.1.dim();
        for (w, g) in &parts {
            check_dim(d, g.dim())?;
            if !(*w > 0.0 && w.is_finite()) {
                return Err(Error::OutOfRange(format!("mixture weight {w} must be > 0")));
            }
        }
        let total: f64 = parts.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::OutOfRange(format!("mixture weights sum to {total}, expected 1")));
        }
        let (weights, components) = parts.into_iter().unzip();
        Ok(Self { weights, components })
    }

    /// Normalizes the weights before building.
    pub fn normalized(parts: Vec<(f64, GaussianModel)>) -> Result<Self> {
        let total: f64 = parts.iter().map(|(w, _)| w).sum();
        if !(total > 0.0) {
            return Err(Error::OutOfRange("mixture weights must be positive".into()));
        }
        Self::new(parts.into_iter().map(|(w, g)| (w / total, g)).collect())
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianModel] {
        &self.components
    }

    /// Posterior component probabilities given `x_t`, computed in log space.
    pub fn responsibilities_at(&self, x: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
        let logs = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, g)| Ok(w.ln() + g.log_marginal_at(x, alpha_bar)?))
            .collect::<Result<Vec<f64>>>()?;
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut r: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = r.iter().sum();
        for v in &mut r {
            *v /= total;
        }
        Ok(r)
    }

    pub fn epsilon_at(&self, x: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        if self.components.len() == 1 {
            return self.components[0].epsilon_at(x, alpha_bar);
        }
        let r = self.responsibilities_at(x, alpha_bar)?;
        let mut out = vec![0.0; x.len()];
        for (rk, g) in r.iter().zip(&self.components) {
            let e = g.epsilon_at(x, alpha_bar)?;
            for (o, e) in out.iter_mut().zip(e) {
                *o += rk * e;
            }
        }
        Ok(out)
    }

    pub fn sample(&self, noise: &mut NoiseSource) -> Vec<f64> {
        let u = noise.uniform(0.0, 1.0);
        let mut acc = 0.0;
        let mut pick = self.components.len() - 1;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = k;
                break;
            }
        }
        self.components[pick].sample(noise)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (w, g) in self.weights.iter().zip(&self.components) {
            for (a, b) in m.iter_mut().zip(g.mean()) {
                *a += w * b;
            }
        }
        m
    }

    fn map_components(&self, f: impl Fn(usize, &GaussianModel) -> Result<GaussianModel>) -> Result<Self> {
        let comps = self
            .components
            .iter()
            .enumerate()
            .map(|(k, g)| f(k, g))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            weights: self.weights.clone(),
            components: comps,
        })
    }
}

/// A Gaussian mixture with optional per-condition parameter sets.
///
/// Unknown condition tokens fall back to the default mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    default: Mixture,
    conditioned: BTreeMap<String, Mixture>,
}

impl GmmModel {
    pub fn new(default: Mixture) -> Self {
        Self {
            default,
            conditioned: BTreeMap::new(),
        }
    }

    pub fn with_condition(mut self, token: impl Into<String>, mixture: Mixture) -> Result<Self> {
        check_dim(self.dim(), mixture.dim())?;
        self.conditioned.insert(token.into(), mixture);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.default.dim()
    }

    pub fn default_mixture(&self) -> &Mixture {
        &self.default
    }

    pub fn conditions(&self) -> impl Iterator<Item = (&str, &Mixture)> {
        self.conditioned.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn mixture_for(&self, cond: &Condition) -> &Mixture {
        cond.as_token()
            .and_then(|t| self.conditioned.get(t))
            .unwrap_or(&self.default)
    }

    pub fn epsilon_at(&self, x: &[f64], alpha_bar: f64, cond: &Condition) -> Result<Vec<f64>> {
        self.mixture_for(cond).epsilon_at(x, alpha_bar)
    }

    /// Moves component `index` of every parameter set by `delta`.
    pub fn shift_component(&self, index: usize, delta: &[f64]) -> Result<Self> {
        self.map_all(|k, g| if k == index { g.shifted(delta) } else { Ok(g.clone()) })
    }

    /// Multiplies every component covariance by `factor`.
    pub fn scale_covariances(&self, factor: f64) -> Result<Self> {
        self.map_all(|_, g| g.scaled_covariance(factor))
    }

    fn map_all(&self, f: impl Fn(usize, &GaussianModel) -> Result<GaussianModel> + Copy) -> Result<Self> {
        let default = self.default.map_components(f)?;
        let conditioned = self
            .conditioned
            .iter()
            .map(|(k, m)| Ok((k.clone(), m.map_components(f)?)))
            .collect::<Result<_>>()?;
        Ok(Self { default, conditioned })
    }
}

/// Optimal noise prediction for a mixture at step `t` of `sched`.
pub fn gmm_epsilon(
    model: &GmmModel,
    x_t: &[f64],
    t: usize,
    sched: &VarianceSchedule,
    cond: &Condition,
) -> Result<Vec<f64>> {
    sched.check_step(t)?;
    model.epsilon_at(x_t, sched.alpha_bar(t), cond)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::gaussian::{Covariance, GaussianModel};

    fn two_blobs(a: f64) -> GmmModel {
        GmmModel::new(
            Mixture::new(vec![
                (0.5, GaussianModel::standard(vec![a, 0.0]).unwrap()),
                (0.5, GaussianModel::standard(vec![-a, 0.0]).unwrap()),
            ])
            .unwrap(),
        )
    }

    #[test]
    fn single_component_equals_gaussian() {
        let g = GaussianModel::new(vec![1.0, -1.0], Covariance::Isotropic(0.3)).unwrap();
        let m = GmmModel::new(Mixture::new(vec![(1.0, g.clone())]).unwrap());
        let x = [0.4, 2.0];
        assert_eq!(
            m.epsilon_at(&x, 0.4, &Condition::none()).unwrap(),
            g.epsilon_at(&x, 0.4).unwrap()
        );
    }

    #[test]
    fn symmetric_pair_at_origin_is_zero() {
        let m = two_blobs(2.0);
        let e = m.epsilon_at(&[0.0, 0.0], 0.5, &Condition::none()).unwrap();
        assert!(e.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn far_basin_matches_component() {
        let m = two_blobs(3.0);
        let ab: f64 = 0.81;
        let x = [ab.sqrt() * 3.0 + 1.5, 0.2];
        let e = m.epsilon_at(&x, ab, &Condition::none()).unwrap();
        let e1 = m.default_mixture().components()[0].epsilon_at(&x, ab).unwrap();
        for i in 0..2 {
            assert!((e[i] - e1[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn responsibilities_normalized() {
        let m = GmmModel::new(
            Mixture::new(vec![
                (
                    0.2,
                    GaussianModel::new(vec![0.0, 1.0], Covariance::Isotropic(0.5)).unwrap(),
                ),
                (0.3, GaussianModel::standard(vec![2.0, -1.0]).unwrap()),
                (
                    0.5,
                    GaussianModel::new(vec![-3.0, 0.0], Covariance::Full(vec![vec![1.0, 0.5], vec![0.5, 2.0]]))
                        .unwrap(),
                ),
            ])
            .unwrap(),
        );
        let mut rng = NoiseSource::new(11);
        for _ in 0..200 {
            let x = [rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0)];
            let ab = rng.uniform(0.01, 0.99);
            let r = m.default_mixture().responsibilities_at(&x, ab).unwrap();
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn conditions_select_parameter_sets() {
        let alt = Mixture::new(vec![(1.0, GaussianModel::standard(vec![5.0, 5.0]).unwrap())]).unwrap();
        let m = two_blobs(2.0).with_condition("style", alt).unwrap();
        let x = [0.0, 0.0];
        let base = m.epsilon_at(&x, 0.5, &Condition::none()).unwrap();
        let unknown = m.epsilon_at(&x, 0.5, &Condition::token("nope")).unwrap();
        let styled = m.epsilon_at(&x, 0.5, &Condition::token("style")).unwrap();
        assert_eq!(base, unknown);
        assert_ne!(base, styled);
    }

    #[test]
    fn weights_must_sum_to_one() {
        let g = GaussianModel::standard(vec![0.0]).unwrap();
        assert!(Mixture::new(vec![(0.5, g.clone()), (0.6, g.clone())]).is_err());
        assert!(Mixture::new(vec![]).is_err());
        assert!(Mixture::normalized(vec![(1.0, g.clone()), (3.0, g)]).is_ok());
    }

    #[test]
    fn importance_sampling_oracle() {
        // E[x0 | x_t] by self-normalized importance sampling from the prior,
        // independent of the closed-form responsibilities.
        let m = GmmModel::new(
            Mixture::new(vec![
                (
                    0.3,
                    GaussianModel::new(vec![1.0, 0.0], Covariance::Isotropic(0.2)).unwrap(),
                ),
                (
                    0.7,
                    GaussianModel::new(vec![-1.0, 1.0], Covariance::Isotropic(0.4)).unwrap(),
                ),
            ])
            .unwrap(),
        );
        let ab: f64 = 0.5;
        let x = [0.1, 0.3];
        let mut rng = NoiseSource::new(5);
        let (mut wsum, mut acc) = (0.0, [0.0, 0.0]);
        for _ in 0..400_000 {
            let x0 = m.default_mixture().sample(&mut rng);
            let d2: f64 = (0..2).map(|i| (x[i] - ab.sqrt() * x0[i]).powi(2)).sum();
            let w = (-0.5 * d2 / (1.0 - ab)).exp();
            wsum += w;
            acc[0] += w * x0[0];
            acc[1] += w * x0[1];
        }
        let post = [acc[0] / wsum, acc[1] / wsum];
        let e = m.epsilon_at(&x, ab, &Condition::none()).unwrap();
        for i in 0..2 {
            let oracle = (x[i] - ab.sqrt() * post[i]) / (1.0 - ab).sqrt();
            assert!((e[i] - oracle).abs() < 0.01, "dim {i}: {} vs {}", e[i], oracle);
        }
    }
}
