//! Reverse-process samplers over any [`NoisePredictor`].
//!
//! All four step rules consume a noise estimate and nothing else, so a
//! guided predictor plugs in unchanged. Update rules (`abar_0 = 1`):
//!
//! * DDPM ancestral:
//!   `x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(1 - beta_t) + sigma_t z`
//! * DDIM: `x0 = (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)`,
//!   `x_{t-1} = sqrt(abar_{t-1}) x0 + sqrt(1 - abar_{t-1} - s^2) eps + s z` with
//!   `s = eta * sqrt((1 - abar_{t-1}) / (1 - abar_t)) * sqrt(1 - abar_t / abar_{t-1})`
//! * Euler / Heun integrate the probability-flow ODE in the scaled variable
//!   `y = x_t / sqrt(abar_t)` against `sigma_t = sqrt((1 - abar_t) / abar_t)`,
//!   where the slope `dy/dsigma` is exactly the noise estimate. Heun adds a
//!   trapezoidal corrector that re-queries the predictor at step `t - 1`,
//!   skipped on the last step where `sigma_0 = 0`.
//!
//! Noise draws happen in a fixed order that depends only on the sampler and
//! `T`: the initial state first, then one vector per stochastic step
//! (`t >= 2`), each taken after that step's predictor call.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{check_dim, Error, Result};
use crate::guidance::StateVector;
use crate::predictor::{Condition, NoisePredictor, SharedPredictor};
use crate::rng::NoiseSource;
use crate::schedule::VarianceSchedule;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplerKind {
    Ddpm,
    Ddim { eta: f64 },
    Euler,
    Heun,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 4] = [
        SamplerKind::Ddpm,
        SamplerKind::Ddim { eta: 0.0 },
        SamplerKind::Euler,
        SamplerKind::Heun,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SamplerKind::Ddpm => "ddpm",
            SamplerKind::Ddim { .. } => "ddim",
            SamplerKind::Euler => "euler",
            SamplerKind::Heun => "heun",
        }
    }

    /// Same kind with the DDIM `eta` replaced; other kinds are unchanged.
    pub fn with_eta(self, eta: f64) -> Self {
        match self {
            SamplerKind::Ddim { .. } => SamplerKind::Ddim { eta },
            other => other,
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplerKind::Ddim { eta } if *eta != 0.0 => write!(f, "ddim(eta={eta})"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "ddpm" => Ok(SamplerKind::Ddpm),
            "ddim" => Ok(SamplerKind::Ddim { eta: 0.0 }),
            "euler" => Ok(SamplerKind::Euler),
            "heun" => Ok(SamplerKind::Heun),
            _ => {
                let eta = s
                    .strip_prefix("ddim(eta=")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown sampler `{s}` (expected ddpm|ddim|euler|heun)")))?;
                if !(0.0..=1.0).contains(&eta) {
                    return Err(Error::Config(format!("ddim eta {eta} outside [0, 1]")));
                }
                Ok(SamplerKind::Ddim { eta })
            }
        }
    }
}

impl Serialize for SamplerKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SamplerKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Everything a single sampling run needs.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub sampler: SamplerKind,
    pub schedule: Arc<VarianceSchedule>,
    pub predictor: SharedPredictor,
    pub seed: u64,
    pub record_trajectory: bool,
}

impl RunSpec {
    pub fn new(sampler: SamplerKind, schedule: Arc<VarianceSchedule>, predictor: SharedPredictor, seed: u64) -> Self {
        Self {
            sampler,
            schedule,
            predictor,
            seed,
            record_trajectory: false,
        }
    }

    pub fn recording(mut self) -> Self {
        self.record_trajectory = true;
        self
    }

    pub fn dim(&self) -> usize {
        self.predictor.dim()
    }
}

/// States from `x_T` down to `x_0` (only `x_0` unless recording was requested).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<StateVector>,
    pub seed: u64,
    pub sampler: SamplerKind,
}

impl Trajectory {
    pub fn final_state(&self) -> &StateVector {
        self.states.last().expect("trajectory always holds the final state")
    }

    pub fn sample(&self) -> &[f64] {
        &self.final_state().values
    }

    /// CSV with columns `t,x0,...,x{d-1}`.
    pub fn to_csv(&self) -> String {
        let d = self.states.first().map_or(0, StateVector::dim);
        let mut out = String::from("t");
        for k in 0..d {
            out.push_str(&format!(",x{k}"));
        }
        out.push('\n');
        for s in &self.states {
            out.push_str(&s.t.to_string());
            for v in &s.values {
                out.push_str(&format!(",{v:?}"));
            }
            out.push('\n');
        }
        out
    }
}

fn check_t(x: &StateVector, sched: &VarianceSchedule) -> Result<()> {
    sched.check_step(x.t)
}

/// One ancestral step; `z` is ignored where `sigma_t = 0`.
pub fn ddpm_step(x: &StateVector, eps: &[f64], sched: &VarianceSchedule, z: &[f64]) -> Result<StateVector> {
    check_t(x, sched)?;
    check_dim(x.dim(), eps.len())?;
    check_dim(x.dim(), z.len())?;
    let t = x.t;
    let beta = sched.beta(t);
    let coef = beta / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv = 1.0 / (1.0 - beta).sqrt();
    let sigma = sched.sigma(t);
    let values = x
        .values
        .iter()
        .zip(eps)
        .zip(z)
        .map(|((x, e), z)| {
            let mean = inv * (x - coef * e);
            if sigma == 0.0 {
                mean
            } else {
                mean + sigma * z
            }
        })
        .collect();
    Ok(StateVector::new(values, t - 1))
}

pub fn ddim_step(x: &StateVector, eps: &[f64], sched: &VarianceSchedule, eta: f64, z: &[f64]) -> Result<StateVector> {
    check_t(x, sched)?;
    check_dim(x.dim(), eps.len())?;
    check_dim(x.dim(), z.len())?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::OutOfRange(format!("ddim eta {eta} outside [0, 1]")));
    }
    let t = x.t;
    let ab = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t - 1);
    let noise_scale = if eta == 0.0 {
        0.0
    } else {
        eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt()
    };
    let radicand = 1.0 - ab_prev - noise_scale * noise_scale;
    if radicand < 0.0 {
        return Err(Error::OutOfRange(format!(
            "ddim direction term negative at t = {t} (eta = {eta})"
        )));
    }
    let dir = radicand.sqrt();
    let (sa, sn, sp) = (ab.sqrt(), (1.0 - ab).sqrt(), ab_prev.sqrt());
    let values = x
        .values
        .iter()
        .zip(eps)
        .zip(z)
        .map(|((x, e), z)| {
            let x0 = (x - sn * e) / sa;
            let v = sp * x0 + dir * e;
            if noise_scale == 0.0 {
                v
            } else {
                v + noise_scale * z
            }
        })
        .collect();
    Ok(StateVector::new(values, t - 1))
}

/// Explicit Euler step of the probability-flow ODE from `t` to `t - 1`.
pub fn euler_step(x: &StateVector, predictor: &dyn NoisePredictor, sched: &VarianceSchedule) -> Result<StateVector> {
    check_t(x, sched)?;
    let eps = predictor.predict(&x.values, x.t, &Condition::none())?;
    euler_from(x, &eps, sched)
}

fn euler_from(x: &StateVector, eps: &[f64], sched: &VarianceSchedule) -> Result<StateVector> {
    check_dim(x.dim(), eps.len())?;
    let t = x.t;
    let (sigma, sigma_next) = (sched.flow_sigma(t), sched.flow_sigma(t - 1));
    let (scale, scale_next) = (sched.alpha_bar(t).sqrt(), sched.alpha_bar(t - 1).sqrt());
    let h = sigma_next - sigma;
    let values = x
        .values
        .iter()
        .zip(eps)
        .map(|(x, e)| scale_next * (x / scale + h * e))
        .collect();
    Ok(StateVector::new(values, t - 1))
}

/// Heun (trapezoidal) step; two predictor calls except on the final step.
pub fn heun_step(x: &StateVector, predictor: &dyn NoisePredictor, sched: &VarianceSchedule) -> Result<StateVector> {
    check_t(x, sched)?;
    let eps = predictor.predict(&x.values, x.t, &Condition::none())?;
    let predicted = euler_from(x, &eps, sched)?;
    if predicted.t == 0 {
        return Ok(predicted);
    }
    let eps_next = predictor.predict(&predicted.values, predicted.t, &Condition::none())?;
    check_dim(x.dim(), eps_next.len())?;
    let slope: Vec<f64> = eps.iter().zip(&eps_next).map(|(a, b)| 0.5 * (a + b)).collect();
    euler_from(x, &slope, sched)
}

/// Runs the full reverse loop `t = T..1` for one seed.
pub fn run_sampler(spec: &RunSpec) -> Result<Trajectory> {
    let sched = &*spec.schedule;
    let pred = &*spec.predictor;
    let big_t = sched.num_steps();
    if pred.num_steps() != big_t {
        return Err(Error::InvalidArgument(format!(
            "predictor is bound to T = {}, schedule has T = {big_t}",
            pred.num_steps()
        )));
    }
    let d = pred.dim();
    let mut noise = NoiseSource::new(spec.seed);
    let mut init = noise.normal_vec(d);
    if matches!(spec.sampler, SamplerKind::Euler | SamplerKind::Heun) {
        // the ODE starts at sigma_max in the scaled variable
        let s = (1.0 - sched.alpha_bar(big_t)).sqrt();
        init.iter_mut().for_each(|v| *v *= s);
    }
    let mut state = StateVector::new(init, big_t);
    let mut states = Vec::with_capacity(if spec.record_trajectory { big_t + 1 } else { 1 });
    if spec.record_trajectory {
        states.push(state.clone());
    }
    let zeros = vec![0.0; d];
    for t in (1..=big_t).rev() {
        state = match spec.sampler {
            SamplerKind::Ddpm => {
                let eps = pred.predict(&state.values, t, &Condition::none())?;
                let z = if t > 1 { noise.normal_vec(d) } else { zeros.clone() };
                ddpm_step(&state, &eps, sched, &z)?
            }
            SamplerKind::Ddim { eta } => {
                let eps = pred.predict(&state.values, t, &Condition::none())?;
                let z = if eta > 0.0 && t > 1 {
                    noise.normal_vec(d)
                } else {
                    zeros.clone()
                };
                ddim_step(&state, &eps, sched, eta, &z)?
            }
            SamplerKind::Euler => euler_step(&state, pred, sched)?,
            SamplerKind::Heun => heun_step(&state, pred, sched)?,
        };
        if state.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t });
        }
        if spec.record_trajectory {
            states.push(state.clone());
        }
    }
    if !spec.record_trajectory {
        states.push(state);
    }
    Ok(Trajectory {
        states,
        seed: spec.seed,
        sampler: spec.sampler,
    })
}

/// Final samples for each seed, in seed order. Runs in parallel; each run
/// owns its noise stream, so the result does not depend on scheduling.
pub fn sample_batch(
    sampler: SamplerKind,
    schedule: &Arc<VarianceSchedule>,
    predictor: &SharedPredictor,
    seeds: impl IntoIterator<Item = u64>,
) -> Result<Vec<Vec<f64>>> {
    let seeds: Vec<u64> = seeds.into_iter().collect();
    seeds
        .par_iter()
        .map(|&seed| {
            let spec = RunSpec::new(sampler, schedule.clone(), predictor.clone(), seed);
            run_sampler(&spec)
                .map(|tr| tr.states.into_iter().next_back().map(|s| s.values).unwrap_or_default())
                .map_err(|e| e.context(format!("seed {seed}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{AnalyticPredictor, GaussianModel};

    #[derive(Debug)]
    struct ConstantPredictor {
        value: Vec<f64>,
        steps: usize,
    }

    impl NoisePredictor for ConstantPredictor {
        fn dim(&self) -> usize {
            self.value.len()
        }
        fn num_steps(&self) -> usize {
            self.steps
        }
        fn predict(&self, _: &[f64], _: usize, _: &Condition) -> Result<Vec<f64>> {
            Ok(self.value.clone())
        }
    }

    #[test]
    fn ddpm_hand_arithmetic() {
        // beta_1 = 0.19 gives abar_1 = 0.81
        let s = VarianceSchedule::from_betas(vec![0.19, 0.3]).unwrap();
        let out = ddpm_step(&StateVector::new(vec![1.0], 1), &[0.5], &s, &[0.0]).unwrap();
        let want = (1.0 / 0.9) * (1.0 - (0.19 / 0.19f64.sqrt()) * 0.5);
        assert!((out.values[0] - want).abs() < 1e-14);
        assert!((out.values[0] - 0.8690).abs() < 1e-4);
        assert_eq!(out.t, 0);

        let rescale = ddpm_step(&StateVector::new(vec![2.0], 2), &[0.0], &s, &[0.0]).unwrap();
        assert!((rescale.values[0] - 2.0 / 0.7f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ddim_hand_arithmetic() {
        // abar_1 = 0.8, abar_2 = 0.5
        let s = VarianceSchedule::from_betas(vec![0.2, 0.375]).unwrap();
        assert!((s.alpha_bar(2) - 0.5).abs() < 1e-15);
        let out = ddim_step(&StateVector::new(vec![1.0], 2), &[0.2], &s, 0.0, &[9.0]).unwrap();
        let x0 = (1.0 - 0.5f64.sqrt() * 0.2) / 0.5f64.sqrt();
        assert!((x0 - 1.21421).abs() < 1e-5);
        let want = 0.8f64.sqrt() * x0 + 0.2f64.sqrt() * 0.2;
        assert!((out.values[0] - want).abs() < 1e-12);
        assert!((out.values[0] - 1.17547).abs() < 1e-5);

        // final step collapses onto the x0 estimate
        let last = ddim_step(&StateVector::new(vec![0.7], 1), &[0.3], &s, 0.0, &[0.0]).unwrap();
        assert!((last.values[0] - (0.7 - 0.2f64.sqrt() * 0.3) / 0.8f64.sqrt()).abs() < 1e-15);

        let rescale = ddim_step(&StateVector::new(vec![1.3], 2), &[0.0], &s, 0.0, &[0.0]).unwrap();
        assert!((rescale.values[0] - (0.8f64 / 0.5).sqrt() * 1.3).abs() < 1e-14);

        assert!(ddim_step(&StateVector::new(vec![1.0], 2), &[0.0], &s, 1.5, &[0.0]).is_err());
    }

    #[test]
    fn euler_hand_integration() {
        // abar_1 = 0.8, abar_2 = 0.4; constant slope integrates exactly
        let s = VarianceSchedule::from_betas(vec![0.2, 0.5]).unwrap();
        let p = ConstantPredictor {
            value: vec![0.3],
            steps: 2,
        };
        let out = euler_step(&StateVector::new(vec![1.0], 2), &p, &s).unwrap();
        let sigma2 = (0.6f64 / 0.4).sqrt();
        let sigma1 = (0.2f64 / 0.8).sqrt();
        let y = 1.0 / 0.4f64.sqrt() + (sigma1 - sigma2) * 0.3;
        assert!((out.values[0] - 0.8f64.sqrt() * y).abs() < 1e-14);
        assert!((out.values[0] - 1.219745).abs() < 1e-5);
        // constant predictor: the corrector slope equals the predictor slope
        let heun = heun_step(&StateVector::new(vec![1.0], 2), &p, &s).unwrap();
        assert_eq!(heun, out);
    }

    #[test]
    fn heun_equals_euler_for_zero_predictor() {
        let sched = Arc::new(VarianceSchedule::default_linear(12).unwrap());
        let p: SharedPredictor = Arc::new(ConstantPredictor {
            value: vec![0.0, 0.0],
            steps: 12,
        });
        let e = run_sampler(&RunSpec::new(SamplerKind::Euler, sched.clone(), p.clone(), 4)).unwrap();
        let h = run_sampler(&RunSpec::new(SamplerKind::Heun, sched, p, 4)).unwrap();
        assert_eq!(e.sample(), h.sample());
    }

    #[test]
    fn deterministic_and_recorded() {
        let sched = Arc::new(VarianceSchedule::default_linear(16).unwrap());
        let p: SharedPredictor = Arc::new(AnalyticPredictor::gaussian(
            GaussianModel::standard(vec![1.0, -1.0]).unwrap(),
            sched.clone(),
        ));
        for kind in SamplerKind::ALL {
            let spec = RunSpec::new(kind, sched.clone(), p.clone(), 99).recording();
            let a = run_sampler(&spec).unwrap();
            let b = run_sampler(&spec).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.states.len(), 17);
            assert_eq!(a.states[0].t, 16);
            assert_eq!(a.final_state().t, 0);
            let csv = a.to_csv();
            assert!(csv.starts_with("t,x0,x1\n16,"));
            assert_eq!(csv.lines().count(), 18);
        }
    }

    #[test]
    fn ddpm_with_zero_sigma_ignores_noise() {
        let base = VarianceSchedule::default_linear(10).unwrap();
        let sched = Arc::new(base.with_sigmas(vec![0.0; 10]).unwrap());
        let x = StateVector::new(vec![0.4, -0.2], 5);
        let a = ddpm_step(&x, &[0.1, 0.2], &sched, &[1.0, 1.0]).unwrap();
        let b = ddpm_step(&x, &[0.1, 0.2], &sched, &[-3.0, 7.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn euler_tracks_ddim_on_gaussian() {
        let sched = Arc::new(VarianceSchedule::default_linear(512).unwrap());
        let p: SharedPredictor = Arc::new(AnalyticPredictor::gaussian(
            GaussianModel::standard(vec![2.0, -1.0]).unwrap(),
            sched.clone(),
        ));
        let mean = |kind| {
            let xs = sample_batch(kind, &sched, &p, 0..400).unwrap();
            let mut m = [0.0, 0.0];
            for x in &xs {
                m[0] += x[0] / 400.0;
                m[1] += x[1] / 400.0;
            }
            m
        };
        let e = mean(SamplerKind::Euler);
        let d = mean(SamplerKind::Ddim { eta: 0.0 });
        for i in 0..2 {
            assert!((e[i] - d[i]).abs() <= 0.02 * d[i].abs(), "{e:?} vs {d:?}");
        }
    }

    #[test]
    fn sampler_names_round_trip() {
        for s in ["ddpm", "ddim", "euler", "heun", "ddim(eta=0.5)"] {
            assert_eq!(s.parse::<SamplerKind>().unwrap().to_string(), s);
        }
        assert!("plms".parse::<SamplerKind>().is_err());
        assert!("ddim(eta=2)".parse::<SamplerKind>().is_err());
    }

    #[test]
    fn mismatched_predictor_is_rejected() {
        let sched = Arc::new(VarianceSchedule::default_linear(8).unwrap());
        let p: SharedPredictor = Arc::new(ConstantPredictor {
            value: vec![0.0],
            steps: 4,
        });
        assert!(run_sampler(&RunSpec::new(SamplerKind::Ddpm, sched, p, 0)).is_err());
    }

    #[test]
    fn non_finite_state_aborts_with_step() {
        let sched = Arc::new(VarianceSchedule::default_linear(8).unwrap());
        let p: SharedPredictor = Arc::new(ConstantPredictor {
            value: vec![f64::NAN],
            steps: 8,
        });
        let err = run_sampler(&RunSpec::new(SamplerKind::Ddim { eta: 0.0 }, sched, p, 0)).unwrap_err();
        assert!(matches!(err, Error::NonFinite { t: 8 }));
    }
}
