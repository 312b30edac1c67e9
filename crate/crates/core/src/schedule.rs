//! Diffusion-time bookkeeping.
//!
//! Step indices are 1-based throughout the crate: `t = 1..=T`, with `t = 0`
//! denoting clean data. Accessors accept `t = 0` where a convention exists
//! (`alpha_bar(0) = 1`).

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Shape of the beta sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    LinearBeta,
    CosineAlphaBar,
}

/// Betas, alphas, cumulative products and posterior noise scales for `T` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

impl VarianceSchedule {
    /// Builds a schedule. `beta_start`/`beta_end` are ignored for the cosine kind.
    pub fn build(kind: ScheduleKind, num_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if num_steps < 2 {
            return Err(Error::InvalidArgument(format!(
                "schedule needs at least 2 steps, got {num_steps}"
            )));
        }
        let betas = match kind {
            ScheduleKind::LinearBeta => {
                if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
                    return Err(Error::OutOfRange(format!(
                        "linear betas need 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
                    )));
                }
                let span = (num_steps - 1) as f64;
                (0..num_steps)
                    .map(|i| beta_start + (beta_end - beta_start) * (i as f64 / span))
                    .collect()
            }
            ScheduleKind::CosineAlphaBar => cosine_betas(num_steps),
        };
        Self::from_betas(betas)
    }

    /// Linear betas over `[1e-4, 0.02]` rescaled by `1000 / T`, each end capped
    /// at 0.999 so short schedules stay valid.
    pub fn default_linear(num_steps: usize) -> Result<Self> {
        let (start, end) = default_beta_range(num_steps);
        Self::build(ScheduleKind::LinearBeta, num_steps, start, end)
    }

    /// Builds from an explicit beta sequence, with `sigma_t^2 = beta_t`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "schedule needs at least 2 steps, got {}",
                betas.len()
            )));
        }
        if let Some((i, b)) = betas.iter().enumerate().find(|(_, b)| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::OutOfRange(format!("beta_{} = {b} outside (0, 1)", i + 1)));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        if alpha_bars.windows(2).any(|w| !(w[1] < w[0])) || alpha_bars.iter().any(|a| *a <= 0.0) {
            return Err(Error::OutOfRange(
                "cumulative alpha product underflowed or stopped decreasing".into(),
            ));
        }
        let sigmas = betas.iter().map(|b| b.sqrt()).collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            sigmas,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.num_steps() {
            Err(Error::StepOutOfRange {
                t,
                num_steps: self.num_steps(),
            })
        } else {
            Ok(())
        }
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `alpha_bar_t`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Posterior noise scale `sigma_t` for `t` in `1..=T`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t - 1]
    }

    /// Noise level of the probability-flow ODE: `sqrt((1 - abar) / abar)`, zero at `t = 0`.
    pub fn flow_sigma(&self, t: usize) -> f64 {
        let ab = self.alpha_bar(t);
        ((1.0 - ab) / ab).sqrt()
    }

    /// Same schedule with every posterior noise scale replaced.
    pub fn with_sigmas(mut self, sigmas: Vec<f64>) -> Result<Self> {
        check_dim(self.num_steps(), sigmas.len())?;
        if sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::OutOfRange("sigma_t must be non-negative".into()));
        }
        self.sigmas = sigmas;
        Ok(self)
    }
}

/// The `(beta_start, beta_end)` pair used by [`VarianceSchedule::default_linear`].
pub fn default_beta_range(num_steps: usize) -> (f64, f64) {
    let scale = 1000.0 / num_steps.max(1) as f64;
    ((1e-4 * scale).min(MAX_BETA), (0.02 * scale).min(MAX_BETA))
}

fn cosine_betas(num_steps: usize) -> Vec<f64> {
    let f = |t: f64| {
        let phase = (t / num_steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
        (phase * std::f64::consts::FRAC_PI_2).cos().powi(2)
    };
    let f0 = f(0.0);
    (1..=num_steps)
        .map(|t| {
            let prev = f((t - 1) as f64) / f0;
            let cur = f(t as f64) / f0;
            (1.0 - cur / prev).clamp(1e-8, MAX_BETA)
        })
        .collect()
}

/// Samples `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise`.
pub fn forward_diffuse(x0: &[f64], t: usize, sched: &VarianceSchedule, noise: &[f64]) -> Result<Vec<f64>> {
    sched.check_step(t)?;
    check_dim(x0.len(), noise.len())?;
    let ab = sched.alpha_bar(t);
    Ok(forward_diffuse_at(x0, ab, noise))
}

pub(crate) fn forward_diffuse_at(x0: &[f64], alpha_bar: f64, noise: &[f64]) -> Vec<f64> {
    let signal = alpha_bar.sqrt();
    let scale = (1.0 - alpha_bar).sqrt();
    x0.iter().zip(noise).map(|(x, e)| signal * x + scale * e).collect()
}

/// Literal normalized time `s = (t - 1) / (T - 1)`; zero at the last reverse step.
pub fn normalized_time(t: usize, num_steps: usize) -> Result<f64> {
    if num_steps < 2 {
        return Err(Error::InvalidArgument(format!(
            "normalized time needs T >= 2, got {num_steps}"
        )));
    }
    if t == 0 || t > num_steps {
        return Err(Error::StepOutOfRange { t, num_steps });
    }
    Ok((t - 1) as f64 / (num_steps - 1) as f64)
}

/// Fraction of reverse steps already completed when step `t` runs:
/// `(T - t) / (T - 1)`, so the first reverse step (`t = T`) sees zero.
pub fn reverse_progress(t: usize, num_steps: usize) -> Result<f64> {
    normalized_time(t, num_steps).map(|s| 1.0 - s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceKind {
    Constant,
    Linear,
    Exponential,
    Cosine,
}

/// Guidance strength as a function of sampling progress `s` in `[0, 1]`.
///
/// The constant kind uses `lambda_max` only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSchedule {
    kind: GuidanceKind,
    lambda_max: f64,
    lambda_min: f64,
    decay_rate: f64,
}

impl GuidanceSchedule {
    pub fn new(kind: GuidanceKind, lambda_max: f64, lambda_min: f64, decay_rate: f64) -> Result<Self> {
        if !(lambda_max >= 0.0 && lambda_max.is_finite()) {
            return Err(Error::OutOfRange(format!(
                "lambda_max = {lambda_max} must be finite and >= 0"
            )));
        }
        if kind != GuidanceKind::Constant {
            if !(lambda_min >= 0.0 && lambda_min <= lambda_max) {
                return Err(Error::OutOfRange(format!(
                    "lambda_min = {lambda_min} must lie in [0, lambda_max = {lambda_max}]"
                )));
            }
            if kind == GuidanceKind::Exponential && !(decay_rate > 0.0 && decay_rate.is_finite()) {
                return Err(Error::OutOfRange(format!("decay rate k = {decay_rate} must be > 0")));
            }
        }
        Ok(Self {
            kind,
            lambda_max,
            lambda_min,
            decay_rate,
        })
    }

    pub fn constant(lambda: f64) -> Result<Self> {
        Self::new(GuidanceKind::Constant, lambda, lambda, 0.0)
    }

    pub fn linear(lambda_max: f64, lambda_min: f64) -> Result<Self> {
        Self::new(GuidanceKind::Linear, lambda_max, lambda_min, 0.0)
    }

    pub fn exponential(lambda_max: f64, lambda_min: f64, decay_rate: f64) -> Result<Self> {
        Self::new(GuidanceKind::Exponential, lambda_max, lambda_min, decay_rate)
    }

    pub fn cosine(lambda_max: f64, lambda_min: f64) -> Result<Self> {
        Self::new(GuidanceKind::Cosine, lambda_max, lambda_min, 0.0)
    }

    pub fn kind(&self) -> GuidanceKind {
        self.kind
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn decay_rate(&self) -> f64 {
        self.decay_rate
    }

    /// Guidance strength at progress `s`; `s` is clamped into `[0, 1]`.
    pub fn strength(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, 1.0);
        let (hi, lo) = (self.lambda_max, self.lambda_min);
        match self.kind {
            GuidanceKind::Constant => hi,
            GuidanceKind::Linear => hi - (hi - lo) * s,
            GuidanceKind::Exponential => lo + (hi - lo) * (-self.decay_rate * s).exp(),
            GuidanceKind::Cosine => lo + 0.5 * (hi - lo) * (1.0 + (std::f64::consts::PI * s).cos()),
        }
    }
}

/// Free-function form of [`GuidanceSchedule::strength`].
pub fn guidance_strength(gs: &GuidanceSchedule, s: f64) -> f64 {
    gs.strength(s)
}
