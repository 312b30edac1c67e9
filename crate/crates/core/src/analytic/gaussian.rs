use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::NoiseSource;
use crate::schedule::VarianceSchedule;

/// Smallest `1 - abar` for which the noise estimate is defined.
pub const MIN_NOISE_FRACTION: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Covariance {
    /// `v * I`
    Isotropic(f64),
    /// Row-major symmetric positive-definite matrix.
    Full(Vec<Vec<f64>>),
}

/// A Gaussian data distribution with its Bayes-optimal denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    mean: Vec<f64>,
    cov: Covariance,
    // Cholesky factor of the full covariance, kept for sampling.
    chol: Option<DMatrix<f64>>,
}

impl GaussianModel {
    pub fn new(mean: Vec<f64>, cov: Covariance) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::InvalidArgument("gaussian needs dimension >= 1".into()));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("gaussian mean must be finite".into()));
        }
        let chol = match &cov {
            Covariance::Isotropic(v) => {
                if !(*v > 0.0 && v.is_finite()) {
                    return Err(Error::Singular(format!("isotropic variance {v} must be > 0")));
                }
                None
            }
            Covariance::Full(rows) => {
                let d = mean.len();
                check_dim(d, rows.len())?;
                for r in rows {
                    check_dim(d, r.len())?;
                }
                let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
                if (&m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                    return Err(Error::InvalidArgument("covariance must be symmetric".into()));
                }
                let c =
                    Cholesky::new(m).ok_or_else(|| Error::Singular("covariance is not positive definite".into()))?;
                Some(c.l())
            }
        };
        Ok(Self { mean, cov, chol })
    }

    /// `N(mean, I)`
    pub fn standard(mean: Vec<f64>) -> Result<Self> {
        Self::new(mean, Covariance::Isotropic(1.0))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Covariance {
        &self.cov
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        match &self.cov {
            Covariance::Isotropic(v) => DMatrix::from_diagonal_element(d, d, *v),
            Covariance::Full(rows) => DMatrix::from_fn(d, d, |i, j| rows[i][j]),
        }
    }

    /// Same covariance, mean moved by `delta`.
    pub fn shifted(&self, delta: &[f64]) -> Result<Self> {
        check_dim(self.dim(), delta.len())?;
        let mean = self.mean.iter().zip(delta).map(|(m, d)| m + d).collect();
        Self::new(mean, self.cov.clone())
    }

    /// Same mean, covariance multiplied by `factor`.
    pub fn scaled_covariance(&self, factor: f64) -> Result<Self> {
        let cov = match &self.cov {
            Covariance::Isotropic(v) => Covariance::Isotropic(v * factor),
            Covariance::Full(rows) => {
                Covariance::Full(rows.iter().map(|r| r.iter().map(|v| v * factor).collect()).collect())
            }
        };
        Self::new(self.mean.clone(), cov)
    }

    fn residual(&self, x: &[f64], alpha_bar: f64) -> Vec<f64> {
        let s = alpha_bar.sqrt();
        x.iter().zip(&self.mean).map(|(x, m)| x - s * m).collect()
    }

    /// Applies `M^{-1}` with `M = abar * Sigma + (1 - abar) I` (the marginal
    /// covariance of `x_t`), returning the solution and `log det M`.
    fn solve_marginal(&self, r: &[f64], alpha_bar: f64) -> Result<(Vec<f64>, f64)> {
        match &self.cov {
            Covariance::Isotropic(v) => {
                let m = alpha_bar * v + (1.0 - alpha_bar);
                Ok((r.iter().map(|x| x / m).collect(), self.dim() as f64 * m.ln()))
            }
            Covariance::Full(_) => {
                let d = self.dim();
                let marg = self.covariance_matrix() * alpha_bar + DMatrix::from_diagonal_element(d, d, 1.0 - alpha_bar);
                let chol: Cholesky<f64, Dyn> = Cholesky::new(marg)
                    .ok_or_else(|| Error::Singular("marginal covariance not positive definite".into()))?;
                let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                let sol = chol.solve(&DVector::from_column_slice(r));
                Ok((sol.iter().copied().collect(), logdet))
            }
        }
    }

    /// `E[x0 | x_t]` at noise level `alpha_bar`.
    pub fn posterior_mean_at(&self, x: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        check_alpha_bar(alpha_bar)?;
        let s = alpha_bar.sqrt();
        let r = self.residual(x, alpha_bar);
        Ok(match &self.cov {
            Covariance::Isotropic(v) => {
                let gain = s * v / (alpha_bar * v + (1.0 - alpha_bar));
                self.mean.iter().zip(&r).map(|(m, r)| m + gain * r).collect()
            }
            Covariance::Full(_) => {
                let (sol, _) = self.solve_marginal(&r, alpha_bar)?;
                let shift = self.covariance_matrix() * DVector::from_vec(sol) * s;
                self.mean.iter().zip(shift.iter()).map(|(m, v)| m + v).collect()
            }
        })
    }

    /// Bayes-optimal noise estimate at noise level `alpha_bar`:
    /// `sqrt(1 - abar) * M^{-1} (x - sqrt(abar) mu)`, which equals
    /// `(x - sqrt(abar) E[x0|x]) / sqrt(1 - abar)`.
    pub fn epsilon_at(&self, x: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        check_alpha_bar(alpha_bar)?;
        let noise = 1.0 - alpha_bar;
        if noise < MIN_NOISE_FRACTION {
            return Err(Error::OutOfRange(format!(
                "1 - alpha_bar = {noise:e} too small for a noise estimate"
            )));
        }
        let r = self.residual(x, alpha_bar);
        let scale = noise.sqrt();
        Ok(match &self.cov {
            Covariance::Isotropic(v) => {
                let c = scale / (alpha_bar * v + noise);
                r.iter().map(|r| c * r).collect()
            }
            Covariance::Full(_) => {
                let (sol, _) = self.solve_marginal(&r, alpha_bar)?;
                sol.into_iter().map(|v| scale * v).collect()
            }
        })
    }

    /// Log density of the `x_t` marginal `N(sqrt(abar) mu, abar Sigma + (1 - abar) I)`.
    pub fn log_marginal_at(&self, x: &[f64], alpha_bar: f64) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let r = self.residual(x, alpha_bar);
        let (sol, logdet) = self.solve_marginal(&r, alpha_bar)?;
        let quad: f64 = r.iter().zip(&sol).map(|(a, b)| a * b).sum();
        let d = self.dim() as f64;
        Ok(-0.5 * (quad + logdet + d * (2.0 * std::f64::consts::PI).ln()))
    }

    /// One exact draw from the data distribution.
    pub fn sample(&self, noise: &mut NoiseSource) -> Vec<f64> {
        let z = noise.normal_vec(self.dim());
        match (&self.cov, &self.chol) {
            (Covariance::Isotropic(v), _) => {
                let s = v.sqrt();
                self.mean.iter().zip(&z).map(|(m, z)| m + s * z).collect()
            }
            (_, Some(l)) => {
                let lz = l * DVector::from_vec(z);
                self.mean.iter().zip(lz.iter()).map(|(m, v)| m + v).collect()
            }
            (Covariance::Full(_), None) => unreachable!("full covariance always carries its factor"),
        }
    }
}

fn check_alpha_bar(alpha_bar: f64) -> Result<()> {
    if alpha_bar > 0.0 && alpha_bar <= 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("alpha_bar = {alpha_bar} outside (0, 1]")))
    }
}

/// `E[x0 | x_t]` for a Gaussian data model at step `t` of `sched`.
pub fn gaussian_posterior_mean(
    model: &GaussianModel,
    x_t: &[f64],
    t: usize,
    sched: &VarianceSchedule,
) -> Result<Vec<f64>> {
    sched.check_step(t)?;
    model.posterior_mean_at(x_t, sched.alpha_bar(t))
}

/// Optimal noise prediction for a Gaussian data model at step `t` of `sched`.
pub fn gaussian_epsilon(model: &GaussianModel, x_t: &[f64], t: usize, sched: &VarianceSchedule) -> Result<Vec<f64>> {
    sched.check_step(t)?;
    model.epsilon_at(x_t, sched.alpha_bar(t))
}
