use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::NoiseSource;
use crate::schedule::{forward_diffuse_at, VarianceSchedule};

use super::{clear_gradients, MlpDenoiser, PointCloudDataset, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 128,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be > 0",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// A trained network with its per-step batch loss (mean squared noise error).
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpDenoiser,
    pub losses: Vec<f64>,
}

impl TrainOutcome {
    /// Mean loss over the final tenth of the steps (at least one step).
    pub fn final_loss(&self) -> Option<f64> {
        let n = self.losses.len();
        if n == 0 {
            return None;
        }
        let tail = (n / 10).max(1);
        Some(self.losses[n - tail..].iter().sum::<f64>() / tail as f64)
    }
}

/// Trains a fresh network of the given hidden widths on the noise-prediction
/// objective: `t` uniform over `1..=T`, standard normal noise, `x_t` from the
/// forward marginal.
pub fn train_denoiser(
    data: &PointCloudDataset,
    sched: &VarianceSchedule,
    cfg: &TrainConfig,
    hidden: &[usize],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = NoiseSource::new(cfg.seed);
    let model = MlpDenoiser::init(data.dim(), hidden, sched.num_steps(), &mut rng)?;
    run(model, data, sched, cfg, rng)
}

/// Continues training from `m`; the input network is left untouched.
pub fn fine_tune(
    m: &MlpDenoiser,
    data: &PointCloudDataset,
    sched: &VarianceSchedule,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    run(m.clone(), data, sched, cfg, NoiseSource::new(cfg.seed))
}

fn run(
    mut model: MlpDenoiser,
    data: &PointCloudDataset,
    sched: &VarianceSchedule,
    cfg: &TrainConfig,
    mut rng: NoiseSource,
) -> Result<TrainOutcome> {
    check_dim(model.data_dim(), data.dim())?;
    if model.num_steps != sched.num_steps() {
        return Err(Error::InvalidArgument(format!(
            "network is bound to T = {}, schedule has T = {}",
            model.num_steps,
            sched.num_steps()
        )));
    }
    let d = data.dim();
    let mut ws = Workspace::new(&model);
    let mut grads = model.zero_gradients();
    let mut opt = OptimizerState::new(&model, cfg.optimizer);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut eps = vec![0.0; d];
    let scale = 1.0 / cfg.batch_size as f64;

    for step in 0..cfg.steps {
        clear_gradients(&mut grads);
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let x0 = &data.points()[rng.uniform_int(0, data.len() - 1)];
            let t = rng.uniform_int(1, sched.num_steps());
            rng.fill_normal(&mut eps);
            let xt = forward_diffuse_at(x0, sched.alpha_bar(t), &eps);
            loss += model.accumulate_gradient(&mut ws, &mut grads, &xt, t, &eps);
        }
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        losses.push(loss);
        opt.apply(&mut model, &grads, cfg.learning_rate, scale);
    }
    Ok(TrainOutcome { model, losses })
}

struct OptimizerState {
    kind: Optimizer,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    fn new(model: &MlpDenoiser, kind: Optimizer) -> Self {
        // one buffer per weight matrix followed by one per bias vector
        let shapes: Vec<usize> = model
            .layers()
            .iter()
            .map(|l| l.weights.len())
            .chain(model.layers().iter().map(|l| l.bias.len()))
            .collect();
        let zeros = || shapes.iter().map(|n| vec![0.0; *n]).collect::<Vec<_>>();
        Self {
            kind,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    fn apply(&mut self, model: &mut MlpDenoiser, grads: &super::Gradients, lr: f64, grad_scale: f64) {
        self.step += 1;
        let n = model.layers().len();
        for (i, layer) in model.layers_mut().iter_mut().enumerate() {
            self.update(&mut layer.weights, &grads.weights[i], i, lr, grad_scale);
            self.update(&mut layer.bias, &grads.biases[i], n + i, lr, grad_scale);
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], slot: usize, lr: f64, grad_scale: f64) {
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g * grad_scale;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                let m = &mut self.first[slot];
                let v = &mut self.second[slot];
                for i in 0..params.len() {
                    let g = grads[i] * grad_scale;
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                    params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::GaussianModel;

    fn quick(steps: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 64,
            learning_rate: 3e-3,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_steps_is_identity() {
        let data = PointCloudDataset::two_moons(200, 0.05, 0).unwrap();
        let sched = VarianceSchedule::default_linear(8).unwrap();
        let cfg = quick(0, 3);
        let out = train_denoiser(&data, &sched, &cfg, &[16]).unwrap();
        let mut rng = NoiseSource::new(3);
        let fresh = MlpDenoiser::init(2, &[16], 8, &mut rng).unwrap();
        assert_eq!(out.model, fresh);
        assert!(out.losses.is_empty());
        let tuned = fine_tune(&fresh, &data, &sched, &cfg).unwrap();
        assert_eq!(tuned.model, fresh);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let data = PointCloudDataset::two_moons(300, 0.05, 0).unwrap();
        let sched = VarianceSchedule::default_linear(8).unwrap();
        let a = train_denoiser(&data, &sched, &quick(50, 9), &[16, 16]).unwrap();
        let b = train_denoiser(&data, &sched, &quick(50, 9), &[16, 16]).unwrap();
        let bits = |m: &MlpDenoiser| m.parameters().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.model), bits(&b.model));
        let c = train_denoiser(&data, &sched, &quick(50, 10), &[16, 16]).unwrap();
        assert_ne!(bits(&a.model), bits(&c.model));
    }

    #[test]
    fn loss_decreases() {
        let data = PointCloudDataset::two_moons(1000, 0.05, 0).unwrap();
        let sched = VarianceSchedule::default_linear(16).unwrap();
        let out = train_denoiser(&data, &sched, &quick(600, 1), &[32, 32]).unwrap();
        assert!(out.final_loss().unwrap() < out.losses[0]);
    }

    #[test]
    fn single_point_recovers_the_point() {
        let point = vec![0.8, -0.6];
        let data = PointCloudDataset::single_point(point.clone(), 64).unwrap();
        let sched = VarianceSchedule::default_linear(8).unwrap();
        let cfg = TrainConfig {
            steps: 3000,
            batch_size: 64,
            learning_rate: 3e-3,
            seed: 5,
            ..TrainConfig::default()
        };
        let model = train_denoiser(&data, &sched, &cfg, &[32, 32]).unwrap().model;
        // oracle: a near-degenerate Gaussian at the point
        let oracle = GaussianModel::new(point.clone(), crate::analytic::Covariance::Isotropic(1e-4)).unwrap();
        let ab = sched.alpha_bar(1);
        let mut rng = NoiseSource::new(77);
        for _ in 0..50 {
            let z = rng.normal_vec(2);
            let xt = forward_diffuse_at(&point, ab, &z);
            let e = model.forward(&xt, 1).unwrap();
            let x0: Vec<f64> = (0..2).map(|i| (xt[i] - (1.0 - ab).sqrt() * e[i]) / ab.sqrt()).collect();
            let e_star = oracle.epsilon_at(&xt, ab).unwrap();
            let x0_star: Vec<f64> = (0..2)
                .map(|i| (xt[i] - (1.0 - ab).sqrt() * e_star[i]) / ab.sqrt())
                .collect();
            for i in 0..2 {
                assert!((x0[i] - point[i]).abs() < 0.1, "x0 {x0:?}");
                assert!((x0_star[i] - point[i]).abs() < 0.01);
            }
        }
    }

    #[test]
    fn fine_tune_on_same_data_is_stable() {
        let data = PointCloudDataset::two_moons(1000, 0.05, 0).unwrap();
        let sched = VarianceSchedule::default_linear(16).unwrap();
        let base = train_denoiser(&data, &sched, &quick(800, 1), &[32, 32]).unwrap();
        let tuned = fine_tune(&base.model, &data, &sched, &quick(400, 2)).unwrap();
        let before = base.final_loss().unwrap();
        let after = tuned.final_loss().unwrap();
        assert!(after <= before * 1.10, "before {before}, after {after}");
    }

    #[test]
    fn rejects_bad_config_and_divergence() {
        let data = PointCloudDataset::two_moons(100, 0.05, 0).unwrap();
        let sched = VarianceSchedule::default_linear(8).unwrap();
        let mut cfg = quick(10, 0);
        cfg.learning_rate = 0.0;
        assert!(train_denoiser(&data, &sched, &cfg, &[8]).is_err());
        let cfg = TrainConfig {
            steps: 200,
            batch_size: 8,
            learning_rate: 1e6,
            optimizer: Optimizer::Sgd,
            seed: 0,
        };
        assert!(matches!(
            train_denoiser(&data, &sched, &cfg, &[8]),
            Err(Error::Diverged { .. })
        ));
    }
}
