//! A small tanh MLP noise predictor with hand-written backpropagation.
//!
//! Input is the data vector concatenated with a sinusoidal embedding of the
//! step index; hidden layers use tanh and the output layer is linear.

mod data;
mod io;
mod train;

pub use data::PointCloudDataset;
pub use io::MLP_MAGIC;
pub use train::{fine_tune, train_denoiser, Optimizer, TrainConfig, TrainOutcome};

use crate::error::{check_dim, Error, Result};
use crate::predictor::{Condition, NoisePredictor};
use crate::rng::NoiseSource;

/// Frequencies of the step embedding; each contributes a sin and a cos feature.
pub const EMBED_FREQS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];
pub const EMBED_WIDTH: usize = 2 * EMBED_FREQS.len();

/// Sinusoidal features of `t / T`, phase `pi * f * t / T` so the map is
/// injective over `0..=T` for the lowest frequency.
pub fn time_embedding(t: usize, num_steps: usize) -> [f64; EMBED_WIDTH] {
    let mut out = [0.0; EMBED_WIDTH];
    let u = t as f64 / num_steps as f64;
    for (j, f) in EMBED_FREQS.iter().enumerate() {
        let phase = std::f64::consts::PI * f * u;
        out[2 * j] = phase.sin();
        out[2 * j + 1] = phase.cos();
    }
    out
}

/// Dense layer, weights stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, input: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.bias))
        {
            *o = b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpDenoiser {
    data_dim: usize,
    num_steps: usize,
    layers: Vec<DenseLayer>,
}

/// Per-parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(m: &MlpDenoiser) -> Self {
        Self {
            weights: m.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: m.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }

    fn clear(&mut self) {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .for_each(|v| v.fill(0.0));
    }
}

/// Reusable activation buffers for forward and backward passes.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    // activations[0] is the network input, activations[i + 1] the output of layer i
    activations: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(m: &MlpDenoiser) -> Self {
        let mut activations = vec![vec![0.0; m.input_width()]];
        activations.extend(m.layers.iter().map(|l| vec![0.0; l.outputs]));
        let widest = activations.iter().map(Vec::len).max().unwrap_or(0);
        Self {
            activations,
            delta: vec![0.0; widest],
            delta_next: vec![0.0; widest],
        }
    }
}

impl MlpDenoiser {
    /// Network with every weight and bias zero. `hidden` lists hidden widths.
    pub fn zeros(data_dim: usize, hidden: &[usize], num_steps: usize) -> Result<Self> {
        if data_dim == 0 {
            return Err(Error::InvalidArgument("data dimension must be >= 1".into()));
        }
        if num_steps == 0 {
            return Err(Error::InvalidArgument("network needs T >= 1".into()));
        }
        if hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden widths must be >= 1".into()));
        }
        let mut widths = vec![data_dim + EMBED_WIDTH];
        widths.extend_from_slice(hidden);
        widths.push(data_dim);
        let layers = widths.windows(2).map(|w| DenseLayer::zeros(w[0], w[1])).collect();
        Ok(Self {
            data_dim,
            num_steps,
            layers,
        })
    }

    /// Weights and biases uniform in `+-1/sqrt(fan_in)`.
    pub fn init(data_dim: usize, hidden: &[usize], num_steps: usize, rng: &mut NoiseSource) -> Result<Self> {
        let mut m = Self::zeros(data_dim, hidden, num_steps)?;
        for layer in &mut m.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = rng.uniform(-bound, bound);
            }
        }
        Ok(m)
    }

    /// Builds a network from explicit layers, checking that shapes chain.
    pub fn from_layers(data_dim: usize, num_steps: usize, layers: Vec<DenseLayer>) -> Result<Self> {
        let bad = |msg: String| Err(Error::Format { kind: "mlp", msg });
        if layers.is_empty() {
            return bad("network needs at least one layer".into());
        }
        if layers[0].inputs != data_dim + EMBED_WIDTH {
            return bad(format!(
                "first layer takes {} inputs, expected {}",
                layers[0].inputs,
                data_dim + EMBED_WIDTH
            ));
        }
        if layers.last().map(|l| l.outputs) != Some(data_dim) {
            return bad(format!("last layer must output {data_dim} values"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return bad(format!("layer {i} has inconsistent parameter counts"));
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return bad(format!("layer {i} input width does not match previous output"));
            }
        }
        if num_steps == 0 {
            return bad("network needs T >= 1".into());
        }
        Ok(Self {
            data_dim,
            num_steps,
            layers,
        })
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn input_width(&self) -> usize {
        self.data_dim + EMBED_WIDTH
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.outputs).collect()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    fn load_input(&self, ws: &mut Workspace, x: &[f64], t: usize) {
        let input = &mut ws.activations[0];
        input[..self.data_dim].copy_from_slice(x);
        input[self.data_dim..].copy_from_slice(&time_embedding(t, self.num_steps));
    }

    fn forward_into(&self, ws: &mut Workspace, x: &[f64], t: usize) {
        self.load_input(ws, x, t);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (before, after) = ws.activations.split_at_mut(i + 1);
            let out = &mut after[0];
            layer.apply(&before[i], out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
    }

    /// Accumulates gradients of `0.5 * |f(x, t) - target|^2` into `grads`
    /// and returns `|f(x, t) - target|^2`.
    pub(crate) fn accumulate_gradient(
        &self,
        ws: &mut Workspace,
        grads: &mut Gradients,
        x: &[f64],
        t: usize,
        target: &[f64],
    ) -> f64 {
        self.forward_into(ws, x, t);
        let n = self.layers.len();
        let out = &ws.activations[n];
        let mut sq = 0.0;
        for (k, (o, y)) in out.iter().zip(target).enumerate() {
            let r = o - y;
            ws.delta[k] = r;
            sq += r * r;
        }
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let input = &ws.activations[i];
            let delta = &ws.delta[..layer.outputs];
            let gw = &mut grads.weights[i];
            let gb = &mut grads.biases[i];
            for (o, d) in delta.iter().enumerate() {
                gb[o] += d;
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if i == 0 {
                break;
            }
            // back through the weights, then through tanh of layer i - 1
            let next = &mut ws.delta_next[..layer.inputs];
            next.fill(0.0);
            for (o, d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (acc, w) in next.iter_mut().zip(row) {
                    *acc += d * w;
                }
            }
            for (acc, a) in next.iter_mut().zip(input) {
                *acc *= 1.0 - a * a;
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_next);
        }
        sq
    }

    pub fn forward(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        check_dim(self.data_dim, x.len())?;
        let mut ws = Workspace::new(self);
        self.forward_into(&mut ws, x, t);
        Ok(ws.activations.pop().unwrap_or_default())
    }

    /// Exact gradients of `0.5 * |f(x, t) - target|^2` with respect to every
    /// weight and bias.
    pub fn gradient(&self, x: &[f64], t: usize, target: &[f64]) -> Result<Gradients> {
        check_dim(self.data_dim, x.len())?;
        check_dim(self.data_dim, target.len())?;
        let mut ws = Workspace::new(self);
        let mut grads = Gradients::zeros_like(self);
        self.accumulate_gradient(&mut ws, &mut grads, x, t, target);
        Ok(grads)
    }

    pub(crate) fn zero_gradients(&self) -> Gradients {
        Gradients::zeros_like(self)
    }
}

pub(crate) fn clear_gradients(g: &mut Gradients) {
    g.clear();
}

/// Forward pass; see [`MlpDenoiser::forward`].
pub fn mlp_forward(m: &MlpDenoiser, x: &[f64], t: usize) -> Result<Vec<f64>> {
    m.forward(x, t)
}

/// Backpropagated gradients; see [`MlpDenoiser::gradient`].
pub fn mlp_gradient(m: &MlpDenoiser, x: &[f64], t: usize, target: &[f64]) -> Result<Gradients> {
    m.gradient(x, t, target)
}

impl NoisePredictor for MlpDenoiser {
    fn dim(&self) -> usize {
        self.data_dim
    }

    fn num_steps(&self) -> usize {
        self.num_steps
    }

    fn predict(&self, x: &[f64], t: usize, _cond: &Condition) -> Result<Vec<f64>> {
        if t == 0 || t > self.num_steps {
            return Err(Error::StepOutOfRange {
                t,
                num_steps: self.num_steps,
            });
        }
        self.forward(x, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed 2-4-2 network (data dim 2, one hidden layer of width 4).
    fn fixture() -> MlpDenoiser {
        let mut m = MlpDenoiser::zeros(2, &[4], 8).unwrap();
        let l0 = &mut m.layers_mut()[0];
        for (i, w) in l0.weights.iter_mut().enumerate() {
            *w = ((i * 7 % 11) as f64 - 5.0) / 10.0;
        }
        l0.bias.copy_from_slice(&[0.1, -0.2, 0.3, 0.0]);
        let l1 = &mut m.layers_mut()[1];
        l1.weights
            .copy_from_slice(&[0.5, -1.0, 0.25, 2.0, -0.75, 0.1, 1.5, -0.3]);
        l1.bias.copy_from_slice(&[0.05, -0.05]);
        m
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = MlpDenoiser::zeros(2, &[8, 8], 16).unwrap();
        assert_eq!(m.forward(&[3.0, -1.0], 5).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_wiring() {
        let mut m = MlpDenoiser::zeros(2, &[], 16).unwrap();
        let l = &mut m.layers_mut()[0];
        l.weights[0] = 1.0;
        l.weights[l.inputs + 1] = 1.0;
        assert_eq!(m.forward(&[0.7, -2.5], 3).unwrap(), vec![0.7, -2.5]);
    }

    #[test]
    fn fixture_matches_straight_line_evaluation() {
        let m = fixture();
        let x = [1.0, 0.0];
        let t = 1usize;
        // independent evaluation, written out without the layer machinery
        let pi = std::f64::consts::PI;
        let u = t as f64 / 8.0;
        let input = [
            x[0],
            x[1],
            (pi * u).sin(),
            (pi * u).cos(),
            (2.0 * pi * u).sin(),
            (2.0 * pi * u).cos(),
            (4.0 * pi * u).sin(),
            (4.0 * pi * u).cos(),
            (8.0 * pi * u).sin(),
            (8.0 * pi * u).cos(),
        ];
        let w0 = |r: usize, c: usize| (((r * 10 + c) * 7 % 11) as f64 - 5.0) / 10.0;
        let b0 = [0.1, -0.2, 0.3, 0.0];
        let mut h = [0.0; 4];
        for r in 0..4 {
            let mut s = b0[r];
            for (c, v) in input.iter().enumerate() {
                s += w0(r, c) * v;
            }
            h[r] = s.tanh();
        }
        let w1 = [[0.5, -1.0, 0.25, 2.0], [-0.75, 0.1, 1.5, -0.3]];
        let b1 = [0.05, -0.05];
        let want: Vec<f64> = (0..2)
            .map(|r| b1[r] + (0..4).map(|c| w1[r][c] * h[c]).sum::<f64>())
            .collect();
        let got = m.forward(&x, t).unwrap();
        for i in 0..2 {
            assert!((got[i] - want[i]).abs() < 1e-14, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn gradient_vanishes_at_target() {
        let m = fixture();
        let out = m.forward(&[0.3, 0.4], 5).unwrap();
        let g = m.gradient(&[0.3, 0.4], 5, &out).unwrap();
        assert!(g.flatten().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scalar_linear_gradient() {
        // d = 1, no hidden layer: output = w x + (embedding weights, zero) + b
        let mut m = MlpDenoiser::zeros(1, &[], 4).unwrap();
        let w = 1.7;
        m.layers_mut()[0].weights[0] = w;
        let (x, target) = (0.6, -0.4);
        let g = m.gradient(&[x], 2, &[target]).unwrap();
        assert!((g.weights[0][0] - (w * x - target) * x).abs() < 1e-15);
        assert!((g.biases[0][0] - (w * x - target)).abs() < 1e-15);
    }

    #[test]
    fn init_outputs_are_bounded() {
        let mut rng = NoiseSource::new(4);
        let m = MlpDenoiser::init(2, &[64, 64], 64, &mut rng).unwrap();
        for _ in 0..500 {
            let r = rng.uniform(0.0, 5.0);
            let a = rng.uniform(0.0, std::f64::consts::TAU);
            let t = rng.uniform_int(1, 64);
            let y = m.forward(&[r * a.cos(), r * a.sin()], t).unwrap();
            assert!(y.iter().all(|v| v.is_finite() && v.abs() < 10.0));
        }
    }

    #[test]
    fn shape_errors() {
        let m = fixture();
        assert!(m.forward(&[1.0], 1).is_err());
        assert!(m.gradient(&[1.0, 0.0], 1, &[0.0]).is_err());
        assert!(m.predict(&[1.0, 0.0], 9, &Condition::none()).is_err());
        let bad = vec![DenseLayer::zeros(10, 4), DenseLayer::zeros(5, 2)];
        assert!(MlpDenoiser::from_layers(2, 8, bad).is_err());
    }
}
