use crate::error::{Error, Result};
use crate::rng::NoiseSource;

/// A named set of equal-dimension points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudDataset {
    name: String,
    points: Vec<Vec<f64>>,
}

impl PointCloudDataset {
    pub fn new(name: impl Into<String>, points: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::InvalidArgument("dataset must not be empty".into()));
        };
        let d = first.len();
        if d == 0 || points.iter().any(|p| p.len() != d) {
            return Err(Error::InvalidArgument(
                "dataset points must share a positive dimension".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            points,
        })
    }

    /// Two interleaved half circles with Gaussian jitter, centered on the origin.
    pub fn two_moons(n: usize, noise: f64, seed: u64) -> Result<Self> {
        let mut rng = NoiseSource::new(seed);
        let outer = n.div_ceil(2);
        let points = (0..n)
            .map(|i| {
                let theta = rng.uniform(0.0, std::f64::consts::PI);
                let (x, y) = if i < outer {
                    (theta.cos(), theta.sin())
                } else {
                    (1.0 - theta.cos(), 0.5 - theta.sin())
                };
                vec![x - 0.5 + noise * rng.normal(), y - 0.25 + noise * rng.normal()]
            })
            .collect();
        Self::new("two_moons", points)
    }

    /// Points on a circle of `radius` with radial jitter.
    pub fn ring(n: usize, radius: f64, noise: f64, seed: u64) -> Result<Self> {
        let mut rng = NoiseSource::new(seed);
        let points = (0..n)
            .map(|_| {
                let a = rng.uniform(0.0, std::f64::consts::TAU);
                let r = radius + noise * rng.normal();
                vec![r * a.cos(), r * a.sin()]
            })
            .collect();
        Self::new("ring", points)
    }

    /// `n` copies of one point.
    pub fn single_point(point: Vec<f64>, n: usize) -> Result<Self> {
        Self::new("single_point", vec![point; n.max(1)])
    }

    /// Every point moved by `delta`.
    pub fn shifted(&self, delta: &[f64]) -> Result<Self> {
        if delta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: delta.len(),
            });
        }
        let points = self
            .points
            .iter()
            .map(|p| p.iter().zip(delta).map(|(a, b)| a + b).collect())
            .collect();
        Self::new(format!("{}_shifted", self.name), points)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for p in &self.points {
            for (a, b) in m.iter_mut().zip(p) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.len() as f64);
        m
    }
}
