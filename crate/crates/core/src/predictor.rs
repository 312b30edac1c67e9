//! The noise-predictor abstraction shared by analytic, tabulated, and
//! trained models.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Opaque conditioning token. Predictors that do not recognize a token
/// behave as if none was given.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Condition(Option<String>);

impl Condition {
    pub const fn none() -> Self {
        Condition(None)
    }

    pub fn token(token: impl Into<String>) -> Self {
        Condition(Some(token.into()))
    }

    pub fn as_token(&self) -> Option<&str> {
        self.0.as_deref()
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0 {
            Some(t) => f.write_str(t),
            None => f.write_str("-"),
        }
    }
}

/// Maps `(x_t, t, condition)` to a noise estimate of the same dimension.
///
/// Implementations are bound to one schedule length and must be pure:
/// identical inputs give bitwise-identical outputs.
pub trait NoisePredictor: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Number of diffusion steps `T` of the schedule the predictor is bound to.
    fn num_steps(&self) -> usize;

    fn predict(&self, x: &[f64], t: usize, cond: &Condition) -> Result<Vec<f64>>;
}

pub type SharedPredictor = Arc<dyn NoisePredictor>;

impl<P: NoisePredictor + ?Sized> NoisePredictor for Arc<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn num_steps(&self) -> usize {
        (**self).num_steps()
    }

    fn predict(&self, x: &[f64], t: usize, cond: &Condition) -> Result<Vec<f64>> {
        (**self).predict(x, t, cond)
    }
}
