//! Inline model specifications such as `gaussian: mean=[0,0] cov=I`.
//!
//! Grammar:
//!
//! ```text
//! gaussian: mean=[m1,..] cov=(I | <variance> | [[..],..])
//! gmm: w=<weight> mean=[..] cov=..; w=.. mean=.. cov=..; ...
//! mlp: <path to DSMLP1 file>
//! grid: <path to DSGRID1 file>
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::analytic::{AnalyticModel, AnalyticPredictor, Covariance, GaussianModel, GmmModel, GridPredictor, Mixture};
use crate::error::{Error, Result};
use crate::mlp::MlpDenoiser;
use crate::predictor::SharedPredictor;
use crate::schedule::VarianceSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Covariance,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Gaussian { mean: Vec<f64>, cov: Covariance },
    Gmm(Vec<ComponentSpec>),
    Mlp(PathBuf),
    Grid(PathBuf),
}

impl ModelSpec {
    pub fn is_analytic(&self) -> bool {
        matches!(self, ModelSpec::Gaussian { .. } | ModelSpec::Gmm(_))
    }

    /// The closed-form model, if this spec describes one.
    pub fn analytic_model(&self) -> Result<Option<AnalyticModel>> {
        Ok(match self {
            ModelSpec::Gaussian { mean, cov } => {
                Some(AnalyticModel::Gaussian(GaussianModel::new(mean.clone(), cov.clone())?))
            }
            ModelSpec::Gmm(parts) => {
                let parts = parts
                    .iter()
                    .map(|c| Ok((c.weight, GaussianModel::new(c.mean.clone(), c.cov.clone())?)))
                    .collect::<Result<Vec<_>>>()?;
                Some(AnalyticModel::Gmm(GmmModel::new(Mixture::normalized(parts)?)))
            }
            ModelSpec::Mlp(_) | ModelSpec::Grid(_) => None,
        })
    }

    /// Instantiates the predictor; relative file paths resolve against `base_dir`.
    pub fn build(&self, sched: &Arc<VarianceSchedule>, base_dir: &Path) -> Result<SharedPredictor> {
        let pred: SharedPredictor = match self {
            ModelSpec::Mlp(p) => Arc::new(MlpDenoiser::load(&base_dir.join(p))?),
            ModelSpec::Grid(p) => Arc::new(GridPredictor::load(&base_dir.join(p))?),
            _ => {
                let model = self.analytic_model()?.expect("analytic spec");
                Arc::new(AnalyticPredictor::new(model, sched.clone()))
            }
        };
        if pred.num_steps() != sched.num_steps() {
            return Err(Error::Config(format!(
                "model `{self}` was built for {} steps but the schedule has {}",
                pred.num_steps(),
                sched.num_steps()
            )));
        }
        Ok(pred)
    }
}

fn write_list(f: &mut fmt::Formatter<'_>, v: &[f64]) -> fmt::Result {
    write!(f, "[")?;
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            write!(f, ",")?;
        }
        write!(f, "{x}")?;
    }
    write!(f, "]")
}

fn write_cov(f: &mut fmt::Formatter<'_>, cov: &Covariance) -> fmt::Result {
    match cov {
        Covariance::Isotropic(v) if *v == 1.0 => write!(f, "I"),
        Covariance::Isotropic(v) => write!(f, "{v}"),
        Covariance::Full(rows) => {
            write!(f, "[")?;
            for (i, r) in rows.iter().enumerate() {
                if i > 0 {
                    write!(f, ",")?;
                }
                write_list(f, r)?;
            }
            write!(f, "]")
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Gaussian { mean, cov } => {
                write!(f, "gaussian: mean=")?;
                write_list(f, mean)?;
                write!(f, " cov=")?;
                write_cov(f, cov)
            }
            ModelSpec::Gmm(parts) => {
                write!(f, "gmm: ")?;
                for (i, c) in parts.iter().enumerate() {
                    if i > 0 {
                        write!(f, "; ")?;
                    }
                    write!(f, "w={} mean=", c.weight)?;
                    write_list(f, &c.mean)?;
                    write!(f, " cov=")?;
                    write_cov(f, &c.cov)?;
                }
                Ok(())
            }
            ModelSpec::Mlp(p) => write!(f, "mlp: {}", p.display()),
            ModelSpec::Grid(p) => write!(f, "grid: {}", p.display()),
        }
    }
}

fn spec_err(msg: impl Into<String>) -> Error {
    Error::Config(format!("model spec: {}", msg.into()))
}

/// Splits on `sep` outside brackets.
fn split_top(s: &str, sep: impl Fn(char) -> bool) -> Result<Vec<&str>> {
    let mut parts = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, c) in s.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => {
                depth -= 1;
                if depth < 0 {
                    return Err(spec_err(format!("unbalanced `]` in `{s}`")));
                }
            }
            c if depth == 0 && sep(c) => {
                parts.push(&s[start..i]);
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(spec_err(format!("unbalanced `[` in `{s}`")));
    }
    parts.push(&s[start..]);
    Ok(parts.into_iter().map(str::trim).filter(|p| !p.is_empty()).collect())
}

fn strip_brackets(s: &str) -> Result<&str> {
    s.trim()
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| spec_err(format!("expected a bracketed list, got `{s}`")))
}

fn parse_number(s: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| spec_err(format!("bad number `{s}`")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(spec_err(format!("non-finite number `{s}`")))
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    split_top(strip_brackets(s)?, |c| c == ',')?
        .into_iter()
        .map(parse_number)
        .collect()
}

fn parse_cov(s: &str) -> Result<Covariance> {
    let s = s.trim();
    if s == "I" {
        Ok(Covariance::Isotropic(1.0))
    } else if s.starts_with("[[") {
        let rows = split_top(strip_brackets(s)?, |c| c == ',')?
            .into_iter()
            .map(parse_list)
            .collect::<Result<_>>()?;
        Ok(Covariance::Full(rows))
    } else {
        Ok(Covariance::Isotropic(parse_number(s)?))
    }
}

fn parse_fields<'a>(s: &'a str, allowed: &[&str]) -> Result<Vec<(&'a str, &'a str)>> {
    let mut fields: Vec<(&str, &str)> = Vec::new();
    for token in split_top(s, char::is_whitespace)? {
        let (k, v) = token
            .split_once('=')
            .ok_or_else(|| spec_err(format!("expected key=value, got `{token}`")))?;
        if !allowed.contains(&k) {
            return Err(spec_err(format!("unknown key `{k}`")));
        }
        if fields.iter().any(|(seen, _)| *seen == k) {
            return Err(spec_err(format!("duplicate key `{k}`")));
        }
        fields.push((k, v));
    }
    Ok(fields)
}

fn field<'a>(fields: &[(&str, &'a str)], key: &str) -> Option<&'a str> {
    fields.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
}

fn parse_component(s: &str, weighted: bool) -> Result<(Option<f64>, Vec<f64>, Covariance)> {
    let allowed: &[&str] = if weighted {
        &["w", "mean", "cov"]
    } else {
        &["mean", "cov"]
    };
    let fields = parse_fields(s, allowed)?;
    let mean = parse_list(field(&fields, "mean").ok_or_else(|| spec_err("missing `mean`"))?)?;
    let cov = field(&fields, "cov")
        .map(parse_cov)
        .transpose()?
        .unwrap_or(Covariance::Isotropic(1.0));
    let w = field(&fields, "w").map(parse_number).transpose()?;
    Ok((w, mean, cov))
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| spec_err(format!("expected `<kind>: ...`, got `{s}`")))?;
        let rest = rest.trim();
        match kind.trim().to_ascii_lowercase().as_str() {
            "gaussian" => {
                let (_, mean, cov) = parse_component(rest, false)?;
                Ok(ModelSpec::Gaussian { mean, cov })
            }
            "gmm" => {
                let parts = split_top(rest, |c| c == ';')?
                    .into_iter()
                    .map(|p| parse_component(p, true))
                    .collect::<Result<Vec<_>>>()?;
                if parts.is_empty() {
                    return Err(spec_err("gmm needs at least one component"));
                }
                let equal = 1.0 / parts.len() as f64;
                if parts.iter().any(|p| p.0.is_some()) && parts.iter().any(|p| p.0.is_none()) {
                    return Err(spec_err("give weights for all gmm components or for none"));
                }
                Ok(ModelSpec::Gmm(
                    parts
                        .into_iter()
                        .map(|(w, mean, cov)| ComponentSpec {
                            weight: w.unwrap_or(equal),
                            mean,
                            cov,
                        })
                        .collect(),
                ))
            }
            "mlp" | "grid" if rest.is_empty() => Err(spec_err(format!("`{kind}` needs a file path"))),
            "mlp" => Ok(ModelSpec::Mlp(rest.into())),
            "grid" => Ok(ModelSpec::Grid(rest.into())),
            other => Err(spec_err(format!("unknown model kind `{other}`"))),
        }
    }
}

impl Serialize for ModelSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModelSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
