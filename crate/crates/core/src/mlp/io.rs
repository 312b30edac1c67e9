//! `DSMLP1` model files.
//!
//! ```text
//! DSMLP1
//! data_dim <d>
//! steps <T>
//! embed <frequencies>
//! arch <input width> <hidden widths...> <d>
//! layer 0
//! w <inputs values>          # one line per output unit
//! b <outputs values>
//! layer 1
//! ...
//! ```
//!
//! Values use the shortest decimal form that parses back to the same bits.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::{DenseLayer, MlpDenoiser, EMBED_FREQS};

pub const MLP_MAGIC: &str = "DSMLP1";

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format {
        kind: "mlp",
        msg: msg.into(),
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

impl MlpDenoiser {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MLP_MAGIC}");
        let _ = writeln!(s, "data_dim {}", self.data_dim);
        let _ = writeln!(s, "steps {}", self.num_steps);
        let _ = writeln!(s, "embed {}", join(&EMBED_FREQS));
        let mut arch = vec![self.input_width()];
        arch.extend(self.layers.iter().map(|l| l.outputs));
        let arch: Vec<String> = arch.iter().map(ToString::to_string).collect();
        let _ = writeln!(s, "arch {}", arch.join(" "));
        for (i, l) in self.layers.iter().enumerate() {
            let _ = writeln!(s, "layer {i}");
            for row in l.weights.chunks_exact(l.inputs) {
                let _ = writeln!(s, "w {}", join(row));
            }
            let _ = writeln!(s, "b {}", join(&l.bias));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let mut next = |key: &str| -> Result<Vec<&str>> {
            let line = lines.next().ok_or_else(|| fmt_err(format!("missing `{key}` line")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(fmt_err(format!("expected `{key}`, found `{line}`")));
            }
            Ok(parts.collect())
        };
        if !next(MLP_MAGIC)?.is_empty() {
            return Err(fmt_err("unexpected data after header"));
        }
        let data_dim: usize = single(&next("data_dim")?)?;
        let steps: usize = single(&next("steps")?)?;
        let embed = reals(&next("embed")?)?;
        if embed != EMBED_FREQS {
            return Err(fmt_err(format!("unsupported embedding frequencies {embed:?}")));
        }
        let arch = next("arch")?
            .iter()
            .map(|v| v.parse::<usize>().map_err(|_| fmt_err(format!("bad width `{v}`"))))
            .collect::<Result<Vec<_>>>()?;
        if arch.len() < 2 {
            return Err(fmt_err("architecture needs at least input and output widths"));
        }
        let mut layers = Vec::with_capacity(arch.len() - 1);
        for (i, w) in arch.windows(2).enumerate() {
            let idx: usize = single(&next("layer")?)?;
            if idx != i {
                return Err(fmt_err(format!("layer blocks out of order at {i}")));
            }
            let (inputs, outputs) = (w[0], w[1]);
            let mut weights = Vec::with_capacity(inputs * outputs);
            for _ in 0..outputs {
                let row = reals(&next("w")?)?;
                if row.len() != inputs {
                    return Err(fmt_err(format!(
                        "layer {i}: weight row has {} values, expected {inputs}",
                        row.len()
                    )));
                }
                weights.extend(row);
            }
            let bias = reals(&next("b")?)?;
            layers.push(DenseLayer {
                inputs,
                outputs,
                weights,
                bias,
            });
        }
        if let Some(extra) = lines.next() {
            return Err(fmt_err(format!("trailing data: `{extra}`")));
        }
        MlpDenoiser::from_layers(data_dim, steps, layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn single<T: std::str::FromStr>(parts: &[&str]) -> Result<T> {
    match parts {
        [v] => v.parse().map_err(|_| fmt_err(format!("cannot parse `{v}`"))),
        _ => Err(fmt_err(format!("expected one value, found {parts:?}"))),
    }
}

fn reals(parts: &[&str]) -> Result<Vec<f64>> {
    parts
        .iter()
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| fmt_err(format!("cannot parse `{v}` as a number")))
        })
        .collect()
}
