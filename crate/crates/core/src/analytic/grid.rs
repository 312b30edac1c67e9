//! Tabulated noise predictor with multilinear interpolation, and its
//! `DSGRID1` text format.
//!
//! ```text
//! DSGRID1
//! dims <d>
//! resolution <r>
//! steps <T>
//! lo <d reals>
//! hi <d reals>
//! t 1
//! <d reals>            # one line per node, row-major (last axis fastest)
//! ...
//!
//! t 2
//! ...
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{check_dim, Error, Result};
use crate::predictor::{Condition, NoisePredictor};

pub const GRID_MAGIC: &str = "DSGRID1";

#[derive(Debug, Clone, PartialEq)]
pub struct GridPredictor {
    lo: Vec<f64>,
    hi: Vec<f64>,
    resolution: usize,
    num_steps: usize,
    // [(t - 1) * nodes + node] * dim + k
    table: Vec<f64>,
}

impl GridPredictor {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, resolution: usize, num_steps: usize, table: Vec<f64>) -> Result<Self> {
        let d = lo.len();
        if d == 0 {
            return grid_err("grid needs at least one dimension");
        }
        check_dim(d, hi.len())?;
        if resolution < 2 {
            return grid_err(format!("resolution {resolution} < 2"));
        }
        if num_steps == 0 {
            return grid_err("grid must cover at least one step");
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return grid_err("every axis needs lo < hi");
        }
        let nodes = resolution.checked_pow(d as u32).ok_or_else(|| Error::Format {
            kind: "grid",
            msg: "node count overflows".into(),
        })?;
        let want = nodes * d * num_steps;
        if table.len() != want {
            return grid_err(format!("table has {} values, expected {want}", table.len()));
        }
        Ok(Self {
            lo,
            hi,
            resolution,
            num_steps,
            table,
        })
    }

    /// Samples `pred` at every node of the box for every step.
    pub fn tabulate(
        pred: &dyn NoisePredictor,
        lo: Vec<f64>,
        hi: Vec<f64>,
        resolution: usize,
        cond: &Condition,
    ) -> Result<Self> {
        let d = pred.dim();
        check_dim(d, lo.len())?;
        check_dim(d, hi.len())?;
        if resolution < 2 {
            return grid_err(format!("resolution {resolution} < 2"));
        }
        let nodes = resolution.pow(d as u32);
        let mut table = Vec::with_capacity(nodes * d * pred.num_steps());
        let mut x = vec![0.0; d];
        for t in 1..=pred.num_steps() {
            for node in 0..nodes {
                node_coords(node, resolution, &lo, &hi, &mut x);
                table.extend(pred.predict(&x, t, cond)?);
            }
        }
        Self::new(lo, hi, resolution, pred.num_steps(), table)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lo, &self.hi)
    }

    fn nodes(&self) -> usize {
        self.resolution.pow(self.lo.len() as u32)
    }

    /// Stored value at flat node index `node`.
    pub fn node_value(&self, t: usize, node: usize) -> &[f64] {
        let d = self.lo.len();
        let start = ((t - 1) * self.nodes() + node) * d;
        &self.table[start..start + d]
    }

    /// Coordinates of flat node index `node`.
    pub fn node_position(&self, node: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.lo.len()];
        node_coords(node, self.resolution, &self.lo, &self.hi, &mut x);
        x
    }

    fn interpolate(&self, x: &[f64], t: usize) -> Vec<f64> {
        let d = self.lo.len();
        let r = self.resolution;
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for k in 0..d {
            let cells = (r - 1) as f64;
            let u = ((x[k] - self.lo[k]) / (self.hi[k] - self.lo[k])).clamp(0.0, 1.0) * cells;
            let i = (u.floor() as usize).min(r - 2);
            base[k] = i;
            frac[k] = u - i as f64;
        }
        let mut out = vec![0.0; d];
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut node = 0;
            for k in 0..d {
                let bit = (corner >> (d - 1 - k)) & 1;
                weight *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                node = node * r + base[k] + bit;
            }
            if weight == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(self.node_value(t, node)) {
                *o += weight * v;
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "{GRID_MAGIC}");
        let _ = writeln!(s, "dims {}", self.lo.len());
        let _ = writeln!(s, "resolution {}", self.resolution);
        let _ = writeln!(s, "steps {}", self.num_steps);
        let _ = writeln!(s, "lo {}", join(&self.lo));
        let _ = writeln!(s, "hi {}", join(&self.hi));
        for t in 1..=self.num_steps {
            if t > 1 {
                s.push('\n');
            }
            let _ = writeln!(s, "t {t}");
            for node in 0..self.nodes() {
                let _ = writeln!(s, "{}", join(self.node_value(t, node)));
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some(GRID_MAGIC) => {}
            other => return grid_err(format!("expected {GRID_MAGIC} header, found {other:?}")),
        }
        let d: usize = parse_one(&keyed(&mut lines, "dims")?)?;
        let resolution: usize = parse_one(&keyed(&mut lines, "resolution")?)?;
        let steps: usize = parse_one(&keyed(&mut lines, "steps")?)?;
        let lo = parse_reals(&keyed(&mut lines, "lo")?)?;
        let hi = parse_reals(&keyed(&mut lines, "hi")?)?;
        check_len(d, lo.len(), "lo")?;
        check_len(d, hi.len(), "hi")?;
        let nodes = resolution
            .checked_pow(d as u32)
            .ok_or_else(|| fmt_err("node count overflows".into()))?;
        let mut table = Vec::with_capacity(nodes * d * steps);
        for t in 1..=steps {
            let marker: Vec<String> = keyed(&mut lines, "t")?;
            if parse_one::<usize>(&marker)? != t {
                return grid_err(format!("timestep blocks out of order at t = {t}"));
            }
            for node in 0..nodes {
                let line = lines
                    .next()
                    .ok_or_else(|| fmt_err(format!("t = {t}: expected {nodes} nodes, found {node}")))?;
                let vals = parse_reals(&line.split_whitespace().map(String::from).collect::<Vec<_>>())?;
                check_len(d, vals.len(), "node")?;
                table.extend(vals);
            }
        }
        if let Some(extra) = lines.next() {
            return grid_err(format!("trailing data after last block: `{extra}`"));
        }
        Self::new(lo, hi, resolution, steps, table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

impl NoisePredictor for GridPredictor {
    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn num_steps(&self) -> usize {
        self.num_steps
    }

    fn predict(&self, x: &[f64], t: usize, _cond: &Condition) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        if t == 0 || t > self.num_steps {
            return Err(Error::StepOutOfRange {
                t,
                num_steps: self.num_steps,
            });
        }
        Ok(self.interpolate(x, t))
    }
}

/// Interpolated noise estimate at `x` for step `t`.
pub fn grid_predict(gp: &GridPredictor, x: &[f64], t: usize) -> Result<Vec<f64>> {
    gp.predict(x, t, &Condition::none())
}

fn node_coords(node: usize, r: usize, lo: &[f64], hi: &[f64], out: &mut [f64]) {
    let mut rest = node;
    for k in (0..lo.len()).rev() {
        let i = rest % r;
        rest /= r;
        out[k] = lo[k] + (hi[k] - lo[k]) * i as f64 / (r - 1) as f64;
    }
}

fn keyed<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<Vec<String>> {
    let line = lines.next().ok_or_else(|| fmt_err(format!("missing `{key}` line")))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(fmt_err(format!("expected `{key}`, found `{line}`")));
    }
    Ok(parts.map(String::from).collect())
}

fn fmt_err(msg: String) -> Error {
    Error::Format { kind: "grid", msg }
}

fn grid_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(fmt_err(msg.into()))
}

fn check_len(want: usize, got: usize, what: &str) -> Result<()> {
    if want == got {
        Ok(())
    } else {
        grid_err(format!("`{what}` has {got} values, expected {want}"))
    }
}

fn parse_one<T: std::str::FromStr>(parts: &[String]) -> Result<T> {
    match parts {
        [one] => one.parse().map_err(|_| fmt_err(format!("cannot parse `{one}`"))),
        _ => grid_err(format!("expected one value, found {parts:?}")),
    }
}

fn parse_reals(parts: &[String]) -> Result<Vec<f64>> {
    parts
        .iter()
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| fmt_err(format!("cannot parse `{p}` as a number")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{AnalyticPredictor, GaussianModel, GmmModel, Mixture};
    use crate::schedule::VarianceSchedule;
    use std::sync::Arc;

    #[test]
    fn one_dimensional_interpolation() {
        let g = GridPredictor::new(vec![0.0], vec![1.0], 2, 1, vec![0.0, 2.0]).unwrap();
        assert_eq!(grid_predict(&g, &[0.25], 1).unwrap(), vec![0.5]);
        assert_eq!(grid_predict(&g, &[1.0], 1).unwrap(), vec![2.0]);
        // clamped outside the box
        assert_eq!(grid_predict(&g, &[-3.0], 1).unwrap(), vec![0.0]);
        assert_eq!(grid_predict(&g, &[7.0], 1).unwrap(), vec![2.0]);
        assert!(grid_predict(&g, &[0.5], 2).is_err());
    }

    #[test]
    fn nodes_return_stored_values() {
        let sched = Arc::new(VarianceSchedule::default_linear(4).unwrap());
        let p = AnalyticPredictor::gaussian(GaussianModel::standard(vec![0.5, -0.5]).unwrap(), sched);
        let g = GridPredictor::tabulate(&p, vec![-2.0, -1.0], vec![2.0, 3.0], 5, &Condition::none()).unwrap();
        for t in 1..=4 {
            for node in 0..25 {
                let x = g.node_position(node);
                assert_eq!(grid_predict(&g, &x, t).unwrap(), g.node_value(t, node));
            }
        }
    }

    #[test]
    fn affine_predictor_is_reproduced_inside_cells() {
        let sched = Arc::new(VarianceSchedule::default_linear(8).unwrap());
        let p = AnalyticPredictor::gaussian(GaussianModel::standard(vec![1.0, 0.0]).unwrap(), sched);
        let g = GridPredictor::tabulate(&p, vec![-3.0, -3.0], vec![3.0, 3.0], 64, &Condition::none()).unwrap();
        let mut rng = crate::rng::NoiseSource::new(2);
        for _ in 0..200 {
            let x = [rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)];
            let t = rng.uniform_int(1, 8);
            let a = grid_predict(&g, &x, t).unwrap();
            let b = p.predict(&x, t, &Condition::none()).unwrap();
            // bilinear interpolation of an affine map has zero curvature error
            assert!(a.iter().zip(&b).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn error_shrinks_as_resolution_doubles() {
        let sched = Arc::new(VarianceSchedule::default_linear(4).unwrap());
        let mix = Mixture::new(vec![
            (0.5, GaussianModel::standard(vec![1.0, 0.0]).unwrap()),
            (0.5, GaussianModel::standard(vec![-1.0, 0.5]).unwrap()),
        ])
        .unwrap();
        let p = AnalyticPredictor::gmm(GmmModel::new(mix), sched);
        let probes: Vec<[f64; 2]> = {
            let mut rng = crate::rng::NoiseSource::new(9);
            (0..300)
                .map(|_| [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)])
                .collect()
        };
        let max_err = |res: usize| {
            let g = GridPredictor::tabulate(&p, vec![-2.0, -2.0], vec![2.0, 2.0], res, &Condition::none()).unwrap();
            let mut worst: f64 = 0.0;
            for x in &probes {
                let a = grid_predict(&g, x, 3).unwrap();
                let b = p.predict(x, 3, &Condition::none()).unwrap();
                worst = worst.max(a.iter().zip(&b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            }
            worst
        };
        let errs: Vec<f64> = [9, 17, 33].iter().map(|r| max_err(*r)).collect();
        for w in errs.windows(2) {
            assert!(w[1] / w[0] <= 0.35, "errors {errs:?}");
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let sched = Arc::new(VarianceSchedule::default_linear(3).unwrap());
        let p = AnalyticPredictor::gaussian(GaussianModel::standard(vec![0.1, 0.2]).unwrap(), sched);
        let g = GridPredictor::tabulate(&p, vec![-1.0, -1.0], vec![1.0, 1.0], 4, &Condition::none()).unwrap();
        let text = g.to_text();
        let back = GridPredictor::from_text(&text).unwrap();
        assert_eq!(g, back);
        assert_eq!(text, back.to_text());
    }

    #[test]
    fn malformed_tables_fail_at_load() {
        let good = "DSGRID1\ndims 1\nresolution 2\nsteps 1\nlo 0\nhi 1\nt 1\n0\n2\n";
        assert!(GridPredictor::from_text(good).is_ok());
        let short = "DSGRID1\ndims 1\nresolution 2\nsteps 1\nlo 0\nhi 1\nt 1\n0\n";
        assert!(GridPredictor::from_text(short).is_err());
        let wide = "DSGRID1\ndims 1\nresolution 2\nsteps 1\nlo 0\nhi 1\nt 1\n0 1\n2\n";
        assert!(GridPredictor::from_text(wide).is_err());
        assert!(GridPredictor::from_text("DSGRID2\n").is_err());
        let extra = format!("{good}5\n");
        assert!(GridPredictor::from_text(&extra).is_err());
    }
}
