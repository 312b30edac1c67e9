//! Config-driven experiments: build a triad from a TOML file, sweep the
//! guidance strength across samplers, train toy networks, and write CSV
//! tables and SVG scatter plots.
//!
//! A minimal config:
//!
//! ```toml
//! name = "gaussian-shift"
//! samplers = ["euler", "ddim"]
//! n_samples = 2000
//! oracle = "gaussian: mean=[-1,3] cov=I"
//!
//! [triad]
//! base = "gaussian: mean=[0,0] cov=I"
//! adapted = "gaussian: mean=[1,0] cov=I"
//! target = "gaussian: mean=[-2,3] cov=I"
//! ```

mod config;
mod pipeline;
mod report;
mod spec;
mod sweep;

use std::path::Path;

pub use config::{
    BuiltTriad, ExperimentConfig, GuidanceConfig, ScheduleConfig, SourceConfig, SweepConfig, TrainingConfig,
    TriadConfig, OUTPUT_DIR_ENV,
};
pub use pipeline::{run_training_pipeline, TrainedModels, MODEL_FILES};
pub use report::{
    csv_string, emit_csv, emit_svg_scatter, format_significant, read_samples_csv, samples_csv_string,
    svg_scatter_string, write_samples_csv, SvgStyle, CSV_HEADER,
};
pub use spec::{ComponentSpec, ModelSpec};
pub use sweep::{
    guided_label, oracle_label, sample_guided, sweep_lambda, ExperimentResult, LabeledBatch, SweepRow,
    ORACLE_SEED_OFFSET,
};

use crate::error::Result;
use crate::metrics::SampleBatch;

/// Points per batch drawn in sweep scatter plots.
pub const PLOT_POINTS: usize = 2000;

fn head(batch: &SampleBatch) -> Result<SampleBatch> {
    let n = batch.len().min(PLOT_POINTS);
    SampleBatch::with_provenance(batch.samples()[..n].to_vec(), batch.provenance.clone())
}

/// Runs the sweep and writes `<name>.csv` plus, for 2-D data, one
/// `<name>_<sampler>.svg` per sampler showing the oracle, the lowest swept
/// strength and the best-scoring strength.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentResult> {
    let mut res = sweep_lambda(cfg)?;
    let csv = out_dir.join(format!("{}.csv", cfg.name));
    emit_csv(&res, &csv)?;
    res.artifacts.push(csv);

    let mut samplers: Vec<_> = res.rows.iter().map(|r| r.sampler).collect();
    samplers.dedup();
    for sampler in samplers {
        let first = res.rows.iter().find(|r| r.sampler == sampler).expect("row per sampler");
        let best = res.best_row(sampler).expect("row per sampler");
        let mut labels = vec![oracle_label(sampler), guided_label(sampler, first.lambda)];
        if best.lambda != first.lambda {
            labels.push(guided_label(sampler, best.lambda));
        }
        let batches = labels
            .iter()
            .map(|l| head(res.batch(l).expect("batch per label")))
            .collect::<Result<Vec<_>>>()?;
        if batches[0].dim() != 2 {
            continue;
        }
        let name = sampler.to_string().replace(['(', ')', '='], "_");
        let path = out_dir.join(format!("{}_{}.svg", cfg.name, name.trim_end_matches('_')));
        emit_svg_scatter(
            &batches,
            &path,
            &SvgStyle {
                labels,
                ..SvgStyle::default()
            },
        )?;
        res.artifacts.push(path);
    }
    Ok(res)
}
