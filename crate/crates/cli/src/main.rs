use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use ds_core::harness::{
    emit_svg_scatter, read_samples_csv, run_experiment, run_training_pipeline, sample_guided, write_samples_csv,
    ExperimentConfig, SvgStyle,
};
use ds_core::{diversity, energy_distance, run_sampler, Error, ProgressRule, RunSpec, SamplerKind, SharedPredictor};

/// Delta sampling experiments on toy diffusion models.
#[derive(Debug, Parser)]
#[command(name = "ds", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw guided samples from the configured triad.
    Sample {
        #[command(flatten)]
        run: RunArgs,
        /// Constant strength for every source instead of the configured schedules.
        #[arg(long)]
        lambda: Option<f64>,
        /// Also write the full trajectory of the first seed.
        #[arg(long)]
        record_trajectory: bool,
        /// Samples CSV path; defaults to `<output dir>/<name>_samples.csv`.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Sweep the guidance strength and write the CSV table and scatter plots.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train and save the base, adapted, target and oracle networks.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Energy distance between two sample files, and the diversity of each.
    Metrics { samples: PathBuf, reference: PathBuf },
    /// Scatter plot of one or more 2-D sample files.
    Plot {
        #[arg(required = true)]
        samples: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Use only this sampler: ddpm, ddim, euler or heun.
    #[arg(long)]
    sampler: Option<SamplerKind>,
    /// Number of diffusion steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Stochasticity of the ddim sampler.
    #[arg(long)]
    eta: Option<f64>,
    /// First seed of the batch.
    #[arg(long)]
    seed: Option<u64>,
    /// Samples per batch.
    #[arg(long, short)]
    n: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = ExperimentConfig::load(&self.config).map_err(|e| match e {
            Error::Io { path, source } => Error::Config(format!("cannot read {}: {source}", path.display())),
            other => other,
        })?;
        if let Some(s) = self.sampler {
            cfg.samplers = vec![s];
        }
        if let Some(eta) = self.eta {
            cfg.samplers = cfg.samplers.iter().map(|s| s.with_eta(eta)).collect();
        }
        if let Some(t) = self.steps {
            cfg.schedule.num_steps = t;
        }
        if let Some(seed) = self.seed {
            cfg.seed_base = seed;
        }
        if let Some(n) = self.n {
            cfg.n_samples = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn sample(cfg: &ExperimentConfig, lambda: Option<f64>, record: bool, out: Option<PathBuf>) -> Result<(), Error> {
    let mut report = String::new();
    let triad = cfg.build_triad()?;
    let dir = cfg.resolved_output_dir();
    for &sampler in &cfg.samplers {
        let suffix = if cfg.samplers.len() > 1 {
            format!("_{}", sampler.name())
        } else {
            String::new()
        };
        let path = match &out {
            Some(p) if suffix.is_empty() => p.clone(),
            _ => dir.join(format!("{}_samples{suffix}.csv", cfg.name)),
        };
        let batch = sample_guided(cfg, &triad, sampler, lambda)?;
        write_samples_csv(&batch, &path)?;
        let _ = writeln!(
            report,
            "{sampler}: {} samples, mean {:?} -> {}",
            batch.len(),
            batch.mean(),
            path.display()
        );
        if record {
            let pred: SharedPredictor = Arc::new(triad.guided(lambda)?.into_predictor(ProgressRule::default()));
            let spec = RunSpec::new(sampler, triad.schedule.clone(), pred, cfg.seed_base).recording();
            let path = dir.join(format!("{}_trajectory{suffix}.csv", cfg.name));
            write(&path, &run_sampler(&spec)?.to_csv())?;
            let _ = writeln!(report, "trajectory of seed {} -> {}", cfg.seed_base, path.display());
        }
    }
    emit(&report)
}

/// Writes to stdout, treating a closed pipe (e.g. `ds sweep | head`) as success.
fn emit(text: &str) -> Result<(), Error> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io {
            path: "<stdout>".into(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    let io = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, text).map_err(io)
}

fn sweep(cfg: &ExperimentConfig) -> Result<(), Error> {
    let mut report = String::new();
    let res = run_experiment(cfg, &cfg.resolved_output_dir())?;
    let _ = writeln!(
        report,
        "{:>8}  {:<16} {:>14} {:>10}",
        "lambda", "sampler", "transfer_error", "diversity"
    );
    for r in &res.rows {
        let _ = writeln!(
            report,
            "{:>8.3}  {:<16} {:>14.6} {:>10.6}",
            r.lambda,
            r.sampler.to_string(),
            r.transfer_error,
            r.diversity
        );
    }
    for p in &res.artifacts {
        let _ = writeln!(report, "wrote {}", p.display());
    }
    emit(&report)
}

fn train(cfg: &ExperimentConfig) -> Result<(), Error> {
    let mut report = String::new();
    let trained = run_training_pipeline(cfg)?;
    for (path, loss) in trained.paths.iter().zip(trained.final_losses) {
        let _ = writeln!(report, "{} (final loss {loss:.5})", path.display());
    }
    emit(&report)
}

fn metrics(samples: &Path, reference: &Path) -> Result<(), Error> {
    let mut report = String::new();
    let (a, b) = (read_samples_csv(samples)?, read_samples_csv(reference)?);
    let _ = writeln!(report, "energy_distance {:.9}", energy_distance(&a, &b)?);
    let _ = writeln!(report, "diversity {} {:.9}", samples.display(), diversity(&a)?);
    let _ = writeln!(report, "diversity {} {:.9}", reference.display(), diversity(&b)?);
    emit(&report)
}

fn plot(samples: &[PathBuf], out: &Path) -> Result<(), Error> {
    let mut report = String::new();
    let batches = samples
        .iter()
        .map(|p| read_samples_csv(p))
        .collect::<Result<Vec<_>, _>>()?;
    let labels = samples.iter().map(|p| p.display().to_string()).collect();
    emit_svg_scatter(
        &batches,
        out,
        &SvgStyle {
            labels,
            ..SvgStyle::default()
        },
    )?;
    let _ = writeln!(report, "wrote {}", out.display());
    emit(&report)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Sample {
            run,
            lambda,
            record_trajectory,
            out,
        } => sample(&run.load()?, lambda, record_trajectory, out),
        Command::Sweep { run } => sweep(&run.load()?),
        Command::Train { run } => train(&run.load()?),
        Command::Metrics { samples, reference } => metrics(&samples, &reference),
        Command::Plot { samples, out } => plot(&samples, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
