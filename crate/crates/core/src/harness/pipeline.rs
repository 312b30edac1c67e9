//! Trains and persists the toy networks playing the base, adapted, target
//! and oracle roles.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::mlp::{fine_tune, train_denoiser, MlpDenoiser, PointCloudDataset};

use super::config::{ExperimentConfig, TrainingConfig};

pub const MODEL_FILES: [&str; 4] = ["base.dsmlp", "adapted.dsmlp", "target.dsmlp", "oracle.dsmlp"];

#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub base: MlpDenoiser,
    pub adapted: MlpDenoiser,
    pub target: MlpDenoiser,
    /// Target fine-tuned directly on the adaptation dataset.
    pub oracle: MlpDenoiser,
    /// Final training loss of each model, in the same order.
    pub final_losses: [f64; 4],
    pub paths: Vec<PathBuf>,
}

fn dataset(t: &TrainingConfig, seed: u64) -> Result<PointCloudDataset> {
    match t.dataset.as_str() {
        "two_moons" => PointCloudDataset::two_moons(t.n_points, t.noise, seed),
        "ring" => PointCloudDataset::ring(t.n_points, 1.0, t.noise, seed),
        other => Err(Error::Config(format!("unknown dataset `{other}`"))),
    }
}

/// Trains base (architecture A on D), adapted (base fine-tuned on the
/// shifted D'), target (architecture B on D or a fresh draw of it) and the
/// oracle (target fine-tuned on D'), then writes them as DSMLP1 files into
/// the model directory.
pub fn run_training_pipeline(cfg: &ExperimentConfig) -> Result<TrainedModels> {
    let t = cfg
        .training
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [training] section".into()))?;
    if t.base_hidden == t.target_hidden {
        return Err(Error::Config(
            "target architecture must differ from the base architecture".into(),
        ));
    }
    let sched = cfg.build_schedule()?;
    let data = dataset(t, t.data_seed)?;
    if t.shift.len() != data.dim() {
        return Err(Error::Config(format!(
            "shift has {} entries for {}-D data",
            t.shift.len(),
            data.dim()
        )));
    }
    let shifted = data.shifted(&t.shift)?;
    let target_data = match t.target_data_seed {
        Some(seed) => dataset(t, seed)?,
        None => data.clone(),
    };

    let base = train_denoiser(&data, &sched, &t.base, &t.base_hidden).map_err(|e| e.context("training base"))?;
    let adapted =
        fine_tune(&base.model, &shifted, &sched, &t.fine_tune).map_err(|e| e.context("fine-tuning adapted"))?;
    let target =
        train_denoiser(&target_data, &sched, &t.target, &t.target_hidden).map_err(|e| e.context("training target"))?;
    let oracle =
        fine_tune(&target.model, &shifted, &sched, &t.fine_tune).map_err(|e| e.context("fine-tuning oracle"))?;

    let dir = cfg.base_dir.join(&t.model_dir);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let outcomes = [base, adapted, target, oracle];
    let mut paths = Vec::new();
    for (o, name) in outcomes.iter().zip(MODEL_FILES) {
        let path = dir.join(name);
        o.model.save(&path)?;
        paths.push(path);
    }
    let final_losses = outcomes.each_ref().map(|o| o.final_loss().unwrap_or(f64::NAN));
    let [base, adapted, target, oracle] = outcomes.map(|o| o.model);
    Ok(TrainedModels {
        base,
        adapted,
        target,
        oracle,
        final_losses,
        paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::TrainConfig;

    fn small(dir: &std::path::Path) -> ExperimentConfig {
        let quick = |seed| TrainConfig {
            steps: 40,
            batch_size: 16,
            seed,
            ..TrainConfig::default()
        };
        ExperimentConfig {
            base_dir: dir.to_path_buf(),
            training: Some(TrainingConfig {
                n_points: 64,
                base_hidden: vec![8],
                target_hidden: vec![6, 6],
                base: quick(1),
                fine_tune: quick(2),
                target: quick(3),
                ..TrainingConfig::default()
            }),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn deterministic_files() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let first = run_training_pipeline(&small(a.path())).unwrap();
        let second = run_training_pipeline(&small(b.path())).unwrap();
        assert_eq!(first.paths.len(), 4);
        for (p, q) in first.paths.iter().zip(&second.paths) {
            assert_eq!(std::fs::read(p).unwrap(), std::fs::read(q).unwrap());
        }
        assert_eq!(MlpDenoiser::load(&first.paths[2]).unwrap(), first.target);
        assert_ne!(first.base.hidden_widths(), first.target.hidden_widths());
    }

    #[test]
    fn requires_training_section_and_distinct_architectures() {
        let dir = tempfile::tempdir().unwrap();
        assert!(run_training_pipeline(&ExperimentConfig::default())
            .unwrap_err()
            .is_config());
        let mut cfg = small(dir.path());
        let t = cfg.training.as_mut().unwrap();
        t.target_hidden = t.base_hidden.clone();
        assert!(run_training_pipeline(&cfg).unwrap_err().is_config());
        cfg.training.as_mut().unwrap().dataset = "spiral".into();
        assert!(run_training_pipeline(&cfg).is_err());
    }
}
