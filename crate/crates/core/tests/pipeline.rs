use std::sync::Arc;

use ds_core::analytic::{AnalyticPredictor, GaussianModel, GridPredictor};
use ds_core::harness::{run_training_pipeline, sweep_lambda, ExperimentConfig, ModelSpec};
use ds_core::{
    sample_batch, Condition, DeltaSource, GuidanceSchedule, GuidedPredictor, NoisePredictor, ProgressRule, SampleBatch,
    SamplerKind, SharedPredictor, VarianceSchedule,
};

const TRAIN: &str = r#"
name = "toy"
samplers = ["ddim"]
n_samples = 1500
[schedule]
num_steps = 32
[sweep]
start = 0.0
stop = 1.0
step = 1.0
[triad]
base = "mlp: models/base.dsmlp"
adapted = "mlp: models/adapted.dsmlp"
target = "mlp: models/target.dsmlp"
[training]
n_points = 1000
data_seed = 4
shift = [1.5, 0.0]
base_hidden = [32, 32]
target_hidden = [48, 48]
base = { steps = 1500, batch_size = 64, learning_rate = 3e-3, seed = 1 }
fine_tune = { steps = 800, batch_size = 64, learning_rate = 2e-3, seed = 2 }
target = { steps = 1500, batch_size = 64, learning_rate = 3e-3, seed = 3 }
"#;

#[test]
fn trained_models_load_from_config_directory() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.toml");
    std::fs::write(&path, TRAIN).unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    let trained = run_training_pipeline(&cfg).unwrap();

    // adapted model alone: its samples sit to the right of the base model's
    let triad = cfg.build_triad().unwrap();
    let (base, adapted) = (&triad.pairs[0].0, &triad.pairs[0].1);
    let draw = |p: &SharedPredictor| {
        SampleBatch::new(sample_batch(SamplerKind::Euler, &triad.schedule, p, 0..1500).unwrap()).unwrap()
    };
    let (mb, ma) = (draw(base).mean(), draw(adapted).mean());
    assert!(ma[0] - mb[0] > 0.75, "base {mb:?}, adapted {ma:?}");
    assert!(trained.final_losses.iter().all(|l| l.is_finite()));

    // guidance moves the target's samples the same way
    let res = sweep_lambda(&cfg).unwrap();
    let plain = res.batch("ddim lambda=0").unwrap().mean();
    let guided = res.batch("ddim lambda=1").unwrap().mean();
    assert!(guided[0] - plain[0] > 0.75, "{plain:?} -> {guided:?}");
}

#[test]
fn grid_predictor_stands_in_for_its_source() {
    let sched = Arc::new(VarianceSchedule::default_linear(16).unwrap());
    let exact = AnalyticPredictor::gaussian(GaussianModel::standard(vec![1.0, 0.0]).unwrap(), sched.clone());
    let grid = GridPredictor::tabulate(&exact, vec![-8.0, -8.0], vec![8.0, 8.0], 33, &Condition::none()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    grid.save(&dir.path().join("adapted.grid")).unwrap();
    let spec: ModelSpec = "grid: adapted.grid".parse().unwrap();
    let loaded = spec.build(&sched, dir.path()).unwrap();

    // the Gaussian noise estimate is affine in x, so interpolation is exact up to rounding
    for t in [1, 8, 16] {
        let x = [0.37, -2.9];
        let (a, b) = (
            exact.predict(&x, t, &Condition::none()).unwrap(),
            loaded.predict(&x, t, &Condition::none()).unwrap(),
        );
        assert!(a.iter().zip(&b).all(|(u, v)| (u - v).abs() < 1e-9), "{a:?} vs {b:?}");
    }

    let target: SharedPredictor = Arc::new(AnalyticPredictor::gaussian(
        GaussianModel::standard(vec![-2.0, 3.0]).unwrap(),
        sched.clone(),
    ));
    let base: SharedPredictor = Arc::new(AnalyticPredictor::gaussian(
        GaussianModel::standard(vec![0.0, 0.0]).unwrap(),
        sched.clone(),
    ));
    let src = DeltaSource::new(base, loaded, GuidanceSchedule::constant(1.0).unwrap()).unwrap();
    let gp: SharedPredictor = Arc::new(
        GuidedPredictor::new(target)
            .with_source(src)
            .unwrap()
            .into_predictor(ProgressRule::default()),
    );
    let batch = SampleBatch::new(sample_batch(SamplerKind::Ddpm, &sched, &gp, 0..4000).unwrap()).unwrap();
    let m = batch.mean();
    assert!((m[0] + 1.0).abs() < 0.1 && (m[1] - 3.0).abs() < 0.1, "{m:?}");
}

#[test]
fn extra_sources_compose() {
    let cfg = ExperimentConfig::from_toml_str(
        r#"
samplers = ["ddpm"]
n_samples = 4000
[schedule]
num_steps = 64
[sweep]
start = 1.0
stop = 1.0
step = 1.0
[triad]
base = "gaussian: mean=[0,0] cov=I"
adapted = "gaussian: mean=[1,0] cov=I"
target = "gaussian: mean=[-2,3] cov=I"
[[source]]
base = "gaussian: mean=[3,-2] cov=I"
adapted = "gaussian: mean=[3,-3] cov=I"
"#,
    )
    .unwrap();
    let res = sweep_lambda(&cfg).unwrap();
    let m = res.batch("ddpm lambda=1").unwrap().mean();
    assert!((m[0] + 1.0).abs() < 0.06 && (m[1] - 2.0).abs() < 0.06, "{m:?}");
}
