//! Trains on a sine dataset and evaluates, without any update, on a
//! phase-shifted sine.

use std::sync::Arc;

use tsalign::backbone::{BackboneDims, FrozenBackbone};
use tsalign::data::{make_windows, split_dataset, SplitSpec};
use tsalign::evaluation::{evaluate, zero_shot_eval, MeanPredictor};
use tsalign::synthetic::{generate, SyntheticSpec};
use tsalign::{train, Model, ModelConfig, TrainConfig};

fn main() -> tsalign::Result<()> {
    let (l, h) = (96, 24);
    let source = generate(&SyntheticSpec::sine(0.0));
    let target = generate(&SyntheticSpec {
        seed: 1,
        ..SyntheticSpec::sine(1.3)
    });
    let src = split_dataset(&source, &SplitSpec::default(), l + h)?;
    let tgt = split_dataset(&target, &SplitSpec::default(), l + h)?;
    let backbone = Arc::new(FrozenBackbone::init_mini(
        0,
        BackboneDims {
            d_model: 32,
            max_positions: 128,
            ..BackboneDims::default()
        },
    )?);
    let cfg = ModelConfig {
        seq_len: l,
        horizon: h,
        prototypes_seasonal: 24,
        prototypes_residual: 48,
        ..ModelConfig::default()
    };
    let mut model = Model::new(cfg, backbone, 5)?;
    let tc = TrainConfig {
        batch_size: 8,
        max_epochs: 100,
        max_steps: Some(200),
        patience: 100,
        seed: 5,
        ..TrainConfig::default()
    };
    train(&mut model, &make_windows(&src.train, l, h, 4)?, &make_windows(&src.val, l, h, 2)?, &tc)?;

    let test = make_windows(&tgt.test, l, h, 4)?;
    let report = zero_shot_eval(&model, &source.name, &target.name, &test)?;
    let baseline = evaluate(&MeanPredictor { horizon: h }, &test, &target.name)?;
    println!("{} -> {}", source.name, target.name);
    println!("  model         mse {:.5}", report.metrics.mse());
    println!("  history mean  mse {:.5}", baseline.mse());
    println!("  parameters untouched: {}", report.untouched());
    Ok(())
}
