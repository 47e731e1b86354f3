//! Trains a small model on a synthetic line + sine dataset and compares it with the history-mean baseline.

use std::sync::Arc;

use tsalign::backbone::{BackboneDims, FrozenBackbone};
use tsalign::data::{make_windows, split_dataset, SplitSpec};
use tsalign::decompose::DecompConfig;
use tsalign::evaluation::{evaluate, MeanPredictor};
use tsalign::model::{Model, ModelConfig};
use tsalign::synthetic::{generate, SyntheticSpec};
use tsalign::training::{mean_loss, prepare_windows, train_with_observer, TrainConfig};

fn main() -> tsalign::error::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(500);
    let ds = generate(&SyntheticSpec::default());
    let (l, h) = (96, 24);
    let splits = split_dataset(&ds, &SplitSpec::default(), l + h)?;
    let train_w = make_windows(&splits.train, l, h, 4)?;
    let val_w = make_windows(&splits.val, l, h, 8)?;
    let test_w = make_windows(&splits.test, l, h, 8)?;
    println!("windows: train {} val {} test {}", train_w.len(), val_w.len(), test_w.len());

    let dims = BackboneDims {
        vocab_size: 256,
        d_model: 32,
        max_positions: 128,
        heads: 4,
    };
    let backbone = Arc::new(FrozenBackbone::init_mini(0, dims)?);
    let cfg = ModelConfig {
        seq_len: l,
        horizon: h,
        patch_len: 16,
        patch_stride: 8,
        decomposition: DecompConfig::default(),
        prototypes_seasonal: 24,
        prototypes_residual: 48,
        ..ModelConfig::default()
    };
    let mut model = Model::new(cfg, backbone, 7)?;
    let prepared = prepare_windows(&model, &train_w)?;
    let before = mean_loss(&model, &prepared)?;
    let tc = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 8,
        max_epochs: 1000,
        max_steps: Some(steps),
        patience: 1000,
        seed: 7,
        ..TrainConfig::default()
    };
    let started = std::time::Instant::now();
    let report = train_with_observer(&mut model, &train_w, &val_w, &tc, |e| {
        println!("epoch {:>3}  train {:.5}  val {:.5}", e.epoch, e.train_loss, e.val_loss.unwrap_or(f64::NAN));
    })?;
    let after = mean_loss(&model, &prepared)?;
    println!("steps {} in {:.1}s", report.total_steps, started.elapsed().as_secs_f64());
    println!("train mse {before:.5} -> {after:.5} (ratio {:.4})", after / before);
    let ours = evaluate(&model, &test_w, &ds.name)?;
    let base = evaluate(&MeanPredictor { horizon: h }, &test_w, &ds.name)?;
    println!("test mse model {:.5}  history-mean {:.5}", ours.mse(), base.mse());
    Ok(())
}
