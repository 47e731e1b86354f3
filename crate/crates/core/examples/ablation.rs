//! Runs an ablation grid on a synthetic dataset and prints mean ± std test MSE per variant.
//!
//! Usage: `cargo run --release --example ablation -- [steps] [variants]`, e.g. `300 default,A1`.

use std::sync::Arc;

use tsalign::backbone::{BackboneDims, FrozenBackbone};
use tsalign::data::{make_windows, split_dataset, SplitSpec};
use tsalign::evaluation::{run_ablation, AblationSetup, AblationVariant};
use tsalign::model::ModelConfig;
use tsalign::synthetic::{generate, SyntheticSpec};
use tsalign::training::TrainConfig;

fn main() -> tsalign::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let variants = AblationVariant::parse_list(&args.next().unwrap_or_else(|| "default,A1".into()))?;
    let ds = generate(&SyntheticSpec::default());
    let (l, h) = (96, 24);
    let splits = split_dataset(&ds, &SplitSpec::default(), l + h)?;
    let backbone = Arc::new(FrozenBackbone::init_mini(
        0,
        BackboneDims {
            vocab_size: 256,
            d_model: 32,
            max_positions: 128,
            heads: 4,
        },
    )?);
    let setup = AblationSetup {
        dataset: ds.name.clone(),
        model: ModelConfig {
            seq_len: l,
            horizon: h,
            prototypes_seasonal: 24,
            prototypes_residual: 48,
            ..ModelConfig::default()
        },
        backbone,
        train: TrainConfig {
            batch_size: 8,
            max_epochs: 1000,
            max_steps: Some(steps),
            patience: 1000,
            ..TrainConfig::default()
        },
        train_windows: make_windows(&splits.train, l, h, 4)?,
        val_windows: make_windows(&splits.val, l, h, 2)?,
        test_windows: make_windows(&splits.test, l, h, 4)?,
    };
    let started = std::time::Instant::now();
    let table = run_ablation(&setup, &variants, &[1, 2, 3]);
    for cell in &table.cells {
        match (&cell.metrics, &cell.error) {
            (Some(m), _) => println!("{:<24} seed {}  mse {:.5}", cell.variant, cell.seed, m.mse()),
            (_, Some(e)) => println!("{:<24} seed {}  failed: {e}", cell.variant, cell.seed),
            _ => {}
        }
    }
    for s in &table.summary {
        println!("{:<24} mse {:.5} ± {:.5}  mae {:.5} ± {:.5}", s.variant, s.mse_mean, s.mse_std, s.mae_mean, s.mae_std);
    }
    println!("{:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}
