//! Exports trend-patch to anchor attention of a briefly trained model with
//! non-overlapping patches.

use std::sync::Arc;

use tsalign::backbone::{BackboneDims, FrozenBackbone};
use tsalign::data::{make_windows, split_dataset, SplitSpec};
use tsalign::evaluation::export_attention_map;
use tsalign::synthetic::{generate, SyntheticSpec};
use tsalign::{train, Model, ModelConfig, TrainConfig};

fn main() -> tsalign::Result<()> {
    let (l, h) = (96, 24);
    let ds = generate(&SyntheticSpec::default());
    let splits = split_dataset(&ds, &SplitSpec::default(), l + h)?;
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
        patch_len: 16,
        patch_stride: 16,
        prototypes_seasonal: 24,
        prototypes_residual: 48,
        ..ModelConfig::default()
    };
    let mut model = Model::new(cfg, backbone, 2)?;
    let tc = TrainConfig {
        batch_size: 8,
        max_steps: Some(60),
        ..TrainConfig::default()
    };
    train(&mut model, &make_windows(&splits.train, l, h, 4)?, &[], &tc)?;

    let test = make_windows(&splits.test, l, h, 24)?;
    let path = std::env::temp_dir().join("tsalign-attention.csv");
    let map = export_attention_map(&model, &test[0].history, 0, Some(&path), false)?;
    print!("{:>10}", "patch");
    for w in &map.labels {
        print!(" {:>6}", &w[..w.len().min(6)]);
    }
    println!();
    for (k, row) in map.weights.rows().into_iter().enumerate() {
        let (s, e) = map.patch_ranges[k];
        print!("{:>10}", format!("{s}..{e}"));
        for v in row {
            print!(" {v:>6.3}");
        }
        println!();
    }
    println!("written to {}", path.display());
    Ok(())
}
