//! Checks the hand-written reverse-mode gradients of the full pipeline
//! against central finite differences on a small model.

use std::sync::Arc;

use tsalign::backbone::{BackboneDims, FrozenBackbone};
use tsalign::data::WindowPair;
use tsalign::decompose::DecompConfig;
use tsalign::training::finite_difference_check;
use tsalign::{Model, ModelConfig};

fn main() -> tsalign::Result<()> {
    let backbone = FrozenBackbone::init_mini(
        1,
        BackboneDims {
            vocab_size: 64,
            d_model: 16,
            max_positions: 64,
            heads: 4,
        },
    )?;
    let cfg = ModelConfig {
        seq_len: 32,
        horizon: 8,
        patch_len: 8,
        patch_stride: 4,
        decomposition: DecompConfig {
            k: 3,
            period: 8,
            ..DecompConfig::default()
        },
        align_heads: 2,
        prototypes_seasonal: 16,
        prototypes_residual: 32,
        max_prompt_tokens: 16,
        ..ModelConfig::default()
    };
    let model = Model::new(cfg, Arc::new(backbone), 3)?;
    let f = |t: usize| (t as f64 * 0.7).sin() + 0.05 * t as f64;
    let window = WindowPair {
        history: ndarray::Array2::from_shape_fn((2, 32), |(c, t)| f(t + c)),
        target: ndarray::Array2::from_shape_fn((2, 8), |(c, t)| f(32 + t + c)),
        start_index: 0,
    };
    let report = finite_difference_check(&model, &window, 1e-4, 32, 0)?;
    for e in report.entries.iter().take(8) {
        println!("{:<24} analytic {:>12.4e}  numeric {:>12.4e}  deviation {:.1e}", e.param, e.analytic, e.numeric, e.deviation);
    }
    println!("max relative deviation over {} parameters: {:.2e}", report.entries.len(), report.max_deviation);
    Ok(())
}
