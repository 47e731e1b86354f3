//! Instance normalization, patching and the patch-count law.

use tsalign::preprocess::{denormalize, instance_normalize, patch_count, patchify};

fn main() -> tsalign::Result<()> {
    let x: Vec<f64> = (0..32).map(|t| 50.0 + 3.0 * (t as f64 * 0.4).sin()).collect();
    let (z, stats) = instance_normalize(&x);
    println!("mean {:.3}, std {:.3}", stats.mean, stats.std);
    let back = denormalize(&z, &stats);
    let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("round trip error {err:.1e}");

    let p = patchify(&z, 8, 4)?;
    println!("L=32, L_P=8, s=4 → {} patches of {}", p.count(), p.patch_len);
    println!("last patch (end padded with the final value): {:?}", p.patches.row(p.count() - 1).iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());

    for (l, lp, s) in [(512, 16, 8), (96, 16, 8), (96, 16, 16), (336, 16, 8)] {
        println!("L={l:<4} L_P={lp:<3} s={s:<3} K={}", patch_count(l, lp, s));
    }
    Ok(())
}
