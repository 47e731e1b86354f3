//! Splits a noisy line + sine series with both decomposition methods and
//! reports how well each recovers the seasonal part.

use tsalign::decompose::{additive_decompose, DecompConfig, DecompMethod};
use tsalign::synthetic::{generate, SyntheticSpec};

fn main() -> tsalign::Result<()> {
    let ds = generate(&SyntheticSpec {
        len: 240,
        channels: 1,
        noise: 0.02,
        ..SyntheticSpec::default()
    });
    let x: Vec<f64> = ds.values.column(0).to_vec();
    let truth: Vec<f64> = (0..x.len())
        .map(|t| (std::f64::consts::TAU * t as f64 / 24.0).sin())
        .collect();

    for method in [DecompMethod::MovingAverage, DecompMethod::Stl] {
        let cfg = DecompConfig {
            method,
            ..DecompConfig::default()
        };
        let parts = additive_decompose(&x, &cfg)?;
        let rebuilt = parts.reconstruct();
        let worst = x.iter().zip(&rebuilt).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let seasonal_rmse = (parts
            .seasonal
            .iter()
            .zip(&truth)
            .map(|(s, t)| (s - t).powi(2))
            .sum::<f64>()
            / x.len() as f64)
            .sqrt();
        let resid_std = (parts.residual.iter().map(|r| r * r).sum::<f64>() / x.len() as f64).sqrt();
        println!("{method:?}: reconstruction error {worst:.1e}, seasonal rmse {seasonal_rmse:.4}, residual rms {resid_std:.4}");
        println!("  trend  t=0..5   {:?}", round(&parts.trend[..5]));
        println!("  season t=0..5   {:?}", round(&parts.seasonal[..5]));
    }
    Ok(())
}

fn round(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|v| (v * 1000.0).round() / 1000.0).collect()
}
