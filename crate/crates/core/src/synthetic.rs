//! Seeded synthetic datasets: line + sine + noise, and phase-shifted sines.

use chrono::{Duration, NaiveDate};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::RawDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub name: String,
    pub len: usize,
    pub channels: usize,
    pub period: usize,
    /// Per-step increase of the linear part.
    pub slope: f64,
    pub amplitude: f64,
    /// Phase offset in radians.
    pub phase: f64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            len: 1400,
            channels: 2,
            period: 24,
            slope: 0.01,
            amplitude: 1.0,
            phase: 0.0,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// A trendless sine with the given phase, used for transfer tests.
    pub fn sine(phase: f64) -> Self {
        Self {
            name: format!("sine_phase_{phase:.2}"),
            slope: 0.0,
            phase,
            ..Self::default()
        }
    }
}

/// Channel `c` uses amplitude `a·(1 + c/2)`, slope `b·(1 + c)`, offset `c` and a phase lag of `0.7·c`.
pub fn generate(spec: &SyntheticSpec) -> RawDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("finite noise level");
    let omega = std::f64::consts::TAU / spec.period.max(1) as f64;
    let mut values = Array2::zeros((spec.len, spec.channels));
    for t in 0..spec.len {
        for c in 0..spec.channels {
            let cf = c as f64;
            let line = cf + spec.slope * (1.0 + cf) * t as f64;
            let wave = spec.amplitude * (1.0 + 0.5 * cf) * (omega * t as f64 + spec.phase + 0.7 * cf).sin();
            let eps = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            values[[t, c]] = line + wave + eps;
        }
    }
    let start = NaiveDate::from_ymd_opt(2016, 7, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid start date");
    let timestamps = (0..spec.len)
        .map(|t| (start + Duration::hours(t as i64)).format("%Y-%m-%d %H:%M:%S").to_string())
        .collect();
    RawDataset {
        name: spec.name.clone(),
        timestamps,
        values,
        channel_names: (0..spec.channels).map(|c| format!("ch{c}")).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let spec = SyntheticSpec {
            len: 50,
            channels: 3,
            ..SyntheticSpec::default()
        };
        let a = generate(&spec);
        assert_eq!(a, generate(&spec));
        assert_eq!(a.values.dim(), (50, 3));
        assert_eq!(a.timestamps[1], "2016-07-01 01:00:00");
        let b = generate(&SyntheticSpec { seed: 1, ..spec });
        assert_ne!(a.values, b.values);
    }

    #[test]
    fn noiseless_sine_is_periodic() {
        let ds = generate(&SyntheticSpec {
            noise: 0.0,
            ..SyntheticSpec::sine(0.5)
        });
        for t in 0..100 {
            assert!((ds.values[[t, 1]] - ds.values[[t + 24, 1]]).abs() < 1e-9);
        }
    }
}
