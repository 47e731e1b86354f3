//! Instance normalization, patching and linear patch embedding.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NORM_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
    pub epsilon: f64,
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats {
        mean: 0.0,
        std: 1.0,
        epsilon: 0.0,
    };

    /// The multiplier applied by [`denormalize`].
    pub fn scale(&self) -> f64 {
        self.std + self.epsilon
    }
}

/// Standardizes with the population standard deviation; `epsilon` is added to the std.
pub fn instance_normalize(x: &[f64]) -> (Vec<f64>, NormStats) {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let stats = NormStats {
        mean,
        std: var.sqrt(),
        epsilon: NORM_EPSILON,
    };
    let scale = stats.scale();
    (x.iter().map(|v| (v - mean) / scale).collect(), stats)
}

pub fn denormalize(y: &[f64], stats: &NormStats) -> Vec<f64> {
    y.iter().map(|v| v * stats.scale() + stats.mean).collect()
}

/// `patches` is `[K × L_P]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub patches: Array2<f64>,
    pub patch_len: usize,
    pub stride: usize,
}

impl PatchSet {
    pub fn count(&self) -> usize {
        self.patches.nrows()
    }
}

/// `⌊(L − L_P)/s⌋ + 2`
pub fn patch_count(len: usize, patch_len: usize, stride: usize) -> usize {
    (len - patch_len) / stride + 2
}

/// Pads the end with `stride` copies of the final value and cuts `⌊(L − L_P)/s⌋ + 2` patches.
pub fn patchify(x: &[f64], patch_len: usize, stride: usize) -> Result<PatchSet> {
    let len = x.len();
    if patch_len == 0 || patch_len > len {
        return Err(Error::Config(format!(
            "patch length {patch_len} must lie in 1..={len}"
        )));
    }
    if stride == 0 || stride > patch_len {
        return Err(Error::Config(format!(
            "patch stride {stride} must lie in 1..={patch_len}"
        )));
    }
    let last = x[len - 1];
    let padded: Vec<f64> = x.iter().copied().chain(std::iter::repeat_n(last, stride)).collect();
    let k = patch_count(len, patch_len, stride);
    let patches = Array2::from_shape_fn((k, patch_len), |(i, j)| padded[i * stride + j]);
    Ok(PatchSet {
        patches,
        patch_len,
        stride,
    })
}

/// Linear map from a patch of length `L_P` to the model dimension `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbedder {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl PatchEmbedder {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.ncols() != bias.len() {
            return Err(Error::shape("patch embedder bias", weight.ncols(), bias.len()));
        }
        Ok(Self { weight, bias })
    }

    pub fn dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// Row `i` of the result is `patches[i] · weight + bias`.
pub fn embed_patches(p: &PatchSet, emb: &PatchEmbedder) -> Result<Array2<f64>> {
    if p.patch_len != emb.weight.nrows() {
        return Err(Error::shape("embed_patches", emb.weight.nrows(), p.patch_len));
    }
    Ok(p.patches.dot(&emb.weight) + &emb.bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn normalize_example() {
        let (y, st) = instance_normalize(&[2.0, 4.0, 6.0]);
        assert_eq!(st.mean, 4.0);
        assert!((st.std - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((y[0] + 1.22474).abs() < 1e-4);
        assert_eq!(y[1], 0.0);
        assert!((y[2] - 1.22474).abs() < 1e-4);

        let (y, st) = instance_normalize(&[3.0; 3]);
        assert_eq!(y, vec![0.0; 3]);
        assert_eq!((st.mean, st.std), (3.0, 0.0));
    }

    #[test]
    fn denormalize_examples() {
        let st = NormStats {
            mean: 4.0,
            std: (8.0f64 / 3.0).sqrt(),
            epsilon: 1e-5,
        };
        assert_eq!(denormalize(&[0.0], &st), vec![4.0]);
        assert!((denormalize(&[1.22474], &st)[0] - 6.0).abs() < 1e-4);
        let y = [0.3, -2.0, 7.5];
        assert_eq!(denormalize(&y, &NormStats::IDENTITY), y.to_vec());
    }

    #[test]
    fn patchify_examples() {
        let x: Vec<f64> = (0..512).map(|i| i as f64).collect();
        assert_eq!(patchify(&x, 16, 8).unwrap().count(), 64);

        let x: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let p = patchify(&x, 4, 4).unwrap();
        assert_eq!(p.count(), 4);
        assert_eq!(p.patches.row(3).to_vec(), vec![11.0; 4]);
        assert_eq!(p.patches.row(1).to_vec(), vec![4.0, 5.0, 6.0, 7.0]);

        let x = [1.0, 2.0, 3.0];
        let p = patchify(&x, 3, 2).unwrap();
        assert_eq!(p.count(), 2);
        assert_eq!(p.patches.row(1).to_vec(), vec![3.0, 3.0, 3.0]);

        assert!(patchify(&x, 4, 1).is_err());
        assert!(patchify(&x, 2, 3).is_err());
    }

    #[test]
    fn embed_examples() {
        let p = patchify(&[1.0, 2.0, 3.0, 4.0], 2, 2).unwrap();
        let bias = Array1::from(vec![0.5, -1.0, 2.0]);
        let emb = PatchEmbedder::new(Array2::zeros((2, 3)), bias.clone()).unwrap();
        let out = embed_patches(&p, &emb).unwrap();
        for row in out.rows() {
            assert_eq!(row, bias);
        }

        let p = patchify(&[1.0, -2.0, 0.5], 3, 1).unwrap();
        let emb = PatchEmbedder::new(Array2::eye(3), Array1::zeros(3)).unwrap();
        let out = embed_patches(&p, &emb).unwrap();
        assert_eq!(out.row(0).to_vec(), vec![1.0, -2.0, 0.5]);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let p = patchify(&[1.0, 2.0, 3.0, 4.0], 2, 2).unwrap();
        let emb = PatchEmbedder::new(
            Array2::from_shape_fn((2, 4), |_| rng.random_range(-1.0..1.0)),
            Array1::zeros(4),
        )
        .unwrap();
        assert_eq!(embed_patches(&p, &emb).unwrap().dim(), (3, 4));

        let wrong = PatchEmbedder::new(Array2::zeros((3, 4)), Array1::zeros(4)).unwrap();
        assert!(matches!(embed_patches(&p, &wrong), Err(Error::Shape { .. })));
    }

    proptest! {
        #[test]
        fn patch_count_and_coverage(len in 1usize..200, lp_frac in 0.0f64..1.0, s_frac in 0.0f64..1.0) {
            let patch_len = 1 + ((len - 1) as f64 * lp_frac) as usize;
            let stride = 1 + ((patch_len - 1) as f64 * s_frac) as usize;
            let x: Vec<f64> = (0..len).map(|i| i as f64).collect();
            let p = patchify(&x, patch_len, stride).unwrap();
            prop_assert_eq!(p.count(), (len - patch_len) / stride + 2);
            let mut seen = vec![false; len];
            for row in p.patches.rows() {
                for &v in row {
                    seen[v as usize] = true;
                }
            }
            prop_assert!(seen.iter().all(|&b| b));
        }

        #[test]
        fn normalization_moments_and_roundtrip(x in prop::collection::vec(-1e3f64..1e3, 2..100)) {
            let (y, st) = instance_normalize(&x);
            let n = y.len() as f64;
            let mean = y.iter().sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            if st.std > 0.1 {
                let std = (y.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
                prop_assert!((std - 1.0).abs() < 1e-4);
            }
            for (a, b) in denormalize(&y, &st).iter().zip(&x) {
                prop_assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
            }
        }
    }
}
