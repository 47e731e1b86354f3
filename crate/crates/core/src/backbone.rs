//! The frozen decoder-style transformer the aligned tokens are fed through.
//!
//! Parameter names and layouts follow the GPT-2 convention (`wte`, `wpe`,
//! `h.{i}.attn.c_attn.weight` stored as `[in × out]`, ...), so a dump of the
//! public weights converts into a [`TensorCheckpoint`] without transposes.

use std::path::Path;
use std::sync::Arc;

use ndarray::s;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Matrix, Tape, Var};
use crate::checkpoint::{NamedTensor, TensorCheckpoint};
use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;

/// Number of transformer blocks kept from any source model.
pub const BACKBONE_LAYERS: usize = 6;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneDims {
    pub vocab_size: usize,
    pub d_model: usize,
    pub max_positions: usize,
    pub heads: usize,
}

impl Default for BackboneDims {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            d_model: 64,
            max_positions: 512,
            heads: 4,
        }
    }
}

impl BackboneDims {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.heads == 0 || self.d_model == 0 || self.d_model % self.heads != 0 {
            problems.push(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            ));
        }
        if self.vocab_size < 64 {
            problems.push(format!("vocab_size {} must be at least 64", self.vocab_size));
        }
        if self.max_positions == 0 {
            problems.push("max_positions must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1_gain: Arc<Matrix>,
    ln1_bias: Arc<Matrix>,
    qkv_weight: Arc<Matrix>,
    qkv_bias: Arc<Matrix>,
    attn_out_weight: Arc<Matrix>,
    attn_out_bias: Arc<Matrix>,
    ln2_gain: Arc<Matrix>,
    ln2_bias: Arc<Matrix>,
    fc_weight: Arc<Matrix>,
    fc_bias: Arc<Matrix>,
    fc_out_weight: Arc<Matrix>,
    fc_out_bias: Arc<Matrix>,
}

const BLOCK_TENSORS: [&str; 12] = [
    "ln_1.weight",
    "ln_1.bias",
    "attn.c_attn.weight",
    "attn.c_attn.bias",
    "attn.c_proj.weight",
    "attn.c_proj.bias",
    "ln_2.weight",
    "ln_2.bias",
    "mlp.c_fc.weight",
    "mlp.c_fc.bias",
    "mlp.c_proj.weight",
    "mlp.c_proj.bias",
];

impl Block {
    fn tensors(&self) -> [&Arc<Matrix>; 12] {
        [
            &self.ln1_gain,
            &self.ln1_bias,
            &self.qkv_weight,
            &self.qkv_bias,
            &self.attn_out_weight,
            &self.attn_out_bias,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.fc_weight,
            &self.fc_bias,
            &self.fc_out_weight,
            &self.fc_out_bias,
        ]
    }

    fn from_tensors(mut t: Vec<Arc<Matrix>>) -> Self {
        let mut next = || t.remove(0);
        Block {
            ln1_gain: next(),
            ln1_bias: next(),
            qkv_weight: next(),
            qkv_bias: next(),
            attn_out_weight: next(),
            attn_out_bias: next(),
            ln2_gain: next(),
            ln2_bias: next(),
            fc_weight: next(),
            fc_bias: next(),
            fc_out_weight: next(),
            fc_out_bias: next(),
        }
    }
}

fn block_shapes(d: usize) -> [(usize, usize); 12] {
    [
        (1, d),
        (1, d),
        (d, 3 * d),
        (1, 3 * d),
        (d, d),
        (1, d),
        (1, d),
        (1, d),
        (d, 4 * d),
        (1, 4 * d),
        (4 * d, d),
        (1, d),
    ]
}

/// Immutable transformer stack: token table, position table, six pre-norm blocks, final norm.
#[derive(Debug, Clone)]
pub struct FrozenBackbone {
    dims: BackboneDims,
    vocab_table: Arc<Matrix>,
    positional_table: Arc<Matrix>,
    blocks: Vec<Block>,
    final_gain: Arc<Matrix>,
    final_bias: Arc<Matrix>,
    tokenizer: Tokenizer,
    fingerprint: String,
}

impl FrozenBackbone {
    /// Deterministic random initialization; every value is exactly representable in f32.
    pub fn init_mini(seed: u64, dims: BackboneDims) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |rows: usize, cols: usize, std: f64| -> Arc<Matrix> {
            let dist = Normal::new(0.0, std).expect("positive std");
            Arc::new(Matrix::from_shape_fn((rows, cols), |_| {
                dist.sample(&mut rng) as f32 as f64
            }))
        };
        let d = dims.d_model;
        let vocab_table = normal(dims.vocab_size, d, 0.1);
        let positional_table = normal(dims.max_positions, d, 0.01);
        let blocks = (0..BACKBONE_LAYERS)
            .map(|_| {
                let tensors = block_shapes(d)
                    .iter()
                    .zip(BLOCK_TENSORS)
                    .map(|(&(r, c), name)| {
                        if name.starts_with("ln") && name.ends_with("weight") {
                            Arc::new(Matrix::ones((r, c)))
                        } else if name.ends_with("bias") {
                            Arc::new(Matrix::zeros((r, c)))
                        } else {
                            normal(r, c, 0.02)
                        }
                    })
                    .collect();
                Block::from_tensors(tensors)
            })
            .collect();
        Ok(Self::assemble(
            dims,
            vocab_table,
            positional_table,
            blocks,
            Arc::new(Matrix::ones((1, d))),
            Arc::new(Matrix::zeros((1, d))),
            Tokenizer::hashed(dims.vocab_size),
        ))
    }

    fn assemble(
        dims: BackboneDims,
        vocab_table: Arc<Matrix>,
        positional_table: Arc<Matrix>,
        blocks: Vec<Block>,
        final_gain: Arc<Matrix>,
        final_bias: Arc<Matrix>,
        tokenizer: Tokenizer,
    ) -> Self {
        let mut b = FrozenBackbone {
            dims,
            vocab_table,
            positional_table,
            blocks,
            final_gain,
            final_bias,
            tokenizer,
            fingerprint: String::new(),
        };
        b.fingerprint = b.compute_fingerprint();
        b
    }

    /// Loads the first six blocks of a checkpoint; later blocks are ignored.
    pub fn load_checkpoint(path: &Path, expected: BackboneDims) -> Result<Self> {
        expected.validate()?;
        let ck = TensorCheckpoint::load(path)?;
        Self::from_checkpoint(&ck, expected)
    }

    pub fn from_checkpoint(ck: &TensorCheckpoint, expected: BackboneDims) -> Result<Self> {
        let d = expected.d_model;
        let fetch = |name: &str, rows: usize, cols: usize| -> Result<Arc<Matrix>> {
            let t = ck.require(name)?;
            let m = t.to_matrix();
            if m.dim() != (rows, cols) {
                return Err(Error::Shape {
                    context: "checkpoint tensor",
                    expected: format!("{name} [{rows} × {cols}]"),
                    actual: format!("{name} {:?}", t.shape),
                });
            }
            Ok(Arc::new(m))
        };
        let vocab_table = fetch("wte", expected.vocab_size, d)?;
        let positional_table = fetch("wpe", expected.max_positions, d)?;
        let mut blocks = Vec::with_capacity(BACKBONE_LAYERS);
        for i in 0..BACKBONE_LAYERS {
            let tensors = BLOCK_TENSORS
                .iter()
                .zip(block_shapes(d))
                .map(|(name, (r, c))| fetch(&format!("h.{i}.{name}"), r, c))
                .collect::<Result<Vec<_>>>()?;
            blocks.push(Block::from_tensors(tensors));
        }
        Ok(Self::assemble(
            expected,
            vocab_table,
            positional_table,
            blocks,
            fetch("ln_f.weight", 1, d)?,
            fetch("ln_f.bias", 1, d)?,
            Tokenizer::hashed(expected.vocab_size),
        ))
    }

    /// Replaces the tokenizer, e.g. with one read from a vocabulary file.
    pub fn with_tokenizer(mut self, tokenizer: Tokenizer) -> Result<Self> {
        if tokenizer.vocab_bound() > self.dims.vocab_size {
            return Err(Error::Config(format!(
                "tokenizer addresses {} ids but the vocabulary table has {} rows",
                tokenizer.vocab_bound(),
                self.dims.vocab_size
            )));
        }
        self.tokenizer = tokenizer;
        Ok(self)
    }

    /// All parameters under their checkpoint names, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Arc<Matrix>)> {
        let mut out = vec![
            ("wte".to_string(), &self.vocab_table),
            ("wpe".to_string(), &self.positional_table),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, t) in BLOCK_TENSORS.iter().zip(b.tensors()) {
                out.push((format!("h.{i}.{name}"), t));
            }
        }
        out.push(("ln_f.weight".into(), &self.final_gain));
        out.push(("ln_f.bias".into(), &self.final_bias));
        out
    }

    pub fn to_checkpoint(&self) -> TensorCheckpoint {
        let mut ck = TensorCheckpoint::default();
        ck.metadata.insert("fingerprint".into(), self.fingerprint.clone());
        ck.tensors = self
            .named_tensors()
            .into_iter()
            .map(|(name, m)| {
                let is_vec = name.ends_with("bias") || name.contains("ln_");
                NamedTensor::from_matrix(name, m, is_vec)
            })
            .collect();
        ck
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    fn compute_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, m) in self.named_tensors() {
            h.update(name.as_bytes());
            h.update((m.nrows() as u64).to_le_bytes());
            h.update((m.ncols() as u64).to_le_bytes());
            for v in m.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// SHA-256 over every parameter, computed at construction.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Recomputes the hash from the current parameter values.
    pub fn verify_fingerprint(&self) -> bool {
        self.compute_fingerprint() == self.fingerprint
    }

    pub fn dims(&self) -> BackboneDims {
        self.dims
    }

    pub fn d_model(&self) -> usize {
        self.dims.d_model
    }

    pub fn vocab_table(&self) -> &Arc<Matrix> {
        &self.vocab_table
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    /// Rows of the vocabulary table for the given token ids, `[len × D]`.
    pub fn embed_tokens(&self, ids: &[usize]) -> Matrix {
        let d = self.dims.d_model;
        let mut out = Matrix::zeros((ids.len(), d));
        for (row, &id) in ids.iter().enumerate() {
            out.row_mut(row).assign(&self.vocab_table.row(id));
        }
        out
    }

    /// Records the forward pass of `[S × D]` inputs on `tape`.
    pub fn forward_tape(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let (seq, d) = tape.shape(input);
        if d != self.dims.d_model {
            return Err(Error::shape("backbone input width", self.dims.d_model, d));
        }
        if seq > self.dims.max_positions {
            return Err(Error::Config(format!(
                "sequence length {seq} exceeds the backbone's {} positions",
                self.dims.max_positions
            )));
        }
        let heads = self.dims.heads;
        let head_dim = d / heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let pos = tape.constant(self.positional_table.slice(s![..seq, ..]).to_owned());
        let mut x = tape.add(input, pos);
        for b in &self.blocks {
            let c = |tape: &mut Tape, m: &Arc<Matrix>| tape.constant_shared(Arc::clone(m));
            let (g1, b1) = (c(tape, &b.ln1_gain), c(tape, &b.ln1_bias));
            let h = tape.layer_norm(x, g1, b1, LN_EPS);
            let w = c(tape, &b.qkv_weight);
            let qkv = tape.matmul(h, w);
            let bias = c(tape, &b.qkv_bias);
            let qkv = tape.add_row(qkv, bias);
            let mut outs = Vec::with_capacity(heads);
            for head in 0..heads {
                let q = tape.slice_cols(qkv, head * head_dim, head_dim);
                let k = tape.slice_cols(qkv, d + head * head_dim, head_dim);
                let v = tape.slice_cols(qkv, 2 * d + head * head_dim, head_dim);
                let scores = tape.matmul_t(q, k);
                let scores = tape.affine(scores, scale, 0.0);
                let attn = tape.softmax_rows(scores, true);
                outs.push(tape.matmul(attn, v));
            }
            let merged = tape.concat_cols(&outs);
            let w = c(tape, &b.attn_out_weight);
            let proj = tape.matmul(merged, w);
            let bias = c(tape, &b.attn_out_bias);
            let proj = tape.add_row(proj, bias);
            x = tape.add(x, proj);

            let (g2, b2) = (c(tape, &b.ln2_gain), c(tape, &b.ln2_bias));
            let h = tape.layer_norm(x, g2, b2, LN_EPS);
            let w = c(tape, &b.fc_weight);
            let f = tape.matmul(h, w);
            let bias = c(tape, &b.fc_bias);
            let f = tape.add_row(f, bias);
            let f = tape.gelu(f);
            let w = c(tape, &b.fc_out_weight);
            let f = tape.matmul(f, w);
            let bias = c(tape, &b.fc_out_bias);
            let f = tape.add_row(f, bias);
            x = tape.add(x, f);
        }
        let g = tape.constant_shared(Arc::clone(&self.final_gain));
        let bias = tape.constant_shared(Arc::clone(&self.final_bias));
        Ok(tape.layer_norm(x, g, bias, LN_EPS))
    }

    /// Forward pass without gradient tracking.
    pub fn forward(&self, embedded: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let x = tape.constant(embedded.clone());
        let y = self.forward_tape(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small() -> BackboneDims {
        BackboneDims {
            vocab_size: 64,
            d_model: 16,
            max_positions: 32,
            heads: 4,
        }
    }

    fn random_input(seed: u64, rows: usize, cols: usize) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn init_is_deterministic() {
        let a = FrozenBackbone::init_mini(7, small()).unwrap();
        let b = FrozenBackbone::init_mini(7, small()).unwrap();
        let c = FrozenBackbone::init_mini(8, small()).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert!(a.verify_fingerprint());
    }

    #[test]
    fn default_shapes() {
        let dims = BackboneDims {
            vocab_size: 256,
            d_model: 64,
            max_positions: 256,
            heads: 4,
        };
        let b = FrozenBackbone::init_mini(1, dims).unwrap();
        assert_eq!(b.vocab_table.dim(), (256, 64));
        assert_eq!(b.positional_table.dim(), (256, 64));
        assert_eq!(b.blocks.len(), BACKBONE_LAYERS);
    }

    #[test]
    fn invalid_dims_rejected() {
        let mut d = small();
        d.heads = 5;
        assert!(FrozenBackbone::init_mini(1, d).is_err());
        let mut d = small();
        d.vocab_size = 10;
        assert!(FrozenBackbone::init_mini(1, d).is_err());
    }

    #[test]
    fn forward_shape_and_determinism() {
        let b = FrozenBackbone::init_mini(3, small()).unwrap();
        let x = random_input(1, 10, 16);
        let y1 = b.forward(&x).unwrap();
        let y2 = b.forward(&x).unwrap();
        assert_eq!(y1.dim(), (10, 16));
        assert_eq!(y1, y2);
        assert!(b.forward(&random_input(1, 33, 16)).is_err());
        assert!(b.verify_fingerprint());
    }

    #[test]
    fn forward_is_causal() {
        let b = FrozenBackbone::init_mini(3, small()).unwrap();
        let x = random_input(2, 8, 16);
        let base = b.forward(&x).unwrap();
        for j in 0..8 {
            let mut x2 = x.clone();
            for c in 0..16 {
                x2[[j, c]] += (c as f64 * 0.37).sin();
            }
            let out = b.forward(&x2).unwrap();
            for i in 0..8 {
                let changed = out.row(i) != base.row(i);
                assert_eq!(changed, i >= j, "row {i} after perturbing {j}");
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bb.ckpt");
        let b = FrozenBackbone::init_mini(11, small()).unwrap();
        b.save(&path).unwrap();
        let back = FrozenBackbone::load_checkpoint(&path, small()).unwrap();
        assert_eq!(back.fingerprint(), b.fingerprint());
    }

    #[test]
    fn missing_positional_table_is_named() {
        let b = FrozenBackbone::init_mini(11, small()).unwrap();
        let mut ck = b.to_checkpoint();
        ck.tensors.retain(|t| t.name != "wpe");
        match FrozenBackbone::from_checkpoint(&ck, small()) {
            Err(Error::MissingTensor(name)) => assert_eq!(name, "wpe"),
            other => panic!("unexpected {other:?}"),
        }
        let mut ck = b.to_checkpoint();
        ck.tensors[0].shape = vec![32, 32];
        assert!(matches!(FrozenBackbone::from_checkpoint(&ck, small()), Err(Error::Shape { .. })));
    }

    #[test]
    fn twelve_block_checkpoint_keeps_first_six() {
        let b = FrozenBackbone::init_mini(11, small()).unwrap();
        let other = FrozenBackbone::init_mini(12, small()).unwrap();
        let mut ck = b.to_checkpoint();
        // blocks 6..11 copied from an unrelated model
        for t in other.to_checkpoint().tensors {
            if let Some(rest) = t.name.strip_prefix("h.") {
                let (idx, tail) = rest.split_once('.').unwrap();
                let idx: usize = idx.parse().unwrap();
                ck.tensors.push(NamedTensor {
                    name: format!("h.{}.{tail}", idx + 6),
                    ..t
                });
            }
        }
        let loaded = FrozenBackbone::from_checkpoint(&ck, small()).unwrap();
        assert_eq!(loaded.blocks.len(), 6);
        assert_eq!(loaded.fingerprint(), b.fingerprint());
    }
}
