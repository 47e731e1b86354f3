//! Reprogramming of patch embeddings into the backbone's word-embedding space.
//!
//! Trend patches attend over a small fixed set of anchor word embeddings;
//! seasonal and residual patches attend over text prototypes, which are
//! trainable linear mixtures of the frozen vocabulary table.

use std::path::Path;
use std::sync::Arc;

use ndarray::{Array3, Axis};
use sha2::{Digest, Sha256};

use crate::autodiff::{Matrix, Tape, Var};
use crate::backbone::FrozenBackbone;
use crate::component::Component;
use crate::error::{Error, Result};

pub const DEFAULT_ANCHORS: &str = include_str!("../assets/anchors/default.txt");
pub const SYNONYM_ANCHORS: &str = include_str!("../assets/anchors/synonyms.txt");
pub const NOISE_ANCHORS: &str = include_str!("../assets/anchors/noise.txt");

/// Parses a word list: one word per line, blank lines and `#` comments skipped.
pub fn parse_word_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

pub fn read_word_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_word_list(&text))
}

pub fn default_anchor_words() -> Vec<String> {
    parse_word_list(DEFAULT_ANCHORS)
}

/// Frozen anchor embeddings, `[A × D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub words: Vec<String>,
    pub embeddings: Arc<Matrix>,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words_hash(&self) -> String {
        words_hash(&self.words)
    }
}

/// SHA-256 of the newline-joined word list.
pub fn words_hash(words: &[String]) -> String {
    hex::encode(Sha256::digest(words.join("\n").as_bytes()))
}

/// Each word maps to the mean of its token embeddings.
pub fn resolve_anchor_embeddings(words: &[String], backbone: &FrozenBackbone) -> Result<AnchorSet> {
    if words.is_empty() {
        return Err(Error::Config("anchor list is empty".into()));
    }
    let d = backbone.d_model();
    let mut embeddings = Matrix::zeros((words.len(), d));
    for (row, word) in words.iter().enumerate() {
        let ids = backbone.tokenizer().encode_word(word)?;
        let tokens = backbone.embed_tokens(&ids);
        embeddings
            .row_mut(row)
            .assign(&tokens.mean_axis(Axis(0)).expect("at least one token"));
    }
    Ok(AnchorSet {
        words: words.to_vec(),
        embeddings: Arc::new(embeddings),
    })
}

/// A trainable `[V′ × V]` probe over the vocabulary table.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    pub component: Component,
    pub probe: Matrix,
}

impl PrototypeBank {
    pub fn prototypes(&self) -> usize {
        self.probe.nrows()
    }
}

/// `probe · E`, the `[V′ × D]` prototype matrix.
pub fn probe_prototypes(bank: &PrototypeBank, vocab: &Matrix) -> Result<Matrix> {
    if bank.probe.ncols() != vocab.nrows() {
        return Err(Error::shape("probe_prototypes", vocab.nrows(), bank.probe.ncols()));
    }
    Ok(bank.probe.dot(vocab))
}

/// Query/key/value projections of one multi-head cross-attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttentionBlock {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub heads: usize,
}

/// Output rows plus per-head attention weights `[h × K × M]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Attended {
    pub output: Matrix,
    pub weights: Array3<f64>,
}

impl CrossAttentionBlock {
    pub fn validate(&self) -> Result<()> {
        let d = self.w_q.nrows();
        for (name, w) in [("w_q", &self.w_q), ("w_k", &self.w_k), ("w_v", &self.w_v)] {
            if w.dim() != (d, d) {
                return Err(Error::shape("cross-attention projection", format!("{name} [{d} × {d}]"), format!("{:?}", w.dim())));
            }
        }
        if self.heads == 0 || d % self.heads != 0 {
            return Err(Error::Config(format!("model width {d} is not divisible by {} heads", self.heads)));
        }
        Ok(())
    }

    pub fn attend(&self, queries_src: &Matrix, kv_src: &Matrix) -> Result<Attended> {
        self.validate()?;
        let mut tape = Tape::new();
        let q = tape.constant(queries_src.clone());
        let kv = tape.constant(kv_src.clone());
        let wq = tape.constant(self.w_q.clone());
        let wk = tape.constant(self.w_k.clone());
        let wv = tape.constant(self.w_v.clone());
        let (out, weights) = cross_attend(&mut tape, [wq, wk, wv], self.heads, q, kv)?;
        Ok(Attended {
            output: tape.value(out).clone(),
            weights: stack_heads(&tape, &weights),
        })
    }
}

pub(crate) fn stack_heads(tape: &Tape, heads: &[Var]) -> Array3<f64> {
    let (k, m) = tape.shape(heads[0]);
    let mut out = Array3::zeros((heads.len(), k, m));
    for (h, &v) in heads.iter().enumerate() {
        out.index_axis_mut(Axis(0), h).assign(tape.value(v));
    }
    out
}

/// Multi-head cross-attention recorded on `tape`.
///
/// `proj` holds the `[D × D]` query, key and value projections. Returns the
/// `[K × D]` output and one `[K × M]` softmax-weight node per head.
pub fn cross_attend(
    tape: &mut Tape,
    proj: [Var; 3],
    heads: usize,
    queries_src: Var,
    kv_src: Var,
) -> Result<(Var, Vec<Var>)> {
    let (m, kv_width) = tape.shape(kv_src);
    if m == 0 {
        return Err(Error::EmptyKeySet);
    }
    let d = tape.shape(proj[0]).0;
    let q_width = tape.shape(queries_src).1;
    if q_width != d || kv_width != d {
        return Err(Error::shape("cross_attend input width", d, format!("{q_width} / {kv_width}")));
    }
    let head_dim = d / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let q_all = tape.matmul(queries_src, proj[0]);
    let k_all = tape.matmul(kv_src, proj[1]);
    let v_all = tape.matmul(kv_src, proj[2]);
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = tape.slice_cols(q_all, h * head_dim, head_dim);
        let k = tape.slice_cols(k_all, h * head_dim, head_dim);
        let v = tape.slice_cols(v_all, h * head_dim, head_dim);
        let scores = tape.matmul_t(q, k);
        let scores = tape.affine(scores, scale, 0.0);
        let attn = tape.softmax_rows(scores, false);
        weights.push(attn);
        outs.push(tape.matmul(attn, v));
    }
    Ok((tape.concat_cols(&outs), weights))
}

/// Key/value source for one component's alignment.
#[derive(Debug, Clone, Copy)]
pub enum AlignmentContext<'a> {
    Anchors(&'a AnchorSet),
    Prototypes {
        bank: &'a PrototypeBank,
        vocab: &'a Matrix,
    },
}

/// Reprograms `[K × D]` patch embeddings of one component.
pub fn align_component(
    component: Component,
    patches_embedded: &Matrix,
    block: &CrossAttentionBlock,
    ctx: AlignmentContext<'_>,
) -> Result<Attended> {
    let kv = match (component, ctx) {
        (Component::Trend, AlignmentContext::Anchors(anchors)) => (*anchors.embeddings).clone(),
        (Component::Seasonal | Component::Residual, AlignmentContext::Prototypes { bank, vocab })
            if bank.component == component =>
        {
            probe_prototypes(bank, vocab)?
        }
        _ => {
            return Err(Error::Config(format!(
                "{component} alignment cannot use the supplied context"
            )))
        }
    };
    block.attend(patches_embedded, &kv)
}
