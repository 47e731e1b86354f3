//! The full forecasting model and its forward pipeline.
//!
//! Per channel and per component: decompose → normalize → patchify → embed →
//! align → prefix prompt → frozen backbone → slice patch states → project →
//! denormalize; the three component forecasts are then summed.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alignment::{cross_attend, default_anchor_words, resolve_anchor_embeddings, stack_heads, AnchorSet};
use crate::autodiff::{Matrix, Tape, Var};
use crate::backbone::{BackboneDims, FrozenBackbone};
use crate::checkpoint::{NamedTensor, TensorCheckpoint};
use crate::component::Component;
use crate::data::WindowPair;
use crate::decompose::{additive_decompose, DecompConfig};
use crate::error::{Error, Result};
use crate::head::Forecast;
use crate::preprocess::{instance_normalize, patch_count, patchify, NormStats};
use crate::prompt::{component_stats, embed_prompt, render_prompt, PromptTemplate, DEFAULT_MAX_PROMPT_TOKENS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub seq_len: usize,
    pub horizon: usize,
    pub patch_len: usize,
    pub patch_stride: usize,
    pub decomposition: DecompConfig,
    pub align_heads: usize,
    pub prototypes_seasonal: usize,
    pub prototypes_residual: usize,
    pub align_trend: bool,
    pub align_seasonal: bool,
    pub align_residual: bool,
    pub anchor_words: Vec<String>,
    pub prompt: PromptTemplate,
    pub max_prompt_tokens: usize,
    /// Trainable soft-prompt rows prepended per component; 0 disables them.
    pub soft_prompt_tokens: usize,
    /// Separate alignment projections for each of `channels` channels.
    pub per_channel_alignment: bool,
    pub channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seq_len: 512,
            horizon: 96,
            patch_len: 16,
            patch_stride: 8,
            decomposition: DecompConfig::default(),
            align_heads: 4,
            prototypes_seasonal: 100,
            prototypes_residual: 500,
            align_trend: true,
            align_seasonal: true,
            align_residual: true,
            anchor_words: default_anchor_words(),
            prompt: PromptTemplate::default(),
            max_prompt_tokens: DEFAULT_MAX_PROMPT_TOKENS,
            soft_prompt_tokens: 0,
            per_channel_alignment: false,
            channels: 1,
        }
    }
}

impl ModelConfig {
    pub fn patch_count(&self) -> usize {
        patch_count(self.seq_len, self.patch_len, self.patch_stride)
    }

    pub fn aligned(&self, c: Component) -> bool {
        match c {
            Component::Trend => self.align_trend,
            Component::Seasonal => self.align_seasonal,
            Component::Residual => self.align_residual,
        }
    }

    /// Checks every constraint against the backbone and reports all failures together.
    pub fn problems(&self, dims: &BackboneDims) -> Vec<String> {
        let mut p = Vec::new();
        if self.seq_len == 0 || self.horizon == 0 {
            p.push(format!("seq_len ({}) and horizon ({}) must be positive", self.seq_len, self.horizon));
        }
        if self.patch_len == 0 || self.patch_len > self.seq_len {
            p.push(format!("patch_len {} must lie in 1..=seq_len ({})", self.patch_len, self.seq_len));
        }
        if self.patch_stride == 0 || self.patch_stride > self.patch_len {
            p.push(format!("patch_stride {} must lie in 1..=patch_len ({})", self.patch_stride, self.patch_len));
        }
        if let Err(e) = self.decomposition.validate() {
            p.push(e.to_string());
        }
        if self.decomposition.period > self.seq_len {
            p.push(format!("period {} exceeds seq_len {}", self.decomposition.period, self.seq_len));
        }
        if self.align_heads == 0 || dims.d_model % self.align_heads != 0 {
            p.push(format!("d_model {} is not divisible by align_heads {}", dims.d_model, self.align_heads));
        }
        if self.align_trend && self.anchor_words.is_empty() {
            p.push("trend alignment needs at least one anchor word".into());
        }
        let anchors = self.anchor_words.len();
        let (vs, vr, v) = (self.prototypes_seasonal, self.prototypes_residual, dims.vocab_size);
        if self.align_seasonal || self.align_residual {
            if !(vs < vr && vr < v) {
                p.push(format!(
                    "prototype counts must satisfy seasonal < residual < vocab, got {vs} / {vr} / {v}"
                ));
            }
            if self.align_trend && anchors >= vs {
                p.push(format!("anchor count {anchors} must be smaller than prototypes_seasonal {vs}"));
            }
        }
        if self.per_channel_alignment && self.channels == 0 {
            p.push("per_channel_alignment needs channels ≥ 1".into());
        }
        if self.patch_len > 0 && self.patch_stride > 0 && self.patch_len <= self.seq_len {
            let seq = self.max_prompt_tokens + self.soft_prompt_tokens + self.patch_count();
            if seq > dims.max_positions {
                p.push(format!(
                    "prompt ({}) + soft prompt ({}) + patches ({}) exceed the backbone's {} positions",
                    self.max_prompt_tokens,
                    self.soft_prompt_tokens,
                    self.patch_count(),
                    dims.max_positions
                ));
            }
        }
        p
    }

    pub fn validate(&self, dims: &BackboneDims) -> Result<()> {
        let p = self.problems(dims);
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }
}

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Arc<Matrix>,
}

/// Which tensors the optimizer may touch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterPartition {
    pub trainable: Vec<String>,
    pub frozen: Vec<String>,
}

#[derive(Debug, Clone)]
struct ComponentInput {
    patches: Arc<Matrix>,
    stats: NormStats,
    prompt: Arc<Matrix>,
    prompt_text: String,
}

/// Parameter-independent inputs of one window, computed once and reused across epochs.
#[derive(Debug, Clone)]
pub struct PreparedWindow {
    channels: Vec<[ComponentInput; 3]>,
    target: Option<Arc<Matrix>>,
}

impl PreparedWindow {
    pub fn channels(&self) -> usize {
        self.channels.len()
    }

    pub fn prompts(&self) -> Vec<String> {
        self.channels
            .iter()
            .flat_map(|c| c.iter().map(|i| i.prompt_text.clone()))
            .collect()
    }

    /// Frozen prompt embedding rows, channel-major in component order.
    pub fn prompt_embeddings(&self) -> Vec<Arc<Matrix>> {
        self.channels
            .iter()
            .flat_map(|c| c.iter().map(|i| Arc::clone(&i.prompt)))
            .collect()
    }

    pub fn stats(&self, channel: usize) -> [NormStats; 3] {
        let c = &self.channels[channel];
        [c[0].stats, c[1].stats, c[2].stats]
    }
}

struct Outputs {
    combined: Var,
    /// `[component][channel]`, each `1 × H` denormalized
    per_component: [Vec<Var>; 3],
    /// `[channel][component][head]`, each `K × M`; empty when the component is not aligned
    attention: Vec<[Vec<Var>; 3]>,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    backbone: Arc<FrozenBackbone>,
    anchors: Option<AnchorSet>,
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

fn embed_name(c: Component) -> (String, String) {
    (format!("embed.{c}.weight"), format!("embed.{c}.bias"))
}

fn align_prefix(c: Component, channel: Option<usize>) -> String {
    match channel {
        Some(n) => format!("align.{c}.ch{n}"),
        None => format!("align.{c}"),
    }
}

impl Model {
    /// Builds a model with freshly initialized trainable parameters.
    pub fn new(config: ModelConfig, backbone: Arc<FrozenBackbone>, seed: u64) -> Result<Self> {
        config.validate(&backbone.dims())?;
        let anchors = if config.align_trend {
            Some(resolve_anchor_embeddings(&config.anchor_words, &backbone)?)
        } else {
            None
        };
        let d = backbone.d_model();
        let v = backbone.dims().vocab_size;
        let k = config.patch_count();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut add = |name: String, rows: usize, cols: usize, std: f64| {
            let value = if std == 0.0 {
                Matrix::zeros((rows, cols))
            } else {
                let dist = Normal::new(0.0, std).expect("positive std");
                Matrix::from_shape_fn((rows, cols), |_| dist.sample(&mut rng))
            };
            params.push(Param {
                name,
                value: Arc::new(value),
            });
        };
        for c in Component::ALL {
            let (w, b) = embed_name(c);
            add(w, config.patch_len, d, 1.0 / (config.patch_len as f64).sqrt());
            add(b, 1, d, 0.0);
        }
        let channel_slots: Vec<Option<usize>> = if config.per_channel_alignment {
            (0..config.channels).map(Some).collect()
        } else {
            vec![None]
        };
        for c in Component::ALL {
            if !config.aligned(c) {
                continue;
            }
            for slot in &channel_slots {
                let prefix = align_prefix(c, *slot);
                for proj in ["w_q", "w_k", "w_v"] {
                    add(format!("{prefix}.{proj}"), d, d, 1.0 / (d as f64).sqrt());
                }
            }
            let rows = match c {
                Component::Trend => continue,
                Component::Seasonal => config.prototypes_seasonal,
                Component::Residual => config.prototypes_residual,
            };
            add(format!("probe.{c}"), rows, v, 1.0 / (v as f64).sqrt());
        }
        if config.soft_prompt_tokens > 0 {
            for c in Component::ALL {
                add(format!("soft_prompt.{c}"), config.soft_prompt_tokens, d, 0.1);
            }
        }
        for c in Component::ALL {
            add(format!("head.{c}.weight"), k * d, config.horizon, 1.0 / ((k * d) as f64).sqrt());
            add(format!("head.{c}.bias"), 1, config.horizon, 0.0);
        }
        let index = params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        Ok(Self {
            config,
            backbone,
            anchors,
            params,
            index,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn backbone(&self) -> &Arc<FrozenBackbone> {
        &self.backbone
    }

    pub fn anchors(&self) -> Option<&AnchorSet> {
        self.anchors.as_ref()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Replaces the value of parameter `i`; the shape must not change.
    pub fn set_param(&mut self, i: usize, value: Matrix) -> Result<()> {
        let p = &mut self.params[i];
        if p.value.dim() != value.dim() {
            return Err(Error::shape("set_param", format!("{:?}", p.value.dim()), format!("{:?}", value.dim())));
        }
        p.value = Arc::new(value);
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn partition(&self) -> ParameterPartition {
        let mut frozen: Vec<String> = self
            .backbone
            .named_tensors()
            .into_iter()
            .map(|(n, _)| format!("backbone.{n}"))
            .collect();
        if self.anchors.is_some() {
            frozen.push("anchors.embeddings".into());
        }
        ParameterPartition {
            trainable: self.params.iter().map(|p| p.name.clone()).collect(),
            frozen,
        }
    }

    /// SHA-256 over all trainable tensors.
    pub fn params_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for v in p.value.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    fn prepare_history(&self, history: &Matrix) -> Result<Vec<[ComponentInput; 3]>> {
        let cfg = &self.config;
        if history.ncols() != cfg.seq_len {
            return Err(Error::shape("history length", cfg.seq_len, history.ncols()));
        }
        if cfg.per_channel_alignment && history.nrows() != cfg.channels {
            return Err(Error::shape("channel count", cfg.channels, history.nrows()));
        }
        let max_tokens = cfg.max_prompt_tokens;
        history
            .rows()
            .into_iter()
            .map(|row| {
                let series = row.to_vec();
                let parts = additive_decompose(&series, &cfg.decomposition)?;
                let mut inputs = Vec::with_capacity(3);
                for (c, values) in Component::ALL.into_iter().zip([&parts.trend, &parts.seasonal, &parts.residual]) {
                    let (z, stats) = instance_normalize(values);
                    let patches = patchify(&z, cfg.patch_len, cfg.patch_stride)?.patches;
                    let text = render_prompt(&cfg.prompt, c, &component_stats(values), cfg.seq_len, cfg.horizon);
                    let prompt = embed_prompt(&text, &self.backbone, max_tokens);
                    inputs.push(ComponentInput {
                        patches: Arc::new(patches),
                        stats,
                        prompt: Arc::new(prompt.embedded),
                        prompt_text: text,
                    });
                }
                Ok(inputs.try_into().expect("three components"))
            })
            .collect()
    }

    /// Decomposes, normalizes, patches and renders prompts for a `[N × L]` history.
    pub fn prepare(&self, history: &Matrix) -> Result<PreparedWindow> {
        Ok(PreparedWindow {
            channels: self.prepare_history(history)?,
            target: None,
        })
    }

    pub fn prepare_pair(&self, pair: &WindowPair) -> Result<PreparedWindow> {
        if pair.target.ncols() != self.config.horizon || pair.target.nrows() != pair.history.nrows() {
            return Err(Error::shape(
                "target",
                format!("[{} × {}]", pair.history.nrows(), self.config.horizon),
                format!("{:?}", pair.target.dim()),
            ));
        }
        Ok(PreparedWindow {
            channels: self.prepare_history(&pair.history)?,
            target: Some(Arc::new(pair.target.clone())),
        })
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if trainable {
                    tape.param(i, Arc::clone(&p.value))
                } else {
                    tape.constant_shared(Arc::clone(&p.value))
                }
            })
            .collect()
    }

    fn var(&self, bound: &[Var], name: &str) -> Var {
        bound[self.index[name]]
    }

    fn forward(&self, tape: &mut Tape, window: &PreparedWindow, bound: &[Var]) -> Result<Outputs> {
        let cfg = &self.config;
        let k = cfg.patch_count();
        let d = self.backbone.d_model();
        let vocab = tape.constant_shared(Arc::clone(self.backbone.vocab_table()));
        let mut kv_sources: [Option<Var>; 3] = [None; 3];
        for c in Component::ALL {
            if !cfg.aligned(c) {
                continue;
            }
            kv_sources[c.index()] = Some(match c {
                Component::Trend => {
                    let anchors = self.anchors.as_ref().expect("anchors resolved when trend is aligned");
                    tape.constant_shared(Arc::clone(&anchors.embeddings))
                }
                _ => {
                    let probe = self.var(bound, &format!("probe.{c}"));
                    tape.matmul(probe, vocab)
                }
            });
        }

        let mut per_component: [Vec<Var>; 3] = Default::default();
        let mut attention = Vec::with_capacity(window.channels.len());
        let mut channel_outputs = Vec::with_capacity(window.channels.len());
        for (n, inputs) in window.channels.iter().enumerate() {
            let mut sum: Option<Var> = None;
            let mut channel_attention: [Vec<Var>; 3] = Default::default();
            for c in Component::ALL {
                let input = &inputs[c.index()];
                let patches = tape.constant_shared(Arc::clone(&input.patches));
                let (w, b) = embed_name(c);
                let w = self.var(bound, &w);
                let b = self.var(bound, &b);
                let emb = tape.matmul(patches, w);
                let mut tokens = tape.add_row(emb, b);
                if let Some(kv) = kv_sources[c.index()] {
                    let slot = cfg.per_channel_alignment.then_some(n);
                    let prefix = align_prefix(c, slot);
                    let proj = ["w_q", "w_k", "w_v"].map(|p| self.var(bound, &format!("{prefix}.{p}")));
                    let (z, weights) = cross_attend(tape, proj, cfg.align_heads, tokens, kv)?;
                    channel_attention[c.index()] = weights;
                    tokens = z;
                }
                let mut prefix_rows = Vec::new();
                if cfg.soft_prompt_tokens > 0 {
                    prefix_rows.push(self.var(bound, &format!("soft_prompt.{c}")));
                }
                if input.prompt.nrows() > 0 {
                    prefix_rows.push(tape.constant_shared(Arc::clone(&input.prompt)));
                }
                let prompt_len: usize = prefix_rows.iter().map(|&v| tape.shape(v).0).sum();
                prefix_rows.push(tokens);
                let sequence = if prefix_rows.len() == 1 {
                    tokens
                } else {
                    tape.concat_rows(&prefix_rows)
                };
                let hidden = self.backbone.forward_tape(tape, sequence)?;
                let states = tape.slice_rows(hidden, prompt_len, k);
                let flat = tape.reshape(states, 1, k * d);
                let hw = self.var(bound, &format!("head.{c}.weight"));
                let hb = self.var(bound, &format!("head.{c}.bias"));
                let out = tape.matmul(flat, hw);
                let out = tape.add_row(out, hb);
                let out = tape.affine(out, input.stats.scale(), input.stats.mean);
                per_component[c.index()].push(out);
                sum = Some(match sum {
                    None => out,
                    Some(acc) => tape.add(acc, out),
                });
            }
            attention.push(channel_attention);
            channel_outputs.push(sum.expect("three components"));
        }
        let combined = tape.concat_rows(&channel_outputs);
        Ok(Outputs {
            combined,
            per_component,
            attention,
        })
    }

    pub fn forecast_prepared(&self, window: &PreparedWindow) -> Result<Forecast> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let out = self.forward(&mut tape, window, &bound)?;
        let stack = |vars: &[Var]| {
            let views: Vec<_> = vars.iter().map(|&v| tape.value(v).view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("equal widths")
        };
        Ok(Forecast {
            per_component: [
                stack(&out.per_component[0]),
                stack(&out.per_component[1]),
                stack(&out.per_component[2]),
            ],
            combined: tape.value(out.combined).clone(),
        })
    }

    /// Forecast for a `[N × L]` history; channels are processed independently.
    pub fn forecast(&self, history: &Matrix) -> Result<Forecast> {
        self.forecast_prepared(&self.prepare(history)?)
    }

    fn target_of(window: &PreparedWindow) -> Result<Arc<Matrix>> {
        window
            .target
            .clone()
            .ok_or_else(|| Error::Config("window was prepared without a target".into()))
    }

    /// Mean squared error of the combined forecast against the window target.
    pub fn loss(&self, window: &PreparedWindow) -> Result<f64> {
        let target = Self::target_of(window)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let out = self.forward(&mut tape, window, &bound)?;
        let loss = tape.mse_loss(out.combined, target);
        Ok(tape.value(loss)[[0, 0]])
    }

    /// Loss and its gradient for every trainable parameter (zeros where unused), in [`Model::params`] order.
    pub fn loss_and_grads(&self, window: &PreparedWindow) -> Result<(f64, Vec<Matrix>)> {
        let target = Self::target_of(window)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, true);
        let out = self.forward(&mut tape, window, &bound)?;
        let loss = tape.mse_loss(out.combined, target);
        let mut grads = tape.backward(loss);
        let value = tape.value(loss)[[0, 0]];
        let grads = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| grads.remove(&i).unwrap_or_else(|| Matrix::zeros(p.value.dim())))
            .collect();
        Ok((value, grads))
    }

    /// Alignment weights `[h × K × M]` per component for one channel; `None` where alignment is off.
    pub fn attention(&self, history: &Matrix, channel: usize) -> Result<[Option<Array3<f64>>; 3]> {
        if channel >= history.nrows() {
            return Err(Error::shape("channel index", format!("< {}", history.nrows()), channel));
        }
        let prepared = self.prepare(history)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let out = self.forward(&mut tape, &prepared, &bound)?;
        Ok(out.attention[channel]
            .each_ref()
            .map(|heads| (!heads.is_empty()).then(|| stack_heads(&tape, heads))))
    }

    /// Trend-alignment weights `[h × K × A]` for one channel of a history.
    pub fn trend_attention(&self, history: &Matrix, channel: usize) -> Result<Array3<f64>> {
        if self.anchors.is_none() {
            return Err(Error::NoAlignment);
        }
        let [trend, _, _] = self.attention(history, channel)?;
        trend.ok_or(Error::NoAlignment)
    }

    /// Trainable tensors plus the backbone fingerprint they were trained against.
    pub fn to_checkpoint(&self) -> TensorCheckpoint {
        let mut ck = TensorCheckpoint::default();
        ck.metadata.insert("backbone_fingerprint".into(), self.backbone.fingerprint().to_string());
        ck.tensors = self
            .params
            .iter()
            .map(|p| NamedTensor::from_matrix(p.name.clone(), &p.value, false))
            .collect();
        ck
    }

    /// Overwrites trainable tensors from a checkpoint written by [`Model::to_checkpoint`].
    pub fn load_params(&mut self, ck: &TensorCheckpoint) -> Result<()> {
        if let Some(fp) = ck.metadata.get("backbone_fingerprint") {
            if fp != self.backbone.fingerprint() {
                return Err(Error::Config(format!(
                    "checkpoint was trained against backbone {fp}, this model uses {}",
                    self.backbone.fingerprint()
                )));
            }
        }
        let mut values = Vec::with_capacity(self.params.len());
        for p in &self.params {
            let (r, c) = p.value.dim();
            values.push(ck.require_shape(&p.name, &[r, c])?.to_matrix());
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value = Arc::new(v);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneDims;
    use crate::decompose::DecompMethod;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            seq_len: 24,
            horizon: 6,
            patch_len: 8,
            patch_stride: 4,
            decomposition: DecompConfig {
                k: 2,
                period: 6,
                method: DecompMethod::MovingAverage,
                loess_bandwidth: 0.3,
            },
            align_heads: 2,
            prototypes_seasonal: 16,
            prototypes_residual: 32,
            max_prompt_tokens: 16,
            ..ModelConfig::default()
        }
    }

    pub(crate) fn tiny_backbone() -> Arc<FrozenBackbone> {
        Arc::new(
            FrozenBackbone::init_mini(
                5,
                BackboneDims {
                    vocab_size: 64,
                    d_model: 16,
                    max_positions: 64,
                    heads: 4,
                },
            )
            .unwrap(),
        )
    }

    fn history(n: usize, l: usize) -> Matrix {
        Matrix::from_shape_fn((n, l), |(c, t)| {
            (t as f64 * 0.3 + c as f64).sin() * (1.0 + c as f64) + 0.05 * t as f64
        })
    }

    #[test]
    fn constant_input_gives_finite_forecast() {
        let model = Model::new(tiny_config(), tiny_backbone(), 1).unwrap();
        let f = model.forecast(&Matrix::from_elem((1, 24), 3.5)).unwrap();
        assert_eq!(f.combined.dim(), (1, 6));
        assert!(f.combined.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn combined_is_sum_of_components() {
        let model = Model::new(tiny_config(), tiny_backbone(), 1).unwrap();
        let f = model.forecast(&history(3, 24)).unwrap();
        let sum = &(&f.per_component[0] + &f.per_component[1]) + &f.per_component[2];
        assert_eq!(f.combined, sum);
    }

    #[test]
    fn channel_permutation_equivariance() {
        let model = Model::new(tiny_config(), tiny_backbone(), 1).unwrap();
        let h = history(3, 24);
        let perm = [2, 0, 1];
        let permuted = Matrix::from_shape_fn((3, 24), |(c, t)| h[[perm[c], t]]);
        let a = model.forecast(&h).unwrap().combined;
        let b = model.forecast(&permuted).unwrap().combined;
        for c in 0..3 {
            assert_eq!(b.row(c), a.row(perm[c]));
        }
        // determinism
        assert_eq!(model.forecast(&h).unwrap().combined, a);
    }

    #[test]
    fn partition_is_disjoint_and_complete() {
        let model = Model::new(tiny_config(), tiny_backbone(), 1).unwrap();
        let part = model.partition();
        assert!(part.trainable.iter().all(|t| !part.frozen.contains(t)));
        assert!(part.frozen.iter().all(|f| f.starts_with("backbone.") || f == "anchors.embeddings"));
        assert!(part.trainable.iter().any(|t| t == "probe.seasonal"));
        assert!(part.trainable.iter().any(|t| t == "align.trend.w_q"));
        assert_eq!(part.frozen.len(), 2 + 6 * 12 + 2 + 1);
    }

    #[test]
    fn disabled_alignment_has_no_alignment_params() {
        let cfg = ModelConfig {
            align_trend: false,
            align_seasonal: false,
            align_residual: false,
            ..tiny_config()
        };
        let model = Model::new(cfg, tiny_backbone(), 1).unwrap();
        assert!(model.params().iter().all(|p| !p.name.starts_with("align.") && !p.name.starts_with("probe.")));
        assert!(model.anchors().is_none());
        assert!(matches!(model.trend_attention(&history(1, 24), 0), Err(Error::NoAlignment)));
        assert!(model.forecast(&history(2, 24)).is_ok());
    }

    #[test]
    fn validation_reports_every_problem() {
        let cfg = ModelConfig {
            patch_len: 40,
            align_heads: 3,
            prototypes_seasonal: 40,
            prototypes_residual: 20,
            ..tiny_config()
        };
        let problems = cfg.problems(&tiny_backbone().dims());
        assert!(problems.len() >= 3, "{problems:?}");
        assert!(Model::new(cfg, tiny_backbone(), 1).is_err());
    }

    #[test]
    fn attention_shapes_and_uniform_zero_queries() {
        let mut model = Model::new(tiny_config(), tiny_backbone(), 1).unwrap();
        let h = history(2, 24);
        let att = model.trend_attention(&h, 1).unwrap();
        assert_eq!(att.dim(), (2, tiny_config().patch_count(), 12));
        let i = model.param_index("align.trend.w_q").unwrap();
        model.set_param(i, Matrix::zeros((16, 16))).unwrap();
        let att = model.trend_attention(&h, 0).unwrap();
        assert!(att.iter().all(|&w| (w - 1.0 / 12.0).abs() < 1e-15));
    }

    #[test]
    fn checkpoint_roundtrip_restores_params() {
        let a = Model::new(tiny_config(), tiny_backbone(), 1).unwrap();
        let mut b = Model::new(tiny_config(), tiny_backbone(), 2).unwrap();
        assert_ne!(a.params_fingerprint(), b.params_fingerprint());
        b.load_params(&a.to_checkpoint()).unwrap();
        for (x, y) in a.params().iter().zip(b.params()) {
            for (u, v) in x.value.iter().zip(y.value.iter()) {
                assert_eq!(*u as f32, *v as f32);
            }
        }
        let other = Arc::new(FrozenBackbone::init_mini(6, tiny_backbone().dims()).unwrap());
        let mut c = Model::new(tiny_config(), other, 1).unwrap();
        assert!(c.load_params(&a.to_checkpoint()).is_err());
    }

    #[test]
    fn per_channel_mode_creates_channel_weights() {
        let cfg = ModelConfig {
            per_channel_alignment: true,
            channels: 2,
            ..tiny_config()
        };
        let model = Model::new(cfg, tiny_backbone(), 1).unwrap();
        assert!(model.param("align.seasonal.ch1.w_k").is_some());
        assert!(model.forecast(&history(2, 24)).is_ok());
        assert!(model.forecast(&history(3, 24)).is_err());
    }

    #[test]
    fn soft_prompt_receives_gradient() {
        let cfg = ModelConfig {
            soft_prompt_tokens: 2,
            ..tiny_config()
        };
        let model = Model::new(cfg, tiny_backbone(), 1).unwrap();
        let pair = WindowPair {
            history: history(1, 24),
            target: Matrix::ones((1, 6)),
            start_index: 0,
        };
        let prepared = model.prepare_pair(&pair).unwrap();
        let (_, grads) = model.loss_and_grads(&prepared).unwrap();
        let i = model.param_index("soft_prompt.trend").unwrap();
        assert!(grads[i].iter().any(|&g| g != 0.0));
    }
}
