//! Component-specific prefix prompts.
//!
//! A prompt is hard text (dataset context, a statistics line and a task
//! instruction) that is tokenized and looked up in the frozen vocabulary
//! table, then prepended to the reprogrammed patch tokens.

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::backbone::FrozenBackbone;
use crate::component::Component;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_PROMPT_TOKENS: usize = 64;
pub const DEFAULT_INSTRUCTION: &str = "forecast the next {H} steps given the previous {L} steps [{component}]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptTemplate {
    pub dataset_context: String,
    /// Supports the `{H}`, `{L}` and `{component}` slots.
    pub instruction_pattern: String,
    pub include_stats: bool,
    pub include_instruction: bool,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            dataset_context: String::new(),
            instruction_pattern: DEFAULT_INSTRUCTION.to_string(),
            include_stats: true,
            include_instruction: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Flat,
}

impl Direction {
    pub fn word(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Flat => "flat",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub direction: Direction,
}

/// Min, max, mean and the sign of the mean lag-1 difference.
///
/// The direction is `flat` when the net change is under 1% of the range.
pub fn component_stats(x: &[f64]) -> ComponentStats {
    if x.is_empty() {
        return ComponentStats {
            min: 0.0,
            max: 0.0,
            mean: 0.0,
            direction: Direction::Flat,
        };
    }
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    // the lag-1 differences telescope to last - first
    let net = x[x.len() - 1] - x[0];
    let direction = if net.abs() <= 0.01 * (max - min) || max == min {
        Direction::Flat
    } else if net > 0.0 {
        Direction::Up
    } else {
        Direction::Down
    };
    ComponentStats {
        min,
        max,
        mean,
        direction,
    }
}

fn fmt_num(v: f64) -> String {
    // two decimals, no trailing zeros, no negative zero
    format!("{}", (v * 100.0).round() / 100.0 + 0.0)
}

pub fn render_prompt(
    template: &PromptTemplate,
    component: Component,
    stats: &ComponentStats,
    seq_len: usize,
    horizon: usize,
) -> String {
    let mut parts = Vec::new();
    let context = template.dataset_context.trim();
    if !context.is_empty() {
        parts.push(context.to_string());
    }
    if template.include_stats {
        parts.push(format!(
            "{component} statistics: min={} max={} mean={} direction={}",
            fmt_num(stats.min),
            fmt_num(stats.max),
            fmt_num(stats.mean),
            stats.direction.word()
        ));
    }
    if template.include_instruction {
        parts.push(
            template
                .instruction_pattern
                .replace("{H}", &horizon.to_string())
                .replace("{L}", &seq_len.to_string())
                .replace("{component}", component.name()),
        );
    }
    parts.join(" ")
}

/// Token ids plus their frozen `[P × D]` embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding {
    pub tokens: Vec<usize>,
    pub embedded: Matrix,
}

impl PromptEmbedding {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Tokenizes and embeds `text`; beyond `max_tokens` the leading tokens are dropped.
pub fn embed_prompt(text: &str, backbone: &FrozenBackbone, max_tokens: usize) -> PromptEmbedding {
    let mut tokens = backbone.tokenizer().encode(text);
    if tokens.len() > max_tokens {
        tokens.drain(..tokens.len() - max_tokens);
    }
    let embedded = backbone.embed_tokens(&tokens);
    PromptEmbedding { tokens, embedded }
}

/// Prompt rows followed by patch rows; returns the combined matrix and the prompt length.
pub fn prefix_concat(prompt: &Matrix, patches: &Matrix) -> Result<(Matrix, usize)> {
    if prompt.nrows() > 0 && prompt.ncols() != patches.ncols() {
        return Err(Error::shape("prefix_concat", patches.ncols(), prompt.ncols()));
    }
    let p = prompt.nrows();
    let mut out = Matrix::zeros((p + patches.nrows(), patches.ncols()));
    if p > 0 {
        out.slice_mut(ndarray::s![..p, ..]).assign(prompt);
    }
    out.slice_mut(ndarray::s![p.., ..]).assign(patches);
    Ok((out, p))
}
