//! Time-series forecasting by multi-level text alignment.
//!
//! A window is decomposed into trend, seasonal and residual components. Each
//! component is normalized, patched and embedded, then reprogrammed into the
//! word-embedding space of a frozen GPT-2-style backbone: trend patches attend
//! over a fixed set of anchor words, seasonal and residual patches over
//! learned text prototypes. A component-specific prompt is prefixed, the
//! backbone runs forward only, and per-component heads produce forecasts that
//! are denormalized and summed.
//!
//! ```no_run
//! use std::sync::Arc;
//! use tsalign::{BackboneDims, FrozenBackbone, Model, ModelConfig};
//!
//! let backbone = Arc::new(FrozenBackbone::init_mini(0, BackboneDims::default())?);
//! let cfg = ModelConfig { seq_len: 96, horizon: 24, prototypes_seasonal: 24, prototypes_residual: 48, ..ModelConfig::default() };
//! let model = Model::new(cfg, backbone, 7)?;
//! let history = ndarray::Array2::<f64>::zeros((2, 96));
//! let forecast = model.forecast(&history)?;
//! assert_eq!(forecast.combined.dim(), (2, 24));
//! # Ok::<(), tsalign::Error>(())
//! ```

pub mod alignment;
pub mod autodiff;
pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod component;
pub mod config;
pub mod data;
pub mod decompose;
pub mod error;
pub mod evaluation;
pub mod head;
pub mod model;
pub mod preprocess;
pub mod prompt;
pub mod synthetic;
pub mod tokenizer;
pub mod training;

pub use backbone::{BackboneDims, FrozenBackbone};
pub use component::Component;
pub use config::RunConfig;
pub use data::{RawDataset, WindowPair};
pub use decompose::{additive_decompose, ComponentTriple, DecompConfig, DecompMethod};
pub use error::{Error, Result};
pub use evaluation::{evaluate, AblationVariant, Forecaster, MeanPredictor, MetricsReport};
pub use model::{Model, ModelConfig};
pub use training::{train, TrainConfig, TrainReport};
