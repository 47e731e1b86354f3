//! Run configuration: one TOML document tying a dataset descriptor to model,
//! backbone and training settings.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneDims, FrozenBackbone};
use crate::data::{load_csv, make_windows, split_dataset, subsample_fewshot, DatasetDescriptor, RawDataset, WindowPair};
use crate::error::{Error, Result};
use crate::evaluation::AblationVariant;
use crate::model::ModelConfig;
use crate::tokenizer::Tokenizer;
use crate::training::TrainConfig;

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "TSALIGN_OUT";
pub const DEFAULT_OUTPUT: &str = "runs";

/// Where the frozen backbone comes from: a checkpoint, or a seeded mini model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneSource {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Token list for checkpoints with a real vocabulary; hashed tokenization otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
    pub seed: u64,
    pub vocab_size: usize,
    pub d_model: usize,
    pub max_positions: usize,
    pub heads: usize,
}

impl Default for BackboneSource {
    fn default() -> Self {
        let d = BackboneDims::default();
        Self {
            checkpoint: None,
            vocab: None,
            seed: 0,
            vocab_size: d.vocab_size,
            d_model: d.d_model,
            max_positions: d.max_positions,
            heads: d.heads,
        }
    }
}

impl BackboneSource {
    pub fn dims(&self) -> BackboneDims {
        BackboneDims {
            vocab_size: self.vocab_size,
            d_model: self.d_model,
            max_positions: self.max_positions,
            heads: self.heads,
        }
    }

    pub fn build(&self) -> Result<FrozenBackbone> {
        let backbone = match &self.checkpoint {
            Some(path) => FrozenBackbone::load_checkpoint(path, self.dims())?,
            None => FrozenBackbone::init_mini(self.seed, self.dims())?,
        };
        match &self.vocab {
            Some(path) => backbone.with_tokenizer(Tokenizer::from_vocab_file(path)?),
            None => Ok(backbone),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset descriptor; relative paths resolve against the config file.
    pub dataset: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_variant")]
    pub variant: AblationVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub backbone: BackboneSource,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_variant() -> AblationVariant {
    AblationVariant::Default
}

/// Joins relative paths onto `base` and makes existing paths absolute, so snapshots load from anywhere.
fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    let joined = match base {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    };
    std::fs::canonicalize(&joined).unwrap_or(joined)
}

impl RunConfig {
    /// Parses a config and fills sequence length, horizon, period and prompt
    /// context from the dataset descriptor unless the `[model]` table sets them.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent())
    }

    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let model_table = table.get("model").and_then(|m| m.as_table());
        let has = |key: &str| model_table.is_some_and(|m| m.contains_key(key));
        let nested = |outer: &str, key: &str| {
            model_table
                .and_then(|m| m.get(outer))
                .and_then(|d| d.as_table())
                .is_some_and(|d| d.contains_key(key))
        };
        let (has_seq, has_horizon) = (has("seq_len"), has("horizon"));
        let has_period = nested("decomposition", "period");
        let has_context = nested("prompt", "dataset_context");

        let mut cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.dataset = resolve(base, &cfg.dataset);
        if let Some(ck) = &cfg.backbone.checkpoint {
            cfg.backbone.checkpoint = Some(resolve(base, ck));
        }
        if let Some(v) = &cfg.backbone.vocab {
            cfg.backbone.vocab = Some(resolve(base, v));
        }

        let desc = DatasetDescriptor::from_file(&cfg.dataset)?;
        if !has_seq {
            cfg.model.seq_len = desc.seq_len;
        }
        if !has_horizon {
            cfg.model.horizon = desc.horizon;
        }
        if !has_period {
            cfg.model.decomposition.period = desc.period;
        }
        if !has_context {
            cfg.model.prompt.dataset_context = desc.description.clone();
        }
        Ok(cfg)
    }

    /// Every validation failure, so they can be reported together.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if let Err(e) = self.backbone.dims().validate() {
            p.push(e.to_string());
        }
        for (label, path) in [("backbone checkpoint", &self.backbone.checkpoint), ("vocabulary", &self.backbone.vocab)] {
            if let Some(path) = path {
                if !path.exists() {
                    p.push(format!("{label} {} does not exist", path.display()));
                }
            }
        }
        let mut model = self.variant.apply(&self.model);
        if model.per_channel_alignment && model.channels == 0 {
            model.channels = 1;
        }
        p.extend(model.problems(&self.backbone.dims()));
        p.extend(self.train.problems());
        match DatasetDescriptor::from_file(&self.dataset) {
            Ok(desc) => {
                if let Err(e) = desc.split.validate() {
                    p.push(e.to_string());
                }
                if desc.stride == 0 {
                    p.push("dataset stride must be positive".into());
                }
                if !desc.path.exists() {
                    p.push(format!("dataset file {} does not exist", desc.path.display()));
                }
            }
            Err(e) => p.push(e.to_string()),
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("\n  ")))
        }
    }

    /// Model config after applying the variant and the dataset's channel count.
    pub fn effective_model(&self, channels: usize) -> ModelConfig {
        let mut m = self.variant.apply(&self.model);
        if m.per_channel_alignment {
            m.channels = channels;
        }
        m
    }

    /// Output root: explicit value, then the config, then the environment, then `runs`.
    pub fn output_root(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output.clone())
            .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn build_backbone(&self) -> Result<Arc<FrozenBackbone>> {
        Ok(Arc::new(self.backbone.build()?))
    }
}

/// A loaded dataset cut into train/val/test windows.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub descriptor: DatasetDescriptor,
    pub dataset: RawDataset,
    pub train: Vec<WindowPair>,
    pub val: Vec<WindowPair>,
    pub test: Vec<WindowPair>,
    pub warnings: Vec<String>,
}

/// Loads a descriptor's data and windows it with the given `L` and `H`.
pub fn load_windows(descriptor_path: &Path, seq_len: usize, horizon: usize) -> Result<PreparedData> {
    let descriptor = DatasetDescriptor::from_file(descriptor_path)?;
    let dataset = load_csv(&descriptor.path, &descriptor.name)?;
    let splits = split_dataset(&dataset, &descriptor.split, seq_len + horizon)?;
    let window = |ds: &RawDataset| -> Result<Vec<WindowPair>> {
        if ds.len() < seq_len + horizon {
            Ok(Vec::new())
        } else {
            make_windows(ds, seq_len, horizon, descriptor.stride)
        }
    };
    let mut train = window(&splits.train)?;
    if let Some(ratio) = descriptor.split.few_shot_ratio {
        train = subsample_fewshot(&train, ratio)?;
    }
    Ok(PreparedData {
        val: window(&splits.val)?,
        test: window(&splits.test)?,
        train,
        warnings: splits.warnings,
        dataset,
        descriptor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::write_csv;
    use crate::synthetic::{generate, SyntheticSpec};

    fn fixture(dir: &Path) -> PathBuf {
        let ds = generate(&SyntheticSpec {
            len: 300,
            ..SyntheticSpec::default()
        });
        write_csv(&ds, &dir.join("syn.csv")).unwrap();
        let desc = dir.join("syn.toml");
        std::fs::write(
            &desc,
            "name = \"syn\"\npath = \"syn.csv\"\nseq_len = 48\nhorizon = 12\nstride = 4\nperiod = 12\ndescription = \"toy data\"\n",
        )
        .unwrap();
        desc
    }

    #[test]
    fn descriptor_fills_unset_fields() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let cfg = RunConfig::parse("dataset = \"syn.toml\"\n[model]\nhorizon = 6\n", Some(dir.path())).unwrap();
        assert_eq!(cfg.model.seq_len, 48);
        assert_eq!(cfg.model.horizon, 6);
        assert_eq!(cfg.model.decomposition.period, 12);
        assert_eq!(cfg.model.prompt.dataset_context, "toy data");
        assert_eq!(cfg.variant, AblationVariant::Default);
    }

    #[test]
    fn snapshot_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let mut cfg = RunConfig::parse(
            "dataset = \"syn.toml\"\nseed = 3\n[backbone]\nd_model = 16\n[train]\nmax_steps = 5\n",
            Some(dir.path()),
        )
        .unwrap();
        cfg.variant = AblationVariant::D1NoInstruction;
        let text = cfg.to_toml().unwrap();
        let again = RunConfig::parse(&text, None).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn all_problems_reported_together() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let cfg = RunConfig::parse(
            "dataset = \"syn.toml\"\n[model]\npatch_stride = 0\nalign_heads = 5\n[train]\nbatch_size = 0\nlearning_rate = -1.0\n",
            Some(dir.path()),
        )
        .unwrap();
        assert!(cfg.problems().len() >= 4, "{:?}", cfg.problems());
        assert!(RunConfig::parse("dataset = \"missing.toml\"\n", Some(dir.path())).is_err());
        assert!(RunConfig::parse("dataset = \"syn.toml\"\nbogus = 1\n", Some(dir.path())).is_err());
    }

    #[test]
    fn windows_and_fewshot() {
        let dir = tempfile::tempdir().unwrap();
        let desc = fixture(dir.path());
        let data = load_windows(&desc, 48, 12).unwrap();
        assert!(!data.train.is_empty() && !data.test.is_empty());
        assert_eq!(data.train[0].history.dim(), (2, 48));
        let text = std::fs::read_to_string(&desc).unwrap() + "[split]\nfew_shot_ratio = 0.1\n";
        std::fs::write(&desc, text).unwrap();
        let few = load_windows(&desc, 48, 12).unwrap();
        assert_eq!(few.train.len(), (data.train.len() as f64 * 0.1).ceil() as usize);
    }
}
