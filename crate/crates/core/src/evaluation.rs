//! Metrics, the ablation grid, zero-shot transfer and attention-map export.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{parse_word_list, words_hash, NOISE_ANCHORS, SYNONYM_ANCHORS};
use crate::autodiff::Matrix;
use crate::backbone::FrozenBackbone;
use crate::data::WindowPair;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::training::{train, TrainConfig, TrainReport};

pub trait Forecaster: Sync {
    /// Maps a `[N × L]` history to a `[N × H]` forecast.
    fn predict(&self, history: &Matrix) -> Result<Matrix>;
}

impl Forecaster for Model {
    fn predict(&self, history: &Matrix) -> Result<Matrix> {
        Ok(self.forecast(history)?.combined)
    }
}

/// Repeats each channel's history mean over the horizon.
#[derive(Debug, Clone, Copy)]
pub struct MeanPredictor {
    pub horizon: usize,
}

impl Forecaster for MeanPredictor {
    fn predict(&self, history: &Matrix) -> Result<Matrix> {
        let means = history
            .mean_axis(Axis(1))
            .ok_or_else(|| Error::shape("mean predictor history", "L ≥ 1", 0))?;
        Ok(Matrix::from_shape_fn((history.nrows(), self.horizon), |(c, _)| means[c]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon: usize,
    pub mse: f64,
    pub mae: f64,
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub variant: String,
    pub seed: Option<u64>,
    /// Set for transfer runs.
    pub source_dataset: Option<String>,
    pub horizons: Vec<HorizonMetrics>,
    pub runtime_seconds: f64,
}

impl MetricsReport {
    /// Combines single-horizon reports (one model per horizon) into one.
    pub fn merge(reports: &[MetricsReport]) -> Result<MetricsReport> {
        let first = reports.first().ok_or(Error::EmptyTestSet)?;
        let mut horizons: Vec<HorizonMetrics> = reports.iter().flat_map(|r| r.horizons.clone()).collect();
        horizons.sort_by_key(|h| h.horizon);
        Ok(MetricsReport {
            horizons,
            runtime_seconds: reports.iter().map(|r| r.runtime_seconds).sum(),
            ..first.clone()
        })
    }

    pub fn mse(&self) -> f64 {
        self.horizons.iter().map(|h| h.mse).sum::<f64>() / self.horizons.len().max(1) as f64
    }

    pub fn mae(&self) -> f64 {
        self.horizons.iter().map(|h| h.mae).sum::<f64>() / self.horizons.len().max(1) as f64
    }

    pub const CSV_HEADER: [&'static str; 8] = ["dataset", "source", "variant", "horizon", "seed", "mse", "mae", "windows"];

    pub fn csv_rows(&self) -> Vec<[String; 8]> {
        self.horizons
            .iter()
            .map(|h| {
                [
                    self.dataset.clone(),
                    self.source_dataset.clone().unwrap_or_default(),
                    self.variant.clone(),
                    h.horizon.to_string(),
                    self.seed.map(|s| s.to_string()).unwrap_or_default(),
                    format!("{:.6}", h.mse),
                    format!("{:.6}", h.mae),
                    h.windows.to_string(),
                ]
            })
            .collect()
    }

    pub fn write_csv(reports: &[MetricsReport], path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(Self::CSV_HEADER).map_err(|e| csv_io(path, e))?;
        for r in reports {
            for row in r.csv_rows() {
                w.write_record(&row).map_err(|e| csv_io(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// Mean MSE and MAE over every window and channel of `test`.
pub fn evaluate(model: &dyn Forecaster, test: &[WindowPair], dataset: &str) -> Result<MetricsReport> {
    let started = Instant::now();
    let first = test.first().ok_or(Error::EmptyTestSet)?;
    let horizon = first.target.ncols();
    let errors: Vec<(f64, f64, usize)> = test
        .par_iter()
        .map(|w| {
            let pred = model.predict(&w.history)?;
            if pred.dim() != w.target.dim() {
                return Err(Error::shape("forecast", format!("{:?}", w.target.dim()), format!("{:?}", pred.dim())));
            }
            let (mut se, mut ae) = (0.0, 0.0);
            for (p, t) in pred.iter().zip(&w.target) {
                se += (p - t).powi(2);
                ae += (p - t).abs();
            }
            Ok((se, ae, pred.len()))
        })
        .collect::<Result<_>>()?;
    let count: usize = errors.iter().map(|e| e.2).sum();
    let n = count.max(1) as f64;
    Ok(MetricsReport {
        dataset: dataset.to_string(),
        variant: "default".into(),
        seed: None,
        source_dataset: None,
        horizons: vec![HorizonMetrics {
            horizon,
            mse: errors.iter().map(|e| e.0).sum::<f64>() / n,
            mae: errors.iter().map(|e| e.1).sum::<f64>() / n,
            windows: test.len(),
        }],
        runtime_seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationVariant {
    #[serde(rename = "default")]
    Default,
    #[serde(rename = "A1_no_alignment")]
    A1NoAlignment,
    #[serde(rename = "B1_trend_only")]
    B1TrendOnly,
    #[serde(rename = "B2_seasonal_only")]
    B2SeasonalOnly,
    #[serde(rename = "B3_residual_only")]
    B3ResidualOnly,
    #[serde(rename = "C1_noise_anchors")]
    C1NoiseAnchors,
    #[serde(rename = "C2_synonymous_anchors")]
    C2SynonymousAnchors,
    #[serde(rename = "D1_no_instruction")]
    D1NoInstruction,
    #[serde(rename = "D2_no_domain_features")]
    D2NoDomainFeatures,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 9] = [
        AblationVariant::Default,
        AblationVariant::A1NoAlignment,
        AblationVariant::B1TrendOnly,
        AblationVariant::B2SeasonalOnly,
        AblationVariant::B3ResidualOnly,
        AblationVariant::C1NoiseAnchors,
        AblationVariant::C2SynonymousAnchors,
        AblationVariant::D1NoInstruction,
        AblationVariant::D2NoDomainFeatures,
    ];

    pub fn id(self) -> &'static str {
        match self {
            AblationVariant::Default => "default",
            AblationVariant::A1NoAlignment => "A1_no_alignment",
            AblationVariant::B1TrendOnly => "B1_trend_only",
            AblationVariant::B2SeasonalOnly => "B2_seasonal_only",
            AblationVariant::B3ResidualOnly => "B3_residual_only",
            AblationVariant::C1NoiseAnchors => "C1_noise_anchors",
            AblationVariant::C2SynonymousAnchors => "C2_synonymous_anchors",
            AblationVariant::D1NoInstruction => "D1_no_instruction",
            AblationVariant::D2NoDomainFeatures => "D2_no_domain_features",
        }
    }

    /// Human-readable config changes; empty only for `default`.
    pub fn delta(self) -> Vec<&'static str> {
        match self {
            AblationVariant::Default => vec![],
            AblationVariant::A1NoAlignment => vec!["align_trend = false", "align_seasonal = false", "align_residual = false"],
            AblationVariant::B1TrendOnly => vec!["align_seasonal = false", "align_residual = false"],
            AblationVariant::B2SeasonalOnly => vec!["align_trend = false", "align_residual = false"],
            AblationVariant::B3ResidualOnly => vec!["align_trend = false", "align_seasonal = false"],
            AblationVariant::C1NoiseAnchors => vec!["anchor_words = noise list"],
            AblationVariant::C2SynonymousAnchors => vec!["anchor_words = synonym list"],
            AblationVariant::D1NoInstruction => vec!["prompt.include_instruction = false"],
            AblationVariant::D2NoDomainFeatures => vec!["prompt.include_stats = false"],
        }
    }

    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut cfg = base.clone();
        let align = |cfg: &mut ModelConfig, t: bool, s: bool, r: bool| {
            cfg.align_trend = t;
            cfg.align_seasonal = s;
            cfg.align_residual = r;
        };
        match self {
            AblationVariant::Default => {}
            AblationVariant::A1NoAlignment => align(&mut cfg, false, false, false),
            AblationVariant::B1TrendOnly => align(&mut cfg, true, false, false),
            AblationVariant::B2SeasonalOnly => align(&mut cfg, false, true, false),
            AblationVariant::B3ResidualOnly => align(&mut cfg, false, false, true),
            AblationVariant::C1NoiseAnchors => cfg.anchor_words = parse_word_list(NOISE_ANCHORS),
            AblationVariant::C2SynonymousAnchors => cfg.anchor_words = parse_word_list(SYNONYM_ANCHORS),
            AblationVariant::D1NoInstruction => cfg.prompt.include_instruction = false,
            AblationVariant::D2NoDomainFeatures => cfg.prompt.include_stats = false,
        }
        cfg
    }

    /// Parses `all` or a comma-separated list of ids.
    pub fn parse_list(text: &str) -> Result<Vec<AblationVariant>> {
        if text.trim() == "all" {
            return Ok(Self::ALL.to_vec());
        }
        text.split(',').map(|s| s.trim().parse()).collect()
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.id().eq_ignore_ascii_case(s) || v.id()[..2].eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let ids: Vec<_> = Self::ALL.iter().map(|v| v.id()).collect();
                Error::Config(format!("unknown variant {s:?}; expected one of {}", ids.join(", ")))
            })
    }
}

/// Everything an ablation cell needs besides its variant and seed.
#[derive(Debug, Clone)]
pub struct AblationSetup {
    pub dataset: String,
    pub model: ModelConfig,
    pub backbone: Arc<FrozenBackbone>,
    pub train: TrainConfig,
    pub train_windows: Vec<WindowPair>,
    pub val_windows: Vec<WindowPair>,
    pub test_windows: Vec<WindowPair>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationCell {
    pub variant: AblationVariant,
    pub seed: u64,
    pub anchor_hash: String,
    pub metrics: Option<MetricsReport>,
    pub train_report: Option<TrainReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: AblationVariant,
    pub runs: usize,
    pub failures: usize,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub cells: Vec<AblationCell>,
    pub summary: Vec<VariantSummary>,
}

impl AblationTable {
    pub fn summary_for(&self, v: AblationVariant) -> Option<&VariantSummary> {
        self.summary.iter().find(|s| s.variant == v)
    }

    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(["variant", "runs", "failures", "mse_mean", "mse_std", "mae_mean", "mae_std"])
            .map_err(|e| csv_io(path, e))?;
        for s in &self.summary {
            w.write_record([
                s.variant.id().to_string(),
                s.runs.to_string(),
                s.failures.to_string(),
                format!("{:.6}", s.mse_mean),
                format!("{:.6}", s.mse_std),
                format!("{:.6}", s.mae_mean),
                format!("{:.6}", s.mae_std),
            ])
            .map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
    (m, var.sqrt())
}

/// Trains and evaluates one model per variant and seed.
///
/// Each cell is independent; a failing cell records its error and the grid continues.
pub fn run_ablation(setup: &AblationSetup, variants: &[AblationVariant], seeds: &[u64]) -> AblationTable {
    let jobs: Vec<(AblationVariant, u64)> = variants.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    let cells: Vec<AblationCell> = jobs.par_iter().map(|&(v, seed)| run_cell(setup, v, seed)).collect();
    let summary = variants
        .iter()
        .map(|&v| {
            let ok: Vec<&MetricsReport> = cells.iter().filter(|c| c.variant == v).filter_map(|c| c.metrics.as_ref()).collect();
            let mse: Vec<f64> = ok.iter().map(|m| m.mse()).collect();
            let mae: Vec<f64> = ok.iter().map(|m| m.mae()).collect();
            let (mse_mean, mse_std) = mean_std(&mse);
            let (mae_mean, mae_std) = mean_std(&mae);
            VariantSummary {
                variant: v,
                runs: ok.len(),
                failures: seeds.len() - ok.len(),
                mse_mean,
                mse_std,
                mae_mean,
                mae_std,
            }
        })
        .collect();
    AblationTable { cells, summary }
}

fn run_cell(setup: &AblationSetup, variant: AblationVariant, seed: u64) -> AblationCell {
    let cfg = variant.apply(&setup.model);
    let anchor_hash = words_hash(&cfg.anchor_words);
    let outcome = (|| -> Result<(MetricsReport, TrainReport)> {
        let mut model = Model::new(cfg, Arc::clone(&setup.backbone), seed)?;
        let train_cfg = TrainConfig {
            seed,
            ..setup.train.clone()
        };
        let report = train(&mut model, &setup.train_windows, &setup.val_windows, &train_cfg)?;
        if let Some(step) = report.diverged_at_step {
            return Err(Error::Divergence { step });
        }
        let mut metrics = evaluate(&model, &setup.test_windows, &setup.dataset)?;
        metrics.variant = variant.id().to_string();
        metrics.seed = Some(seed);
        Ok((metrics, report))
    })();
    match outcome {
        Ok((metrics, report)) => AblationCell {
            variant,
            seed,
            anchor_hash,
            metrics: Some(metrics),
            train_report: Some(report),
            error: None,
        },
        Err(e) => AblationCell {
            variant,
            seed,
            anchor_hash,
            metrics: None,
            train_report: None,
            error: Some(e.to_string()),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub metrics: MetricsReport,
    pub params_fingerprint_before: String,
    pub params_fingerprint_after: String,
    pub backbone_fingerprint_before: String,
    pub backbone_fingerprint_after: String,
}

impl ZeroShotReport {
    pub fn untouched(&self) -> bool {
        self.params_fingerprint_before == self.params_fingerprint_after
            && self.backbone_fingerprint_before == self.backbone_fingerprint_after
    }
}

/// Evaluates a trained model on another dataset's test windows without any update.
pub fn zero_shot_eval(model: &Model, source: &str, target: &str, target_test: &[WindowPair]) -> Result<ZeroShotReport> {
    let cfg = model.config();
    if let Some(w) = target_test.first() {
        if w.history.ncols() != cfg.seq_len || w.target.ncols() != cfg.horizon {
            return Err(Error::Config(format!(
                "target windows are L={}, H={} but the model expects L={}, H={}",
                w.history.ncols(),
                w.target.ncols(),
                cfg.seq_len,
                cfg.horizon
            )));
        }
    }
    let params_before = model.params_fingerprint();
    let backbone_before = model.backbone().fingerprint().to_string();
    let mut metrics = evaluate(model, target_test, target)?;
    metrics.source_dataset = Some(source.to_string());
    Ok(ZeroShotReport {
        metrics,
        params_fingerprint_before: params_before,
        params_fingerprint_after: model.params_fingerprint(),
        backbone_fingerprint_before: backbone_before,
        backbone_fingerprint_after: model.backbone().fingerprint().to_string(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    /// Head-averaged `[K × A]` weights.
    pub weights: Matrix,
    pub labels: Vec<String>,
    /// Half-open time-step range covered by each patch.
    pub patch_ranges: Vec<(usize, usize)>,
    /// `[h × K × A]`, kept when requested.
    pub per_head: Option<Array3<f64>>,
}

impl AttentionMap {
    /// Writes `patch,start,end,<anchors...>` rows; with per-head weights a `head` column leads
    /// and the averaged rows use head `mean`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header = vec!["patch".to_string(), "start".into(), "end".into()];
        if self.per_head.is_some() {
            header.insert(0, "head".into());
        }
        header.extend(self.labels.iter().cloned());
        w.write_record(&header).map_err(|e| csv_io(path, e))?;
        let mut blocks: Vec<(String, Matrix)> = Vec::new();
        if let Some(heads) = &self.per_head {
            for (h, m) in heads.outer_iter().enumerate() {
                blocks.push((h.to_string(), m.to_owned()));
            }
            blocks.push(("mean".into(), self.weights.clone()));
        } else {
            blocks.push((String::new(), self.weights.clone()));
        }
        for (head, m) in &blocks {
            for (k, row) in m.rows().into_iter().enumerate() {
                let mut rec = Vec::with_capacity(header.len());
                if self.per_head.is_some() {
                    rec.push(head.clone());
                }
                rec.push(k.to_string());
                rec.push(self.patch_ranges[k].0.to_string());
                rec.push(self.patch_ranges[k].1.to_string());
                rec.extend(row.iter().map(|v| format!("{v:.9}")));
                w.write_record(&rec).map_err(|e| csv_io(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Trend-patch to anchor attention for one channel of `history`, optionally written to `path`.
pub fn export_attention_map(
    model: &Model,
    history: &Matrix,
    channel: usize,
    path: Option<&Path>,
    per_head: bool,
) -> Result<AttentionMap> {
    let cfg = model.config();
    let anchors = model.anchors().ok_or(Error::NoAlignment)?;
    if cfg.patch_stride != cfg.patch_len {
        return Err(Error::Config(format!(
            "attention export needs non-overlapping patches, got patch_len {} with stride {}",
            cfg.patch_len, cfg.patch_stride
        )));
    }
    let heads = model.trend_attention(history, channel)?;
    let weights = heads.mean_axis(Axis(0)).expect("at least one head");
    let patch_ranges = (0..weights.nrows())
        .map(|k| {
            let start = k * cfg.patch_stride;
            (start, (start + cfg.patch_len).min(cfg.seq_len + cfg.patch_stride))
        })
        .collect();
    let map = AttentionMap {
        weights,
        labels: anchors.words.clone(),
        patch_ranges,
        per_head: per_head.then_some(heads),
    };
    if let Some(p) = path {
        map.write_csv(p)?;
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneDims;
    use crate::decompose::{DecompConfig, DecompMethod};

    struct Oracle(Vec<WindowPair>);

    impl Forecaster for Oracle {
        fn predict(&self, history: &Matrix) -> Result<Matrix> {
            Ok(self.0.iter().find(|w| &w.history == history).unwrap().target.clone())
        }
    }

    struct Constant(f64, usize);

    impl Forecaster for Constant {
        fn predict(&self, history: &Matrix) -> Result<Matrix> {
            Ok(Matrix::from_elem((history.nrows(), self.1), self.0))
        }
    }

    fn toy_windows() -> Vec<WindowPair> {
        (0..4)
            .map(|i| WindowPair {
                history: Matrix::from_elem((1, 3), i as f64),
                target: Matrix::from_shape_fn((1, 2), |(_, j)| (i * 2 + j) as f64),
                start_index: i,
            })
            .collect()
    }

    fn small_model(cfg: ModelConfig) -> Model {
        let bb = FrozenBackbone::init_mini(
            2,
            BackboneDims {
                vocab_size: 64,
                d_model: 16,
                max_positions: 64,
                heads: 4,
            },
        )
        .unwrap();
        Model::new(cfg, Arc::new(bb), 3).unwrap()
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            seq_len: 24,
            horizon: 4,
            patch_len: 6,
            patch_stride: 6,
            decomposition: DecompConfig {
                k: 2,
                period: 6,
                method: DecompMethod::MovingAverage,
                loess_bandwidth: 0.3,
            },
            align_heads: 2,
            prototypes_seasonal: 16,
            prototypes_residual: 24,
            max_prompt_tokens: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn perfect_and_mean_predictors() {
        let w = toy_windows();
        let r = evaluate(&Oracle(w.clone()), &w, "toy").unwrap();
        assert_eq!((r.mse(), r.mae()), (0.0, 0.0));
        assert_eq!(r.horizons[0].horizon, 2);

        let targets: Vec<f64> = w.iter().flat_map(|x| x.target.iter().copied()).collect();
        let mean = targets.iter().sum::<f64>() / targets.len() as f64;
        let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / targets.len() as f64;
        let r = evaluate(&Constant(mean, 2), &w, "toy").unwrap();
        assert!((r.mse() - var).abs() < 1e-12);

        assert!(matches!(evaluate(&Constant(0.0, 2), &[], "toy"), Err(Error::EmptyTestSet)));
    }

    #[test]
    fn history_mean_baseline() {
        let h = Matrix::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, 0.0, 0.0, 6.0]).unwrap();
        let p = MeanPredictor { horizon: 2 }.predict(&h).unwrap();
        assert_eq!(p, Matrix::from_shape_vec((2, 2), vec![2.0, 2.0, 2.0, 2.0]).unwrap());
    }

    #[test]
    fn merged_report_keeps_every_horizon() {
        let mk = |h: usize| MetricsReport {
            dataset: "d".into(),
            variant: "default".into(),
            seed: Some(1),
            source_dataset: None,
            horizons: vec![HorizonMetrics {
                horizon: h,
                mse: 1.0,
                mae: 1.0,
                windows: 1,
            }],
            runtime_seconds: 0.0,
        };
        let merged = MetricsReport::merge(&[mk(336), mk(96), mk(720), mk(192)]).unwrap();
        let hs: Vec<usize> = merged.horizons.iter().map(|h| h.horizon).collect();
        assert_eq!(hs, vec![96, 192, 336, 720]);
        assert_eq!(merged.csv_rows().len(), 4);
    }

    #[test]
    fn variant_grid() {
        assert_eq!(AblationVariant::ALL.len(), 9);
        for v in AblationVariant::ALL {
            assert_eq!(v.delta().is_empty(), v == AblationVariant::Default);
            assert_eq!(v.id().parse::<AblationVariant>().unwrap(), v);
        }
        assert_eq!("a1".parse::<AblationVariant>().unwrap(), AblationVariant::A1NoAlignment);
        assert!("Z9".parse::<AblationVariant>().is_err());
        assert_eq!(AblationVariant::parse_list("all").unwrap().len(), 9);
        assert_eq!(AblationVariant::parse_list("default, B2").unwrap().len(), 2);

        let base = small_config();
        let a1 = small_model(AblationVariant::A1NoAlignment.apply(&base));
        assert!(a1.partition().trainable.iter().all(|n| !n.starts_with("align.") && !n.starts_with("probe.")));
        let c2 = AblationVariant::C2SynonymousAnchors.apply(&base);
        assert_ne!(words_hash(&c2.anchor_words), words_hash(&base.anchor_words));
        let mut same = c2.clone();
        same.anchor_words = base.anchor_words.clone();
        assert_eq!(same, base);
    }

    #[test]
    fn attention_export() {
        let model = small_model(small_config());
        let h = Matrix::from_shape_fn((1, 24), |(_, t)| t as f64 * 0.2 + (t as f64).sin());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("att.csv");
        let map = export_attention_map(&model, &h, 0, Some(&path), false).unwrap();
        assert_eq!(map.weights.dim(), (5, 12));
        for row in map.weights.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("patch,start,end,increase,decrease,upward,downward,linear"));
        assert_eq!(text.lines().count(), 6);
        let again = export_attention_map(&model, &h, 0, None, true).unwrap();
        assert_eq!(again.weights, map.weights);
        assert_eq!(again.per_head.unwrap().dim(), (2, 5, 12));

        let overlapping = small_model(ModelConfig {
            patch_stride: 3,
            ..small_config()
        });
        assert!(export_attention_map(&overlapping, &h, 0, None, false).is_err());
        let a1 = small_model(AblationVariant::A1NoAlignment.apply(&small_config()));
        let err = export_attention_map(&a1, &h, 0, None, false).unwrap_err();
        assert_eq!(err.to_string(), "no alignment to export");
    }

    #[test]
    fn zero_shot_checks_shapes_and_purity() {
        let model = small_model(small_config());
        let windows: Vec<WindowPair> = (0..3)
            .map(|i| WindowPair {
                history: Matrix::from_shape_fn((2, 24), |(c, t)| ((t + i) as f64 * 0.3 + c as f64).sin()),
                target: Matrix::zeros((2, 4)),
                start_index: i,
            })
            .collect();
        let z = zero_shot_eval(&model, "a", "b", &windows).unwrap();
        assert!(z.untouched());
        assert_eq!(z.metrics.source_dataset.as_deref(), Some("a"));
        let direct = evaluate(&model, &windows, "b").unwrap();
        assert_eq!(direct.horizons[0].mse, z.metrics.horizons[0].mse);

        let bad = vec![WindowPair {
            history: Matrix::zeros((1, 20)),
            target: Matrix::zeros((1, 4)),
            start_index: 0,
        }];
        assert!(zero_shot_eval(&model, "a", "b", &bad).is_err());
    }

    #[test]
    fn failed_cells_do_not_abort_the_grid() {
        let base = small_config();
        let w: Vec<WindowPair> = (0..3)
            .map(|i| WindowPair {
                history: Matrix::from_shape_fn((1, 24), |(_, t)| ((t + i) as f64 * 0.4).sin()),
                target: Matrix::from_shape_fn((1, 4), |(_, t)| ((t + i + 24) as f64 * 0.4).sin()),
                start_index: i,
            })
            .collect();
        let setup = AblationSetup {
            dataset: "toy".into(),
            model: base.clone(),
            backbone: Arc::clone(small_model(base).backbone()),
            train: TrainConfig {
                max_epochs: 1,
                batch_size: 2,
                ..TrainConfig::default()
            },
            train_windows: w.clone(),
            val_windows: vec![],
            // the wrong horizon makes every evaluation fail
            test_windows: vec![WindowPair {
                target: Matrix::zeros((1, 5)),
                ..w[0].clone()
            }],
        };
        let table = run_ablation(&setup, &[AblationVariant::Default, AblationVariant::A1NoAlignment], &[1, 2]);
        assert_eq!(table.cells.len(), 4);
        assert!(table.cells.iter().all(|c| c.error.is_some()));
        assert_eq!(table.summary[0].failures, 2);

        let ok = AblationSetup {
            test_windows: w.clone(),
            ..setup
        };
        let table = run_ablation(&ok, &[AblationVariant::C1NoiseAnchors], &[1]);
        assert!(table.cells[0].error.is_none(), "{:?}", table.cells[0].error);
        assert_eq!(table.cells[0].anchor_hash, words_hash(&parse_word_list(NOISE_ANCHORS)));
    }
}
