//! Mini-batch optimization of the trainable parameters and gradient checks.
//!
//! Gradients flow through the frozen backbone, but only the tensors listed in
//! [`Model::params`] are ever updated.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::data::WindowPair;
use crate::error::{Error, Result};
use crate::model::{Model, PreparedWindow};

/// Mean of squared errors over all `N·H` entries.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::shape("mse_loss", format!("{:?}", target.dim()), format!("{:?}", pred.dim())));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

pub fn mae_metric(pred: &Matrix, target: &Matrix) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::shape("mae_metric", format!("{:?}", target.dim()), format!("{:?}", pred.dim())));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Hard cap on optimizer steps across all epochs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    pub patience: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 10,
            max_steps: None,
            patience: 5,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            p.push(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            p.push("batch_size must be positive".into());
        }
        if self.max_epochs == 0 {
            p.push("max_epochs must be positive".into());
        }
        if self.max_steps == Some(0) {
            p.push("max_steps must be positive when set".into());
        }
        if self.patience == 0 {
            p.push("patience must be positive".into());
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub total_steps: usize,
    pub initial_val_loss: Option<f64>,
    pub best_val_loss: Option<f64>,
    /// 0 when the untrained parameters were never beaten.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub diverged_at_step: Option<usize>,
    pub trainable_params: usize,
    pub backbone_fingerprint_before: String,
    pub backbone_fingerprint_after: String,
    pub params_fingerprint_before: String,
    pub params_fingerprint_after: String,
    pub wall_seconds: f64,
}

impl TrainReport {
    pub fn epoch_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }
}

enum Optimizer {
    Sgd,
    Adam { m: Vec<Matrix>, v: Vec<Matrix>, t: i32 },
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    fn new(kind: OptimizerKind, model: &Model) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => {
                let zeros: Vec<Matrix> = model.params().iter().map(|p| Matrix::zeros(p.value.dim())).collect();
                Optimizer::Adam {
                    m: zeros.clone(),
                    v: zeros,
                    t: 0,
                }
            }
        }
    }

    fn step(&mut self, model: &mut Model, grads: &[Matrix], lr: f64) -> Result<()> {
        match self {
            Optimizer::Sgd => {
                for (i, g) in grads.iter().enumerate() {
                    let next = &*model.params()[i].value - &(g * lr);
                    model.set_param(i, next)?;
                }
            }
            Optimizer::Adam { m, v, t } => {
                *t += 1;
                let c1 = 1.0 - BETA1.powi(*t);
                let c2 = 1.0 - BETA2.powi(*t);
                for (i, g) in grads.iter().enumerate() {
                    m[i].zip_mut_with(g, |a, &b| *a = BETA1 * *a + (1.0 - BETA1) * b);
                    v[i].zip_mut_with(g, |a, &b| *a = BETA2 * *a + (1.0 - BETA2) * b * b);
                    let mut next = (*model.params()[i].value).clone();
                    ndarray::Zip::from(&mut next).and(&m[i]).and(&v[i]).for_each(|p, &mi, &vi| {
                        *p -= lr * (mi / c1) / ((vi / c2).sqrt() + ADAM_EPS);
                    });
                    model.set_param(i, next)?;
                }
            }
        }
        Ok(())
    }
}

/// Prepares windows in parallel; the result order matches the input.
pub fn prepare_windows(model: &Model, windows: &[WindowPair]) -> Result<Vec<PreparedWindow>> {
    windows.par_iter().map(|w| model.prepare_pair(w)).collect()
}

/// Mean per-window loss, evaluated in parallel and reduced in input order.
pub fn mean_loss(model: &Model, windows: &[PreparedWindow]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let losses: Vec<f64> = windows.par_iter().map(|w| model.loss(w)).collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn batch_gradient(model: &Model, batch: &[&PreparedWindow]) -> Result<(f64, Vec<Matrix>)> {
    let results: Vec<(f64, Vec<Matrix>)> = batch.par_iter().map(|w| model.loss_and_grads(w)).collect::<Result<_>>()?;
    let n = results.len() as f64;
    let mut iter = results.into_iter();
    let (mut loss, mut grads) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            *acc += gi;
        }
    }
    for g in &mut grads {
        *g /= n;
    }
    Ok((loss / n, grads))
}

pub fn train(model: &mut Model, train_windows: &[WindowPair], val_windows: &[WindowPair], cfg: &TrainConfig) -> Result<TrainReport> {
    train_with_observer(model, train_windows, val_windows, cfg, |_| {})
}

/// Like [`train`], calling `observer` after every epoch.
pub fn train_with_observer(
    model: &mut Model,
    train_windows: &[WindowPair],
    val_windows: &[WindowPair],
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_windows.is_empty() {
        return Err(Error::Config("no training windows".into()));
    }
    let started = Instant::now();
    let backbone_before = model.backbone().fingerprint().to_string();
    let params_before = model.params_fingerprint();
    let train_set = prepare_windows(model, train_windows)?;
    let val_set = prepare_windows(model, val_windows)?;

    let monitor = |model: &Model| -> Result<f64> {
        if val_set.is_empty() {
            mean_loss(model, &train_set)
        } else {
            mean_loss(model, &val_set)
        }
    };
    let initial = monitor(model)?;
    let mut best = (initial, 0usize, snapshot(model));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Optimizer::new(cfg.optimizer, model);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::new();
    let mut steps = 0usize;
    let mut wait = 0usize;
    let mut stopped_early = false;
    let mut diverged = None;

    'epochs: for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut epoch_steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let batch: Vec<&PreparedWindow> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads) = batch_gradient(model, &batch)?;
            if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                diverged = Some(steps + 1);
                break 'epochs;
            }
            optimizer.step(model, &grads, cfg.learning_rate)?;
            steps += 1;
            epoch_steps += 1;
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        if seen == 0 {
            break;
        }
        let monitored = monitor(model)?;
        let record = EpochRecord {
            epoch,
            steps: epoch_steps,
            train_loss: loss_sum / seen as f64,
            val_loss: (!val_set.is_empty()).then_some(monitored),
        };
        observer(&record);
        epochs.push(record);
        if !monitored.is_finite() {
            diverged = Some(steps);
            break;
        }
        if monitored < best.0 {
            best = (monitored, epoch, snapshot(model));
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
        if cfg.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
    }

    restore(model, best.2)?;
    Ok(TrainReport {
        epochs,
        total_steps: steps,
        initial_val_loss: (!val_set.is_empty()).then_some(initial),
        best_val_loss: (!val_set.is_empty()).then_some(best.0),
        best_epoch: best.1,
        stopped_early,
        diverged_at_step: diverged,
        trainable_params: model.param_count(),
        backbone_fingerprint_before: backbone_before,
        backbone_fingerprint_after: model.backbone().fingerprint().to_string(),
        params_fingerprint_before: params_before,
        params_fingerprint_after: model.params_fingerprint(),
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

fn snapshot(model: &Model) -> Vec<Arc<Matrix>> {
    model.params().iter().map(|p| Arc::clone(&p.value)).collect()
}

fn restore(model: &mut Model, values: Vec<Arc<Matrix>>) -> Result<()> {
    for (i, v) in values.into_iter().enumerate() {
        model.set_param(i, Arc::unwrap_or_clone(v))?;
    }
    Ok(())
}

/// Symmetric relative deviation with a floor that keeps near-zero gradients from dominating.
pub fn relative_deviation(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, epsilon: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += epsilon;
    let mut xm = x.to_vec();
    xm[i] -= epsilon;
    (f(&xp) - f(&xm)) / (2.0 * epsilon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub param: String,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub entries: Vec<GradCheckEntry>,
    pub max_deviation: f64,
}

/// Compares analytic gradients against central differences for `sample`
/// trainable scalars drawn with `seed`. Every trainable tensor is visited
/// before any is sampled twice.
pub fn finite_difference_check(
    model: &Model,
    window: &WindowPair,
    epsilon: f64,
    sample: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(1e-6..=1e-2).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon {epsilon} outside [1e-6, 1e-2]")));
    }
    if sample == 0 {
        return Err(Error::Config("sample must be at least 1".into()));
    }
    let prepared = model.prepare_pair(window)?;
    let (_, grads) = model.loss_and_grads(&prepared)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors: Vec<usize> = (0..model.params().len()).collect();
    tensors.shuffle(&mut rng);

    let picks: Vec<(usize, usize, usize)> = (0..sample)
        .map(|s| {
            let t = tensors[s % tensors.len()];
            let (r, c) = model.params()[t].value.dim();
            (t, rng.random_range(0..r), rng.random_range(0..c))
        })
        .collect();

    let entries: Vec<GradCheckEntry> = picks
        .par_iter()
        .map(|&(t, r, c)| {
            let eval = |delta: f64| -> Result<f64> {
                let mut probe = model.clone();
                let mut value = (*probe.params()[t].value).clone();
                value[[r, c]] += delta;
                probe.set_param(t, value)?;
                probe.loss(&prepared)
            };
            let numeric = (eval(epsilon)? - eval(-epsilon)?) / (2.0 * epsilon);
            let analytic = grads[t][[r, c]];
            Ok(GradCheckEntry {
                param: model.params()[t].name.clone(),
                row: r,
                col: c,
                analytic,
                numeric,
                deviation: relative_deviation(analytic, numeric),
            })
        })
        .collect::<Result<_>>()?;
    let max_deviation = entries.iter().map(|e| e.deviation).fold(0.0, f64::max);
    Ok(GradCheckReport {
        epsilon,
        entries,
        max_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{BackboneDims, FrozenBackbone};
    use crate::decompose::{DecompConfig, DecompMethod};
    use crate::model::ModelConfig;
    use proptest::prelude::*;

    fn mini_model(seed: u64) -> Model {
        let backbone = FrozenBackbone::init_mini(
            3,
            BackboneDims {
                vocab_size: 64,
                d_model: 16,
                max_positions: 64,
                heads: 4,
            },
        )
        .unwrap();
        let cfg = ModelConfig {
            seq_len: 24,
            horizon: 4,
            patch_len: 8,
            patch_stride: 4,
            decomposition: DecompConfig {
                k: 3,
                period: 6,
                method: DecompMethod::MovingAverage,
                loess_bandwidth: 0.3,
            },
            align_heads: 2,
            prototypes_seasonal: 16,
            prototypes_residual: 24,
            max_prompt_tokens: 12,
            ..ModelConfig::default()
        };
        Model::new(cfg, Arc::new(backbone), seed).unwrap()
    }

    fn window(shift: usize) -> WindowPair {
        let f = |t: usize| ((t + shift) as f64 * 0.5).sin() + 0.1 * (t + shift) as f64;
        WindowPair {
            history: Matrix::from_shape_fn((1, 24), |(_, t)| f(t)),
            target: Matrix::from_shape_fn((1, 4), |(_, t)| f(24 + t)),
            start_index: shift,
        }
    }

    #[test]
    fn loss_examples() {
        let p = Matrix::zeros((1, 2));
        let t = Matrix::from_shape_vec((1, 2), vec![3.0, 4.0]).unwrap();
        assert_eq!(mse_loss(&p, &t).unwrap(), 12.5);
        assert_eq!(mae_metric(&p, &t).unwrap(), 3.5);
        assert_eq!(mse_loss(&t, &t).unwrap(), 0.0);
        assert_eq!(mae_metric(&t, &t).unwrap(), 0.0);
        assert!(mse_loss(&p, &Matrix::zeros((2, 1))).is_err());
        assert!(mae_metric(&p, &Matrix::zeros((1, 3))).is_err());
    }

    proptest! {
        #[test]
        fn metric_bounds(pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..40)) {
            let p = Matrix::from_shape_vec((1, pairs.len()), pairs.iter().map(|x| x.0).collect()).unwrap();
            let t = Matrix::from_shape_vec((1, pairs.len()), pairs.iter().map(|x| x.1).collect()).unwrap();
            let mse = mse_loss(&p, &t).unwrap();
            let mae = mae_metric(&p, &t).unwrap();
            let worst = pairs.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(mse >= 0.0);
            prop_assert!(mae <= worst + 1e-12);
            prop_assert!(mse <= worst * worst + 1e-9);
        }
    }

    #[test]
    fn quadratic_toy_is_exact() {
        let f = |x: &[f64]| 3.0 * x[0] * x[0] - 2.0 * x[0] + 1.0;
        let x = [0.7];
        let numeric = central_difference(f, &x, 0, 1e-4);
        assert!(relative_deviation(6.0 * 0.7 - 2.0, numeric) < 1e-8);
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let mut model = mini_model(1);
        let before = model.params_fingerprint();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 1,
            max_epochs: 1,
            ..TrainConfig::default()
        };
        let w = [window(0)];
        let initial = model.loss(&model.prepare_pair(&w[0]).unwrap()).unwrap();
        let report = train(&mut model, &w, &[], &cfg).unwrap();
        assert_eq!(model.params_fingerprint(), before);
        assert_eq!(report.epochs.len(), 1);
        assert_eq!(report.epochs[0].train_loss, initial);
        assert_eq!(report.backbone_fingerprint_before, report.backbone_fingerprint_after);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let windows: Vec<WindowPair> = (0..6).map(window).collect();
        let val = [window(9)];
        let cfg = TrainConfig {
            learning_rate: 3e-3,
            batch_size: 2,
            max_epochs: 6,
            patience: 10,
            seed: 4,
            ..TrainConfig::default()
        };
        let mut a = mini_model(7);
        let ra = train(&mut a, &windows, &val, &cfg).unwrap();
        let mut b = mini_model(7);
        let rb = train(&mut b, &windows, &val, &cfg).unwrap();
        assert_eq!(ra.epoch_losses(), rb.epoch_losses());
        assert_eq!(a.params_fingerprint(), b.params_fingerprint());
        assert!(ra.best_val_loss.unwrap() <= ra.initial_val_loss.unwrap());
        assert!(ra.epochs.last().unwrap().train_loss < ra.epochs[0].train_loss);
        assert_ne!(ra.params_fingerprint_before, ra.params_fingerprint_after);
        assert_eq!(ra.backbone_fingerprint_before, ra.backbone_fingerprint_after);
    }

    #[test]
    fn max_steps_caps_updates() {
        let windows: Vec<WindowPair> = (0..5).map(window).collect();
        let cfg = TrainConfig {
            batch_size: 1,
            max_epochs: 10,
            max_steps: Some(7),
            patience: 100,
            ..TrainConfig::default()
        };
        let mut m = mini_model(1);
        let r = train(&mut m, &windows, &[], &cfg).unwrap();
        assert_eq!(r.total_steps, 7);
        assert_eq!(r.epochs.iter().map(|e| e.steps).collect::<Vec<_>>(), vec![5, 2]);
    }

    #[test]
    fn divergence_is_reported() {
        let mut w = window(0);
        w.target[[0, 0]] = f64::NAN;
        let mut m = mini_model(1);
        let r = train(&mut m, &[w], &[], &TrainConfig::default());
        // the monitored loss on the untrained model is already NaN
        match r {
            Ok(report) => assert!(report.diverged_at_step.is_some()),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn gradient_check_on_mini_model() {
        let model = mini_model(2);
        let report = finite_difference_check(&model, &window(3), 1e-4, 32, 11).unwrap();
        assert_eq!(report.entries.len(), 32);
        assert!(report.max_deviation < 1e-3, "{:#?}", report);
        let frozen = model.partition().frozen;
        assert!(report.entries.iter().all(|e| !frozen.contains(&e.param)));
        assert!(finite_difference_check(&model, &window(3), 1.0, 4, 0).is_err());
        assert!(finite_difference_check(&model, &window(3), 1e-4, 0, 0).is_err());
    }

    #[test]
    fn invalid_config_lists_all_problems() {
        let cfg = TrainConfig {
            learning_rate: -1.0,
            batch_size: 0,
            max_epochs: 0,
            patience: 0,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.problems().len(), 4);
    }
}
