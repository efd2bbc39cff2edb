//! RMSE objective, Adam with plateau-triggered step decay, L2 weight decay on
//! the ConvLSTM weights, and the mini-batch training loop.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convlstm::DropoutMasks;
use crate::data::SequenceWindow;
use crate::error::{Error, Result};
use crate::model::{BlockKind, ModelParams};
use crate::srblock::{network_backward, network_forward_trace};
use crate::tensor::{Grid, Real};

/// Smallest validation-loss drop that counts as an improvement.
pub const MIN_IMPROVEMENT: f64 = 1e-4;
/// Floor for the decayed learning rate.
pub const MIN_LR: f64 = 1e-8;

/// `sqrt(mean((pred - target)^2))`.
pub fn rmse_loss<T: Real>(pred: &Grid<T>, target: &Grid<T>) -> Result<f64> {
    pred.expect_shape(target.shape(), "rmse_loss")?;
    let sq: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p.as_f64() - t.as_f64();
            d * d
        })
        .sum();
    Ok((sq / pred.data().len() as f64).sqrt())
}

/// RMSE and its gradient with respect to `pred` (zero at an exact fit).
pub fn rmse_loss_grad<T: Real>(pred: &Grid<T>, target: &Grid<T>) -> Result<(f64, Grid<T>)> {
    let loss = rmse_loss(pred, target)?;
    let n = pred.data().len() as f64;
    let scale = if loss > 0.0 { 1.0 / (n * loss) } else { 0.0 };
    let grad = pred.zip_map(target, "rmse_loss", |p, t| T::cast_from((p.as_f64() - t.as_f64()) * scale))?;
    Ok((loss, grad))
}

/// Adam moments and schedule state for a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f32], grads: &[f32], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} params / {} moments", params.len(), state.m.len()),
            format!("{} grads", grads.len()),
        ));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Diverged {
            block: format!("parameter index {i}"),
        });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for j in 0..params.len() {
        let g = grads[j] as f64;
        state.m[j] = b1 * state.m[j] + (1.0 - b1) * g;
        state.v[j] = b2 * state.v[j] + (1.0 - b2) * g * g;
        let m_hat = state.m[j] / c1;
        let v_hat = state.v[j] / c2;
        params[j] = (params[j] as f64 - state.lr * m_hat / (v_hat.sqrt() + state.epsilon)) as f32;
    }
    Ok(())
}

/// Decays the learning rate when the latest epoch completes a plateau.
///
/// A plateau is `cfg.decay_trigger` consecutive epochs without the
/// validation loss beating its best value by more than [`MIN_IMPROVEMENT`].
/// The counter restarts after each decay. Returns whether a decay happened.
pub fn lr_schedule_update(state: &mut AdamState, history: &[f64], cfg: &TrainConfig) -> bool {
    if history.is_empty() || cfg.decay_trigger == 0 {
        return false;
    }
    let mut best = history[0];
    let mut stale = 0usize;
    let mut fired_last = false;
    for &loss in &history[1..] {
        fired_last = false;
        if loss < best - MIN_IMPROVEMENT {
            best = loss;
            stale = 0;
        } else {
            stale += 1;
            if stale == cfg.decay_trigger {
                fired_last = true;
                stale = 0;
            }
        }
    }
    if fired_last {
        state.lr = (state.lr * cfg.lr_decay_alpha).max(MIN_LR);
    }
    fired_last
}

/// Per-element selector: `true` where weight decay applies.
pub fn weight_decay_mask(model: &ModelParams) -> Vec<bool> {
    let mut mask = Vec::with_capacity(model.num_params());
    model.for_each_block(|_, kind, d| mask.extend(std::iter::repeat_n(kind == BlockKind::LstmWeight, d.len())));
    mask
}

/// `g += decay * p` wherever `mask` is set.
pub fn apply_weight_decay(grads: &mut [f32], params: &[f32], decay: f64, mask: &[bool]) -> Result<()> {
    if decay < 0.0 {
        return Err(Error::Argument(format!("weight decay must be non-negative, got {decay}")));
    }
    if grads.len() != params.len() || mask.len() != params.len() {
        return Err(Error::shape("apply_weight_decay", grads.len(), params.len()));
    }
    if decay == 0.0 {
        return Ok(());
    }
    for ((g, &p), &m) in grads.iter_mut().zip(params).zip(mask) {
        if m {
            *g = (*g as f64 + decay * p as f64) as f32;
        }
    }
    Ok(())
}

fn default_lr() -> f64 {
    3e-4
}
fn default_alpha() -> f64 {
    0.2
}
fn default_trigger() -> usize {
    50
}
fn default_weight_decay() -> f64 {
    0.02
}
fn default_recurrent_dropout() -> f64 {
    0.2
}
fn default_inter_layer_dropout() -> f64 {
    0.1
}
fn default_epochs() -> usize {
    1500
}
fn default_batch() -> usize {
    15
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub initial_lr: f64,
    #[serde(default = "default_alpha")]
    pub lr_decay_alpha: f64,
    /// Plateau patience in epochs.
    #[serde(default = "default_trigger")]
    pub decay_trigger: usize,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_recurrent_dropout")]
    pub recurrent_dropout: f64,
    #[serde(default = "default_inter_layer_dropout")]
    pub inter_layer_dropout: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: default_lr(),
            lr_decay_alpha: default_alpha(),
            decay_trigger: default_trigger(),
            weight_decay: default_weight_decay(),
            recurrent_dropout: default_recurrent_dropout(),
            inter_layer_dropout: default_inter_layer_dropout(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rate = |v: f64, name: &str| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")))
            }
        };
        rate(self.initial_lr, "initial_lr")?;
        rate(self.lr_decay_alpha, "lr_decay_alpha")?;
        rate(self.weight_decay, "weight_decay")?;
        rate(self.recurrent_dropout, "recurrent_dropout")?;
        rate(self.inter_layer_dropout, "inter_layer_dropout")?;
        if self.initial_lr <= 0.0 {
            return Err(Error::Config("initial_lr must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// One row of the loss log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Learning rate in effect during the epoch.
    pub lr: f64,
}

/// Writes `epoch,train_loss,val_loss,lr` rows.
pub fn write_loss_log(records: &[EpochRecord], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "epoch,train_loss,val_loss,lr")?;
    for r in records {
        let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, val, r.lr)?;
    }
    Ok(())
}

/// Everything that evolves during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: AdamState,
    pub log: Vec<EpochRecord>,
    /// Epochs completed so far.
    pub epoch: usize,
}

impl TrainState {
    pub fn new(params: ModelParams, cfg: &TrainConfig) -> Self {
        let adam = AdamState::new(params.num_params(), cfg.initial_lr);
        Self {
            params,
            adam,
            log: Vec::new(),
            epoch: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FitError {
    #[error(transparent)]
    Invalid(#[from] Error),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        /// State at the end of the last fully finite epoch.
        last_good: Box<TrainState>,
    },
}

/// RMSE of one window together with the gradient of `scale · RMSE`.
pub fn loss_and_grad<T: Real>(
    model: &ModelParams<T>,
    window: &[Grid<T>],
    target: &Grid<T>,
    masks: Option<&DropoutMasks<T>>,
    scale: f64,
) -> Result<(f64, ModelParams<T>)> {
    let (pred, trace) = network_forward_trace(window, model, masks)?;
    let (loss, mut grad_out) = rmse_loss_grad(&pred, target)?;
    if scale != 1.0 {
        grad_out = grad_out.map(|g| T::cast_from(g.as_f64() * scale));
    }
    let grads = network_backward(window, model, masks, &trace, &grad_out)?;
    Ok((loss, grads))
}

fn stream_seed(seed: u64, epoch: u64, index: u64) -> u64 {
    // splitmix64 over the tuple
    let mut z = seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean inference-mode RMSE over `windows`.
pub fn evaluate_loss(model: &ModelParams, windows: &[SequenceWindow]) -> Result<f64> {
    let losses = windows
        .par_iter()
        .map(|w| {
            let (pred, _) = network_forward_trace(&w.window, model, None)?;
            rmse_loss(&pred, &w.target)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

fn first_non_finite_block(model: &ModelParams, grads: &[f32]) -> Option<String> {
    model
        .layout()
        .into_iter()
        .find(|(_, _, r)| grads[r.clone()].iter().any(|g| !g.is_finite()))
        .map(|(name, _, _)| name)
}

/// Trains until `cfg.epochs` epochs have been completed in total.
///
/// Mini-batches are reshuffled every epoch from a stream derived from
/// `cfg.seed` and the epoch number; dropout masks come from a per-sample
/// stream. Per-sample gradients are summed in batch order, so results do not
/// depend on the worker count. `on_epoch` sees the state after every epoch.
pub fn fit(
    train: &[SequenceWindow],
    val: Option<&[SequenceWindow]>,
    mut state: TrainState,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&TrainState),
) -> Result<TrainState, FitError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("training set is empty".into()).into());
    }
    let val = val.filter(|v| !v.is_empty());
    let mask = weight_decay_mask(&state.params);
    let dropout = cfg.recurrent_dropout > 0.0 || cfg.inter_layer_dropout > 0.0;

    while state.epoch < cfg.epochs {
        let epoch = state.epoch + 1;
        let last_good = state.clone();
        let lr_in_effect = state.adam.lr;

        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, epoch as u64, u64::MAX)));

        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let model = &state.params;
            let results = batch
                .par_iter()
                .map(|&idx| {
                    let masks = if dropout {
                        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, epoch as u64, idx as u64));
                        Some(DropoutMasks::sample(&model.cells, cfg.recurrent_dropout, cfg.inter_layer_dropout, &mut rng)?)
                    } else {
                        None
                    };
                    let (loss, grads) = loss_and_grad(model, &train[idx].window, &train[idx].target, masks.as_ref(), scale)?;
                    Ok((loss, grads.to_flat()))
                })
                .collect::<Result<Vec<_>>>()?;

            let mut total = vec![0.0f64; model.num_params()];
            for (loss, g) in &results {
                loss_sum += loss;
                for (t, &v) in total.iter_mut().zip(g) {
                    *t += v as f64;
                }
            }
            let mut grads: Vec<f32> = total.into_iter().map(|v| v as f32).collect();
            let diverged = |reason: String| FitError::Diverged {
                epoch,
                reason,
                last_good: Box::new(last_good.clone()),
            };
            if let Some(block) = first_non_finite_block(&state.params, &grads) {
                return Err(diverged(format!("non-finite gradient in block `{block}`")));
            }
            let mut flat = state.params.to_flat();
            apply_weight_decay(&mut grads, &flat, cfg.weight_decay, &mask)?;
            adam_step(&mut flat, &grads, &mut state.adam).map_err(|e| diverged(e.to_string()))?;
            if flat.iter().any(|v| !v.is_finite()) {
                return Err(diverged("non-finite parameters after update".into()));
            }
            state.params.set_flat(&flat)?;
        }

        let train_loss = loss_sum / train.len() as f64;
        let val_loss = val.map(|v| evaluate_loss(&state.params, v)).transpose()?;
        if !train_loss.is_finite() || val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(FitError::Diverged {
                epoch,
                reason: "loss is not finite".into(),
                last_good: Box::new(last_good),
            });
        }
        state.log.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr: lr_in_effect,
        });
        state.epoch = epoch;
        if val_loss.is_some() {
            let history: Vec<f64> = state.log.iter().filter_map(|r| r.val_loss).collect();
            lr_schedule_update(&mut state.adam, &history, cfg);
        }
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:?} lr {lr_in_effect}");
        on_epoch(&state);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Shape;

    #[test]
    fn rmse_cases() {
        let a = Grid::<f32>::new(Shape::new(1, 1, 2), vec![0.0, 3.0]).unwrap();
        let b = Grid::<f32>::new(Shape::new(1, 1, 2), vec![4.0, 0.0]).unwrap();
        assert!((rmse_loss(&a, &b).unwrap() - 3.5355339).abs() < 1e-6);
        assert_eq!(rmse_loss(&a, &a).unwrap(), 0.0);
        let shifted = a.map(|v| v - 1.5);
        assert!((rmse_loss(&shifted, &a).unwrap() - 1.5).abs() < 1e-12);
        assert!(rmse_loss(&a, &Grid::<f32>::zeros(Shape::new(1, 2, 1))).is_err());
        let (_, g) = rmse_loss_grad(&a, &a).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![1.5f32, -2.0];
        let mut s = AdamState::new(2, 1e-3);
        adam_step(&mut p, &[0.0, 0.0], &mut s).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn adam_first_step() {
        let mut p = vec![0.0f32];
        let mut s = AdamState::new(1, 1e-3);
        adam_step(&mut p, &[1.0], &mut s).unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p[0] as f64 - expected).abs() < 1e-9);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut p = vec![0.0f32];
        let mut s = AdamState::new(1, 0.1);
        for _ in 0..200 {
            let g = 2.0 * (p[0] - 2.0);
            adam_step(&mut p, &[g], &mut s).unwrap();
        }
        assert!((p[0] - 2.0).abs() < 0.05, "p = {}", p[0]);
    }

    #[test]
    fn adam_rejects_nan() {
        let mut p = vec![0.0f32; 3];
        let mut s = AdamState::new(3, 0.1);
        let err = adam_step(&mut p, &[0.0, f32::NAN, 0.0], &mut s).unwrap_err();
        assert!(err.to_string().contains("index 1"));
    }

    #[test]
    fn schedule_plateaus() {
        let cfg = TrainConfig {
            decay_trigger: 3,
            ..TrainConfig::default()
        };
        let mut s = AdamState::new(1, cfg.initial_lr);
        let falling: Vec<f64> = (0..20).map(|i| 1.0 - 0.01 * i as f64).collect();
        for n in 1..=falling.len() {
            lr_schedule_update(&mut s, &falling[..n], &cfg);
        }
        assert_eq!(s.lr, 3e-4);

        let flat = vec![0.5; cfg.decay_trigger + 1];
        let mut s = AdamState::new(1, cfg.initial_lr);
        for n in 1..=flat.len() {
            lr_schedule_update(&mut s, &flat[..n], &cfg);
        }
        assert!((s.lr - 6e-5).abs() < 1e-15);

        let flat = vec![0.5; 2 * cfg.decay_trigger + 1];
        let mut s = AdamState::new(1, cfg.initial_lr);
        for n in 1..=flat.len() {
            lr_schedule_update(&mut s, &flat[..n], &cfg);
        }
        assert!((s.lr - 1.2e-5).abs() < 1e-15);
    }

    #[test]
    fn schedule_floor() {
        let cfg = TrainConfig {
            decay_trigger: 1,
            ..TrainConfig::default()
        };
        let mut s = AdamState::new(1, 1e-8);
        assert!(lr_schedule_update(&mut s, &[1.0, 1.0], &cfg));
        assert_eq!(s.lr, MIN_LR);
    }

    #[test]
    fn weight_decay_cases() {
        let mut g = vec![0.1f32, 0.1];
        apply_weight_decay(&mut g, &[2.0, 2.0], 0.02, &[true, false]).unwrap();
        assert!((g[0] - 0.14).abs() < 1e-7);
        assert_eq!(g[1], 0.1);
        let mut g = vec![0.3f32];
        apply_weight_decay(&mut g, &[5.0], 0.0, &[true]).unwrap();
        assert_eq!(g, vec![0.3]);
        assert!(apply_weight_decay(&mut g, &[5.0], -1.0, &[true]).is_err());
    }

    #[test]
    fn loss_log_format() {
        let rows = vec![
            EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_loss: None,
                lr: 3e-4,
            },
            EpochRecord {
                epoch: 2,
                train_loss: 0.25,
                val_loss: Some(0.75),
                lr: 6e-5,
            },
        ];
        let mut buf = Vec::new();
        write_loss_log(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,train_loss,val_loss,lr\n1,0.5,,0.0003\n2,0.25,0.75,0.00006\n"
        );
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            recurrent_dropout: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
