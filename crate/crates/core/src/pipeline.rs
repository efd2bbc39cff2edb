//! End-to-end drivers shared by the command line, examples and tests.

use std::collections::BTreeSet;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;

use crate::convlstm::Mode;
use crate::data::{
    build_windows, generate_synthetic, ClimateSample, Dataset, NormalizationSpec, Period, SequenceWindow, SynthConfig,
    DEFAULT_CUTOFF_YEAR, PRECIP_CHANNEL,
};
use crate::eval::{aggregate, rmse_map, Series};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::optim::{fit, FitError, TrainConfig, TrainState};
use crate::qmap::{downscale_qmap, fit_qmap, QuantileMapModel};
use crate::srblock::network_forward;
use crate::tensor::Grid;

/// Fraction of training years held out for the learning-rate schedule.
pub const VALIDATION_FRACTION: f64 = 0.1;

/// Splits off the last `floor(years · VALIDATION_FRACTION)` calendar years.
pub fn validation_split(samples: &[ClimateSample]) -> (Vec<ClimateSample>, Vec<ClimateSample>) {
    let years: BTreeSet<i32> = samples.iter().map(|s| s.date.year()).collect();
    let held = (years.len() as f64 * VALIDATION_FRACTION).floor() as usize;
    if held == 0 {
        return (samples.to_vec(), Vec::new());
    }
    let first_val = *years.iter().rev().nth(held - 1).expect("held < years");
    samples.iter().cloned().partition(|s| s.date.year() < first_val)
}

/// Normalized windows built within `period`: every day of a window,
/// not just the target day, lies in the period.
pub fn period_windows(samples: &[ClimateSample], norm: &NormalizationSpec, period: Period, len: usize) -> Result<Vec<SequenceWindow>> {
    let normalized = samples
        .iter()
        .filter(|s| period.contains(s.date))
        .map(|s| norm.normalize_sample(s))
        .collect::<Result<Vec<_>>>()?;
    Ok(build_windows(&normalized, len))
}

/// Training inputs for one period, ready for [`fit`].
#[derive(Debug, Clone)]
pub struct PreparedPeriod {
    pub normalization: NormalizationSpec,
    pub train: Vec<SequenceWindow>,
    pub val: Vec<SequenceWindow>,
}

/// Fits normalization on the period's training days and builds windows.
pub fn prepare_period(dataset: &Dataset, period: Period, window: usize) -> Result<PreparedPeriod> {
    let in_period: Vec<ClimateSample> = dataset.samples.iter().filter(|s| period.contains(s.date)).cloned().collect();
    if in_period.is_empty() {
        return Err(Error::Argument(format!("empty partition: no {} days in the dataset", period.label())));
    }
    let normalization = NormalizationSpec::fit(&in_period, &dataset.channel_names)?;
    let (fit_days, val_days) = validation_split(&dataset.samples);
    let train = period_windows(&fit_days, &normalization, period, window)?;
    let val = period_windows(&val_days, &normalization, period, window)?;
    if train.is_empty() {
        return Err(Error::Argument(format!(
            "empty partition: no {}-day windows end on a {} day",
            window,
            period.label()
        )));
    }
    Ok(PreparedPeriod {
        normalization,
        train,
        val,
    })
}

/// Trains (or resumes) a model on one period.
pub fn train_period(
    prepared: &PreparedPeriod,
    model: &ModelConfig,
    cfg: &TrainConfig,
    resume: Option<TrainState>,
    on_epoch: impl FnMut(&TrainState),
) -> Result<TrainState, FitError> {
    let state = match resume {
        Some(s) => {
            if &s.params.config != model {
                return Err(Error::Config("resumed checkpoint has a different architecture".into()).into());
            }
            s
        }
        None => TrainState::new(ModelParams::init(model, cfg.seed)?, cfg),
    };
    let val = (!prepared.val.is_empty()).then_some(prepared.val.as_slice());
    fit(&prepared.train, val, state, cfg, on_epoch)
}

/// One predicted day in mm/day.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub date: NaiveDate,
    pub grid: Grid,
}

/// Runs the network over every windowable day, de-normalized and clamped at zero.
pub fn predict(samples: &[ClimateSample], params: &ModelParams, norm: &NormalizationSpec) -> Result<Vec<Prediction>> {
    let expected = params.config.input_shape();
    if let Some(s) = samples.first() {
        s.input.expect_shape(expected, "downscale input")?;
    }
    let normalized = samples.iter().map(|s| norm.normalize_sample(s)).collect::<Result<Vec<_>>>()?;
    build_windows(&normalized, params.config.window)
        .par_iter()
        .map(|w| {
            let out = network_forward(&w.window, params, Mode::Infer)?;
            let grid = norm.denormalize_target(&out)?.map(|v| v.max(0.0));
            Ok(Prediction { date: w.date, grid })
        })
        .collect()
}

/// Fits a quantile map from the interpolated precipitation input to the target.
pub fn fit_qmap_baseline(samples: &[ClimateSample]) -> Result<QuantileMapModel> {
    let model: Vec<Grid> = samples
        .iter()
        .map(|s| s.input.slice_channels(PRECIP_CHANNEL, 1))
        .collect::<Result<_>>()?;
    let obs: Vec<Grid> = samples.iter().map(|s| s.target.clone()).collect();
    fit_qmap(&model, &obs)
}

/// Quantile-mapped predictions for every sample.
pub fn predict_qmap(samples: &[ClimateSample], qm: &QuantileMapModel) -> Result<Vec<Prediction>> {
    Ok(downscale_qmap(samples, qm)?
        .into_iter()
        .zip(samples)
        .map(|(grid, s)| Prediction { date: s.date, grid })
        .collect())
}

/// The interpolated precipitation input used as a prediction.
pub fn predict_raw(samples: &[ClimateSample]) -> Result<Vec<Prediction>> {
    samples
        .iter()
        .map(|s| {
            Ok(Prediction {
                date: s.date,
                grid: s.input.slice_channels(PRECIP_CHANNEL, 1)?,
            })
        })
        .collect()
}

/// A seeded desk-scale comparison of the network against both baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct DeskConfig {
    pub height: usize,
    pub width: usize,
    pub start: NaiveDate,
    pub days: usize,
    /// Last training year; the following years are scored.
    pub cutoff_year: i32,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl DeskConfig {
    /// 16×16, 1997–2000, trained through 1999, compact network.
    pub fn standard(epochs: usize) -> Self {
        Self {
            height: 16,
            width: 16,
            start: NaiveDate::from_ymd_opt(1997, 1, 1).expect("valid date"),
            days: 1461,
            cutoff_year: DEFAULT_CUTOFF_YEAR,
            model: ModelConfig::compact(16, 16),
            train: TrainConfig {
                epochs,
                initial_lr: 1e-3,
                ..TrainConfig::default()
            },
        }
    }
}

/// Test-period RMSE (mm/day, spatial mean of per-point RMSE).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeskScores {
    pub convlstm: f64,
    pub qmap: f64,
    pub raw: f64,
    pub test_days: usize,
}

impl DeskScores {
    pub fn ordered(&self) -> bool {
        self.convlstm < self.qmap && self.qmap < self.raw
    }
}

fn series_rmse(preds: &[Prediction], targets: &[Grid]) -> Result<f64> {
    let p = Series::mm_per_day(preds.iter().map(|p| p.grid.clone()).collect())?;
    let t = Series::mm_per_day(targets.to_vec())?;
    aggregate(&rmse_map(&p, &t)?, None)
}

/// Generates data with `seed`, trains one network and one quantile map per
/// monsoon/non-monsoon period on the training years, and scores all three
/// methods on the test days the network can predict.
///
/// Windows stay within a period, so the first `window - 1` days after each
/// period change are not scored.
pub fn desk_comparison(cfg: &DeskConfig, seed: u64) -> Result<DeskScores, FitError> {
    let ds = generate_synthetic(&SynthConfig::new(cfg.height, cfg.width, cfg.days, seed).starting(cfg.start))?;
    let train_ds = ds.filter(|s| s.date.year() <= cfg.cutoff_year);
    if ds.samples.iter().all(|s| s.date.year() <= cfg.cutoff_year) {
        return Err(Error::Argument(format!("no days after {}", cfg.cutoff_year)).into());
    }
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let mut network = Vec::new();
    let mut mapped = Vec::new();
    for period in [Period::Monsoon, Period::NonMonsoon] {
        let prepared = prepare_period(&train_ds, period, cfg.model.window)?;
        let state = train_period(&prepared, &cfg.model, &train_cfg, None, |s| {
            if let Some(r) = s.log.last() {
                log::info!("{} epoch {} train {:.5}", period.label(), r.epoch, r.train_loss);
            }
        })?;
        // Test windows may take lag context from the last training days.
        let in_period: Vec<ClimateSample> = ds.samples.iter().filter(|s| period.contains(s.date)).cloned().collect();
        let preds = predict(&in_period, &state.params, &prepared.normalization)?;
        network.extend(preds.into_iter().filter(|p| p.date.year() > cfg.cutoff_year));

        let fit_days: Vec<ClimateSample> = train_ds.samples.iter().filter(|s| period.contains(s.date)).cloned().collect();
        mapped.extend(predict_qmap(&in_period, &fit_qmap_baseline(&fit_days)?)?);
    }
    network.sort_by_key(|p| p.date);
    let scored: BTreeSet<NaiveDate> = network.iter().map(|p| p.date).collect();
    mapped.retain(|p| scored.contains(&p.date));
    mapped.sort_by_key(|p| p.date);
    let test: Vec<ClimateSample> = ds.samples.iter().filter(|s| scored.contains(&s.date)).cloned().collect();
    let targets: Vec<Grid> = test.iter().map(|s| s.target.clone()).collect();
    Ok(DeskScores {
        convlstm: series_rmse(&network, &targets)?,
        qmap: series_rmse(&mapped, &targets)?,
        raw: series_rmse(&predict_raw(&test)?, &targets)?,
        test_days: test.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(days: usize) -> Dataset {
        generate_synthetic(&SynthConfig::new(8, 8, days, 3)).unwrap()
    }

    #[test]
    fn validation_years() {
        let ds = generate_synthetic(&SynthConfig::new(8, 8, 3652, 1).starting(NaiveDate::from_ymd_opt(1990, 1, 1).unwrap())).unwrap();
        let (fit_days, val) = validation_split(&ds.samples);
        assert!(val.iter().all(|s| s.date.year() == 1999));
        assert_eq!(val.len(), 365);
        assert_eq!(fit_days.len() + val.len(), ds.samples.len());

        let (fit_days, val) = validation_split(&dataset(400).samples);
        assert!(val.is_empty());
        assert_eq!(fit_days.len(), 400);
    }

    #[test]
    fn empty_partition_is_reported() {
        let ds = dataset(60);
        let err = prepare_period(&ds, Period::Monsoon, 5).unwrap_err();
        assert!(err.to_string().contains("empty partition"), "{err}");
        let prepared = prepare_period(&ds, Period::NonMonsoon, 5).unwrap();
        assert_eq!(prepared.train.len(), 56);
    }

    #[test]
    fn predictions_are_non_negative_and_counted() {
        let ds = dataset(20);
        let prepared = prepare_period(&ds, Period::All, 5).unwrap();
        let cfg = ModelConfig::compact(8, 8);
        let params = ModelParams::init(&cfg, 1).unwrap();
        let preds = predict(&ds.samples, &params, &prepared.normalization).unwrap();
        assert_eq!(preds.len(), 16);
        assert!(preds.iter().all(|p| p.grid.data().iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn raw_baseline_is_precipitation_input() {
        let ds = dataset(12);
        let raw = predict_raw(&ds.samples).unwrap();
        assert_eq!(raw[3].grid.data(), ds.samples[3].input.channel(PRECIP_CHANNEL));
    }
}
