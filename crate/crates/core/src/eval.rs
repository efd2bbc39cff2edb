//! Skill metrics on de-normalized precipitation.
//!
//! "Bias" here means the mean absolute difference between
//! prediction and observation. The conventional signed mean error is
//! reported separately as `signed_mean_error`.
//!
//! Per-point metrics are computed over days first and then averaged over
//! space. Quantiles use [`crate::quantile`] so Q-Q data agrees with the
//! quantile-mapping baseline.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::{Period, Season};
use crate::error::{Error, Result, Shape};
use crate::quantile::{hazen_quantile, sorted_copy};
use crate::tensor::Grid;

/// Physical meaning of a series of precipitation grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Units {
    MmPerDay,
    Normalized,
}

/// A daily series of `1 × H × W` precipitation grids with a unit tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    units: Units,
    grids: Vec<Grid>,
}

impl Series {
    pub fn new(units: Units, grids: Vec<Grid>) -> Result<Self> {
        if let Some(first) = grids.first() {
            let shape = first.shape();
            if shape.channels != 1 {
                return Err(Error::shape("Series", shape, "single-channel grids"));
            }
            for g in &grids {
                g.expect_shape(shape, "Series")?;
            }
        }
        Ok(Self { units, grids })
    }

    pub fn mm_per_day(grids: Vec<Grid>) -> Result<Self> {
        Self::new(Units::MmPerDay, grids)
    }

    pub fn units(&self) -> Units {
        self.units
    }

    pub fn grids(&self) -> &[Grid] {
        &self.grids
    }

    pub fn len(&self) -> usize {
        self.grids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grids.is_empty()
    }

    fn subset(&self, keep: impl Fn(usize) -> bool) -> Series {
        Series {
            units: self.units,
            grids: self.grids.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, g)| g.clone()).collect(),
        }
    }
}

/// Checks units, alignment and shapes; returns the common grid shape.
fn check_pair(preds: &Series, targets: &Series) -> Result<Shape> {
    for (role, s) in [("predictions", preds), ("observations", targets)] {
        if s.units != Units::MmPerDay {
            return Err(Error::Units(format!("{role} must be de-normalized to mm/day before evaluation")));
        }
    }
    if preds.is_empty() || targets.is_empty() {
        return Err(Error::Argument("evaluation series is empty".into()));
    }
    if preds.len() != targets.len() {
        return Err(Error::Argument(format!(
            "{} predicted days vs {} observed days",
            preds.len(),
            targets.len()
        )));
    }
    let shape = targets.grids[0].shape();
    preds.grids[0].expect_shape(shape, "evaluation")?;
    Ok(shape)
}

fn point_map(preds: &Series, targets: &Series, f: impl Fn(&[(f64, f64)]) -> f64) -> Result<Grid> {
    let shape = check_pair(preds, targets)?;
    let mut pairs = Vec::with_capacity(preds.len());
    let mut out = Grid::zeros(shape);
    for (j, v) in out.data_mut().iter_mut().enumerate() {
        pairs.clear();
        pairs.extend(preds.grids.iter().zip(&targets.grids).map(|(p, o)| (p.data()[j] as f64, o.data()[j] as f64)));
        *v = f(&pairs) as f32;
    }
    Ok(out)
}

fn rmse_of(pairs: &[(f64, f64)]) -> f64 {
    (pairs.iter().map(|(p, o)| (p - o) * (p - o)).sum::<f64>() / pairs.len() as f64).sqrt()
}

fn bias_of(pairs: &[(f64, f64)]) -> f64 {
    pairs.iter().map(|(p, o)| (p - o).abs()).sum::<f64>() / pairs.len() as f64
}

fn signed_of(pairs: &[(f64, f64)]) -> f64 {
    pairs.iter().map(|(p, o)| p - o).sum::<f64>() / pairs.len() as f64
}

/// Per-point RMSE over days.
pub fn rmse_map(preds: &Series, targets: &Series) -> Result<Grid> {
    point_map(preds, targets, rmse_of)
}

/// Per-point mean absolute difference over days.
pub fn bias_map(preds: &Series, targets: &Series) -> Result<Grid> {
    point_map(preds, targets, bias_of)
}

/// Per-point mean of `pred - obs` over days.
pub fn signed_error_map(preds: &Series, targets: &Series) -> Result<Grid> {
    point_map(preds, targets, signed_of)
}

/// Spatial mean over points where `mask` is true (all points when absent).
pub fn aggregate(map: &Grid, mask: Option<&[bool]>) -> Result<f64> {
    let values = map.data();
    match mask {
        None => Ok(map.mean()),
        Some(m) => {
            if m.len() != values.len() {
                return Err(Error::shape("aggregate", map.shape(), format!("mask of {} points", m.len())));
            }
            let (sum, n) = values
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .fold((0.0, 0usize), |(s, n), (&v, _)| (s + v as f64, n + 1));
            if n == 0 {
                return Err(Error::Argument("mask excludes every grid point".into()));
            }
            Ok(sum / n as f64)
        }
    }
}

/// Summary of per-point skill over days exceeding one local percentile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremesRow {
    /// Percentile in `[0, 100)`.
    pub threshold: f64,
    /// Points with at least one selected day.
    pub points: usize,
    pub rmse_mean: f64,
    pub rmse_q25: f64,
    pub rmse_q75: f64,
    pub bias_mean: f64,
    pub bias_q25: f64,
    pub bias_q75: f64,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Skill on locally extreme days, one row per threshold.
///
/// At each grid point the days whose observed value exceeds that point's
/// `threshold`-th percentile (Hazen) of observations are selected. A
/// threshold of 0 selects every day. Points without a selected day are left
/// out of that row; a threshold with no selection anywhere is skipped.
pub fn extremes_analysis(preds: &Series, targets: &Series, thresholds: &[f64]) -> Result<Vec<ExtremesRow>> {
    let shape = check_pair(preds, targets)?;
    for &t in thresholds {
        if !(0.0..100.0).contains(&t) {
            return Err(Error::Argument(format!("percentile threshold {t} outside [0, 100)")));
        }
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument("percentile thresholds must be strictly increasing".into()));
    }
    let points: Vec<(Vec<f64>, Vec<f64>)> = (0..shape.plane())
        .map(|j| {
            (
                preds.grids.iter().map(|g| g.data()[j] as f64).collect(),
                targets.grids.iter().map(|g| g.data()[j] as f64).collect(),
            )
        })
        .collect();
    let sorted_obs: Vec<Vec<f64>> = points.iter().map(|(_, o)| sorted_copy(o.iter().copied())).collect();

    let mut rows = Vec::with_capacity(thresholds.len());
    let mut pairs = Vec::new();
    for &t in thresholds {
        let mut rmse = Vec::with_capacity(points.len());
        let mut bias = Vec::with_capacity(points.len());
        for ((p, o), sorted) in points.iter().zip(&sorted_obs) {
            let cut = (t > 0.0).then(|| hazen_quantile(sorted, t / 100.0));
            pairs.clear();
            pairs.extend(p.iter().zip(o).filter(|(_, &ov)| cut.is_none_or(|c| ov > c)).map(|(&pv, &ov)| (pv, ov)));
            if !pairs.is_empty() {
                rmse.push(rmse_of(&pairs));
                bias.push(bias_of(&pairs));
            }
        }
        if rmse.is_empty() {
            log::warn!("no observed value exceeds the {t}th percentile at any point; threshold skipped");
            continue;
        }
        let (rs, bs) = (sorted_copy(rmse.iter().copied()), sorted_copy(bias.iter().copied()));
        rows.push(ExtremesRow {
            threshold: t,
            points: rmse.len(),
            rmse_mean: mean(&rmse),
            rmse_q25: hazen_quantile(&rs, 0.25),
            rmse_q75: hazen_quantile(&rs, 0.75),
            bias_mean: mean(&bias),
            bias_q25: hazen_quantile(&bs, 0.25),
            bias_q75: hazen_quantile(&bs, 0.75),
        });
    }
    Ok(rows)
}

/// Which values enter a Q-Q comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QqMode {
    /// Every (day, point) value.
    Pooled,
    /// The daily series of one grid point.
    Point(usize, usize),
    /// The per-point means over the period, one value per point.
    TimeMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QqPair {
    pub prob: f64,
    pub obs_quantile: f64,
    pub pred_quantile: f64,
}

/// Matched observed and predicted quantiles at each probability.
pub fn qq_data(preds: &Series, targets: &Series, probs: &[f64], mode: QqMode) -> Result<Vec<QqPair>> {
    let shape = check_pair(preds, targets)?;
    if probs.iter().any(|p| !(*p > 0.0 && *p < 1.0)) || probs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument("probabilities must be strictly increasing within (0, 1)".into()));
    }
    let extract = |s: &Series| -> Result<Vec<f64>> {
        Ok(match mode {
            QqMode::Pooled => s.grids.iter().flat_map(|g| g.data().iter().map(|&v| v as f64)).collect(),
            QqMode::Point(y, x) => {
                if y >= shape.height || x >= shape.width {
                    return Err(Error::Lookup(format!("point ({y}, {x}) is outside the {shape} grid")));
                }
                s.grids.iter().map(|g| g.get(0, y, x) as f64).collect()
            }
            QqMode::TimeMean => (0..shape.plane())
                .map(|j| s.grids.iter().map(|g| g.data()[j] as f64).sum::<f64>() / s.len() as f64)
                .collect(),
        })
    };
    let obs = sorted_copy(extract(targets)?);
    let pred = sorted_copy(extract(preds)?);
    Ok(probs
        .iter()
        .map(|&p| QqPair {
            prob: p,
            obs_quantile: hazen_quantile(&obs, p),
            pred_quantile: hazen_quantile(&pred, p),
        })
        .collect())
}

/// Aggregate skill over one calendar partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionRow {
    pub label: String,
    pub days: usize,
    /// `None` when the partition holds no days.
    pub rmse: Option<f64>,
    pub bias: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonReport {
    /// DJF, MAM, JJA, SON.
    pub seasons: Vec<PartitionRow>,
    /// Monsoon, non-monsoon.
    pub periods: Vec<PartitionRow>,
}

/// Aggregate RMSE and bias for each season and each monsoon period.
pub fn season_report(preds: &Series, targets: &Series, dates: &[NaiveDate]) -> Result<SeasonReport> {
    check_pair(preds, targets)?;
    if dates.len() != targets.len() {
        return Err(Error::Argument(format!("{} dates for {} days", dates.len(), targets.len())));
    }
    let row = |label: &str, keep: &dyn Fn(NaiveDate) -> bool| -> Result<PartitionRow> {
        let p = preds.subset(|i| keep(dates[i]));
        let o = targets.subset(|i| keep(dates[i]));
        let days = o.len();
        if days == 0 {
            return Ok(PartitionRow {
                label: label.to_string(),
                days,
                rmse: None,
                bias: None,
            });
        }
        Ok(PartitionRow {
            label: label.to_string(),
            days,
            rmse: Some(aggregate(&rmse_map(&p, &o)?, None)?),
            bias: Some(aggregate(&bias_map(&p, &o)?, None)?),
        })
    };
    let seasons = Season::ALL
        .iter()
        .map(|&s| row(s.label(), &|d| Season::of(d) == s))
        .collect::<Result<_>>()?;
    let periods = [Period::Monsoon, Period::NonMonsoon]
        .iter()
        .map(|&p| row(p.label(), &|d| Period::of(d) == p))
        .collect::<Result<_>>()?;
    Ok(SeasonReport { seasons, periods })
}

/// Default exceedance percentiles.
pub const DEFAULT_THRESHOLDS: [f64; 5] = [90.0, 95.0, 98.0, 99.0, 99.9];

/// Default Q-Q probabilities: 0.01 through 0.99 plus the upper tail.
pub fn default_probs() -> Vec<f64> {
    let mut p: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
    p.extend([0.995, 0.999]);
    p
}

/// Every metric for one method over one test period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub days: usize,
    pub rmse: f64,
    pub bias: f64,
    pub signed_mean_error: f64,
    #[serde(skip)]
    pub rmse_map: Option<Grid>,
    #[serde(skip)]
    pub bias_map: Option<Grid>,
    pub seasons: SeasonReport,
    pub extremes: Vec<ExtremesRow>,
    pub qq_pooled: Vec<QqPair>,
    pub qq_time_mean: Vec<QqPair>,
}

/// Builds the full report; `thresholds` must be strictly increasing within `[90, 99.9]`.
pub fn evaluate(
    method: &str,
    preds: &Series,
    targets: &Series,
    dates: &[NaiveDate],
    thresholds: &[f64],
    probs: &[f64],
) -> Result<EvalReport> {
    if thresholds.iter().any(|t| !(90.0..=99.9).contains(t)) {
        return Err(Error::Argument("extreme thresholds must lie within [90, 99.9]".into()));
    }
    let rmse = rmse_map(preds, targets)?;
    let bias = bias_map(preds, targets)?;
    let signed = signed_error_map(preds, targets)?;
    Ok(EvalReport {
        method: method.to_string(),
        days: targets.len(),
        rmse: aggregate(&rmse, None)?,
        bias: aggregate(&bias, None)?,
        signed_mean_error: aggregate(&signed, None)?,
        rmse_map: Some(rmse),
        bias_map: Some(bias),
        seasons: season_report(preds, targets, dates)?,
        extremes: extremes_analysis(preds, targets, thresholds)?,
        qq_pooled: qq_data(preds, targets, probs, QqMode::Pooled)?,
        qq_time_mean: qq_data(preds, targets, probs, QqMode::TimeMean)?,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_overall_csv(reports: &[EvalReport], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "method,rmse,bias,signed_mean_error")?;
    for r in reports {
        writeln!(out, "{},{},{},{}", r.method, r.rmse, r.bias, r.signed_mean_error)?;
    }
    Ok(())
}

pub fn write_seasons_csv(report: &SeasonReport, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "season,rmse,bias")?;
    for r in &report.seasons {
        writeln!(out, "{},{},{}", r.label, opt(r.rmse), opt(r.bias))?;
    }
    Ok(())
}

pub fn write_periods_csv(report: &SeasonReport, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "period,rmse,bias")?;
    for r in &report.periods {
        writeln!(out, "{},{},{}", r.label, opt(r.rmse), opt(r.bias))?;
    }
    Ok(())
}

pub fn write_extremes_csv(rows: &[ExtremesRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "threshold,rmse_mean,rmse_q25,rmse_q75,bias_mean,bias_q25,bias_q75")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.threshold, r.rmse_mean, r.rmse_q25, r.rmse_q75, r.bias_mean, r.bias_q25, r.bias_q75
        )?;
    }
    Ok(())
}

pub fn write_qq_csv(pairs: &[QqPair], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "prob,obs_quantile,pred_quantile")?;
    for q in pairs {
        writeln!(out, "{},{},{}", q.prob, q.obs_quantile, q.pred_quantile)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series(days: &[Vec<f32>], h: usize, w: usize) -> Series {
        Series::mm_per_day(days.iter().map(|d| Grid::new(Shape::new(1, h, w), d.clone()).unwrap()).collect()).unwrap()
    }

    fn random_series(rng: &mut ChaCha8Rng, days: usize, h: usize, w: usize) -> Series {
        Series::mm_per_day(
            (0..days)
                .map(|_| Grid::random_uniform(Shape::new(1, h, w), 0.0, 20.0, rng))
                .collect(),
        )
        .unwrap()
    }

    fn shifted(s: &Series, c: f32) -> Series {
        Series::mm_per_day(s.grids().iter().map(|g| g.map(|v| v + c)).collect()).unwrap()
    }

    #[test]
    fn hand_computed_maps() {
        let p = series(&[vec![0.0], vec![3.0]], 1, 1);
        let o = series(&[vec![4.0], vec![0.0]], 1, 1);
        assert!((rmse_map(&p, &o).unwrap().data()[0] - 3.535_534).abs() < 1e-5);
        assert_eq!(bias_map(&p, &o).unwrap().data()[0], 3.5);
        assert_eq!(signed_error_map(&p, &o).unwrap().data()[0], -0.5);
    }

    #[test]
    fn constant_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let o = random_series(&mut rng, 20, 3, 3);
        let p = shifted(&o, -2.0);
        for v in rmse_map(&p, &o).unwrap().data().iter().chain(bias_map(&p, &o).unwrap().data()) {
            assert!((v - 2.0).abs() < 1e-5);
        }
        assert!(rmse_map(&o, &o).unwrap().is_zero());
    }

    #[test]
    fn normalized_inputs_are_refused() {
        let g = vec![Grid::zeros(Shape::new(1, 2, 2))];
        let n = Series::new(Units::Normalized, g.clone()).unwrap();
        let m = Series::mm_per_day(g).unwrap();
        assert!(matches!(rmse_map(&n, &m), Err(Error::Units(_))));
        assert!(matches!(rmse_map(&m, &n), Err(Error::Units(_))));
        let empty = Series::mm_per_day(vec![]).unwrap();
        assert!(matches!(rmse_map(&empty, &empty), Err(Error::Argument(_))));
    }

    #[test]
    fn aggregate_with_mask() {
        let map = Grid::new(Shape::new(1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(aggregate(&map, None).unwrap(), 2.5);
        assert_eq!(aggregate(&map, Some(&[true, true, false, false])).unwrap(), 1.5);
        assert!(aggregate(&map, Some(&[false; 4])).is_err());
        assert!(aggregate(&map, Some(&[true; 3])).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = Grid::<f32>::random_uniform(Shape::new(1, 7, 5), -3.0, 3.0, &mut rng);
        let mut brute = 0.0f64;
        for v in r.data() {
            brute += *v as f64;
        }
        assert!((aggregate(&r, None).unwrap() - brute / 35.0).abs() < 1e-6);
    }

    #[test]
    fn extremes_select_on_observations() {
        let o: Vec<Vec<f32>> = (1..=10).map(|v| vec![v as f32]).collect();
        let mut p = o.clone();
        p[9][0] = 13.0; // only the o = 10 day is selected at the 90th percentile
        p[0][0] = 100.0;
        let rows = extremes_analysis(&series(&p, 1, 1), &series(&o, 1, 1), &[90.0]).unwrap();
        assert_eq!(rows[0].rmse_mean, 3.0);
        assert_eq!(rows[0].bias_q25, 3.0);
    }

    #[test]
    fn extremes_constant_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let o = random_series(&mut rng, 1000, 3, 4);
        let p = shifted(&o, 1.5);
        let rows = extremes_analysis(&p, &o, &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(rows.len(), 5);
        for r in rows {
            for v in [r.rmse_mean, r.rmse_q25, r.rmse_q75, r.bias_mean, r.bias_q25, r.bias_q75] {
                assert!((v - 1.5).abs() < 1e-5, "{r:?}");
            }
        }
        let perfect = extremes_analysis(&o, &o, &DEFAULT_THRESHOLDS).unwrap();
        assert!(perfect.iter().all(|r| r.rmse_mean == 0.0 && r.rmse_q75 == 0.0 && r.bias_q75 == 0.0));
    }

    #[test]
    fn threshold_zero_matches_full_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let o = random_series(&mut rng, 30, 3, 3);
        let p = random_series(&mut rng, 30, 3, 3);
        let rows = extremes_analysis(&p, &o, &[0.0]).unwrap();
        assert!((rows[0].rmse_mean - aggregate(&rmse_map(&p, &o).unwrap(), None).unwrap()).abs() < 1e-5);
        assert!((rows[0].bias_mean - aggregate(&bias_map(&p, &o).unwrap(), None).unwrap()).abs() < 1e-5);
    }

    #[test]
    fn extremes_skip_dry_thresholds() {
        let o = series(&vec![vec![0.0]; 10], 1, 1);
        assert!(extremes_analysis(&o, &o, &[90.0]).unwrap().is_empty());
        assert!(extremes_analysis(&o, &o, &[95.0, 90.0]).is_err());
    }

    #[test]
    fn qq_monotone_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let o = random_series(&mut rng, 50, 2, 2);
        let p = Series::mm_per_day(o.grids().iter().map(|g| g.scale(2.0)).collect()).unwrap();
        for mode in [QqMode::Pooled, QqMode::Point(1, 0), QqMode::TimeMean] {
            for q in qq_data(&p, &o, &default_probs(), mode).unwrap() {
                assert!((q.pred_quantile - 2.0 * q.obs_quantile).abs() < 1e-4);
            }
        }
        assert!(qq_data(&p, &o, &[0.5, 0.25], QqMode::Pooled).is_err());
        assert!(qq_data(&p, &o, &[0.5], QqMode::Point(2, 0)).is_err());
    }

    #[test]
    fn qq_matches_sort_and_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f32> = (0..20).map(|_| [0.0, 1.0, 2.5, 4.0][rng.random_range(0..4)]).collect();
        let o = series(&values.iter().map(|&v| vec![v]).collect::<Vec<_>>(), 1, 1);
        let mut sorted = values.clone();
        sorted.sort_by(f32::total_cmp);
        // n = 20: p = 0.25 sits at rank 5.5, p = 0.5 at 10.5, p = 0.75 at 15.5
        for (q, rank) in qq_data(&o, &o, &[0.25, 0.5, 0.75], QqMode::Pooled).unwrap().iter().zip([5usize, 10, 15]) {
            let brute = (sorted[rank - 1] as f64 + sorted[rank] as f64) / 2.0;
            assert_eq!(q.obs_quantile, brute);
        }
    }

    #[test]
    fn season_partitions() {
        let start = NaiveDate::from_ymd_opt(2001, 1, 1).unwrap();
        let dates: Vec<NaiveDate> = start.iter_days().take(365).collect();
        let o: Vec<Vec<f32>> = dates.iter().map(|_| vec![1.0, 2.0]).collect();
        let p: Vec<Vec<f32>> = dates
            .iter()
            .map(|d| if Season::of(*d) == Season::Jja { vec![4.0, 5.0] } else { vec![1.0, 2.0] })
            .collect();
        let r = season_report(&series(&p, 1, 2), &series(&o, 1, 2), &dates).unwrap();
        let by: Vec<(usize, f64)> = r.seasons.iter().map(|s| (s.days, s.bias.unwrap())).collect();
        assert_eq!(by, vec![(90, 0.0), (92, 0.0), (92, 3.0), (91, 0.0)]);
        assert_eq!(r.periods.iter().map(|p| p.days).collect::<Vec<_>>(), vec![153, 212]);

        let winter = &dates[..31];
        let r = season_report(&series(&p[..31], 1, 2), &series(&o[..31], 1, 2), winter).unwrap();
        assert_eq!(r.seasons[2].rmse, None);
        assert_eq!(r.periods[0].days, 0);
        assert!(r.periods[0].bias.is_none());
    }

    #[test]
    fn rms_dominates_mean_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let o = random_series(&mut rng, 15, 2, 3);
            let p = random_series(&mut rng, 15, 2, 3);
            let r = rmse_map(&p, &o).unwrap();
            let s = signed_error_map(&p, &o).unwrap();
            for (a, b) in r.data().iter().zip(s.data()) {
                assert!(*a + 1e-5 >= b.abs());
            }
        }
    }

    #[test]
    fn csv_schemas() {
        let mut buf = Vec::new();
        write_extremes_csv(
            &[ExtremesRow {
                threshold: 99.9,
                points: 1,
                rmse_mean: 1.0,
                rmse_q25: 0.5,
                rmse_q75: 1.5,
                bias_mean: 0.25,
                bias_q25: 0.0,
                bias_q75: 2.0,
            }],
            &mut buf,
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "threshold,rmse_mean,rmse_q25,rmse_q75,bias_mean,bias_q25,bias_q75\n99.9,1,0.5,1.5,0.25,0,2\n"
        );
        let mut buf = Vec::new();
        write_seasons_csv(
            &SeasonReport {
                seasons: vec![PartitionRow {
                    label: "DJF".into(),
                    days: 0,
                    rmse: None,
                    bias: None,
                }],
                periods: vec![],
            },
            &mut buf,
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "season,rmse,bias\nDJF,,\n");
    }
}
