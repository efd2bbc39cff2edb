use serde::{Deserialize, Serialize};

use super::ClimateSample;
use crate::error::{Error, Result};
use crate::tensor::Grid;

/// Affine map of one channel from its fitted `[min, max]` onto `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelNorm {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub lo: f64,
    pub hi: f64,
}

impl ChannelNorm {
    pub fn new(name: impl Into<String>, min: f64, max: f64, lo: f64, hi: f64) -> Result<Self> {
        let name = name.into();
        if !(max > min) {
            return Err(Error::DegenerateChannel { channel: name, value: min });
        }
        Ok(Self { name, min, max, lo, hi })
    }

    /// Precipitation maps onto `[0, 50]`, everything else onto `[0, 1]`.
    pub fn target_range(name: &str) -> (f64, f64) {
        if name == "precipitation" {
            (0.0, 50.0)
        } else {
            (0.0, 1.0)
        }
    }

    #[inline]
    pub fn forward(&self, x: f64) -> f64 {
        self.lo + (x - self.min) * (self.hi - self.lo) / (self.max - self.min)
    }

    #[inline]
    pub fn inverse(&self, y: f64) -> f64 {
        self.min + (y - self.lo) * (self.max - self.min) / (self.hi - self.lo)
    }
}

/// Per-channel normalization of inputs plus the precipitation target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub inputs: Vec<ChannelNorm>,
    pub target: ChannelNorm,
}

fn min_max<'a>(values: impl Iterator<Item = &'a f32>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v as f64), hi.max(v as f64)))
}

impl NormalizationSpec {
    /// Fits channel ranges on `samples`, which should be the training split only.
    pub fn fit(samples: &[ClimateSample], channel_names: &[String]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Argument("cannot fit normalization on no samples".into()))?;
        if channel_names.len() != first.input.channels() {
            return Err(Error::Argument(format!(
                "{} channel names for {} channels",
                channel_names.len(),
                first.input.channels()
            )));
        }
        let inputs = channel_names
            .iter()
            .enumerate()
            .map(|(c, name)| {
                let (min, max) = min_max(samples.iter().flat_map(|s| s.input.channel(c)));
                let (lo, hi) = ChannelNorm::target_range(name);
                ChannelNorm::new(name.clone(), min, max, lo, hi)
            })
            .collect::<Result<Vec<_>>>()?;
        let (min, max) = min_max(samples.iter().flat_map(|s| s.target.data()));
        let (lo, hi) = ChannelNorm::target_range("precipitation");
        let target = ChannelNorm::new("target_precipitation", min, max, lo, hi)?;
        Ok(Self { inputs, target })
    }

    pub fn normalize_input(&self, grid: &Grid) -> Result<Grid> {
        normalize(grid, &self.inputs)
    }

    pub fn normalize_target(&self, grid: &Grid) -> Result<Grid> {
        normalize(grid, std::slice::from_ref(&self.target))
    }

    pub fn denormalize_target(&self, grid: &Grid) -> Result<Grid> {
        denormalize(grid, std::slice::from_ref(&self.target))
    }

    pub fn normalize_sample(&self, sample: &ClimateSample) -> Result<ClimateSample> {
        Ok(ClimateSample {
            date: sample.date,
            input: self.normalize_input(&sample.input)?,
            target: self.normalize_target(&sample.target)?,
        })
    }
}

fn apply(grid: &Grid, channels: &[ChannelNorm], f: impl Fn(&ChannelNorm, f64) -> f64) -> Result<Grid> {
    if channels.len() != grid.channels() {
        return Err(Error::shape(
            "normalize",
            grid.shape(),
            format!("{} normalized channels", channels.len()),
        ));
    }
    let mut out = grid.clone();
    for (c, norm) in channels.iter().enumerate() {
        for v in out.channel_mut(c) {
            *v = f(norm, *v as f64) as f32;
        }
    }
    Ok(out)
}

/// Maps each channel onto its target range; out-of-range values extrapolate.
pub fn normalize(grid: &Grid, channels: &[ChannelNorm]) -> Result<Grid> {
    apply(grid, channels, ChannelNorm::forward)
}

pub fn denormalize(grid: &Grid, channels: &[ChannelNorm]) -> Result<Grid> {
    apply(grid, channels, ChannelNorm::inverse)
}
