//! Daily gridded samples, lag windows and calendar partitions.

mod grd;
mod interp;
mod normalize;
mod synth;

pub use grd::{load_grd, read_grd, save_grd, write_grd};
pub use interp::interpolate_to_grid;
pub use normalize::{denormalize, normalize, ChannelNorm, NormalizationSpec};
pub use synth::{generate_synthetic, SynthConfig};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Shape};
use crate::tensor::Grid;

/// Input channel order of every dataset.
pub const CHANNEL_NAMES: [&str; 7] = [
    "precipitation",
    "elevation",
    "relative_humidity",
    "pressure",
    "wind_u",
    "wind_v",
    "wind_w",
];

/// Index of the (coarse, interpolated) precipitation input channel.
pub const PRECIP_CHANNEL: usize = 0;
/// Index of the static elevation channel.
pub const ELEVATION_CHANNEL: usize = 1;

/// Days per lag window.
pub const WINDOW_LEN: usize = 5;

/// One day of input channels with the observed precipitation target.
#[derive(Debug, Clone, PartialEq)]
pub struct ClimateSample {
    pub date: NaiveDate,
    pub input: Grid,
    /// `1 × H × W`, mm/day.
    pub target: Grid,
}

/// A chronologically ordered collection of samples sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub channel_names: Vec<String>,
    pub samples: Vec<ClimateSample>,
    pub normalization: Option<NormalizationSpec>,
}

impl Dataset {
    pub fn new(channel_names: Vec<String>, samples: Vec<ClimateSample>) -> Result<Self> {
        let ds = Self {
            channel_names,
            samples,
            normalization: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn input_shape(&self) -> Option<Shape> {
        self.samples.first().map(|s| s.input.shape())
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.samples.first() else {
            return Ok(());
        };
        let shape = first.input.shape();
        if self.channel_names.len() != shape.channels {
            return Err(Error::Argument(format!(
                "{} channel names for {} input channels",
                self.channel_names.len(),
                shape.channels
            )));
        }
        let target = Shape::new(1, shape.height, shape.width);
        for pair in self.samples.windows(2) {
            if pair[1].date <= pair[0].date {
                return Err(Error::Argument(format!(
                    "samples not strictly chronological at {}",
                    pair[1].date
                )));
            }
        }
        for s in &self.samples {
            s.input.expect_shape(shape, "dataset input")?;
            s.target.expect_shape(target, "dataset target")?;
        }
        Ok(())
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.samples.iter().map(|s| s.date).collect()
    }

    /// Keeps the samples matching `keep`, preserving order.
    pub fn filter(&self, keep: impl Fn(&ClimateSample) -> bool) -> Dataset {
        Dataset {
            channel_names: self.channel_names.clone(),
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            normalization: self.normalization.clone(),
        }
    }
}

/// `T` consecutive daily inputs ending on `date`, with that day's target.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceWindow {
    pub window: Vec<Grid>,
    pub target: Grid,
    pub date: NaiveDate,
}

/// One window per day that has `len - 1` consecutive predecessors.
///
/// A calendar gap breaks the stream: no window spans missing days.
pub fn build_windows(samples: &[ClimateSample], len: usize) -> Vec<SequenceWindow> {
    if len == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut run = 0usize;
    for (i, s) in samples.iter().enumerate() {
        let consecutive = i > 0 && samples[i - 1].date.succ_opt() == Some(s.date);
        run = if consecutive { run + 1 } else { 1 };
        if run >= len {
            out.push(SequenceWindow {
                window: samples[i + 1 - len..=i].iter().map(|p| p.input.clone()).collect(),
                target: s.target.clone(),
                date: s.date,
            });
        }
    }
    out
}

/// Monsoon (May–September) versus the rest of the year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Period {
    Monsoon,
    NonMonsoon,
    All,
}

impl Period {
    pub fn of(date: NaiveDate) -> Period {
        if (5..=9).contains(&date.month()) {
            Period::Monsoon
        } else {
            Period::NonMonsoon
        }
    }

    pub fn contains(self, date: NaiveDate) -> bool {
        self == Period::All || Period::of(date) == self
    }

    pub fn label(self) -> &'static str {
        match self {
            Period::Monsoon => "monsoon",
            Period::NonMonsoon => "non-monsoon",
            Period::All => "all",
        }
    }
}

impl std::str::FromStr for Period {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "monsoon" => Ok(Period::Monsoon),
            "non-monsoon" => Ok(Period::NonMonsoon),
            "all" => Ok(Period::All),
            other => Err(Error::Argument(format!("unknown period `{other}`"))),
        }
    }
}

/// Meteorological seasons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Season {
    Djf,
    Mam,
    Jja,
    Son,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Djf, Season::Mam, Season::Jja, Season::Son];

    pub fn of(date: NaiveDate) -> Season {
        match date.month() {
            12 | 1 | 2 => Season::Djf,
            3..=5 => Season::Mam,
            6..=8 => Season::Jja,
            _ => Season::Son,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Season::Djf => "DJF",
            Season::Mam => "MAM",
            Season::Jja => "JJA",
            Season::Son => "SON",
        }
    }
}

/// Splits into (monsoon, non-monsoon), preserving order.
pub fn split_monsoon(samples: &[ClimateSample]) -> (Vec<ClimateSample>, Vec<ClimateSample>) {
    samples.iter().cloned().partition(|s| Period::of(s.date) == Period::Monsoon)
}

/// Splits into DJF, MAM, JJA, SON, preserving order.
pub fn split_seasons(samples: &[ClimateSample]) -> [Vec<ClimateSample>; 4] {
    let mut out: [Vec<ClimateSample>; 4] = Default::default();
    for s in samples {
        out[Season::of(s.date) as usize].push(s.clone());
    }
    out
}

/// Default last training year.
pub const DEFAULT_CUTOFF_YEAR: i32 = 1999;

/// Splits by calendar year: `year <= cutoff` trains, later years test.
pub fn train_test_split(samples: &[ClimateSample], cutoff_year: i32) -> (Vec<ClimateSample>, Vec<ClimateSample>) {
    let (train, test): (Vec<_>, Vec<_>) = samples.iter().cloned().partition(|s| s.date.year() <= cutoff_year);
    if train.is_empty() {
        log::warn!("no samples on or before {cutoff_year}: the training split is empty");
    }
    if test.is_empty() {
        log::warn!("no samples after {cutoff_year}: the test split is empty");
    }
    (train, test)
}

/// Windows whose target falls after `cutoff_year`, allowing lag context
/// from the last training days.
pub fn test_windows(samples: &[ClimateSample], cutoff_year: i32, len: usize) -> Vec<SequenceWindow> {
    build_windows(samples, len)
        .into_iter()
        .filter(|w| w.date.year() > cutoff_year)
        .collect()
}
