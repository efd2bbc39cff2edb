//! GRD1: a little-endian container for daily gridded datasets.
//!
//! ```text
//! "GRD1" | u32 header length | JSON header | inputs (f32) | targets (f32)
//! ```
//!
//! Inputs are `n_days × channels × height × width`, targets
//! `n_days × height × width`, both in day-major, channel-major, row-major order.

use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{ClimateSample, Dataset, NormalizationSpec};
use crate::error::{Error, Result, Shape};
use crate::tensor::Grid;

const MAGIC: &[u8; 4] = b"GRD1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    n_days: usize,
    channels: usize,
    height: usize,
    width: usize,
    channel_names: Vec<String>,
    dates: Vec<NaiveDate>,
    normalization: Option<NormalizationSpec>,
}

fn parse(offset: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

pub fn write_grd(dataset: &Dataset, mut out: impl Write) -> Result<()> {
    dataset.validate()?;
    let shape = dataset.input_shape().unwrap_or(Shape::new(dataset.channel_names.len(), 0, 0));
    let header = Header {
        n_days: dataset.samples.len(),
        channels: shape.channels,
        height: shape.height,
        width: shape.width,
        channel_names: dataset.channel_names.clone(),
        dates: dataset.dates(),
        normalization: dataset.normalization.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Argument(format!("header encoding: {e}")))?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Argument("GRD1 header too large".into()))?;
    let io = |e| Error::io("<GRD1 stream>", e);
    let mut buf = Vec::with_capacity(8 + json.len() + 4 * dataset.samples.len() * (shape.len() + shape.plane()));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(&json);
    for s in &dataset.samples {
        for v in s.input.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for s in &dataset.samples {
        for v in s.target.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf).map_err(io)
}

pub fn read_grd(mut input: impl Read) -> Result<Dataset> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| Error::io("<GRD1 stream>", e))?;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(parse(0, "bad magic, expected `GRD1`"));
    }
    if bytes.len() < 8 {
        return Err(parse(4, "truncated header length"));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let payload_start = 8 + header_len;
    if bytes.len() < payload_start {
        return Err(parse(8, format!("header declares {header_len} bytes but only {} remain", bytes.len() - 8)));
    }
    let header: Header = serde_json::from_slice(&bytes[8..payload_start])
        .map_err(|e| parse(8 + e.column().saturating_sub(1) as u64, format!("invalid header: {e}")))?;

    let at = payload_start as u64;
    if header.channel_names.len() != header.channels {
        return Err(parse(
            8,
            format!("header declares {} channels but names {}", header.channels, header.channel_names.len()),
        ));
    }
    if header.dates.len() != header.n_days {
        return Err(parse(8, format!("header declares {} days but lists {} dates", header.n_days, header.dates.len())));
    }
    let plane = header.height * header.width;
    if header.n_days > 0 && (plane == 0 || header.channels == 0) {
        return Err(parse(8, "zero-sized grid with non-empty day list"));
    }
    let payload = (bytes.len() - payload_start) as u64;
    if payload % 4 != 0 {
        return Err(parse(at, format!("payload of {payload} bytes is not a whole number of f32 values")));
    }
    let values = (payload / 4) as usize;
    let target_values = header.n_days * plane;
    let input_values = header.n_days * plane * header.channels;
    if values != input_values + target_values {
        let day_plane = header.n_days * plane;
        let present = if day_plane > 0 && values >= target_values && (values - target_values) % day_plane == 0 {
            format!("{} channels", (values - target_values) / day_plane)
        } else {
            format!("{values} values")
        };
        return Err(parse(
            at,
            format!(
                "header declares {} channels ({} values) but payload holds {present}",
                header.channels,
                input_values + target_values
            ),
        ));
    }
    let floats: Vec<f32> = bytes[payload_start..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let (inputs, targets) = floats.split_at(input_values);
    let in_shape = Shape::new(header.channels, header.height, header.width);
    let t_shape = Shape::new(1, header.height, header.width);
    let n_in = in_shape.len();
    let samples = header
        .dates
        .iter()
        .enumerate()
        .map(|(d, &date)| {
            Ok(ClimateSample {
                date,
                input: Grid::new(in_shape, inputs[d * n_in..(d + 1) * n_in].to_vec())?,
                target: Grid::new(t_shape, targets[d * plane..(d + 1) * plane].to_vec())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dataset = Dataset {
        channel_names: header.channel_names,
        samples,
        normalization: header.normalization,
    };
    dataset.validate().map_err(|e| parse(8, e.to_string()))?;
    Ok(dataset)
}

pub fn save_grd(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_grd(dataset, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_grd(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_grd(std::io::BufReader::new(file))
}
