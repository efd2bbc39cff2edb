//! Self-describing checkpoint container.
//!
//! ```text
//! "SDCK"  u8 version
//! repeated: [4-byte tag] [u64 LE payload length] [payload]
//! ```
//!
//! Sections: `META` (JSON: configs, normalization, period, seed, epoch),
//! `PARM` (f32 LE parameters in layout order), `ADAM` (step count, lr,
//! betas, epsilon, then both moment vectors as f64 LE), `LOGS` (JSON loss
//! log) and `QMAP` (fitted quantile maps). Unknown sections are skipped.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{NormalizationSpec, Period};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::optim::{AdamState, EpochRecord, TrainConfig, TrainState};
use crate::qmap::QuantileMapModel;

pub const MAGIC: &[u8; 4] = b"SDCK";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u8,
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
    pub normalization: Option<NormalizationSpec>,
    pub period: Option<Period>,
    pub seed: u64,
    /// Epochs completed.
    pub epoch: usize,
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Option<ModelParams>,
    pub adam: Option<AdamState>,
    pub log: Vec<EpochRecord>,
    /// Quantile maps keyed by the period they were fitted on.
    pub qmaps: Vec<(Period, QuantileMapModel)>,
}

impl Checkpoint {
    pub fn empty() -> Self {
        Self {
            meta: CheckpointMeta {
                format_version: VERSION,
                model: None,
                train: None,
                normalization: None,
                period: None,
                seed: 0,
                epoch: 0,
            },
            params: None,
            adam: None,
            log: Vec::new(),
            qmaps: Vec::new(),
        }
    }

    pub fn from_training(state: &TrainState, cfg: &TrainConfig, normalization: Option<NormalizationSpec>, period: Period) -> Self {
        Self {
            meta: CheckpointMeta {
                format_version: VERSION,
                model: Some(state.params.config.clone()),
                train: Some(cfg.clone()),
                normalization,
                period: Some(period),
                seed: cfg.seed,
                epoch: state.epoch,
            },
            params: Some(state.params.clone()),
            adam: Some(state.adam.clone()),
            log: state.log.clone(),
            qmaps: Vec::new(),
        }
    }

    /// The training state stored in this checkpoint, if it holds a model.
    pub fn train_state(&self) -> Option<TrainState> {
        let params = self.params.clone()?;
        let adam = self.adam.clone()?;
        Some(TrainState {
            params,
            adam,
            log: self.log.clone(),
            epoch: self.meta.epoch,
        })
    }

    pub fn qmap(&self, period: Period) -> Option<&QuantileMapModel> {
        self.qmaps.iter().find(|(p, _)| *p == period).map(|(_, q)| q)
    }

    pub fn set_qmap(&mut self, period: Period, qm: QuantileMapModel) {
        self.qmaps.retain(|(p, _)| *p != period);
        self.qmaps.push((period, qm));
    }
}

fn section(out: &mut impl Write, tag: &[u8; 4], payload: &[u8]) -> std::io::Result<()> {
    out.write_all(tag)?;
    out.write_all(&(payload.len() as u64).to_le_bytes())?;
    out.write_all(payload)
}

fn f64s(dst: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        dst.extend_from_slice(&v.to_le_bytes());
    }
}

fn f32s(dst: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        dst.extend_from_slice(&v.to_le_bytes());
    }
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Argument(format!("checkpoint JSON: {e}"))
}

pub fn write_checkpoint(ck: &Checkpoint, mut out: impl Write) -> Result<()> {
    let io = |e| Error::io("<checkpoint>", e);
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&[VERSION]).map_err(io)?;
    let meta = serde_json::to_vec(&ck.meta).map_err(json_err)?;
    section(&mut out, b"META", &meta).map_err(io)?;
    if let Some(p) = &ck.params {
        let mut buf = Vec::new();
        f32s(&mut buf, &p.to_flat());
        section(&mut out, b"PARM", &buf).map_err(io)?;
    }
    if let Some(a) = &ck.adam {
        let mut buf = Vec::new();
        buf.extend_from_slice(&a.step_count.to_le_bytes());
        f64s(&mut buf, &[a.lr, a.beta1, a.beta2, a.epsilon]);
        buf.extend_from_slice(&(a.m.len() as u64).to_le_bytes());
        f64s(&mut buf, &a.m);
        f64s(&mut buf, &a.v);
        section(&mut out, b"ADAM", &buf).map_err(io)?;
    }
    let logs = serde_json::to_vec(&ck.log).map_err(json_err)?;
    section(&mut out, b"LOGS", &logs).map_err(io)?;
    if !ck.qmaps.is_empty() {
        let mut buf = Vec::new();
        buf.extend_from_slice(&(ck.qmaps.len() as u32).to_le_bytes());
        for (period, qm) in &ck.qmaps {
            let label = period.label().as_bytes();
            buf.extend_from_slice(&(label.len() as u32).to_le_bytes());
            buf.extend_from_slice(label);
            let s = qm.shape();
            for d in [s.height, s.width, qm.samples_per_point()] {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            f32s(&mut buf, qm.model_values());
            f32s(&mut buf, qm.obs_values());
        }
        section(&mut out, b"QMAP", &buf).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Cursor over one section payload.
struct Payload<'a> {
    tag: &'static str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Payload<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos as u64,
                message: format!("{} section truncated", self.tag),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn read_checkpoint(mut input: impl Read) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| Error::io("<checkpoint>", e))?;
    if bytes.len() < 5 || &bytes[..4] != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "not a checkpoint (missing SDCK magic)".into(),
        });
    }
    if bytes[4] != VERSION {
        return Err(Error::Parse {
            offset: 4,
            message: format!("unsupported checkpoint version {}", bytes[4]),
        });
    }
    let mut pos = 5usize;
    let mut sections: Vec<([u8; 4], &[u8])> = Vec::new();
    while pos < bytes.len() {
        if bytes.len() - pos < 12 {
            return Err(Error::Parse {
                offset: pos as u64,
                message: "truncated section header".into(),
            });
        }
        let tag: [u8; 4] = bytes[pos..pos + 4].try_into().unwrap();
        let len = u64::from_le_bytes(bytes[pos + 4..pos + 12].try_into().unwrap()) as usize;
        let start = pos + 12;
        if bytes.len() - start < len {
            return Err(Error::Parse {
                offset: start as u64,
                message: format!("section {} declares {len} bytes but {} remain", String::from_utf8_lossy(&tag), bytes.len() - start),
            });
        }
        sections.push((tag, &bytes[start..start + len]));
        pos = start + len;
    }
    let find = |tag: &[u8; 4]| sections.iter().find(|(t, _)| t == tag).map(|(_, p)| *p);

    let meta: CheckpointMeta = serde_json::from_slice(find(b"META").ok_or_else(|| Error::Parse {
        offset: 5,
        message: "checkpoint has no META section".into(),
    })?)
    .map_err(json_err)?;
    let mut ck = Checkpoint::empty();

    if let Some(bytes) = find(b"PARM") {
        let config = meta.model.as_ref().ok_or_else(|| Error::Config("parameters stored without a model config".into()))?;
        let mut params = ModelParams::zeros(config)?;
        if bytes.len() != params.num_params() * 4 {
            return Err(Error::Parse {
                offset: 0,
                message: format!("PARM holds {} bytes, model needs {} parameters", bytes.len(), params.num_params()),
            });
        }
        let mut p = Payload { tag: "PARM", bytes, pos: 0 };
        params.set_flat(&p.f32s(params.num_params())?)?;
        ck.params = Some(params);
    }
    if let Some(bytes) = find(b"ADAM") {
        let mut p = Payload { tag: "ADAM", bytes, pos: 0 };
        let step_count = p.u64()?;
        let h = p.f64s(4)?;
        let n = p.u64()? as usize;
        ck.adam = Some(AdamState {
            m: p.f64s(n)?,
            v: p.f64s(n)?,
            step_count,
            lr: h[0],
            beta1: h[1],
            beta2: h[2],
            epsilon: h[3],
        });
    }
    if let Some(bytes) = find(b"LOGS") {
        ck.log = serde_json::from_slice(bytes).map_err(json_err)?;
    }
    if let Some(bytes) = find(b"QMAP") {
        let mut p = Payload { tag: "QMAP", bytes, pos: 0 };
        for _ in 0..p.u32()? {
            let len = p.u32()? as usize;
            let label = String::from_utf8_lossy(p.take(len)?).into_owned();
            let period: Period = label.parse()?;
            let (h, w, n) = (p.u32()? as usize, p.u32()? as usize, p.u32()? as usize);
            let model = p.f32s(h * w * n)?;
            let obs = p.f32s(h * w * n)?;
            ck.qmaps.push((period, QuantileMapModel::from_parts(h, w, n, model, obs)?));
        }
    }
    ck.meta = meta;
    Ok(ck)
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_checkpoint(ck, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}
