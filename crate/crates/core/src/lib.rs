//! Statistical downscaling of coarse climate grids to fine-resolution
//! precipitation.
//!
//! The learned model is a three-layer peephole ConvLSTM encoder followed by
//! two skip-connected super-resolution blocks and a small convolutional head
//! ([`model::ModelParams`], [`srblock::network_forward`]). It is trained with
//! hand-derived backpropagation and Adam ([`optim::fit`]). A per-grid-point
//! quantile-mapping baseline lives in [`qmap`], and [`eval`] provides RMSE,
//! mean-absolute "bias", season breakdowns, extreme-percentile tables and
//! Q-Q data.
//!
//! Data enters through [`data`]: the GRD1 container, normalization,
//! interpolation, lag windows, calendar splits and a seeded synthetic
//! generator. [`checkpoint`] persists everything needed for inference.
//! [`pipeline`] ties these into per-period training, prediction and the
//! desk-scale comparison, and [`cli`] backs the `downscale` binary.

pub mod checkpoint;
pub mod cli;
pub mod convlstm;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod qmap;
pub mod quantile;
pub mod srblock;
pub mod tensor;

pub use error::{Error, Result, Shape};
pub use tensor::{ConvKernel, Grid};
