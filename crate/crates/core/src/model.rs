//! Network hyperparameters and the full parameter set.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::convlstm::ConvLstmCellParams;
use crate::error::{Error, Result, Shape};
use crate::srblock::{HeadParams, SrBlockParams};
use crate::tensor::{ConvKernel, Real};

/// Architecture of the downscaling network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_channels: usize,
    /// Days per input window.
    pub window: usize,
    pub height: usize,
    pub width: usize,
    pub lstm_filters: Vec<usize>,
    pub lstm_kernels: Vec<usize>,
    /// Widths of the four convolutions inside each SR block; the last is the block output.
    pub sr_filters: [usize; 4],
    pub sr_kernels: [usize; 4],
    pub sr_blocks: usize,
    pub head_filters: [usize; 2],
    pub head_kernels: [usize; 2],
}

impl ModelConfig {
    /// The published architecture on an arbitrary grid (129×135 in the original setting).
    pub fn canonical(height: usize, width: usize) -> Self {
        Self {
            input_channels: 7,
            window: 5,
            height,
            width,
            lstm_filters: vec![32, 16, 16],
            lstm_kernels: vec![9, 5, 3],
            sr_filters: [16, 128, 64, 32],
            sr_kernels: [9, 5, 3, 3],
            sr_blocks: 2,
            head_filters: [128, 16],
            head_kernels: [1, 3],
        }
    }

    /// A narrow variant of the same topology for desk-scale experiments.
    pub fn compact(height: usize, width: usize) -> Self {
        Self {
            input_channels: 7,
            window: 5,
            height,
            width,
            lstm_filters: vec![8, 6, 6],
            lstm_kernels: vec![3, 3, 3],
            sr_filters: [6, 12, 6, 8],
            sr_kernels: [3, 3, 3, 3],
            sr_blocks: 2,
            head_filters: [12, 6],
            head_kernels: [1, 3],
        }
    }

    pub fn input_shape(&self) -> Shape {
        Shape::new(self.input_channels, self.height, self.width)
    }

    pub fn output_shape(&self) -> Shape {
        Shape::new(1, self.height, self.width)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: usize, what: &str| {
            if v == 0 {
                Err(Error::Config(format!("{what} must be positive")))
            } else {
                Ok(())
            }
        };
        positive(self.input_channels, "input_channels")?;
        positive(self.window, "window")?;
        positive(self.height, "height")?;
        positive(self.width, "width")?;
        if self.lstm_filters.is_empty() || self.lstm_filters.len() != self.lstm_kernels.len() {
            return Err(Error::Config(
                "lstm_filters and lstm_kernels must be non-empty and of equal length".into(),
            ));
        }
        let kernels = self
            .lstm_kernels
            .iter()
            .chain(&self.sr_kernels)
            .chain(&self.head_kernels);
        for &k in kernels {
            if k % 2 == 0 {
                return Err(Error::Config(format!("kernel sizes must be odd, got {k}")));
            }
        }
        for &f in self.lstm_filters.iter().chain(&self.sr_filters).chain(&self.head_filters) {
            positive(f, "filter counts")?;
        }
        positive(self.sr_blocks, "sr_blocks")?;
        Ok(())
    }
}

/// Which regularization rules a parameter block falls under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// ConvLSTM input, recurrent and peephole weights.
    LstmWeight,
    LstmBias,
    /// Anything in the SR blocks or the head.
    Other,
}

/// Every learnable tensor of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ModelParams<T: Real = f32> {
    pub config: ModelConfig,
    pub cells: Vec<ConvLstmCellParams<T>>,
    pub sr: Vec<SrBlockParams<T>>,
    pub head: HeadParams<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        Self::build(config, |o, i, k| ConvKernel::zeros(o, i, k), |cin, eta, k| {
            ConvLstmCellParams::zeros(cin, eta, k, config.height, config.width)
        })
    }

    /// Deterministic initialization from `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let rng = std::cell::RefCell::new(ChaCha8Rng::seed_from_u64(seed));
        Self::build(
            config,
            |o, i, k| ConvKernel::glorot_uniform(o, i, k, &mut *rng.borrow_mut()),
            |cin, eta, k| ConvLstmCellParams::init(cin, eta, k, config.height, config.width, &mut *rng.borrow_mut()),
        )
    }

    fn build(
        config: &ModelConfig,
        kernel: impl Fn(usize, usize, usize) -> ConvKernel<T>,
        cell: impl Fn(usize, usize, usize) -> ConvLstmCellParams<T>,
    ) -> Result<Self> {
        config.validate()?;
        let mut cin = config.input_channels;
        let mut cells = Vec::with_capacity(config.lstm_filters.len());
        for (&eta, &k) in config.lstm_filters.iter().zip(&config.lstm_kernels) {
            cells.push(cell(cin, eta, k));
            cin = eta;
        }
        let [f1, f2, f3, f4] = config.sr_filters;
        let [k1, k2, k3, k4] = config.sr_kernels;
        let mut sr = Vec::with_capacity(config.sr_blocks);
        for _ in 0..config.sr_blocks {
            sr.push(SrBlockParams {
                conv1: kernel(f1, cin, k1),
                conv2: kernel(f2, f1, k2),
                conv3: kernel(f3, f2, k3),
                conv4: kernel(f4, f1 + f3, k4),
            });
            cin = f4;
        }
        let [h1, h2] = config.head_filters;
        let [kh1, kh2] = config.head_kernels;
        let head = HeadParams {
            conv1: kernel(h1, cin, kh1),
            conv2: kernel(h2, h1, kh2),
            out: kernel(1, h2, 1),
        };
        Ok(Self {
            config: config.clone(),
            cells,
            sr,
            head,
        })
    }

    /// Zero-valued parameters of identical layout, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_block_mut(|_, _, data| data.fill(T::zero()));
        z
    }

    /// Visits every learnable block in a fixed order.
    pub fn for_each_block(&self, mut f: impl FnMut(&str, BlockKind, &[T])) {
        for (l, cell) in self.cells.iter().enumerate() {
            for (name, k) in [("w_i", &cell.w_i), ("w_f", &cell.w_f), ("w_o", &cell.w_o), ("w_c", &cell.w_c)] {
                f(&format!("lstm{l}.{name}.weight"), BlockKind::LstmWeight, &k.weights);
                f(&format!("lstm{l}.{name}.bias"), BlockKind::LstmBias, &k.bias);
            }
            for (name, k) in [("r_i", &cell.r_i), ("r_f", &cell.r_f), ("r_o", &cell.r_o), ("r_c", &cell.r_c)] {
                f(&format!("lstm{l}.{name}.weight"), BlockKind::LstmWeight, &k.weights);
            }
            for (name, g) in [("rho_i", &cell.rho_i), ("rho_f", &cell.rho_f), ("rho_o", &cell.rho_o)] {
                f(&format!("lstm{l}.{name}"), BlockKind::LstmWeight, g.data());
            }
        }
        for (b, block) in self.sr.iter().enumerate() {
            for (name, k) in block.kernels() {
                f(&format!("sr{b}.{name}.weight"), BlockKind::Other, &k.weights);
                f(&format!("sr{b}.{name}.bias"), BlockKind::Other, &k.bias);
            }
        }
        for (name, k) in self.head.kernels() {
            f(&format!("head.{name}.weight"), BlockKind::Other, &k.weights);
            f(&format!("head.{name}.bias"), BlockKind::Other, &k.bias);
        }
    }

    /// Mutable counterpart of [`Self::for_each_block`], same order.
    pub fn for_each_block_mut(&mut self, mut f: impl FnMut(&str, BlockKind, &mut [T])) {
        for (l, cell) in self.cells.iter_mut().enumerate() {
            for (name, k) in [
                ("w_i", &mut cell.w_i),
                ("w_f", &mut cell.w_f),
                ("w_o", &mut cell.w_o),
                ("w_c", &mut cell.w_c),
            ] {
                f(&format!("lstm{l}.{name}.weight"), BlockKind::LstmWeight, &mut k.weights);
                f(&format!("lstm{l}.{name}.bias"), BlockKind::LstmBias, &mut k.bias);
            }
            for (name, k) in [
                ("r_i", &mut cell.r_i),
                ("r_f", &mut cell.r_f),
                ("r_o", &mut cell.r_o),
                ("r_c", &mut cell.r_c),
            ] {
                f(&format!("lstm{l}.{name}.weight"), BlockKind::LstmWeight, &mut k.weights);
            }
            for (name, g) in [("rho_i", &mut cell.rho_i), ("rho_f", &mut cell.rho_f), ("rho_o", &mut cell.rho_o)] {
                f(&format!("lstm{l}.{name}"), BlockKind::LstmWeight, g.data_mut());
            }
        }
        for (b, block) in self.sr.iter_mut().enumerate() {
            for (name, k) in block.kernels_mut() {
                f(&format!("sr{b}.{name}.weight"), BlockKind::Other, &mut k.weights);
                f(&format!("sr{b}.{name}.bias"), BlockKind::Other, &mut k.bias);
            }
        }
        for (name, k) in self.head.kernels_mut() {
            f(&format!("head.{name}.weight"), BlockKind::Other, &mut k.weights);
            f(&format!("head.{name}.bias"), BlockKind::Other, &mut k.bias);
        }
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.for_each_block(|_, _, d| n += d.len());
        n
    }

    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        self.for_each_block(|_, _, d| out.extend_from_slice(d));
        out
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::shape("ModelParams::set_flat", format!("{n} parameters"), format!("{} values", flat.len())));
        }
        let mut offset = 0;
        self.for_each_block_mut(|_, _, d| {
            d.copy_from_slice(&flat[offset..offset + d.len()]);
            offset += d.len();
        });
        Ok(())
    }

    /// The same parameters at another storage precision.
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros(&self.config).expect("config already validated");
        let flat: Vec<U> = self.to_flat().into_iter().map(|v| U::cast_from(v.as_f64())).collect();
        out.set_flat(&flat).expect("identical layout");
        out
    }

    /// `(name, kind, start..end)` of every block within the flat vector.
    pub fn layout(&self) -> Vec<(String, BlockKind, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        let mut offset = 0;
        self.for_each_block(|name, kind, d| {
            out.push((name.to_string(), kind, offset..offset + d.len()));
            offset += d.len();
        });
        out
    }

    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &ModelParams<T>) {
        let flat = other.to_flat();
        let mut offset = 0;
        self.for_each_block_mut(|_, _, d| {
            for (a, b) in d.iter_mut().zip(&flat[offset..]) {
                *a += *b;
            }
            offset += d.len();
        });
    }
}
