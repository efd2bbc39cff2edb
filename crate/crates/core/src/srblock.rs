//! Skip-connected super-resolution blocks, the convolutional head, and the
//! assembled network.
//!
//! Inside a block:
//!
//! ```text
//! f1 = conv1(x)                 (linear)
//! f2 = relu(conv2(f1))
//! f3 = relu(conv3(f2))
//! f5 = conv4(concat(f1, f3))    (linear)
//! ```
//!
//! The head applies `relu(conv1)`, a linear `conv2`, and a 1×1 projection to
//! a single precipitation channel. All convolutions keep the spatial size.

use serde::{Deserialize, Serialize};

use crate::convlstm::{stacked_backward, stacked_forward_trace, DropoutMasks, Mode, StackTrace};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::{concat_channels, conv2d, conv2d_backward, relu, ConvKernel, Grid, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SrBlockParams<T: Real = f32> {
    pub conv1: ConvKernel<T>,
    pub conv2: ConvKernel<T>,
    pub conv3: ConvKernel<T>,
    /// Consumes `conv1.out + conv3.out` channels.
    pub conv4: ConvKernel<T>,
}

impl<T: Real> SrBlockParams<T> {
    pub fn kernels(&self) -> [(&'static str, &ConvKernel<T>); 4] {
        [("conv1", &self.conv1), ("conv2", &self.conv2), ("conv3", &self.conv3), ("conv4", &self.conv4)]
    }

    pub fn kernels_mut(&mut self) -> [(&'static str, &mut ConvKernel<T>); 4] {
        [
            ("conv1", &mut self.conv1),
            ("conv2", &mut self.conv2),
            ("conv3", &mut self.conv3),
            ("conv4", &mut self.conv4),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let skip = self.conv1.out_channels() + self.conv3.out_channels();
        if self.conv2.in_channels() != self.conv1.out_channels()
            || self.conv3.in_channels() != self.conv2.out_channels()
            || self.conv4.in_channels() != skip
        {
            return Err(Error::Config(format!(
                "SR block channel path is inconsistent (conv4 expects {}, skip provides {skip})",
                self.conv4.in_channels()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HeadParams<T: Real = f32> {
    pub conv1: ConvKernel<T>,
    pub conv2: ConvKernel<T>,
    /// 1×1 projection onto the precipitation channel.
    pub out: ConvKernel<T>,
}

impl<T: Real> HeadParams<T> {
    pub fn kernels(&self) -> [(&'static str, &ConvKernel<T>); 3] {
        [("conv1", &self.conv1), ("conv2", &self.conv2), ("out", &self.out)]
    }

    pub fn kernels_mut(&mut self) -> [(&'static str, &mut ConvKernel<T>); 3] {
        [("conv1", &mut self.conv1), ("conv2", &mut self.conv2), ("out", &mut self.out)]
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SrTrace<T: Real = f32> {
    input: Grid<T>,
    f1: Grid<T>,
    f2: Grid<T>,
    concat: Grid<T>,
}

fn sr_forward_trace<T: Real>(x: &Grid<T>, p: &SrBlockParams<T>) -> Result<(Grid<T>, SrTrace<T>)> {
    p.validate()?;
    let f1 = conv2d(x, &p.conv1)?;
    let f2 = relu(&conv2d(&f1, &p.conv2)?);
    let f3 = relu(&conv2d(&f2, &p.conv3)?);
    let concat = concat_channels(&f1, &f3)?;
    let f5 = conv2d(&concat, &p.conv4)?;
    Ok((
        f5,
        SrTrace {
            input: x.clone(),
            f1,
            f2,
            concat,
        },
    ))
}

pub fn sr_block_forward<T: Real>(x: &Grid<T>, p: &SrBlockParams<T>) -> Result<Grid<T>> {
    sr_forward_trace(x, p).map(|(y, _)| y)
}

fn add_kernel_grad<T: Real>(dst: &mut ConvKernel<T>, weights: &[f64], bias: &[f64]) {
    for (d, &s) in dst.weights.iter_mut().zip(weights) {
        *d += T::cast_from(s);
    }
    for (d, &s) in dst.bias.iter_mut().zip(bias) {
        *d += T::cast_from(s);
    }
}

/// Gradient through `relu(y)` given the activated output.
fn relu_backward<T: Real>(grad: &mut Grid<T>, activated: &Grid<T>) {
    for (g, &a) in grad.data_mut().iter_mut().zip(activated.data()) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

fn sr_backward<T: Real>(p: &SrBlockParams<T>, trace: &SrTrace<T>, grad_out: &Grid<T>, grads: &mut SrBlockParams<T>) -> Result<Grid<T>> {
    let g4 = conv2d_backward(&trace.concat, &p.conv4, grad_out, true)?;
    add_kernel_grad(&mut grads.conv4, &g4.weights, &g4.bias);
    let d_concat = g4.input.expect("input gradient requested");
    let c1 = p.conv1.out_channels();
    let mut d_f1 = d_concat.slice_channels(0, c1)?;
    let mut d_f3 = d_concat.slice_channels(c1, d_concat.channels() - c1)?;

    let f3 = trace.concat.slice_channels(c1, d_concat.channels() - c1)?;
    relu_backward(&mut d_f3, &f3);
    let g3 = conv2d_backward(&trace.f2, &p.conv3, &d_f3, true)?;
    add_kernel_grad(&mut grads.conv3, &g3.weights, &g3.bias);
    let mut d_f2 = g3.input.expect("input gradient requested");

    relu_backward(&mut d_f2, &trace.f2);
    let g2 = conv2d_backward(&trace.f1, &p.conv2, &d_f2, true)?;
    add_kernel_grad(&mut grads.conv2, &g2.weights, &g2.bias);
    d_f1.add_assign(&g2.input.expect("input gradient requested"))?;

    let g1 = conv2d_backward(&trace.input, &p.conv1, &d_f1, true)?;
    add_kernel_grad(&mut grads.conv1, &g1.weights, &g1.bias);
    Ok(g1.input.expect("input gradient requested"))
}

/// Forward intermediates of the whole network.
#[derive(Debug, Clone)]
pub(crate) struct NetworkTrace<T: Real = f32> {
    encoder: StackTrace<T>,
    sr: Vec<SrTrace<T>>,
    head_in: Grid<T>,
    f6: Grid<T>,
    f7: Grid<T>,
}

pub(crate) fn network_forward_trace<T: Real>(
    window: &[Grid<T>],
    model: &ModelParams<T>,
    masks: Option<&DropoutMasks<T>>,
) -> Result<(Grid<T>, NetworkTrace<T>)> {
    let cfg = &model.config;
    if window.len() != cfg.window {
        return Err(Error::Argument(format!(
            "window holds {} days but the model expects {}",
            window.len(),
            cfg.window
        )));
    }
    for g in window {
        if g.shape() != cfg.input_shape() {
            return Err(Error::shape("network_forward", g.shape(), cfg.input_shape()));
        }
    }
    let (mut x, encoder) = stacked_forward_trace(window, &model.cells, masks)?;
    let mut sr = Vec::with_capacity(model.sr.len());
    for block in &model.sr {
        let (y, trace) = sr_forward_trace(&x, block)?;
        sr.push(trace);
        x = y;
    }
    let f6 = relu(&conv2d(&x, &model.head.conv1)?);
    let f7 = conv2d(&f6, &model.head.conv2)?;
    let y = conv2d(&f7, &model.head.out)?;
    Ok((
        y,
        NetworkTrace {
            encoder,
            sr,
            head_in: x,
            f6,
            f7,
        },
    ))
}

/// Gradients of every parameter given `grad_out = ∂L/∂y`.
pub(crate) fn network_backward<T: Real>(
    window: &[Grid<T>],
    model: &ModelParams<T>,
    masks: Option<&DropoutMasks<T>>,
    trace: &NetworkTrace<T>,
    grad_out: &Grid<T>,
) -> Result<ModelParams<T>> {
    let mut grads = model.zeros_like();
    let g = conv2d_backward(&trace.f7, &model.head.out, grad_out, true)?;
    add_kernel_grad(&mut grads.head.out, &g.weights, &g.bias);
    let g = conv2d_backward(&trace.f6, &model.head.conv2, &g.input.expect("input gradient requested"), true)?;
    add_kernel_grad(&mut grads.head.conv2, &g.weights, &g.bias);
    let mut d_f6 = g.input.expect("input gradient requested");
    relu_backward(&mut d_f6, &trace.f6);
    let g = conv2d_backward(&trace.head_in, &model.head.conv1, &d_f6, true)?;
    add_kernel_grad(&mut grads.head.conv1, &g.weights, &g.bias);
    let mut d = g.input.expect("input gradient requested");
    for b in (0..model.sr.len()).rev() {
        d = sr_backward(&model.sr[b], &trace.sr[b], &d, &mut grads.sr[b])?;
    }
    stacked_backward(window, &model.cells, masks, &trace.encoder, &d, &mut grads.cells)?;
    Ok(grads)
}

/// Maps a lag window of normalized 7-channel inputs to one normalized
/// precipitation channel.
pub fn network_forward<T: Real>(window: &[Grid<T>], model: &ModelParams<T>, mode: Mode<'_, T>) -> Result<Grid<T>> {
    network_forward_trace(window, model, mode.masks()).map(|(y, _)| y)
}
