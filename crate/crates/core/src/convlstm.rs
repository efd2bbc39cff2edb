//! Peephole ConvLSTM cell and the stacked encoder.
//!
//! Gate ordering is input, forget, output, candidate. The output gate reads
//! the freshly updated cell state, so `c_t` is formed before `o_t`.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Shape};
use crate::tensor::{conv2d, conv2d_backward, sigmoid_scalar, ConvKernel, Grid, Real};

/// Learnable weights of one ConvLSTM cell.
///
/// The gate biases `b_i, b_f, b_o, b_c` live in the `bias` field of the input
/// kernels. Recurrent kernels carry no bias: theirs is held at zero and never
/// exposed as a parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ConvLstmCellParams<T: Real = f32> {
    pub w_i: ConvKernel<T>,
    pub w_f: ConvKernel<T>,
    pub w_o: ConvKernel<T>,
    pub w_c: ConvKernel<T>,
    pub r_i: ConvKernel<T>,
    pub r_f: ConvKernel<T>,
    pub r_o: ConvKernel<T>,
    pub r_c: ConvKernel<T>,
    /// Peephole weights, one per state element.
    pub rho_i: Grid<T>,
    pub rho_f: Grid<T>,
    pub rho_o: Grid<T>,
}

impl<T: Real> ConvLstmCellParams<T> {
    pub fn zeros(in_channels: usize, eta: usize, k: usize, height: usize, width: usize) -> Self {
        let state = Shape::new(eta, height, width);
        Self {
            w_i: ConvKernel::zeros(eta, in_channels, k),
            w_f: ConvKernel::zeros(eta, in_channels, k),
            w_o: ConvKernel::zeros(eta, in_channels, k),
            w_c: ConvKernel::zeros(eta, in_channels, k),
            r_i: ConvKernel::zeros(eta, eta, k),
            r_f: ConvKernel::zeros(eta, eta, k),
            r_o: ConvKernel::zeros(eta, eta, k),
            r_c: ConvKernel::zeros(eta, eta, k),
            rho_i: Grid::zeros(state),
            rho_f: Grid::zeros(state),
            rho_o: Grid::zeros(state),
        }
    }

    /// Glorot-uniform kernels, zero peepholes and biases, forget bias 1.
    pub fn init(in_channels: usize, eta: usize, k: usize, height: usize, width: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(in_channels, eta, k, height, width);
        for kernel in [&mut p.w_i, &mut p.w_f, &mut p.w_o, &mut p.w_c] {
            *kernel = ConvKernel::glorot_uniform(eta, in_channels, k, rng);
        }
        for kernel in [&mut p.r_i, &mut p.r_f, &mut p.r_o, &mut p.r_c] {
            *kernel = ConvKernel::glorot_uniform(eta, eta, k, rng);
        }
        p.w_f.bias.fill(T::one());
        p
    }

    pub fn eta(&self) -> usize {
        self.w_i.out_channels()
    }

    pub fn k(&self) -> usize {
        self.w_i.k()
    }

    pub fn in_channels(&self) -> usize {
        self.w_i.in_channels()
    }

    pub fn state_shape(&self) -> Shape {
        self.rho_i.shape()
    }

    pub fn input_kernels(&self) -> [&ConvKernel<T>; 4] {
        [&self.w_i, &self.w_f, &self.w_o, &self.w_c]
    }

    pub fn recurrent_kernels(&self) -> [&ConvKernel<T>; 4] {
        [&self.r_i, &self.r_f, &self.r_o, &self.r_c]
    }

    pub fn validate(&self) -> Result<()> {
        let (eta, k, cin) = (self.eta(), self.k(), self.in_channels());
        for w in self.input_kernels() {
            if (w.out_channels(), w.in_channels(), w.k()) != (eta, cin, k) {
                return Err(Error::Config("input kernels of a ConvLSTM cell disagree in shape".into()));
            }
        }
        for r in self.recurrent_kernels() {
            if (r.out_channels(), r.in_channels(), r.k()) != (eta, eta, k) {
                return Err(Error::Config("recurrent kernels of a ConvLSTM cell disagree in shape".into()));
            }
        }
        let state = self.state_shape();
        if state.channels != eta || self.rho_f.shape() != state || self.rho_o.shape() != state {
            return Err(Error::Config("peephole grids do not match the cell state shape".into()));
        }
        Ok(())
    }
}

/// Hidden state `h` and cell state `c` of a ConvLSTM cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState<T: Real = f32> {
    pub h: Grid<T>,
    pub c: Grid<T>,
}

impl<T: Real> CellState<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            h: Grid::zeros(shape),
            c: Grid::zeros(shape),
        }
    }
}

/// Forward intermediates of one time step, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct StepCache<T: Real = f32> {
    /// Hidden state after the recurrent-dropout mask.
    h_masked: Grid<T>,
    c_prev: Grid<T>,
    i: Grid<T>,
    f: Grid<T>,
    o: Grid<T>,
    g: Grid<T>,
    c: Grid<T>,
    tanh_c: Grid<T>,
}

/// The four gate kernels stacked along the output axis (i, f, o, c).
fn stack_kernels<T: Real>(ks: [&ConvKernel<T>; 4]) -> ConvKernel<T> {
    let (o, i, k) = (ks[0].out_channels(), ks[0].in_channels(), ks[0].k());
    let weights = ks.iter().flat_map(|kk| kk.weights.iter().copied()).collect();
    let bias = ks.iter().flat_map(|kk| kk.bias.iter().copied()).collect();
    ConvKernel::new(4 * o, i, k, weights, bias).expect("gate kernels share a shape")
}

/// Input and recurrent gate kernels of a cell, each fused into one bank.
pub(crate) struct FusedKernels<T: Real> {
    input: ConvKernel<T>,
    recurrent: ConvKernel<T>,
}

impl<T: Real> FusedKernels<T> {
    fn new(p: &ConvLstmCellParams<T>) -> Self {
        Self {
            input: stack_kernels(p.input_kernels()),
            recurrent: stack_kernels(p.recurrent_kernels()),
        }
    }
}

/// Pre-activations of all four gates, `4·eta` channels.
fn gate_preactivations<T: Real>(x: &Grid<T>, h: &Grid<T>, fused: &FusedKernels<T>, skip_recurrent: bool) -> Result<Grid<T>> {
    let mut a = conv2d(x, &fused.input)?;
    if !skip_recurrent {
        a.add_assign(&conv2d(h, &fused.recurrent)?)?;
    }
    Ok(a)
}

fn step_forward<T: Real>(
    x: &Grid<T>,
    h_prev: &Grid<T>,
    c_prev: &Grid<T>,
    p: &ConvLstmCellParams<T>,
    fused: &FusedKernels<T>,
    mask: Option<&Grid<T>>,
) -> Result<(CellState<T>, StepCache<T>)> {
    let state = p.state_shape();
    if x.channels() != p.in_channels() || x.height() != state.height || x.width() != state.width {
        return Err(Error::shape(
            "cell_step",
            format!("input {}", x.shape()),
            format!("cell expecting {}x{}x{}", p.in_channels(), state.height, state.width),
        ));
    }
    h_prev.expect_shape(state, "cell_step")?;
    c_prev.expect_shape(state, "cell_step")?;

    let h_masked = match mask {
        Some(m) => crate::tensor::hadamard(h_prev, m)?,
        None => h_prev.clone(),
    };
    let skip = h_masked.is_zero();
    let pre = gate_preactivations(x, &h_masked, fused, skip)?;
    let eta = state.channels;
    let mut a_i = pre.slice_channels(0, eta)?;
    let mut a_f = pre.slice_channels(eta, eta)?;
    let mut a_o = pre.slice_channels(2 * eta, eta)?;
    let mut a_c = pre.slice_channels(3 * eta, eta)?;

    let mut c = Grid::zeros(state);
    let mut tanh_c = Grid::zeros(state);
    let mut h = Grid::zeros(state);
    {
        let cp = c_prev.data();
        let (ri, rf, ro) = (p.rho_i.data(), p.rho_f.data(), p.rho_o.data());
        let (ai, af, ao, ac) = (a_i.data_mut(), a_f.data_mut(), a_o.data_mut(), a_c.data_mut());
        let (cd, td, hd) = (c.data_mut(), tanh_c.data_mut(), h.data_mut());
        for j in 0..cp.len() {
            let i = sigmoid_scalar(ai[j] + ri[j] * cp[j]);
            let f = sigmoid_scalar(af[j] + rf[j] * cp[j]);
            let g = ac[j].tanh();
            let cn = f * cp[j] + i * g;
            let o = sigmoid_scalar(ao[j] + ro[j] * cn);
            let t = cn.tanh();
            ai[j] = i;
            af[j] = f;
            ao[j] = o;
            ac[j] = g;
            cd[j] = cn;
            td[j] = t;
            hd[j] = o * t;
        }
    }
    let cache = StepCache {
        h_masked,
        c_prev: c_prev.clone(),
        i: a_i,
        f: a_f,
        o: a_o,
        g: a_c,
        c: c.clone(),
        tanh_c,
    };
    Ok((CellState { h, c }, cache))
}

/// One ConvLSTM update from `state` given input `x_t`.
pub fn cell_step<T: Real>(x_t: &Grid<T>, state: &CellState<T>, params: &ConvLstmCellParams<T>) -> Result<CellState<T>> {
    step_forward(x_t, &state.h, &state.c, params, &FusedKernels::new(params), None).map(|(s, _)| s)
}

/// Hidden sequence and per-step caches of one layer.
#[derive(Debug, Clone)]
pub(crate) struct LayerTrace<T: Real = f32> {
    pub(crate) hidden: Vec<Grid<T>>,
    steps: Vec<StepCache<T>>,
}

pub(crate) fn forward_layer<T: Real>(inputs: &[Grid<T>], p: &ConvLstmCellParams<T>, mask: Option<&Grid<T>>) -> Result<LayerTrace<T>> {
    if inputs.is_empty() {
        return Err(Error::Argument("ConvLSTM input window is empty".into()));
    }
    if let Some(m) = mask {
        m.expect_shape(p.state_shape(), "recurrent dropout mask")?;
    }
    p.validate()?;
    let fused = FusedKernels::new(p);
    let mut state = CellState::zeros(p.state_shape());
    let mut hidden = Vec::with_capacity(inputs.len());
    let mut steps = Vec::with_capacity(inputs.len());
    for x in inputs {
        let (next, cache) = step_forward(x, &state.h, &state.c, p, &fused, mask)?;
        hidden.push(next.h.clone());
        steps.push(cache);
        state = next;
    }
    Ok(LayerTrace { hidden, steps })
}

/// Runs the cell over `window` from a zero state and returns the last hidden state.
///
/// A recurrent dropout mask, when given, multiplies `h_{t-1}` before the
/// recurrent convolutions at every step.
pub fn run_sequence<T: Real>(window: &[Grid<T>], params: &ConvLstmCellParams<T>, recurrent_dropout_mask: Option<&Grid<T>>) -> Result<Grid<T>> {
    let trace = forward_layer(window, params, recurrent_dropout_mask)?;
    Ok(trace.hidden.into_iter().next_back().expect("non-empty window"))
}

fn add_f64<T: Real>(dst: &mut [T], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += T::cast_from(s);
    }
}

fn accumulate_kernel<T: Real>(dst: &mut ConvKernel<T>, weights: &[f64], bias: Option<&[f64]>) {
    add_f64(&mut dst.weights, weights);
    if let Some(b) = bias {
        add_f64(&mut dst.bias, b);
    }
}

/// Backpropagation through time for one layer.
///
/// `grad_hidden[t]` is the upstream gradient on `h_t` (if any). Parameter
/// gradients are accumulated into `grads`; input gradients are returned per
/// step when `want_input` is set.
pub(crate) fn backward_layer<T: Real>(
    inputs: &[Grid<T>],
    trace: &LayerTrace<T>,
    p: &ConvLstmCellParams<T>,
    mask: Option<&Grid<T>>,
    grad_hidden: &[Option<Grid<T>>],
    grads: &mut ConvLstmCellParams<T>,
    want_input: bool,
) -> Result<Vec<Grid<T>>> {
    let steps = trace.steps.len();
    if inputs.len() != steps || grad_hidden.len() != steps {
        return Err(Error::Argument("backward_layer: sequence lengths disagree".into()));
    }
    let state = p.state_shape();
    let n = state.len();
    let eta = state.channels;
    let fused = FusedKernels::new(p);
    let fused_shape = Shape::new(4 * eta, state.height, state.width);
    let mut dh_next = vec![T::zero(); n];
    let mut dc_next = vec![T::zero(); n];
    let mut grad_inputs: Vec<Option<Grid<T>>> = vec![None; steps];

    let mut da = [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]];
    for t in (0..steps).rev() {
        let s = &trace.steps[t];
        let (i, f, o, g) = (s.i.data(), s.f.data(), s.o.data(), s.g.data());
        let (c, tc, cp) = (s.c.data(), s.tanh_c.data(), s.c_prev.data());
        let (ri, rf, ro) = (p.rho_i.data(), p.rho_f.data(), p.rho_o.data());
        let one = T::one();
        let ext = grad_hidden[t].as_ref().map(Grid::data);
        if let Some(e) = grad_hidden[t].as_ref() {
            e.expect_shape(state, "backward_layer")?;
        }
        let mut dc_prev = vec![T::zero(); n];
        {
            let [dai, daf, dao, dag] = &mut da;
            let (gri, grf, gro) = (grads.rho_i.data_mut(), grads.rho_f.data_mut(), grads.rho_o.data_mut());
            for j in 0..n {
                let dh = dh_next[j] + ext.map_or(T::zero(), |e| e[j]);
                let d_o = dh * tc[j];
                let mut dc = dc_next[j] + dh * o[j] * (one - tc[j] * tc[j]);
                let a_o = d_o * o[j] * (one - o[j]);
                dc += a_o * ro[j];
                gro[j] += a_o * c[j];

                let a_i = dc * g[j] * i[j] * (one - i[j]);
                let a_f = dc * cp[j] * f[j] * (one - f[j]);
                let a_g = dc * i[j] * (one - g[j] * g[j]);
                gri[j] += a_i * cp[j];
                grf[j] += a_f * cp[j];
                dc_prev[j] = dc * f[j] + a_i * ri[j] + a_f * rf[j];

                dai[j] = a_i;
                daf[j] = a_f;
                dao[j] = a_o;
                dag[j] = a_g;
            }
        }

        let x = &inputs[t];
        let recurrent_live = !s.h_masked.is_zero();
        let grad_pre = Grid::new(fused_shape, da.concat())?;
        let gx = conv2d_backward(x, &fused.input, &grad_pre, want_input)?;
        let wlen = gx.weights.len() / 4;
        for (gate, dst) in [&mut grads.w_i, &mut grads.w_f, &mut grads.w_o, &mut grads.w_c].into_iter().enumerate() {
            accumulate_kernel(
                dst,
                &gx.weights[gate * wlen..(gate + 1) * wlen],
                Some(&gx.bias[gate * eta..(gate + 1) * eta]),
            );
        }
        let dx = gx.input;
        let mut dh_masked = vec![T::zero(); n];
        if recurrent_live {
            let gh = conv2d_backward(&s.h_masked, &fused.recurrent, &grad_pre, t > 0)?;
            let rlen = gh.weights.len() / 4;
            for (gate, dst) in [&mut grads.r_i, &mut grads.r_f, &mut grads.r_o, &mut grads.r_c].into_iter().enumerate() {
                accumulate_kernel(dst, &gh.weights[gate * rlen..(gate + 1) * rlen], None);
            }
            if let Some(gi) = gh.input {
                dh_masked = gi.into_data();
            }
        }
        if let Some(m) = mask {
            for (d, mv) in dh_masked.iter_mut().zip(m.data()) {
                *d *= *mv;
            }
        }
        dh_next = dh_masked;
        dc_next = dc_prev;
        grad_inputs[t] = dx;
    }
    Ok(if want_input {
        grad_inputs.into_iter().map(|g| g.expect("input gradient requested")).collect()
    } else {
        Vec::new()
    })
}

/// Sampled inverted-dropout masks for one forward pass of the encoder.
///
/// Mask entries are `0` or `1 / (1 - rate)`. One mask covers a whole sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks<T: Real = f32> {
    /// Per layer, applied to `h_{t-1}` before the recurrent convolutions.
    pub recurrent: Vec<Option<Grid<T>>>,
    /// Per layer boundary, applied to every hidden state passed upward.
    pub inter_layer: Vec<Option<Grid<T>>>,
}

impl<T: Real> DropoutMasks<T> {
    pub fn none(layers: usize) -> Self {
        Self {
            recurrent: vec![None; layers],
            inter_layer: vec![None; layers.saturating_sub(1)],
        }
    }

    pub fn sample(cells: &[ConvLstmCellParams<T>], recurrent_rate: f64, inter_layer_rate: f64, rng: &mut impl Rng) -> Result<Self> {
        let recurrent = cells
            .iter()
            .map(|c| bernoulli_mask(c.state_shape(), recurrent_rate, rng))
            .collect::<Result<_>>()?;
        let inter_layer = cells
            .iter()
            .take(cells.len().saturating_sub(1))
            .map(|c| bernoulli_mask(c.state_shape(), inter_layer_rate, rng))
            .collect::<Result<_>>()?;
        Ok(Self { recurrent, inter_layer })
    }
}

fn bernoulli_mask<T: Real>(shape: Shape, rate: f64, rng: &mut impl Rng) -> Result<Option<Grid<T>>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    if rate == 0.0 {
        return Ok(None);
    }
    let keep = Bernoulli::new(1.0 - rate).map_err(|e| Error::Config(e.to_string()))?;
    let scale = T::cast_from(1.0 / (1.0 - rate));
    let data = (0..shape.len()).map(|_| if keep.sample(rng) { scale } else { T::zero() }).collect();
    Grid::new(shape, data).map(Some)
}

/// Whether dropout is active for a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Mode<'a, T: Real = f32> {
    Infer,
    Train(&'a DropoutMasks<T>),
}

impl<'a, T: Real> Mode<'a, T> {
    pub(crate) fn masks(&self) -> Option<&'a DropoutMasks<T>> {
        match self {
            Mode::Infer => None,
            Mode::Train(m) => Some(m),
        }
    }
}

/// Forward intermediates of the whole encoder.
#[derive(Debug, Clone)]
pub(crate) struct StackTrace<T: Real = f32> {
    /// Input sequence seen by each layer above the first (after dropout).
    layer_inputs: Vec<Vec<Grid<T>>>,
    layers: Vec<LayerTrace<T>>,
}

pub(crate) fn validate_stack<T: Real>(cells: &[ConvLstmCellParams<T>], input_channels: usize) -> Result<()> {
    if cells.is_empty() {
        return Err(Error::Config("encoder needs at least one ConvLSTM cell".into()));
    }
    let mut expected = input_channels;
    for (l, cell) in cells.iter().enumerate() {
        cell.validate()?;
        if cell.in_channels() != expected {
            return Err(Error::Config(format!(
                "ConvLSTM layer {} consumes {} channels but receives {}",
                l + 1,
                cell.in_channels(),
                expected
            )));
        }
        expected = cell.eta();
    }
    Ok(())
}

fn mask_at<T: Real>(masks: Option<&DropoutMasks<T>>, pick: impl Fn(&DropoutMasks<T>) -> Option<&Grid<T>>) -> Option<&Grid<T>> {
    masks.and_then(pick)
}

pub(crate) fn stacked_forward_trace<T: Real>(
    window: &[Grid<T>],
    cells: &[ConvLstmCellParams<T>],
    masks: Option<&DropoutMasks<T>>,
) -> Result<(Grid<T>, StackTrace<T>)> {
    let first = window.first().ok_or_else(|| Error::Argument("empty input window".into()))?;
    validate_stack(cells, first.channels())?;
    if let Some(m) = masks {
        if m.recurrent.len() != cells.len() || m.inter_layer.len() + 1 != cells.len() {
            return Err(Error::Config("dropout masks do not match the number of layers".into()));
        }
    }
    let mut layers = Vec::with_capacity(cells.len());
    let mut layer_inputs = Vec::<Vec<Grid<T>>>::with_capacity(cells.len().saturating_sub(1));
    for (l, cell) in cells.iter().enumerate() {
        let inputs: &[Grid<T>] = if l == 0 { window } else { &layer_inputs[l - 1] };
        let trace = forward_layer(inputs, cell, mask_at(masks, |m| m.recurrent[l].as_ref()))?;
        if l + 1 < cells.len() {
            let next = match mask_at(masks, |m| m.inter_layer[l].as_ref()) {
                Some(mask) => trace
                    .hidden
                    .iter()
                    .map(|h| crate::tensor::hadamard(h, mask))
                    .collect::<Result<Vec<_>>>()?,
                None => trace.hidden.clone(),
            };
            layer_inputs.push(next);
        }
        layers.push(trace);
    }
    let out = layers.last().and_then(|t| t.hidden.last()).cloned().expect("non-empty stack");
    Ok((out, StackTrace { layer_inputs, layers }))
}

pub(crate) fn stacked_backward<T: Real>(
    window: &[Grid<T>],
    cells: &[ConvLstmCellParams<T>],
    masks: Option<&DropoutMasks<T>>,
    trace: &StackTrace<T>,
    grad_out: &Grid<T>,
    grads: &mut [ConvLstmCellParams<T>],
) -> Result<()> {
    let steps = window.len();
    let mut grad_hidden: Vec<Option<Grid<T>>> = vec![None; steps];
    grad_hidden[steps - 1] = Some(grad_out.clone());
    for l in (0..cells.len()).rev() {
        let inputs: &[Grid<T>] = if l == 0 { window } else { &trace.layer_inputs[l - 1] };
        let dx = backward_layer(
            inputs,
            &trace.layers[l],
            &cells[l],
            mask_at(masks, |m| m.recurrent[l].as_ref()),
            &grad_hidden,
            &mut grads[l],
            l > 0,
        )?;
        if l > 0 {
            let inter = mask_at(masks, |m| m.inter_layer[l - 1].as_ref());
            grad_hidden = dx
                .into_iter()
                .map(|g| match inter {
                    Some(mask) => crate::tensor::hadamard(&g, mask).map(Some),
                    None => Ok(Some(g)),
                })
                .collect::<Result<_>>()?;
        }
    }
    Ok(())
}

/// Encodes a window through the stacked cells; returns the last layer's final hidden state.
///
/// Every layer but the last passes its full hidden sequence upward.
pub fn stacked_forward<T: Real>(window: &[Grid<T>], cells: &[ConvLstmCellParams<T>], mode: Mode<'_, T>) -> Result<Grid<T>> {
    stacked_forward_trace(window, cells, mode.masks()).map(|(out, _)| out)
}
