#![allow(dead_code)]

use precip_downscale::convlstm::DropoutMasks;
use precip_downscale::model::{ModelConfig, ModelParams};
use precip_downscale::optim::loss_and_grad;
use precip_downscale::tensor::finite_diff_grad;
use precip_downscale::{Grid, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Three cells, two SR blocks and the head on a 4×4 grid with T = 2.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        input_channels: 7,
        window: 2,
        height: 4,
        width: 4,
        lstm_filters: vec![4, 3, 3],
        lstm_kernels: vec![3, 3, 3],
        sr_filters: [3, 4, 3, 3],
        sr_kernels: [3, 3, 3, 3],
        sr_blocks: 2,
        head_filters: [4, 3],
        head_kernels: [1, 3],
    }
}

pub struct GradientCheck {
    pub params: usize,
    pub worst: f64,
    pub worst_block: String,
}

/// Backprop against central differences (step 1e-6) at f64 storage.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(seed: u64, with_dropout: bool) -> GradientCheck {
    let cfg = toy_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ModelParams::<f64>::init(&cfg, seed).unwrap();
    let flat: Vec<f64> = model.to_flat().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
    model.set_flat(&flat).unwrap();
    let window: Vec<Grid<f64>> = (0..cfg.window)
        .map(|_| Grid::random_uniform(cfg.input_shape(), -1.0, 1.0, &mut rng))
        .collect();
    let target: Grid<f64> = Grid::random_uniform(Shape::new(1, 4, 4), 0.0, 1.0, &mut rng);
    let masks = with_dropout.then(|| DropoutMasks::sample(&model.cells, 0.3, 0.3, &mut rng).unwrap());

    let (_, grads) = loss_and_grad(&model, &window, &target, masks.as_ref(), 1.0).unwrap();
    let analytic = grads.to_flat();
    let mut probe = model.clone();
    let numeric = finite_diff_grad(
        |p| {
            probe.set_flat(p).unwrap();
            loss_and_grad(&probe, &window, &target, masks.as_ref(), 1.0).map(|(l, _)| l).unwrap_or(f64::NAN)
        },
        &flat,
        1e-6,
    )
    .unwrap();

    let mut out = GradientCheck {
        params: flat.len(),
        worst: 0.0,
        worst_block: String::new(),
    };
    for (name, _, range) in model.layout() {
        for i in range {
            let (a, n) = (analytic[i], numeric[i]);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            if rel > out.worst {
                out.worst = rel;
                out.worst_block = name.clone();
            }
        }
    }
    out
}

/// Quantile mapping from first principles, on the rank scale `n·F + 1/2`
/// so that the i-th order statistic sits at rank `i`.
///
/// The model-side CDF is scanned over every order statistic: an exact hit
/// on a run of ties takes the average of the run's ranks, a value strictly
/// between two neighbouring order statistics interpolates their ranks. The
/// observed-side inverse scans for the pair of order statistics bracketing
/// the rank.
pub fn qmap_oracle(value: f64, model: &[f64], obs: &[f64]) -> f64 {
    let mut m = model.to_vec();
    let mut o = obs.to_vec();
    m.sort_by(|a, b| a.partial_cmp(b).unwrap());
    o.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = m.len();
    let mapped = if value < m[0] {
        o[0] + (value - m[0])
    } else if value > m[n - 1] {
        o[n - 1] + (value - m[n - 1])
    } else {
        let hits: Vec<usize> = (1..=n).filter(|&i| m[i - 1] == value).collect();
        let rank = if !hits.is_empty() {
            hits.iter().sum::<usize>() as f64 / hits.len() as f64
        } else {
            let i = (1..n).find(|&i| m[i - 1] < value && value < m[i]).unwrap();
            i as f64 + (value - m[i - 1]) / (m[i] - m[i - 1])
        };
        if rank <= 1.0 {
            o[0]
        } else if rank >= n as f64 {
            o[n - 1]
        } else {
            let mut out = o[n - 1];
            for i in 1..n {
                if i as f64 <= rank && rank < (i + 1) as f64 {
                    let t = rank - i as f64;
                    out = if t == 0.0 { o[i - 1] } else { o[i - 1] + t * (o[i] - o[i - 1]) };
                    break;
                }
            }
            out
        }
    };
    mapped.max(0.0)
}
