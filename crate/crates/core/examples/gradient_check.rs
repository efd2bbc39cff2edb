//! Compares backpropagated gradients of the full network with central
//! finite differences on a toy configuration.
//!
//! The check runs at `f64` storage so the difference quotient is not
//! dominated by rounding; the code path is the one training uses.

use precip_downscale::model::{ModelConfig, ModelParams};
use precip_downscale::optim::loss_and_grad;
use precip_downscale::tensor::finite_diff_grad;
use precip_downscale::{Grid, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> precip_downscale::Result<()> {
    let cfg = ModelConfig {
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
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut model = ModelParams::<f64>::init(&cfg, 5)?;
    // Nonzero biases and peepholes so every term is exercised.
    let flat: Vec<f64> = model.to_flat().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
    model.set_flat(&flat)?;
    let window: Vec<Grid<f64>> = (0..2).map(|_| Grid::random_uniform(cfg.input_shape(), -1.0, 1.0, &mut rng)).collect();
    let target: Grid<f64> = Grid::random_uniform(Shape::new(1, 4, 4), 0.0, 1.0, &mut rng);

    let (loss, grads) = loss_and_grad(&model, &window, &target, None, 1.0)?;
    let analytic = grads.to_flat();
    let mut probe = model.clone();
    let numeric = finite_diff_grad(
        |p| {
            probe.set_flat(p).expect("same layout");
            loss_and_grad(&probe, &window, &target, None, 1.0).map(|(l, _)| l).unwrap_or(f64::NAN)
        },
        &flat,
        1e-6,
    )?;
    println!("loss {loss:.6}, {} parameters", flat.len());
    let mut worst = 0.0f64;
    for (name, _, range) in model.layout() {
        let block_worst = range
            .map(|i| {
                let (a, n) = (analytic[i], numeric[i]);
                (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
            })
            .fold(0.0, f64::max);
        println!("{name:24} max rel err {block_worst:.2e}");
        worst = worst.max(block_worst);
    }
    println!("overall max rel err {worst:.3e}");
    Ok(())
}
