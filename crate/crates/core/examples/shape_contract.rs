//! Runs the published architecture once on a full-size 129×135 window and
//! prints the encoder and network output shapes.

use std::time::Instant;

use precip_downscale::convlstm::{stacked_forward, Mode};
use precip_downscale::model::{ModelConfig, ModelParams};
use precip_downscale::srblock::network_forward;
use precip_downscale::Grid;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> precip_downscale::Result<()> {
    let cfg = ModelConfig::canonical(129, 135);
    let model = ModelParams::init(&cfg, 0)?;
    println!("{} parameters", model.num_params());

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let window: Vec<Grid> = (0..cfg.window)
        .map(|_| Grid::random_uniform(cfg.input_shape(), 0.0, 1.0, &mut rng))
        .collect();
    println!("input  {} x {}", window.len(), window[0].shape());

    let start = Instant::now();
    let encoded = stacked_forward(&window, &model.cells, Mode::Infer)?;
    println!("encoder output {}", encoded.shape());
    let out = network_forward(&window, &model, Mode::Infer)?;
    println!("network output {}", out.shape());
    println!("{:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}
