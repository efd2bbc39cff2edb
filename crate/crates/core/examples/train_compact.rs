//! Trains the compact network on one season of synthetic data and prints
//! the loss log.

use precip_downscale::data::{generate_synthetic, Period, SynthConfig};
use precip_downscale::model::ModelConfig;
use precip_downscale::optim::{write_loss_log, TrainConfig};
use precip_downscale::pipeline::{predict, prepare_period, train_period};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = generate_synthetic(&SynthConfig::new(12, 12, 365, 3))?;
    let prepared = prepare_period(&ds, Period::Monsoon, 5)?;
    println!("{} training windows", prepared.train.len());

    let cfg = TrainConfig {
        epochs: 8,
        initial_lr: 1e-3,
        seed: 3,
        ..TrainConfig::default()
    };
    let state = train_period(&prepared, &ModelConfig::compact(12, 12), &cfg, None, |s| {
        let r = s.log.last().unwrap();
        eprintln!("epoch {:>2}  rmse {:.4}", r.epoch, r.train_loss);
    })?;
    write_loss_log(&state.log, std::io::stdout())?;

    let preds = predict(&ds.samples, &state.params, &prepared.normalization)?;
    let july = preds.iter().find(|p| p.date.format("%m-%d").to_string() == "07-15").unwrap();
    println!("{}: predicted domain mean {:.2} mm/day", july.date, july.grid.mean());
    Ok(())
}
