//! Generates the synthetic dataset, writes it as GRD1 and summarizes it.

use chrono::NaiveDate;
use precip_downscale::data::{generate_synthetic, load_grd, save_grd, split_monsoon, SynthConfig, CHANNEL_NAMES};

fn mean_target(samples: &[precip_downscale::data::ClimateSample]) -> f64 {
    samples.iter().map(|s| s.target.mean()).sum::<f64>() / samples.len() as f64
}

fn main() -> precip_downscale::Result<()> {
    let cfg = SynthConfig::new(16, 16, 730, 7).starting(NaiveDate::from_ymd_opt(1999, 1, 1).unwrap());
    let ds = generate_synthetic(&cfg)?;

    let path = std::env::temp_dir().join("synthetic_example.grd");
    save_grd(&ds, &path)?;
    let back = load_grd(&path)?;
    assert_eq!(back, ds);
    println!("{} days of {} written to {}", ds.samples.len(), ds.input_shape().unwrap(), path.display());

    for (c, name) in CHANNEL_NAMES.iter().enumerate() {
        let mean = ds.samples.iter().map(|s| s.input.channel(c).iter().map(|&v| v as f64).sum::<f64>()).sum::<f64>()
            / (ds.samples.len() * 256) as f64;
        println!("  {name:<18} mean {mean:10.3}");
    }
    let (monsoon, dry) = split_monsoon(&ds.samples);
    let (wet, rest) = (mean_target(&monsoon), mean_target(&dry));
    println!("observed precipitation: monsoon {wet:.2} mm/day, non-monsoon {rest:.2} mm/day, ratio {:.2}", wet / rest);
    Ok(())
}
