//! Fits a per-point quantile map on a wet-biased series and applies it
//! to values inside and beyond the fitted range.

use precip_downscale::qmap::{apply_qmap, fit_qmap};
use precip_downscale::{Grid, Shape};

fn main() -> precip_downscale::Result<()> {
    let shape = Shape::new(1, 2, 2);
    let obs: Vec<Grid> = (0..50)
        .map(|d| Grid::from_fn(shape, |_, y, x| ((d * 7 + y * 3 + x) % 23) as f32 * 0.5))
        .collect();
    // The "model" rains 30% too much and never less than 1 mm.
    let model: Vec<Grid> = obs.iter().map(|g| g.map(|v| 1.0 + 1.3 * v)).collect();

    let qm = fit_qmap(&model, &obs)?;
    println!("point (0,0), {} samples", qm.samples_per_point());
    println!("{:>8} {:>10}", "model", "mapped");
    for v in [0.5, 1.0, 4.9, 8.8, 15.3, 20.0] {
        println!("{v:>8.2} {:>10.3}", apply_qmap(v, (0, 0), &qm)?);
    }
    Ok(())
}
