//! Scores a prediction that is the observation plus a constant offset and
//! prints the extremes table and a few Q-Q pairs.

use precip_downscale::eval::{extremes_analysis, qq_data, QqMode, Series, DEFAULT_THRESHOLDS};
use precip_downscale::{Grid, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> precip_downscale::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let shape = Shape::new(1, 4, 4);
    let obs: Vec<Grid> = (0..1000)
        .map(|_| Grid::from_fn(shape, |_, _, _| (rng.random_range(0..400) as f32) * 0.125))
        .collect();
    let offset = 1.5f32;
    let pred: Vec<Grid> = obs.iter().map(|g| g.map(|v| v + offset)).collect();
    let (pred, obs) = (Series::mm_per_day(pred)?, Series::mm_per_day(obs)?);

    println!("threshold  points  rmse_mean  rmse_q25  rmse_q75  bias_mean");
    for r in extremes_analysis(&pred, &obs, &DEFAULT_THRESHOLDS)? {
        println!(
            "{:>9}  {:>6}  {:>9.4}  {:>8.4}  {:>8.4}  {:>9.4}",
            r.threshold, r.points, r.rmse_mean, r.rmse_q25, r.rmse_q75, r.bias_mean
        );
    }
    println!("\n  prob     obs    pred");
    for q in qq_data(&pred, &obs, &[0.1, 0.5, 0.9, 0.99], QqMode::Pooled)? {
        println!("{:>6} {:>7.3} {:>7.3}", q.prob, q.obs_quantile, q.pred_quantile);
    }
    Ok(())
}
