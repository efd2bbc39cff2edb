//! Seeded synthetic climate fields for desk-scale experiments.
//!
//! Latent fine-scale fields (moisture, pressure, three wind components) are
//! blurred white noise evolving as AR(1) processes. Fine precipitation is a
//! thresholded nonlinear function of moisture, vertical wind and
//! wind-modulated orographic lift, scaled up in May–September. The model
//! inputs only see block-averaged, re-interpolated versions of the latent
//! fields; the precipitation input additionally carries a wet bias, as an
//! uncorrected climate model would.

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{interpolate_to_grid, ClimateSample, Dataset, Period, CHANNEL_NAMES};
use crate::error::{Error, Result, Shape};
use crate::tensor::Grid;

/// Day-to-day persistence of the latent fields.
const PERSISTENCE: f64 = 0.9;
const MONSOON_AMPLITUDE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub n_days: usize,
    pub seed: u64,
    pub start: NaiveDate,
    /// Side of the averaging block that defines the coarse grid.
    pub coarse_factor: usize,
}

impl SynthConfig {
    pub fn new(height: usize, width: usize, n_days: usize, seed: u64) -> Self {
        Self {
            height,
            width,
            n_days,
            seed,
            start: NaiveDate::from_ymd_opt(1999, 1, 1).expect("valid date"),
            coarse_factor: 4,
        }
    }

    pub fn starting(mut self, start: NaiveDate) -> Self {
        self.start = start;
        self
    }
}

type Plane = Vec<f64>;

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
    }
    i as usize
}

fn blur(plane: &[f64], h: usize, w: usize, sigma: f64) -> Plane {
    let taps = gaussian_taps(sigma);
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(t, &k)| k * plane[y * w + reflect(x as isize + t as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(t, &k)| k * tmp[reflect(y as isize + t as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

fn standardize(mut p: Plane) -> Plane {
    let n = p.len() as f64;
    let mean = p.iter().sum::<f64>() / n;
    let sd = (p.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt().max(1e-12);
    for v in &mut p {
        *v = (*v - mean) / sd;
    }
    p
}

fn smooth_field(h: usize, w: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Plane {
    let noise: Plane = (0..h * w).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    standardize(blur(&noise, h, w, sigma))
}

struct Latent {
    sigma: f64,
    state: Plane,
}

impl Latent {
    fn new(h: usize, w: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            sigma,
            state: smooth_field(h, w, sigma, rng),
        }
    }

    fn advance(&mut self, h: usize, w: usize, rng: &mut ChaCha8Rng) {
        let innovation = smooth_field(h, w, self.sigma, rng);
        let k = (1.0 - PERSISTENCE * PERSISTENCE).sqrt();
        for (s, e) in self.state.iter_mut().zip(innovation) {
            *s = PERSISTENCE * *s + k * e;
        }
    }
}

/// Block average onto the coarse lattice, then bilinear back to the fine grid.
fn coarsen(plane: &[f64], h: usize, w: usize, factor: usize) -> Result<Plane> {
    let (ch, cw) = (h.div_ceil(factor), w.div_ceil(factor));
    let coarse = Grid::from_fn(Shape::new(1, ch, cw), |_, by, bx| {
        let (mut sum, mut n) = (0.0, 0usize);
        for y in by * factor..((by + 1) * factor).min(h) {
            for x in bx * factor..((bx + 1) * factor).min(w) {
                sum += plane[y * w + x];
                n += 1;
            }
        }
        (sum / n as f64) as f32
    });
    let fine = interpolate_to_grid(&coarse, h, w)?;
    Ok(fine.data().iter().map(|&v| v as f64).collect())
}

fn season_scale(date: NaiveDate) -> f64 {
    if Period::of(date) == Period::Monsoon {
        MONSOON_AMPLITUDE
    } else {
        1.0
    }
}

/// Generates `n_days` consecutive samples starting at `config.start`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Dataset> {
    let (h, w) = (config.height, config.width);
    if h < 8 || w < 8 {
        return Err(Error::Argument(format!("synthetic grids must be at least 8x8, got {h}x{w}")));
    }
    if config.n_days < 10 {
        return Err(Error::Argument(format!("synthetic datasets need at least 10 days, got {}", config.n_days)));
    }
    if config.coarse_factor < 2 || h.div_ceil(config.coarse_factor) < 2 || w.div_ceil(config.coarse_factor) < 2 {
        return Err(Error::Argument("coarse factor leaves fewer than 2x2 coarse cells".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let rugged = smooth_field(h, w, 1.2, &mut rng);
    let broad = smooth_field(h, w, 4.0, &mut rng);
    let raw: Plane = rugged.iter().zip(&broad).map(|(a, b)| 0.6 * a + b).collect();
    let (lo, hi) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &v| (l.min(v), u.max(v)));
    let relief: Plane = raw.iter().map(|v| (v - lo) / (hi - lo)).collect();
    let elevation: Vec<f32> = relief.iter().map(|r| (50.0 + 2450.0 * r) as f32).collect();

    let mut moisture = Latent::new(h, w, 3.0, &mut rng);
    let mut pressure = Latent::new(h, w, 4.0, &mut rng);
    let mut wind_u = Latent::new(h, w, 4.0, &mut rng);
    let mut wind_v = Latent::new(h, w, 4.0, &mut rng);
    let mut wind_w = Latent::new(h, w, 2.5, &mut rng);

    let plane = h * w;
    let mut samples = Vec::with_capacity(config.n_days);
    let mut date = config.start;
    for day in 0..config.n_days {
        if day > 0 {
            for latent in [&mut moisture, &mut pressure, &mut wind_u, &mut wind_v, &mut wind_w] {
                latent.advance(h, w, &mut rng);
            }
            date = date
                .succ_opt()
                .ok_or_else(|| Error::Argument("calendar overflow".into()))?;
        }
        let amp = season_scale(date);
        let precip: Plane = (0..plane)
            .map(|j| {
                let lift = relief[j] * (wind_u.state[j] + 0.5).max(0.0);
                let intensity = 0.8 * moisture.state[j] + 0.4 * wind_w.state[j] + 1.5 * lift - 0.3;
                let jitter = (0.15 * rng.sample::<f64, _>(StandardNormal)).exp();
                amp * 6.0 * intensity.max(0.0) * jitter
            })
            .collect();

        let coarse_precip = coarsen(&precip, h, w, config.coarse_factor)?;
        let coarse_q = coarsen(&moisture.state, h, w, config.coarse_factor)?;
        let coarse_p = coarsen(&pressure.state, h, w, config.coarse_factor)?;
        let coarse_u = coarsen(&wind_u.state, h, w, config.coarse_factor)?;
        let coarse_v = coarsen(&wind_v.state, h, w, config.coarse_factor)?;
        let coarse_w = coarsen(&wind_w.state, h, w, config.coarse_factor)?;

        let mut input = Vec::with_capacity(7 * plane);
        // wet-biased model precipitation
        input.extend(coarse_precip.iter().map(|&p| (1.5 * p + 1.0) as f32));
        input.extend_from_slice(&elevation);
        input.extend(
            coarse_q
                .iter()
                .zip(&coarse_w)
                .map(|(&q, &wv)| (100.0 / (1.0 + (-(q + 0.3 * wv)).exp())) as f32),
        );
        input.extend(coarse_p.iter().map(|&p| (1008.0 + 6.0 * p) as f32));
        input.extend(coarse_u.iter().map(|&u| (6.0 * u) as f32));
        input.extend(coarse_v.iter().map(|&v| (6.0 * v) as f32));
        input.extend(coarse_w.iter().map(|&wv| (0.3 * wv) as f32));

        samples.push(ClimateSample {
            date,
            input: Grid::new(Shape::new(7, h, w), input)?,
            target: Grid::new(Shape::new(1, h, w), precip.iter().map(|&p| p as f32).collect())?,
        });
    }
    debug_assert!(samples.iter().all(|s| s.date.year() >= config.start.year()));
    Dataset::new(CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(), samples)
}
