//! Per-grid-point empirical quantile mapping (the BCSD-style baseline).
//!
//! A training series of model precipitation is matched to the observed
//! series rank by rank. A new value is located in the model sample's
//! empirical CDF and read back from the observed sample at the same
//! probability. Outside the training range the offset from the nearest
//! extreme is carried over unchanged.

use serde::{Deserialize, Serialize};

use crate::data::{ClimateSample, PRECIP_CHANNEL};
use crate::error::{Error, Result, Shape};
use crate::quantile::{rank_of, sorted_copy, value_at_rank, RankPosition};
use crate::tensor::Grid;

/// Sorted model and observed samples for every grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileMapModel {
    height: usize,
    width: usize,
    /// Training days per point.
    n: usize,
    /// `[point][rank]`, ascending per point.
    model: Vec<f32>,
    obs: Vec<f32>,
}

impl QuantileMapModel {
    pub fn from_parts(height: usize, width: usize, n: usize, model: Vec<f32>, obs: Vec<f32>) -> Result<Self> {
        if n < 2 {
            return Err(Error::Argument(format!("quantile map needs at least 2 samples per point, got {n}")));
        }
        let expected = height * width * n;
        if model.len() != expected || obs.len() != expected {
            return Err(Error::shape(
                "QuantileMapModel",
                format!("{height}x{width}x{n}"),
                format!("{} / {} values", model.len(), obs.len()),
            ));
        }
        for chunk in model.chunks(n).chain(obs.chunks(n)) {
            if chunk.windows(2).any(|p| !(p[0] <= p[1])) {
                return Err(Error::Argument("quantile tables must be sorted ascending".into()));
            }
        }
        Ok(Self { height, width, n, model, obs })
    }

    pub fn shape(&self) -> Shape {
        Shape::new(1, self.height, self.width)
    }

    pub fn samples_per_point(&self) -> usize {
        self.n
    }

    pub fn model_values(&self) -> &[f32] {
        &self.model
    }

    pub fn obs_values(&self) -> &[f32] {
        &self.obs
    }

    fn point(&self, y: usize, x: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if y >= self.height || x >= self.width {
            return Err(Error::Lookup(format!(
                "point ({y}, {x}) is outside the fitted {}x{} grid",
                self.height, self.width
            )));
        }
        let start = (y * self.width + x) * self.n;
        let range = start..start + self.n;
        Ok((
            self.model[range.clone()].iter().map(|&v| v as f64).collect(),
            self.obs[range].iter().map(|&v| v as f64).collect(),
        ))
    }
}

/// Fits one map per grid point from aligned daily `1 × H × W` series.
pub fn fit_qmap(model_series: &[Grid], obs_series: &[Grid]) -> Result<QuantileMapModel> {
    if model_series.len() != obs_series.len() {
        return Err(Error::Argument(format!(
            "{} model days vs {} observed days",
            model_series.len(),
            obs_series.len()
        )));
    }
    let n = model_series.len();
    if n < 2 {
        return Err(Error::Argument(format!("quantile mapping needs at least 2 training days, got {n}")));
    }
    let shape = model_series[0].shape();
    if shape.channels != 1 {
        return Err(Error::shape("fit_qmap", shape, "single-channel series"));
    }
    for g in model_series.iter().chain(obs_series) {
        g.expect_shape(shape, "fit_qmap")?;
    }
    let points = shape.plane();
    let mut model = Vec::with_capacity(points * n);
    let mut obs = Vec::with_capacity(points * n);
    for j in 0..points {
        model.extend(sorted_copy(model_series.iter().map(|g| g.data()[j] as f64)).into_iter().map(|v| v as f32));
        obs.extend(sorted_copy(obs_series.iter().map(|g| g.data()[j] as f64)).into_iter().map(|v| v as f32));
    }
    QuantileMapModel::from_parts(shape.height, shape.width, n, model, obs)
}

/// Maps one value at grid point `(y, x)`; the result is floored at zero.
pub fn apply_qmap(value: f64, point: (usize, usize), qm: &QuantileMapModel) -> Result<f64> {
    let (model, obs) = qm.point(point.0, point.1)?;
    Ok(map_value(value, &model, &obs).max(0.0))
}

fn map_value(value: f64, model: &[f64], obs: &[f64]) -> f64 {
    match rank_of(model, value) {
        RankPosition::Below(d) => obs[0] + d,
        RankPosition::Above(d) => obs[obs.len() - 1] + d,
        RankPosition::Within(r) => value_at_rank(obs, r),
    }
}

/// Applies the point maps to one `1 × H × W` grid.
pub fn apply_qmap_grid(grid: &Grid, qm: &QuantileMapModel) -> Result<Grid> {
    grid.expect_shape(qm.shape(), "apply_qmap_grid")?;
    let mut out = grid.clone();
    let n = qm.n;
    for (j, v) in out.data_mut().iter_mut().enumerate() {
        let range = j * n..(j + 1) * n;
        let model: Vec<f64> = qm.model[range.clone()].iter().map(|&m| m as f64).collect();
        let obs: Vec<f64> = qm.obs[range].iter().map(|&o| o as f64).collect();
        *v = map_value(*v as f64, &model, &obs).max(0.0) as f32;
    }
    Ok(out)
}

/// Corrects the precipitation input channel of every sample.
pub fn downscale_qmap(samples: &[ClimateSample], qm: &QuantileMapModel) -> Result<Vec<Grid>> {
    samples
        .iter()
        .map(|s| {
            let precip = s.input.slice_channels(PRECIP_CHANNEL, 1)?;
            if precip.shape() != qm.shape() {
                return Err(Error::shape("downscale_qmap", precip.shape(), qm.shape()));
            }
            apply_qmap_grid(&precip, qm)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series(values: &[f32]) -> Vec<Grid> {
        values.iter().map(|&v| Grid::<f32>::filled(Shape::new(1, 1, 1), v)).collect()
    }

    #[test]
    fn identical_series_map_to_themselves() {
        let vals = [3.0, 1.0, 7.0, 2.0, 5.0];
        let qm = fit_qmap(&series(&vals), &series(&vals)).unwrap();
        for &v in &vals {
            assert_eq!(apply_qmap(v as f64, (0, 0), &qm).unwrap(), v as f64);
        }
    }

    #[test]
    fn pure_shift_is_removed() {
        let obs = [10.0, 12.0, 15.0, 11.0, 20.0];
        let model: Vec<f32> = obs.iter().map(|v| v + 5.0).collect();
        let qm = fit_qmap(&series(&model), &series(&obs)).unwrap();
        for &m in &model {
            assert!((apply_qmap(m as f64, (0, 0), &qm).unwrap() - (m as f64 - 5.0)).abs() < 1e-9);
        }
        // constant-offset extrapolation beyond both ends
        assert!((apply_qmap(40.0, (0, 0), &qm).unwrap() - 35.0).abs() < 1e-9);
        assert!((apply_qmap(14.0, (0, 0), &qm).unwrap() - 9.0).abs() < 1e-9);
    }

    #[test]
    fn doubling_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model: Vec<f32> = (0..50).map(|_| rng.random_range(0.0..20.0)).collect();
        let obs: Vec<f32> = model.iter().map(|v| 2.0 * v).collect();
        let qm = fit_qmap(&series(&model), &series(&obs)).unwrap();
        let (lo, hi) = (qm.model[0] as f64, qm.model[49] as f64);
        for _ in 0..100 {
            let v = rng.random_range(lo..hi);
            assert!((apply_qmap(v, (0, 0), &qm).unwrap() - 2.0 * v).abs() < 1e-4);
        }
    }

    #[test]
    fn hand_interpolated_value() {
        let qm = fit_qmap(&series(&[1.0, 2.0, 3.0, 4.0]), &series(&[10.0, 20.0, 30.0, 40.0])).unwrap();
        assert_eq!(apply_qmap(2.5, (0, 0), &qm).unwrap(), 25.0);
    }

    #[test]
    fn median_maps_to_median() {
        let qm = fit_qmap(&series(&[5.0, 1.0, 3.0, 9.0, 7.0]), &series(&[0.5, 2.0, 4.0, 1.0, 8.0])).unwrap();
        assert_eq!(apply_qmap(5.0, (0, 0), &qm).unwrap(), 2.0);
    }

    #[test]
    fn errors() {
        assert!(fit_qmap(&series(&[1.0]), &series(&[1.0])).is_err());
        let qm = fit_qmap(&series(&[1.0, 2.0]), &series(&[1.0, 2.0])).unwrap();
        assert!(matches!(apply_qmap(1.0, (0, 1), &qm), Err(Error::Lookup(_))));
        assert!(apply_qmap_grid(&Grid::<f32>::zeros(Shape::new(1, 2, 2)), &qm).is_err());
    }

    #[test]
    fn output_is_floored() {
        let qm = fit_qmap(&series(&[5.0, 6.0]), &series(&[0.0, 1.0])).unwrap();
        assert_eq!(apply_qmap(1.0, (0, 0), &qm).unwrap(), 0.0);
    }
}
