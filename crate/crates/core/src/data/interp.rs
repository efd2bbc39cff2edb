use crate::error::{Error, Result, Shape};
use crate::tensor::Grid;

/// Corner-aligned bilinear upsampling of every channel to `target_h × target_w`.
///
/// Exact on fields affine in `(y, x)`; every output is a convex combination
/// of the four surrounding inputs.
pub fn interpolate_to_grid(coarse: &Grid, target_h: usize, target_w: usize) -> Result<Grid> {
    let (h, w) = (coarse.height(), coarse.width());
    if h < 2 || w < 2 {
        return Err(Error::Argument(format!("interpolation needs at least 2x2 input, got {h}x{w}")));
    }
    if target_h < h || target_w < w {
        return Err(Error::Argument(format!(
            "interpolation only upsamples: {h}x{w} -> {target_h}x{target_w}"
        )));
    }
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, f64) {
        if n_out == 1 {
            return (0, 0.0);
        }
        let s = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let i0 = (s.floor() as usize).min(n_in - 2);
        (i0, s - i0 as f64)
    };
    let ys: Vec<_> = (0..target_h).map(|y| coord(y, target_h, h)).collect();
    let xs: Vec<_> = (0..target_w).map(|x| coord(x, target_w, w)).collect();
    let shape = Shape::new(coarse.channels(), target_h, target_w);
    Ok(Grid::from_fn(shape, |c, y, x| {
        let (y0, ty) = ys[y];
        let (x0, tx) = xs[x];
        let v = |yy: usize, xx: usize| coarse.get(c, yy, xx) as f64;
        let top = v(y0, x0) * (1.0 - tx) + v(y0, x0 + 1) * tx;
        let bottom = v(y0 + 1, x0) * (1.0 - tx) + v(y0 + 1, x0 + 1) * tx;
        (top * (1.0 - ty) + bottom * ty) as f32
    }))
}
