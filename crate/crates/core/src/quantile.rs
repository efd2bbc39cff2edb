//! Empirical quantiles with Hazen plotting positions, `p_i = (i - 0.5) / n`,
//! and linear interpolation between order statistics.
//!
//! Shared by quantile mapping and the evaluation suite so both read
//! distributions the same way.

/// Value at a fractional 1-based rank, clamped to `[1, n]`.
pub fn value_at_rank(sorted: &[f64], rank: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of an empty sample");
    if rank <= 1.0 {
        return sorted[0];
    }
    if rank >= n as f64 {
        return sorted[n - 1];
    }
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    let a = sorted[lo - 1];
    if frac == 0.0 {
        return a;
    }
    a + frac * (sorted[lo] - a)
}

/// Hazen quantile of an ascending sample at probability `p`.
pub fn hazen_quantile(sorted: &[f64], p: f64) -> f64 {
    value_at_rank(sorted, p * sorted.len() as f64 + 0.5)
}

/// Where a value falls relative to an ascending sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankPosition {
    /// Below the minimum by this much.
    Below(f64),
    /// Above the maximum by this much.
    Above(f64),
    /// Fractional 1-based rank within the sample.
    Within(f64),
}

/// Inverse of [`value_at_rank`]; a value equal to a run of ties gets the
/// run's middle rank.
pub fn rank_of(sorted: &[f64], value: f64) -> RankPosition {
    let n = sorted.len();
    assert!(n > 0, "rank within an empty sample");
    if value < sorted[0] {
        return RankPosition::Below(value - sorted[0]);
    }
    if value > sorted[n - 1] {
        return RankPosition::Above(value - sorted[n - 1]);
    }
    let below = sorted.partition_point(|&m| m < value);
    let through = sorted.partition_point(|&m| m <= value);
    if through > below {
        return RankPosition::Within((below + 1 + through) as f64 / 2.0);
    }
    let (lo, hi) = (sorted[below - 1], sorted[below]);
    RankPosition::Within(below as f64 + (value - lo) / (hi - lo))
}

pub fn sorted_copy(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v
}
