//! Small order-independent reductions.
//!
//! Sums over mixture components are taken over sorted terms so that the
//! result is bit-identical under any relabeling of the components.

pub fn sum_sorted(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// ln Σ exp(values), shifted by the maximum and permutation invariant.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    let scaled: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    max + sum_sorted(&scaled).ln()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with divisor `n - 1`.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    // Shifting by the first value makes constant input exactly zero.
    let shift = values[0];
    let m = values.iter().map(|v| v - shift).sum::<f64>() / n as f64;
    values.iter().map(|v| (v - shift - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Nearest-rank percentile: the `ceil(q·n)`-th order statistic (1-based) of
/// already sorted data.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}
