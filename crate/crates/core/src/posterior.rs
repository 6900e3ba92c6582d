//! Posterior summaries: censoring probabilities, expected outcomes of the
//! censored mixture, average marginal effects and density bands.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::distributions::std_normal;
use crate::error::{Error, Result};
use crate::gibbs::DrawStore;
use crate::model::{censored_density, MixtureParams, ObservationSet};
use crate::numeric::{mean, nearest_rank, sum_sorted};

/// Interior probability below which conditioning on the interior fails.
pub const MIN_INTERIOR_PROB: f64 = 1e-12;

fn check_bounds(lower: f64, upper: f64) -> Result<()> {
    if lower < upper && !lower.is_nan() && !upper.is_nan() {
        Ok(())
    } else {
        Err(Error::domain(format!("bounds ({lower}, {upper})")))
    }
}

/// Σ_c π_c Φ((lower − x'β_c)/σ_c).
pub fn prob_at_lower(x: &DVector<f64>, params: &MixtureParams, lower: f64) -> f64 {
    let terms: Vec<f64> = params
        .components
        .iter()
        .zip(&params.weights)
        .map(|(c, w)| w * std_normal::cdf((lower - c.beta.dot(x)) / c.sigma()))
        .collect();
    sum_sorted(&terms)
}

/// Σ_c π_c Φ((x'β_c − upper)/σ_c).
pub fn prob_at_upper(x: &DVector<f64>, params: &MixtureParams, upper: f64) -> f64 {
    let terms: Vec<f64> = params
        .components
        .iter()
        .zip(&params.weights)
        .map(|(c, w)| w * std_normal::cdf((c.beta.dot(x) - upper) / c.sigma()))
        .collect();
    sum_sorted(&terms)
}

/// Pr(lower < y < upper | x).
pub fn prob_interior(x: &DVector<f64>, params: &MixtureParams, lower: f64, upper: f64) -> f64 {
    let terms: Vec<f64> = params
        .components
        .iter()
        .zip(&params.weights)
        .map(|(c, w)| {
            let m = c.beta.dot(x);
            let s = c.sigma();
            w * std_normal::interval_prob((lower - m) / s, (upper - m) / s)
        })
        .collect();
    sum_sorted(&terms)
}

/// Per-component pieces of the censored mean: (interior probability,
/// interior partial mean, bound contributions).
struct Moments {
    interior_prob: f64,
    interior_part: f64,
    bound_part: f64,
}

fn component_moments(mean: f64, sigma: f64, lower: f64, upper: f64) -> Moments {
    let a = (lower - mean) / sigma;
    let b = (upper - mean) / sigma;
    let interior_prob = std_normal::interval_prob(a, b);
    let interior_part = mean * interior_prob + sigma * (std_normal::pdf(a) - std_normal::pdf(b));
    let at_lower = if lower.is_finite() { lower * std_normal::cdf(a) } else { 0.0 };
    let at_upper = if upper.is_finite() { upper * std_normal::sf(b) } else { 0.0 };
    Moments {
        interior_prob,
        interior_part,
        bound_part: at_lower + at_upper,
    }
}

fn mixture_moments(x: &DVector<f64>, params: &MixtureParams, lower: f64, upper: f64) -> (f64, f64, f64) {
    let mut prob = Vec::with_capacity(params.n_components());
    let mut interior = Vec::with_capacity(params.n_components());
    let mut bounds = Vec::with_capacity(params.n_components());
    for (c, w) in params.components.iter().zip(&params.weights) {
        let m = component_moments(c.beta.dot(x), c.sigma(), lower, upper);
        prob.push(w * m.interior_prob);
        interior.push(w * m.interior_part);
        bounds.push(w * m.bound_part);
    }
    (sum_sorted(&prob), sum_sorted(&interior), sum_sorted(&bounds))
}

/// E[y | x] for the two-sided censored mixture.
pub fn expected_outcome(x: &DVector<f64>, params: &MixtureParams, lower: f64, upper: f64) -> Result<f64> {
    check_bounds(lower, upper)?;
    let (_, interior, bounds) = mixture_moments(x, params, lower, upper);
    Ok(interior + bounds)
}

/// E[y | x, lower < y < upper].
pub fn expected_outcome_interior(x: &DVector<f64>, params: &MixtureParams, lower: f64, upper: f64) -> Result<f64> {
    check_bounds(lower, upper)?;
    let (prob, interior, _) = mixture_moments(x, params, lower, upper);
    if prob < MIN_INTERIOR_PROB {
        return Err(Error::DegenerateConditioning { probability: prob });
    }
    Ok(interior / prob)
}

/// ∂E[y | x]/∂x_j = Σ_c π_c β_jc Pr_c(lower < y* < upper).
pub fn marginal_effect(x: &DVector<f64>, params: &MixtureParams, j: usize, lower: f64, upper: f64) -> f64 {
    let terms: Vec<f64> = params
        .components
        .iter()
        .zip(&params.weights)
        .map(|(c, w)| {
            let m = c.beta.dot(x);
            let s = c.sigma();
            w * c.beta[j] * std_normal::interval_prob((lower - m) / s, (upper - m) / s)
        })
        .collect();
    sum_sorted(&terms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Treatment {
    /// Derivative with respect to the covariate.
    Continuous,
    /// Contrast E[y | x_j = 1] − E[y | x_j = 0].
    Binary,
}

impl std::str::FromStr for Treatment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(Self::Continuous),
            "binary" => Ok(Self::Binary),
            other => Err(Error::InvalidSettings(format!("unknown treatment `{other}`"))),
        }
    }
}

/// Average marginal effect of covariate `j` over the sample, once per
/// retained draw, using each observation's own bounds.
pub fn average_marginal_effect(
    store: &DrawStore,
    data: &ObservationSet,
    j: usize,
    treatment: Treatment,
) -> Result<Vec<f64>> {
    if j >= data.p() {
        return Err(Error::InvalidSettings(format!(
            "covariate index {j} out of range for {} covariates",
            data.p()
        )));
    }
    let rows: Vec<DVector<f64>> = (0..data.n()).map(|i| data.row(i)).collect();
    store
        .draws
        .par_iter()
        .map(|params| {
            let mut total = 0.0;
            for (i, x) in rows.iter().enumerate() {
                let (l, u) = (data.lower()[i], data.upper()[i]);
                total += match treatment {
                    Treatment::Continuous => marginal_effect(x, params, j, l, u),
                    Treatment::Binary => {
                        let mut on = x.clone();
                        let mut off = x.clone();
                        on[j] = 1.0;
                        off[j] = 0.0;
                        expected_outcome(&on, params, l, u)? - expected_outcome(&off, params, l, u)?
                    }
                };
            }
            Ok(total / data.n() as f64)
        })
        .collect()
}

/// Posterior-averaged summaries at a covariate vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeSummary {
    pub prob_at_lower: f64,
    pub expected: f64,
    pub expected_interior: f64,
}

/// Averages Pr(y = lower), E[y] and E[y | interior] over the retained draws.
pub fn outcome_summary(store: &DrawStore, x: &DVector<f64>, lower: f64, upper: f64) -> Result<OutcomeSummary> {
    if store.is_empty() {
        return Err(Error::InvalidData("empty draw store".into()));
    }
    let mut p0 = Vec::with_capacity(store.len());
    let mut e = Vec::with_capacity(store.len());
    let mut ei = Vec::with_capacity(store.len());
    for params in &store.draws {
        p0.push(prob_at_lower(x, params, lower));
        e.push(expected_outcome(x, params, lower, upper)?);
        ei.push(expected_outcome_interior(x, params, lower, upper)?);
    }
    Ok(OutcomeSummary {
        prob_at_lower: mean(&p0),
        expected: mean(&e),
        expected_interior: mean(&ei),
    })
}

/// Continuous part of the censored density at `x0`, averaged over draws.
pub fn posterior_mean_density(
    store: &DrawStore,
    x0: &DVector<f64>,
    grid: &[f64],
    lower: f64,
    upper: f64,
) -> Result<Vec<f64>> {
    if store.is_empty() {
        return Err(Error::InvalidData("empty draw store".into()));
    }
    let mut curve = vec![0.0; grid.len()];
    for params in &store.draws {
        for (acc, &v) in curve.iter_mut().zip(grid) {
            *acc += censored_density(v, x0, lower, upper, params)?.density;
        }
    }
    let s = store.len() as f64;
    curve.iter_mut().for_each(|c| *c /= s);
    Ok(curve)
}

/// Pointwise mean and nearest-rank 5th / 95th percentiles of replicate
/// density curves.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityBand {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub q05: Vec<f64>,
    pub q95: Vec<f64>,
}

pub fn density_band(grid: &[f64], curves: &[Vec<f64>]) -> Result<DensityBand> {
    if curves.len() < 2 {
        return Err(Error::InvalidData(format!(
            "density band needs at least 2 replicate curves, got {}",
            curves.len()
        )));
    }
    if curves.iter().any(|c| c.len() != grid.len()) {
        return Err(Error::InvalidData("replicate curve length differs from grid".into()));
    }
    let mut band = DensityBand {
        grid: grid.to_vec(),
        mean: Vec::with_capacity(grid.len()),
        q05: Vec::with_capacity(grid.len()),
        q95: Vec::with_capacity(grid.len()),
    };
    for g in 0..grid.len() {
        let mut values: Vec<f64> = curves.iter().map(|c| c[g]).collect();
        band.mean.push(mean(&values));
        values.sort_by(f64::total_cmp);
        band.q05.push(nearest_rank(&values, 0.05));
        band.q95.push(nearest_rank(&values, 0.95));
    }
    Ok(band)
}

/// Evenly spaced grid of `points` values over [start, end].
pub fn linear_grid(start: f64, end: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..points)
            .map(|k| start + (end - start) * k as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Trapezoidal L1 distance between two curves on a common grid.
pub fn l1_distance(grid: &[f64], a: &[f64], b: &[f64]) -> f64 {
    grid.windows(2)
        .enumerate()
        .map(|(k, w)| 0.5 * (w[1] - w[0]) * ((a[k] - b[k]).abs() + (a[k + 1] - b[k + 1]).abs()))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ComponentParams;

    fn comp(b: &[f64], s2: f64) -> ComponentParams {
        ComponentParams::new(DVector::from_row_slice(b), s2).unwrap()
    }

    fn one() -> DVector<f64> {
        DVector::from_element(1, 1.0)
    }

    #[test]
    fn lower_mass() {
        let p = MixtureParams::single(comp(&[2.0], 9.0));
        assert!((prob_at_lower(&one(), &p, 2.0) - 0.5).abs() < 1e-15);
        assert_eq!(prob_at_lower(&one(), &p, f64::NEG_INFINITY), 0.0);
        let q02 = std_normal::quantile(0.2);
        let q04 = std_normal::quantile(0.4);
        let m = MixtureParams::new(vec![comp(&[-q02], 1.0), comp(&[-q04], 1.0)], vec![0.3, 0.7]).unwrap();
        assert!((prob_at_lower(&one(), &m, 0.0) - 0.34).abs() < 1e-12);
    }

    #[test]
    fn masses_sum_to_one() {
        let m = MixtureParams::new(vec![comp(&[0.3], 0.5), comp(&[4.0], 2.0)], vec![0.45, 0.55]).unwrap();
        let total = prob_at_lower(&one(), &m, 0.0) + prob_interior(&one(), &m, 0.0, 5.0) + prob_at_upper(&one(), &m, 5.0);
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uncensored_mean_is_mixture_of_means() {
        let m = MixtureParams::new(vec![comp(&[1.0], 1.0), comp(&[5.0], 4.0)], vec![0.25, 0.75]).unwrap();
        let e = expected_outcome(&one(), &m, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        assert!((e - 4.0).abs() < 1e-14);
        let ei = expected_outcome_interior(&one(), &m, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        assert!((ei - 4.0).abs() < 1e-14);
    }

    #[test]
    fn left_censored_at_zero_standard_normal() {
        let m = MixtureParams::single(comp(&[0.0], 1.0));
        let e = expected_outcome(&one(), &m, 0.0, f64::INFINITY).unwrap();
        assert!((e - std_normal::pdf(0.0)).abs() < 1e-15);
        let ei = expected_outcome_interior(&one(), &m, 0.0, f64::INFINITY).unwrap();
        assert!((ei - 2.0 * std_normal::pdf(0.0)).abs() < 1e-14);
    }

    #[test]
    fn degenerate_conditioning() {
        let m = MixtureParams::single(comp(&[-100.0], 1.0));
        let err = expected_outcome_interior(&one(), &m, 0.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateConditioning { .. }));
        assert!(expected_outcome(&one(), &m, 1.0, 0.0).is_err());
    }

    #[test]
    fn expected_outcome_monotone_in_shift() {
        let base = MixtureParams::new(vec![comp(&[0.5], 1.0), comp(&[3.0], 0.25)], vec![0.4, 0.6]).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..20 {
            let shift = -3.0 + 0.4 * k as f64;
            let mut p = base.clone();
            p.components.iter_mut().for_each(|c| c.beta[0] += shift);
            let e = expected_outcome(&one(), &p, 0.0, 4.0).unwrap();
            assert!(e >= prev);
            prev = e;
        }
    }

    #[test]
    fn band_of_identical_curves() {
        let grid = vec![0.0, 1.0, 2.0];
        let curve = vec![0.1, 0.3, 0.2];
        let band = density_band(&grid, &vec![curve.clone(); 5]).unwrap();
        assert_eq!(band.mean, curve);
        assert_eq!(band.q05, curve);
        assert_eq!(band.q95, curve);
        assert!(density_band(&grid, &[curve]).is_err());
    }

    #[test]
    fn band_percentiles_use_nearest_rank() {
        let grid = vec![0.0];
        let curves: Vec<Vec<f64>> = (1..=200).rev().map(|k| vec![k as f64]).collect();
        let band = density_band(&grid, &curves).unwrap();
        assert_eq!(band.q05, vec![10.0]);
        assert_eq!(band.q95, vec![190.0]);
        assert!((band.mean[0] - 100.5).abs() < 1e-12);
    }

    #[test]
    fn grid_and_distance() {
        let g = linear_grid(0.0, 1.0, 5);
        assert_eq!(g, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let a = vec![1.0; 5];
        let b = vec![0.0; 5];
        assert!((l1_distance(&g, &a, &b) - 1.0).abs() < 1e-15);
    }
}
