//! Censored mixture data model and its likelihood.
//!
//! An observation is `y = min(max(l, y*), u)` where `y*` follows a finite
//! mixture of normal regressions. Censoring status is never stored; it is
//! read off the data by exact comparison of `y` with its bounds.

use nalgebra::{DMatrix, DVector};

use crate::distributions::std_normal;
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, sum_sorted};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Censoring {
    /// `y == lower`
    Left,
    Interior,
    /// `y == upper`
    Right,
}

/// Outcomes, design matrix and per-observation censoring bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    y: Vec<f64>,
    x: DMatrix<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ObservationSet {
    pub fn new(y: Vec<f64>, x: DMatrix<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidData("no observations".into()));
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidData("design matrix has no columns".into()));
        }
        if x.nrows() != n || lower.len() != n || upper.len() != n {
            return Err(Error::InvalidData(format!(
                "length mismatch: y {n}, X rows {}, lower {}, upper {}",
                x.nrows(),
                lower.len(),
                upper.len()
            )));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite design entry at row {}, column {}",
                pos % n,
                pos / n
            )));
        }
        for i in 0..n {
            let (yi, l, u) = (y[i], lower[i], upper[i]);
            if l.is_nan() || u.is_nan() || !(l < u) {
                return Err(Error::InvalidData(format!(
                    "observation {i}: bounds ({l}, {u}) do not satisfy lower < upper"
                )));
            }
            if !yi.is_finite() || yi < l || yi > u {
                return Err(Error::InvalidData(format!(
                    "observation {i}: y = {yi} outside [{l}, {u}]"
                )));
            }
        }
        Ok(Self { y, x, lower, upper })
    }

    /// Same bounds for every observation.
    pub fn with_common_bounds(y: Vec<f64>, x: DMatrix<f64>, lower: f64, upper: f64) -> Result<Self> {
        let n = y.len();
        Self::new(y, x, vec![lower; n], vec![upper; n])
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }

    pub fn censoring(&self, i: usize) -> Censoring {
        if self.y[i] == self.lower[i] {
            Censoring::Left
        } else if self.y[i] == self.upper[i] {
            Censoring::Right
        } else {
            Censoring::Interior
        }
    }

    pub fn censored_count(&self) -> (usize, usize) {
        (0..self.n()).fold((0, 0), |(l, r), i| match self.censoring(i) {
            Censoring::Left => (l + 1, r),
            Censoring::Right => (l, r + 1),
            Censoring::Interior => (l, r),
        })
    }

    /// Column means of the design matrix.
    pub fn covariate_means(&self) -> DVector<f64> {
        DVector::from_fn(self.p(), |j, _| self.x.column(j).mean())
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let x = DMatrix::from_fn(rows.len(), self.p(), |r, j| self.x[(rows[r], j)]);
        Self::new(
            rows.iter().map(|&i| self.y[i]).collect(),
            x,
            rows.iter().map(|&i| self.lower[i]).collect(),
            rows.iter().map(|&i| self.upper[i]).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentParams {
    pub beta: DVector<f64>,
    pub sigma2: f64,
}

impl ComponentParams {
    pub fn new(beta: DVector<f64>, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::domain(format!("component variance {sigma2}")));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::domain("non-finite regression coefficient"));
        }
        Ok(Self { beta, sigma2 })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

/// Component parameters together with the mixing weights π.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pub components: Vec<ComponentParams>,
    pub weights: Vec<f64>,
}

impl MixtureParams {
    pub fn new(components: Vec<ComponentParams>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::domain("mixture needs at least one component"));
        }
        if components.len() != weights.len() {
            return Err(Error::domain(format!(
                "{} components but {} weights",
                components.len(),
                weights.len()
            )));
        }
        let p = components[0].beta.len();
        if components.iter().any(|c| c.beta.len() != p) {
            return Err(Error::domain("components differ in coefficient dimension"));
        }
        if components.iter().any(|c| !(c.sigma2 > 0.0)) {
            return Err(Error::domain("component variance must be positive"));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::domain("mixture weights must be strictly positive"));
        }
        let total = sum_sorted(&weights);
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::domain(format!("mixture weights sum to {total}")));
        }
        Ok(Self {
            components,
            weights,
        })
    }

    pub fn single(component: ComponentParams) -> Self {
        Self {
            components: vec![component],
            weights: vec![1.0],
        }
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].beta.len()
    }

    /// Component `perm[k]` of `self` becomes component `k` of the result.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            components: perm.iter().map(|&c| self.components[c].clone()).collect(),
            weights: perm.iter().map(|&c| self.weights[c]).collect(),
        }
    }

    /// Linear predictors x'β_c for each component.
    pub(crate) fn means_at(&self, x: &DVector<f64>) -> Vec<f64> {
        self.components.iter().map(|c| c.beta.dot(x)).collect()
    }
}

/// ln ℓ_ic for one observation given its linear predictor and the component
/// standard deviation.
#[inline]
pub(crate) fn censored_normal_ln_lik(y: f64, lower: f64, upper: f64, mean: f64, sigma: f64) -> f64 {
    if y == lower {
        std_normal::ln_cdf((lower - mean) / sigma)
    } else if y == upper {
        std_normal::ln_cdf((mean - upper) / sigma)
    } else {
        std_normal::ln_pdf((y - mean) / sigma) - sigma.ln()
    }
}

/// Log-likelihood of observation `i` conditional on belonging to `comp`.
pub fn component_loglik_obs(i: usize, data: &ObservationSet, comp: &ComponentParams) -> f64 {
    let mean = data.x.row(i).dot(&comp.beta.transpose());
    censored_normal_ln_lik(data.y[i], data.lower[i], data.upper[i], mean, comp.sigma())
}

/// ln Σ_c π_c ℓ_ic for observation `i`.
pub fn mixture_loglik_obs(i: usize, data: &ObservationSet, params: &MixtureParams) -> Result<f64> {
    let terms: Vec<f64> = params
        .components
        .iter()
        .zip(&params.weights)
        .map(|(comp, w)| w.ln() + component_loglik_obs(i, data, comp))
        .collect();
    let value = log_sum_exp(&terms);
    if value == f64::NEG_INFINITY || value.is_nan() {
        return Err(Error::ZeroLikelihood { observation: i });
    }
    Ok(value)
}

/// Σ_c π_c ℓ_ic for observation `i`.
pub fn mixture_lik_obs(i: usize, data: &ObservationSet, params: &MixtureParams) -> Result<f64> {
    mixture_loglik_obs(i, data, params).map(f64::exp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetLoglik {
    pub total: f64,
    pub pointwise: Vec<f64>,
}

/// Log-likelihood of the whole data set, with the per-observation terms.
pub fn dataset_loglik(data: &ObservationSet, params: &MixtureParams) -> Result<DatasetLoglik> {
    if params.dim() != data.p() {
        return Err(Error::domain(format!(
            "parameters have dimension {}, data has {} covariates",
            params.dim(),
            data.p()
        )));
    }
    let means: Vec<DVector<f64>> = params
        .components
        .iter()
        .map(|c| &data.x * &c.beta)
        .collect();
    let sigmas: Vec<f64> = params.components.iter().map(ComponentParams::sigma).collect();
    let log_weights: Vec<f64> = params.weights.iter().map(|w| w.ln()).collect();
    let mut terms = vec![0.0; params.n_components()];
    let mut pointwise = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        for (c, term) in terms.iter_mut().enumerate() {
            *term = log_weights[c]
                + censored_normal_ln_lik(data.y[i], data.lower[i], data.upper[i], means[c][i], sigmas[c]);
        }
        let value = log_sum_exp(&terms);
        if value == f64::NEG_INFINITY || value.is_nan() {
            return Err(Error::ZeroLikelihood { observation: i });
        }
        pointwise.push(value);
    }
    Ok(DatasetLoglik {
        total: pointwise.iter().sum(),
        pointwise,
    })
}

/// Censored mixture distribution at covariate `x`: a density on the open
/// interval (lower, upper) plus point masses at the bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CensoredDensity {
    pub density: f64,
    pub mass_at_lower: f64,
    pub mass_at_upper: f64,
}

pub fn censored_density(
    value: f64,
    x: &DVector<f64>,
    lower: f64,
    upper: f64,
    params: &MixtureParams,
) -> Result<CensoredDensity> {
    if !(lower < upper) {
        return Err(Error::domain(format!("bounds ({lower}, {upper})")));
    }
    let means = params.means_at(x);
    let mut dens = Vec::with_capacity(means.len());
    let mut below = Vec::with_capacity(means.len());
    let mut above = Vec::with_capacity(means.len());
    for ((comp, w), mean) in params.components.iter().zip(&params.weights).zip(&means) {
        let sigma = comp.sigma();
        dens.push(w * std_normal::pdf((value - mean) / sigma) / sigma);
        below.push(w * std_normal::cdf((lower - mean) / sigma));
        above.push(w * std_normal::cdf((mean - upper) / sigma));
    }
    let density = if value > lower && value < upper {
        sum_sorted(&dens)
    } else {
        0.0
    };
    Ok(CensoredDensity {
        density,
        mass_at_lower: sum_sorted(&below),
        mass_at_upper: sum_sorted(&above),
    })
}

/// Density of the uncensored latent mixture `y*` at covariate `x`.
pub fn latent_density(value: f64, x: &DVector<f64>, params: &MixtureParams) -> f64 {
    let terms: Vec<f64> = params
        .components
        .iter()
        .zip(&params.weights)
        .zip(params.means_at(x))
        .map(|((comp, w), mean)| {
            let sigma = comp.sigma();
            w * std_normal::pdf((value - mean) / sigma) / sigma
        })
        .collect();
    sum_sorted(&terms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_obs(y: f64, lower: f64, upper: f64) -> ObservationSet {
        ObservationSet::new(
            vec![y],
            DMatrix::from_element(1, 1, 1.0),
            vec![lower],
            vec![upper],
        )
        .unwrap()
    }

    fn comp(intercept: f64, sigma2: f64) -> ComponentParams {
        ComponentParams::new(DVector::from_element(1, intercept), sigma2).unwrap()
    }

    #[test]
    fn component_loglik_cases() {
        let left = one_obs(0.0, 0.0, 7.5);
        assert!((component_loglik_obs(0, &left, &comp(0.0, 1.0)) - 0.5f64.ln()).abs() < 1e-15);
        let interior = one_obs(1.0, 0.0, 7.5);
        assert!(
            (component_loglik_obs(0, &interior, &comp(1.0, 1.0)) - 0.398_942_3f64.ln()).abs() < 1e-7
        );
        let right = one_obs(7.5, 0.0, 7.5);
        assert!((component_loglik_obs(0, &right, &comp(7.5, 1.0)) - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(left.censoring(0), Censoring::Left);
        assert_eq!(right.censoring(0), Censoring::Right);
        assert_eq!(interior.censoring(0), Censoring::Interior);
    }

    #[test]
    fn infinite_bounds_never_censor() {
        let data = one_obs(-1e6, f64::NEG_INFINITY, f64::INFINITY);
        assert_eq!(data.censoring(0), Censoring::Interior);
        let m = MixtureParams::single(comp(0.0, 1.0));
        let ll = dataset_loglik(&data, &m).unwrap();
        assert!(ll.total.is_finite());
    }

    #[test]
    fn mixture_of_identical_components() {
        let data = one_obs(0.3, 0.0, 7.5);
        let single = MixtureParams::single(comp(0.5, 2.0));
        let double = MixtureParams::new(vec![comp(0.5, 2.0), comp(0.5, 2.0)], vec![0.3, 0.7]).unwrap();
        let a = mixture_lik_obs(0, &data, &single).unwrap();
        let b = mixture_lik_obs(0, &data, &double).unwrap();
        assert!((a - b).abs() < 1e-15);
        let direct = component_loglik_obs(0, &data, &single.components[0]).exp();
        assert!((a - direct).abs() < 1e-15);
    }

    #[test]
    fn mixture_arithmetic() {
        // Component likelihoods 0.4 and 0.2 from left-censored observations.
        let data = one_obs(0.0, 0.0, 10.0);
        let c1 = comp(-std_normal::quantile(0.4), 1.0);
        let c2 = comp(-std_normal::quantile(0.2), 1.0);
        let m = MixtureParams::new(vec![c1, c2], vec![0.5, 0.5]).unwrap();
        let v = mixture_lik_obs(0, &data, &m).unwrap();
        assert!((v - 0.3).abs() < 1e-12, "{v}");
    }

    #[test]
    fn zero_likelihood_is_reported() {
        let data = one_obs(0.0, 0.0, 1.0);
        // Standardized distance to the bound overflows to -inf.
        let m = MixtureParams::single(comp(1e300, 1e-300));
        let err = dataset_loglik(&data, &m).unwrap_err();
        assert!(matches!(err, Error::ZeroLikelihood { observation: 0 }));
    }

    #[test]
    fn dataset_loglik_is_additive() {
        let data = ObservationSet::with_common_bounds(
            vec![0.0, 2.0],
            DMatrix::from_element(2, 1, 1.0),
            0.0,
            7.5,
        )
        .unwrap();
        let m = MixtureParams::single(comp(1.0, 1.0));
        let ll = dataset_loglik(&data, &m).unwrap();
        let a = mixture_loglik_obs(0, &data, &m).unwrap();
        let b = mixture_loglik_obs(1, &data, &m).unwrap();
        assert_eq!(ll.pointwise, vec![a, b]);
        assert!((ll.total - (a + b)).abs() < 1e-15);
    }

    #[test]
    fn observation_set_validation() {
        let x = DMatrix::from_element(1, 1, 1.0);
        assert!(ObservationSet::new(vec![-1.0], x.clone(), vec![0.0], vec![1.0]).is_err());
        assert!(ObservationSet::new(vec![0.5], x.clone(), vec![1.0], vec![1.0]).is_err());
        assert!(ObservationSet::new(vec![], DMatrix::zeros(0, 1), vec![], vec![]).is_err());
        let bad_x = DMatrix::from_element(1, 1, f64::NAN);
        assert!(ObservationSet::new(vec![0.5], bad_x, vec![0.0], vec![1.0]).is_err());
    }

    #[test]
    fn mixture_params_validation() {
        assert!(MixtureParams::new(vec![comp(0.0, 1.0)], vec![0.9]).is_err());
        assert!(MixtureParams::new(vec![comp(0.0, 1.0), comp(1.0, 1.0)], vec![1.0, 0.0]).is_err());
        assert!(ComponentParams::new(DVector::zeros(1), 0.0).is_err());
    }

    #[test]
    fn censored_density_point_mass() {
        let m = MixtureParams::single(comp(0.0, 1.0));
        let x = DVector::from_element(1, 1.0);
        let d = censored_density(0.5, &x, 0.0, f64::INFINITY, &m).unwrap();
        assert_eq!(d.mass_at_lower, 0.5);
        assert_eq!(d.mass_at_upper, 0.0);
        assert!((d.density - std_normal::pdf(0.5)).abs() < 1e-15);
        let outside = censored_density(-0.5, &x, 0.0, f64::INFINITY, &m).unwrap();
        assert_eq!(outside.density, 0.0);
    }
}
