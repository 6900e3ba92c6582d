//! Gibbs sampler with data augmentation for the finite mixture of Tobit
//! models, and the chain driver (burn-in, thinning, log-likelihood capture).
//!
//! One sweep runs, in order:
//!
//! 1. censored outcomes redrawn from class-specific truncated normals,
//! 2. σ²_c then β_c for every class from their conjugate conditionals,
//! 3. class labels from their categorical full conditionals,
//! 4. mixture weights from the Dirichlet conditional.
//!
//! Per-class random draws are consumed in a canonical class order that
//! depends only on the classes' contents, never on their index. Relabeling
//! the initial state and the hyperparameters therefore relabels the whole
//! chain without changing a single log-likelihood value.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::distributions::{
    sample_categorical_ordered, sample_dirichlet_ordered, sample_inverse_gamma,
    sample_mv_normal_canonical, sample_truncated_normal, std_normal, RngStream,
};
use crate::error::{Error, Result};
use crate::model::{dataset_loglik, Censoring, ComponentParams, MixtureParams, ObservationSet};

/// Prior hyperparameters, one entry per class.
///
/// `omega` holds prior *precision* matrices; a zero matrix gives a flat prior
/// on β. Zero inverse-gamma shape and scale give the improper 1/σ² prior.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperpriors {
    pub alpha: Vec<f64>,
    pub mu: Vec<DVector<f64>>,
    pub omega: Vec<DMatrix<f64>>,
    pub ig_shape: Vec<f64>,
    pub ig_scale: Vec<f64>,
}

impl Hyperpriors {
    pub fn new(
        alpha: Vec<f64>,
        mu: Vec<DVector<f64>>,
        omega: Vec<DMatrix<f64>>,
        ig_shape: Vec<f64>,
        ig_scale: Vec<f64>,
    ) -> Result<Self> {
        let hyper = Self {
            alpha,
            mu,
            omega,
            ig_shape,
            ig_scale,
        };
        hyper.validate()?;
        Ok(hyper)
    }

    /// Same prior for every class: Dirichlet(alpha, …), β ~ N(mean·1, (τI)⁻¹),
    /// σ² ~ IG(a, b).
    pub fn isotropic(
        n_components: usize,
        p: usize,
        alpha: f64,
        prior_mean: f64,
        tau: f64,
        ig_shape: f64,
        ig_scale: f64,
    ) -> Result<Self> {
        Self::new(
            vec![alpha; n_components],
            vec![DVector::from_element(p, prior_mean); n_components],
            vec![DMatrix::identity(p, p) * tau; n_components],
            vec![ig_shape; n_components],
            vec![ig_scale; n_components],
        )
    }

    /// α_c = 1/C, μ_c = 0, Ω_c = 10·I, a_c = b_c = 0: the simulation-study
    /// setting.
    pub fn simulation_default(n_components: usize, p: usize) -> Self {
        Self::isotropic(n_components, p, 1.0 / n_components as f64, 0.0, 10.0, 0.0, 0.0)
            .expect("valid by construction")
    }

    pub fn n_components(&self) -> usize {
        self.alpha.len()
    }

    pub fn dim(&self) -> usize {
        self.mu.first().map_or(0, |m| m.len())
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.alpha.len();
        if c == 0 {
            return Err(Error::InvalidSettings("hyperpriors for zero classes".into()));
        }
        if self.mu.len() != c || self.omega.len() != c || self.ig_shape.len() != c || self.ig_scale.len() != c {
            return Err(Error::InvalidSettings(
                "hyperprior vectors differ in length".into(),
            ));
        }
        if let Some(a) = self.alpha.iter().find(|&&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidSettings(format!("dirichlet concentration {a}")));
        }
        let p = self.dim();
        for (k, (mu, omega)) in self.mu.iter().zip(&self.omega).enumerate() {
            if mu.len() != p || omega.nrows() != p || omega.ncols() != p {
                return Err(Error::InvalidSettings(format!(
                    "class {k}: prior mean / precision dimensions disagree"
                )));
            }
            if mu.iter().chain(omega.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidSettings(format!("class {k}: non-finite prior")));
            }
            if !is_symmetric_psd(omega) {
                return Err(Error::InvalidSettings(format!(
                    "class {k}: prior precision is not symmetric positive semi-definite"
                )));
            }
        }
        for (k, (a, b)) in self.ig_shape.iter().zip(&self.ig_scale).enumerate() {
            if !(*a >= 0.0 && a.is_finite() && *b >= 0.0 && b.is_finite()) {
                return Err(Error::InvalidSettings(format!(
                    "class {k}: inverse-gamma prior ({a}, {b})"
                )));
            }
        }
        Ok(())
    }

    /// Class `perm[k]` of `self` becomes class `k`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            alpha: perm.iter().map(|&c| self.alpha[c]).collect(),
            mu: perm.iter().map(|&c| self.mu[c].clone()).collect(),
            omega: perm.iter().map(|&c| self.omega[c].clone()).collect(),
            ig_shape: perm.iter().map(|&c| self.ig_shape[c]).collect(),
            ig_scale: perm.iter().map(|&c| self.ig_scale[c]).collect(),
        }
    }
}

fn is_symmetric_psd(m: &DMatrix<f64>) -> bool {
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return true;
    }
    if (m - m.transpose()).abs().max() > 1e-12 * scale {
        return false;
    }
    let eig = SymmetricEigen::new(m.clone());
    eig.eigenvalues.iter().all(|&l| l >= -1e-10 * scale)
}

/// Starting point for the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitStrategy {
    /// β_c = 0, σ²_c = 1, π = α / Σα.
    #[default]
    ZeroOne,
    /// Least squares on the interior observations, each coefficient and σ
    /// multiplied per class by an independent Uniform(0.8, 1.2) draw; π_c = 1/C.
    PerturbedLeastSquares,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSettings {
    pub n_components: usize,
    /// Total iterations, burn-in included.
    pub n_draws: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub init: InitStrategy,
}

impl ChainSettings {
    pub fn new(n_components: usize, n_draws: usize, burn_in: usize, thin: usize, seed: u64) -> Result<Self> {
        let settings = Self {
            n_components,
            n_draws,
            burn_in,
            thin,
            seed,
            init: InitStrategy::ZeroOne,
        };
        settings.validate()?;
        Ok(settings)
    }

    pub fn with_init(mut self, init: InitStrategy) -> Self {
        self.init = init;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_components == 0 {
            return Err(Error::InvalidSettings("need at least one component".into()));
        }
        if self.thin == 0 {
            return Err(Error::InvalidSettings("thin must be at least 1".into()));
        }
        if self.burn_in >= self.n_draws {
            return Err(Error::InvalidSettings(format!(
                "burn-in {} must be below the number of draws {}",
                self.burn_in, self.n_draws
            )));
        }
        Ok(())
    }

    /// Number of draws kept: ⌊(n_draws − burn_in) / thin⌋.
    pub fn retained(&self) -> usize {
        (self.n_draws - self.burn_in) / self.thin
    }

    fn keeps(&self, iteration: usize) -> bool {
        iteration > self.burn_in && (iteration - self.burn_in) % self.thin == 0
    }
}

/// Current parameters plus the augmented data: class labels (0-based) and
/// outcomes with censored values replaced by latent draws.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    pub params: MixtureParams,
    pub labels: Vec<usize>,
    pub augmented: Vec<f64>,
}

impl GibbsState {
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.params.n_components()];
        for &z in &self.labels {
            counts[z] += 1;
        }
        counts
    }

    /// Class `perm[k]` of `self` becomes class `k`; labels follow.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inverse = vec![0; perm.len()];
        for (k, &c) in perm.iter().enumerate() {
            inverse[c] = k;
        }
        Self {
            params: self.params.permuted(perm),
            labels: self.labels.iter().map(|&z| inverse[z]).collect(),
            augmented: self.augmented.clone(),
        }
    }

    /// Checks the augmentation bounds, label range, weight simplex and
    /// variance positivity.
    pub fn check_invariants(&self, data: &ObservationSet) -> Result<()> {
        let c = self.params.n_components();
        let total: f64 = self.params.weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 || self.params.weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvariantViolated(format!(
                "weights {:?} are not a strictly positive simplex",
                self.params.weights
            )));
        }
        if let Some(k) = self.params.components.iter().position(|p| !(p.sigma2 > 0.0 && p.sigma2.is_finite())) {
            return Err(Error::InvariantViolated(format!("class {k} variance not positive")));
        }
        if self.labels.len() != data.n() || self.augmented.len() != data.n() {
            return Err(Error::InvariantViolated("state length differs from data".into()));
        }
        for i in 0..data.n() {
            if self.labels[i] >= c {
                return Err(Error::InvariantViolated(format!("label of {i} out of range")));
            }
            let a = self.augmented[i];
            let ok = match data.censoring(i) {
                Censoring::Interior => a == data.y()[i],
                Censoring::Left => a < data.lower()[i],
                Censoring::Right => a > data.upper()[i],
            };
            if !ok {
                return Err(Error::InvariantViolated(format!(
                    "augmented outcome {a} of observation {i} violates its censoring"
                )));
            }
        }
        Ok(())
    }
}

/// Draws the initial state: parameters per `settings.init`, labels from
/// Categorical(π⁰), then one augmentation pass.
pub fn init_state(
    data: &ObservationSet,
    settings: &ChainSettings,
    hyper: &Hyperpriors,
    rng: &mut RngStream,
) -> Result<GibbsState> {
    settings.validate()?;
    check_dimensions(data, hyper, settings)?;
    let c = settings.n_components;
    let p = data.p();
    let params = match settings.init {
        InitStrategy::ZeroOne => {
            let total: f64 = hyper.alpha.iter().sum();
            MixtureParams {
                components: vec![ComponentParams::new(DVector::zeros(p), 1.0)?; c],
                weights: hyper.alpha.iter().map(|a| a / total).collect(),
            }
        }
        InitStrategy::PerturbedLeastSquares => {
            let (beta, sigma) = interior_least_squares(data)?;
            let mut components = Vec::with_capacity(c);
            for _ in 0..c {
                let scaled = beta.map(|b| b * (0.8 + 0.4 * rng.open01()));
                let s = sigma * (0.8 + 0.4 * rng.open01());
                components.push(ComponentParams::new(scaled, s * s)?);
            }
            MixtureParams {
                components,
                weights: vec![1.0 / c as f64; c],
            }
        }
    };
    let labels = if c == 1 {
        vec![0; data.n()]
    } else {
        let order: Vec<usize> = (0..c).collect();
        (0..data.n())
            .map(|_| sample_categorical_ordered(&params.weights, &order, rng))
            .collect::<Result<_>>()?
    };
    let mut state = GibbsState {
        params,
        labels,
        augmented: data.y().to_vec(),
    };
    draw_missing_outcomes(&mut state, data, rng)?;
    Ok(state)
}

fn interior_least_squares(data: &ObservationSet) -> Result<(DVector<f64>, f64)> {
    let rows: Vec<usize> = (0..data.n())
        .filter(|&i| data.censoring(i) == Censoring::Interior)
        .collect();
    let p = data.p();
    if rows.len() <= p {
        return Err(Error::InvalidData(format!(
            "{} interior observations cannot identify {p} coefficients",
            rows.len()
        )));
    }
    let x = data.x().select_rows(&rows);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| data.y()[i]));
    let beta = (x.transpose() * &x)
        .cholesky()
        .ok_or_else(|| Error::InvalidData("interior design matrix is rank deficient".into()))?
        .solve(&(x.transpose() * &y));
    let ssr = (y - x * &beta).norm_squared();
    let sigma = (ssr / (rows.len() - p) as f64).sqrt().max(1e-8);
    Ok((beta, sigma))
}

fn check_dimensions(data: &ObservationSet, hyper: &Hyperpriors, settings: &ChainSettings) -> Result<()> {
    hyper.validate()?;
    if hyper.n_components() != settings.n_components {
        return Err(Error::InvalidSettings(format!(
            "hyperpriors for {} classes, settings ask for {}",
            hyper.n_components(),
            settings.n_components
        )));
    }
    if hyper.dim() != data.p() {
        return Err(Error::InvalidSettings(format!(
            "prior dimension {} but data has {} covariates",
            hyper.dim(),
            data.p()
        )));
    }
    Ok(())
}

/// Canonical processing order of the classes: sorted by prior, current
/// parameters and current membership statistics, with the index only as a
/// last-resort tie-break.
fn class_order(state: &GibbsState, hyper: &Hyperpriors) -> Vec<usize> {
    let c = state.params.n_components();
    let mut counts = vec![0.0; c];
    let mut sums = vec![0.0; c];
    for (&z, &a) in state.labels.iter().zip(&state.augmented) {
        counts[z] += 1.0;
        sums[z] += a;
    }
    let keys: Vec<Vec<f64>> = (0..c)
        .map(|k| {
            let comp = &state.params.components[k];
            let mut key = vec![
                counts[k],
                sums[k],
                comp.sigma2,
                state.params.weights[k],
                hyper.alpha[k],
                hyper.ig_shape[k],
                hyper.ig_scale[k],
            ];
            key.extend(comp.beta.iter());
            key.extend(hyper.mu[k].iter());
            key.extend(hyper.omega[k].iter());
            key
        })
        .collect();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&i, &j| {
        keys[i]
            .iter()
            .zip(&keys[j])
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    order
}

/// Redraws the latent outcome of every censored observation from the
/// truncated normal of its current class. Interior observations keep y.
pub fn draw_missing_outcomes(state: &mut GibbsState, data: &ObservationSet, rng: &mut RngStream) -> Result<()> {
    for i in 0..data.n() {
        let censoring = data.censoring(i);
        if censoring == Censoring::Interior {
            continue;
        }
        let comp = &state.params.components[state.labels[i]];
        let mean = data.x().row(i).dot(&comp.beta.transpose());
        state.augmented[i] = match censoring {
            Censoring::Left => {
                sample_truncated_normal(mean, comp.sigma2, f64::NEG_INFINITY, data.lower()[i], rng)?
            }
            Censoring::Right => {
                sample_truncated_normal(mean, comp.sigma2, data.upper()[i], f64::INFINITY, rng)?
            }
            Censoring::Interior => unreachable!(),
        };
    }
    Ok(())
}

/// Sufficient statistics of one class given the augmented outcomes.
pub(crate) struct ClassStats {
    pub count: usize,
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
    /// Residual sum of squares at the class's current β.
    pub ssr: f64,
}

fn class_stats(state: &GibbsState, data: &ObservationSet, class: usize) -> ClassStats {
    let rows: Vec<usize> = (0..data.n()).filter(|&i| state.labels[i] == class).collect();
    let p = data.p();
    if rows.is_empty() {
        return ClassStats {
            count: 0,
            xtx: DMatrix::zeros(p, p),
            xty: DVector::zeros(p),
            ssr: 0.0,
        };
    }
    let x = data.x().select_rows(&rows);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| state.augmented[i]));
    let resid = &y - &x * &state.params.components[class].beta;
    ClassStats {
        count: rows.len(),
        xtx: x.tr_mul(&x),
        xty: x.tr_mul(&y),
        ssr: resid.norm_squared(),
    }
}

/// (shape, scale) of the inverse-gamma conditional of σ²_c.
pub(crate) fn variance_posterior(stats: &ClassStats, ig_shape: f64, ig_scale: f64) -> (f64, f64) {
    (ig_shape + stats.count as f64 / 2.0, ig_scale + stats.ssr / 2.0)
}

/// β_c from N([X'X/σ² + Ω]⁻¹[X'ỹ/σ² + Ωμ], [X'X/σ² + Ω]⁻¹).
pub(crate) fn draw_coefficients(
    stats: &ClassStats,
    sigma2: f64,
    mu: &DVector<f64>,
    omega: &DMatrix<f64>,
    class: usize,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    let precision = &stats.xtx / sigma2 + omega;
    let shift = &stats.xty / sigma2 + omega * mu;
    sample_mv_normal_canonical(precision, &shift, rng).ok_or(Error::SingularPrecision {
        class,
        count: stats.count,
    })
}

/// σ²_c given the previous β_c, then β_c given the new σ²_c, for every class.
/// Empty classes draw from their (proper) prior.
pub fn draw_component_params(
    state: &mut GibbsState,
    data: &ObservationSet,
    hyper: &Hyperpriors,
    rng: &mut RngStream,
) -> Result<()> {
    let order = class_order(state, hyper);
    let stats: Vec<ClassStats> = (0..state.params.n_components())
        .map(|c| class_stats(state, data, c))
        .collect();
    for &c in &order {
        let (shape, scale) = variance_posterior(&stats[c], hyper.ig_shape[c], hyper.ig_scale[c]);
        if !(shape > 0.0 && scale > 0.0) {
            return Err(Error::ImproperPosterior { class: c, shape, scale });
        }
        let sigma2 = sample_inverse_gamma(shape, scale, rng)?;
        let beta = draw_coefficients(&stats[c], sigma2, &hyper.mu[c], &hyper.omega[c], c, rng)?;
        state.params.components[c] = ComponentParams { beta, sigma2 };
    }
    Ok(())
}

/// Redraws every label from Pr(z_i = c) ∝ π_c φ((ỹ_i − x_i'β_c)/σ_c)/σ_c and
/// returns the class counts. With one class this is a no-op.
pub fn draw_class_labels(
    state: &mut GibbsState,
    data: &ObservationSet,
    hyper: &Hyperpriors,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    let c = state.params.n_components();
    if c == 1 {
        state.labels.iter_mut().for_each(|z| *z = 0);
        return Ok(vec![data.n()]);
    }
    let order = class_order(state, hyper);
    let means: Vec<DVector<f64>> = state
        .params
        .components
        .iter()
        .map(|comp| data.x() * &comp.beta)
        .collect();
    let sigmas: Vec<f64> = state.params.components.iter().map(ComponentParams::sigma).collect();
    let offsets: Vec<f64> = state
        .params
        .weights
        .iter()
        .zip(&sigmas)
        .map(|(w, s)| w.ln() - s.ln())
        .collect();
    let mut log_probs = vec![0.0; c];
    let mut probs = vec![0.0; c];
    let mut counts = vec![0; c];
    for i in 0..data.n() {
        let y = state.augmented[i];
        for k in 0..c {
            log_probs[k] = offsets[k] + std_normal::ln_pdf((y - means[k][i]) / sigmas[k]);
        }
        let max = log_probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::ZeroLikelihood { observation: i });
        }
        for k in 0..c {
            probs[k] = (log_probs[k] - max).exp();
        }
        let z = sample_categorical_ordered(&probs, &order, rng)?;
        state.labels[i] = z;
        counts[z] += 1;
    }
    Ok(counts)
}

/// π | z ~ Dirichlet(α_1 + n_1, …, α_C + n_C).
pub fn draw_mixture_weights(counts: &[usize], hyper: &Hyperpriors, rng: &mut RngStream) -> Result<Vec<f64>> {
    let order: Vec<usize> = (0..counts.len()).collect();
    draw_weights_ordered(counts, hyper, &order, rng)
}

fn draw_weights_ordered(
    counts: &[usize],
    hyper: &Hyperpriors,
    order: &[usize],
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if counts.len() != hyper.n_components() {
        return Err(Error::InvalidSettings(format!(
            "{} class counts for {} classes",
            counts.len(),
            hyper.n_components()
        )));
    }
    if counts.len() == 1 {
        return Ok(vec![1.0]);
    }
    let concentrations: Vec<f64> = counts
        .iter()
        .zip(&hyper.alpha)
        .map(|(&n, a)| a + n as f64)
        .collect();
    sample_dirichlet_ordered(&concentrations, order, rng)
}

/// One full sweep; returns the class counts after the label step.
pub fn sweep(state: &mut GibbsState, data: &ObservationSet, hyper: &Hyperpriors, rng: &mut RngStream) -> Result<Vec<usize>> {
    draw_missing_outcomes(state, data, rng)?;
    draw_component_params(state, data, hyper, rng)?;
    let counts = draw_class_labels(state, data, hyper, rng)?;
    let order = class_order(state, hyper);
    state.params.weights = draw_weights_ordered(&counts, hyper, &order, rng)?;
    Ok(counts)
}

/// A class whose weight stayed below 1/(10n) for a long stretch.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseNote {
    pub class: usize,
    /// Iteration at which the run of small weights reached its threshold.
    pub iteration: usize,
}

const COLLAPSE_RUN: usize = 500;

/// Retained draws of one chain with their pointwise log-likelihoods.
#[derive(Debug, Clone)]
pub struct DrawStore {
    pub draws: Vec<MixtureParams>,
    /// `loglik[s][i]`: ln ℓ_i at draw s, on the observed censored data.
    pub loglik: Vec<Vec<f64>>,
    pub settings: ChainSettings,
    pub collapse: Vec<CollapseNote>,
}

impl DrawStore {
    /// Builds a store from draws, evaluating the pointwise log-likelihoods.
    pub fn from_draws(draws: Vec<MixtureParams>, data: &ObservationSet, settings: ChainSettings) -> Result<Self> {
        let loglik = draws
            .iter()
            .map(|d| dataset_loglik(data, d).map(|l| l.pointwise))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            draws,
            loglik,
            settings,
            collapse: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn n_obs(&self) -> usize {
        self.loglik.first().map_or(0, Vec::len)
    }

    pub fn n_components(&self) -> usize {
        self.draws.first().map_or(self.settings.n_components, MixtureParams::n_components)
    }

    pub fn seed(&self) -> u64 {
        self.settings.seed
    }

    /// Total log-likelihood at every retained draw.
    pub fn loglik_totals(&self) -> Vec<f64> {
        self.loglik.iter().map(|row| row.iter().sum()).collect()
    }

    /// Componentwise posterior mean after relabeling each draw by `rule`.
    pub fn posterior_mean(&self, rule: RelabelRule) -> Result<MixtureParams> {
        let first = self
            .draws
            .first()
            .ok_or_else(|| Error::InvalidData("empty draw store".into()))?;
        let c = first.n_components();
        let p = first.dim();
        let s = self.len() as f64;
        let mut betas = vec![DVector::zeros(p); c];
        let mut sigma2 = vec![0.0; c];
        let mut weights = vec![0.0; c];
        for draw in &self.draws {
            let d = draw.permuted(&relabel_permutation(draw, rule));
            for k in 0..c {
                betas[k] += &d.components[k].beta;
                sigma2[k] += d.components[k].sigma2;
                weights[k] += d.weights[k];
            }
        }
        let total: f64 = weights.iter().sum();
        let components = betas
            .into_iter()
            .zip(sigma2)
            .map(|(b, v)| ComponentParams { beta: b / s, sigma2: v / s })
            .collect();
        MixtureParams::new(components, weights.iter().map(|w| w / total).collect())
    }
}

/// Runs a chain from the initial state of [`init_state`].
pub fn run_chain(
    data: &ObservationSet,
    hyper: &Hyperpriors,
    settings: &ChainSettings,
    rng: &mut RngStream,
) -> Result<DrawStore> {
    let state = init_state(data, settings, hyper, rng)?;
    run_chain_from(data, hyper, settings, state, rng)
}

/// Runs a chain from a caller-supplied state.
pub fn run_chain_from(
    data: &ObservationSet,
    hyper: &Hyperpriors,
    settings: &ChainSettings,
    mut state: GibbsState,
    rng: &mut RngStream,
) -> Result<DrawStore> {
    settings.validate()?;
    check_dimensions(data, hyper, settings)?;
    state.check_invariants(data)?;
    let c = settings.n_components;
    let collapse_floor = 1.0 / (10.0 * data.n() as f64);
    let mut small_run = vec![0usize; c];
    let mut collapse = Vec::new();
    let mut draws = Vec::with_capacity(settings.retained());
    let mut loglik = Vec::with_capacity(settings.retained());
    for iteration in 1..=settings.n_draws {
        sweep(&mut state, data, hyper, rng).map_err(|e| e.at_iteration(iteration))?;
        if cfg!(debug_assertions) {
            state.check_invariants(data).map_err(|e| e.at_iteration(iteration))?;
        }
        for k in 0..c {
            if state.params.weights[k] < collapse_floor {
                small_run[k] += 1;
                if small_run[k] == COLLAPSE_RUN {
                    log::warn!("component {} collapsed by iteration {iteration}", k + 1);
                    collapse.push(CollapseNote { class: k, iteration });
                }
            } else {
                small_run[k] = 0;
            }
        }
        if settings.keeps(iteration) {
            let ll = dataset_loglik(data, &state.params).map_err(|e| e.at_iteration(iteration))?;
            draws.push(state.params.clone());
            loglik.push(ll.pointwise);
        }
    }
    Ok(DrawStore {
        draws,
        loglik,
        settings: settings.clone(),
        collapse,
    })
}

/// Rule for ordering the components of each draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RelabelRule {
    #[default]
    None,
    /// Ascending first coefficient (the intercept when column 0 is ones).
    ByIntercept,
    /// Ascending mixture weight.
    ByWeight,
}

impl std::str::FromStr for RelabelRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "intercept" | "order-by-intercept" => Ok(Self::ByIntercept),
            "weight" | "order-by-weight" => Ok(Self::ByWeight),
            other => Err(Error::InvalidSettings(format!("unknown relabel rule `{other}`"))),
        }
    }
}

/// Permutation that sorts one draw's components by `rule`; ties keep their
/// original order.
pub fn relabel_permutation(draw: &MixtureParams, rule: RelabelRule) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..draw.n_components()).collect();
    match rule {
        RelabelRule::None => {}
        RelabelRule::ByIntercept => {
            perm.sort_by(|&a, &b| draw.components[a].beta[0].total_cmp(&draw.components[b].beta[0]))
        }
        RelabelRule::ByWeight => perm.sort_by(|&a, &b| draw.weights[a].total_cmp(&draw.weights[b])),
    }
    perm
}

/// Reorders every draw's components; log-likelihoods are carried over as is.
pub fn relabel_draws(store: &DrawStore, rule: RelabelRule) -> DrawStore {
    DrawStore {
        draws: store
            .draws
            .iter()
            .map(|d| d.permuted(&relabel_permutation(d, rule)))
            .collect(),
        loglik: store.loglik.clone(),
        settings: store.settings.clone(),
        collapse: store.collapse.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intercept_data(y: Vec<f64>, lower: f64, upper: f64) -> ObservationSet {
        let n = y.len();
        ObservationSet::with_common_bounds(y, DMatrix::from_element(n, 1, 1.0), lower, upper).unwrap()
    }

    fn state_for(data: &ObservationSet, params: MixtureParams) -> GibbsState {
        GibbsState {
            params,
            labels: vec![0; data.n()],
            augmented: data.y().to_vec(),
        }
    }

    fn comp(b: &[f64], s2: f64) -> ComponentParams {
        ComponentParams::new(DVector::from_row_slice(b), s2).unwrap()
    }

    #[test]
    fn settings_retained_counts() {
        assert_eq!(ChainSettings::new(1, 2000, 1000, 1, 0).unwrap().retained(), 1000);
        assert_eq!(ChainSettings::new(2, 100_000, 50_000, 100, 0).unwrap().retained(), 500);
        assert!(ChainSettings::new(1, 10, 10, 1, 0).is_err());
        assert!(ChainSettings::new(1, 10, 0, 0, 0).is_err());
    }

    #[test]
    fn default_init() {
        let data = intercept_data(vec![0.0, 1.0, 2.0, 3.0], 0.0, 7.5);
        let settings = ChainSettings::new(3, 10, 5, 1, 1).unwrap();
        let hyper = Hyperpriors::simulation_default(3, 1);
        let s1 = init_state(&data, &settings, &hyper, &mut RngStream::new(3)).unwrap();
        let s2 = init_state(&data, &settings, &hyper, &mut RngStream::new(3)).unwrap();
        assert_eq!(s1, s2);
        for comp in &s1.params.components {
            assert_eq!(comp.beta, DVector::zeros(1));
            assert_eq!(comp.sigma2, 1.0);
        }
        assert!(s1.augmented[0] < 0.0);
        s1.check_invariants(&data).unwrap();

        let one = ChainSettings::new(1, 10, 5, 1, 1).unwrap();
        let h1 = Hyperpriors::isotropic(1, 1, 7.0, 0.0, 1.0, 1.0, 1.0).unwrap();
        let s = init_state(&data, &one, &h1, &mut RngStream::new(3)).unwrap();
        assert!(s.labels.iter().all(|&z| z == 0));
        assert_eq!(s.params.weights, vec![1.0]);
    }

    #[test]
    fn perturbed_least_squares_init() {
        let x = DMatrix::from_fn(50, 2, |i, j| if j == 0 { 1.0 } else { i as f64 / 10.0 });
        let y: Vec<f64> = (0..50).map(|i| 1.0 + 2.0 * i as f64 / 10.0 + if i % 2 == 0 { 0.1 } else { -0.1 }).collect();
        let data = ObservationSet::with_common_bounds(y, x, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        let settings = ChainSettings::new(2, 10, 5, 1, 1)
            .unwrap()
            .with_init(InitStrategy::PerturbedLeastSquares);
        let hyper = Hyperpriors::simulation_default(2, 2);
        let s = init_state(&data, &settings, &hyper, &mut RngStream::new(4)).unwrap();
        assert_eq!(s.params.weights, vec![0.5, 0.5]);
        for comp in &s.params.components {
            assert!(comp.beta[0] >= 0.8 * 0.99 && comp.beta[0] <= 1.2 * 1.01);
            assert!(comp.beta[1] >= 1.6 * 0.99 && comp.beta[1] <= 2.4 * 1.01);
        }
        assert_ne!(s.params.components[0], s.params.components[1]);
    }

    #[test]
    fn uncensored_data_never_augmented() {
        let data = intercept_data(vec![0.5, 1.0, 2.0], 0.0, 7.5);
        let mut state = state_for(&data, MixtureParams::single(comp(&[1.0], 1.0)));
        let mut rng = RngStream::new(5);
        for _ in 0..100 {
            draw_missing_outcomes(&mut state, &data, &mut rng).unwrap();
            assert_eq!(state.augmented, data.y());
        }
    }

    #[test]
    fn left_censored_augmentation_mean() {
        let data = intercept_data(vec![0.0], 0.0, 7.5);
        let mut state = state_for(&data, MixtureParams::single(comp(&[0.0], 1.0)));
        let mut rng = RngStream::new(6);
        let mut total = 0.0;
        for _ in 0..100_000 {
            draw_missing_outcomes(&mut state, &data, &mut rng).unwrap();
            total += state.augmented[0];
        }
        // -φ(0)/Φ(0)
        assert!((total / 1e5 + 0.797_884_6).abs() < 0.01);
    }

    #[test]
    fn right_censored_augmentation_exceeds_bound() {
        let data = intercept_data(vec![7.5, 7.5], 0.0, 7.5);
        let mut state = state_for(&data, MixtureParams::single(comp(&[2.0], 1.0)));
        let mut rng = RngStream::new(7);
        for _ in 0..10_000 {
            draw_missing_outcomes(&mut state, &data, &mut rng).unwrap();
            assert!(state.augmented.iter().all(|&a| a > 7.5));
        }
    }

    #[test]
    fn inverse_gamma_shape_from_counts() {
        let stats = ClassStats {
            count: 10,
            xtx: DMatrix::zeros(1, 1),
            xty: DVector::zeros(1),
            ssr: 4.0,
        };
        assert_eq!(variance_posterior(&stats, 0.0, 0.0), (5.0, 2.0));
        assert_eq!(variance_posterior(&stats, 1.0, 3.0), (6.0, 5.0));
    }

    /// With a flat prior and σ² held fixed, β draws average to the least
    /// squares fit of the class's augmented outcomes.
    #[test]
    fn flat_prior_beta_draws_center_on_least_squares() {
        let x = DMatrix::from_fn(30, 2, |i, j| if j == 0 { 1.0 } else { (i as f64 * 0.37).sin() * 3.0 });
        let y = DVector::from_fn(30, |i, _| 0.5 + 1.5 * x[(i, 1)] + (i as f64 * 1.3).cos());
        let ols = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * &y;
        let stats = ClassStats {
            count: 30,
            xtx: x.tr_mul(&x),
            xty: x.tr_mul(&y),
            ssr: 0.0,
        };
        let (mu, omega) = (DVector::zeros(2), DMatrix::zeros(2, 2));
        let mut rng = RngStream::new(8);
        let sweeps = 10_000;
        let mut acc = DVector::zeros(2);
        for _ in 0..sweeps {
            acc += draw_coefficients(&stats, 0.8, &mu, &omega, 0, &mut rng).unwrap();
        }
        acc /= sweeps as f64;
        let cov = (x.transpose() * &x).try_inverse().unwrap() * 0.8;
        for j in 0..2 {
            let se = (cov[(j, j)] / sweeps as f64).sqrt();
            assert!((acc[j] - ols[j]).abs() < 4.0 * se, "coef {j}");
        }
    }

    #[test]
    fn empty_class_with_proper_prior_draws_from_prior() {
        let data = intercept_data(vec![1.0, 2.0], f64::NEG_INFINITY, f64::INFINITY);
        let hyper = Hyperpriors::isotropic(2, 1, 1.0, 3.0, 4.0, 3.0, 2.0).unwrap();
        let params = MixtureParams::new(vec![comp(&[0.0], 1.0), comp(&[0.0], 1.0)], vec![0.5, 0.5]).unwrap();
        let mut state = state_for(&data, params);
        let mut rng = RngStream::new(9);
        let n = 40_000;
        let (mut beta_sum, mut beta_sq, mut var_sum) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            draw_component_params(&mut state, &data, &hyper, &mut rng).unwrap();
            let c = &state.params.components[1];
            beta_sum += c.beta[0];
            beta_sq += c.beta[0] * c.beta[0];
            var_sum += c.sigma2;
        }
        let mean = beta_sum / n as f64;
        let var = beta_sq / n as f64 - mean * mean;
        assert!((mean - 3.0).abs() < 0.01, "{mean}");
        assert!((var - 0.25).abs() < 0.01, "{var}");
        // IG(3, 2) has mean 1.
        assert!((var_sum / n as f64 - 1.0).abs() < 0.02);
    }

    #[test]
    fn improper_prior_and_empty_class_aborts() {
        let data = intercept_data(vec![1.0, 2.0], f64::NEG_INFINITY, f64::INFINITY);
        let hyper = Hyperpriors::isotropic(2, 1, 1.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        let params = MixtureParams::new(vec![comp(&[0.0], 1.0), comp(&[0.0], 1.0)], vec![0.5, 0.5]).unwrap();
        let mut state = state_for(&data, params);
        let err = draw_component_params(&mut state, &data, &hyper, &mut RngStream::new(1)).unwrap_err();
        assert!(matches!(err, Error::ImproperPosterior { class: 1, .. }), "{err}");
    }

    #[test]
    fn flat_prior_with_too_few_points_is_singular() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
        let data = ObservationSet::with_common_bounds(vec![1.0], x, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        let hyper = Hyperpriors::isotropic(1, 2, 1.0, 0.0, 0.0, 1.0, 1.0).unwrap();
        let mut state = state_for(&data, MixtureParams::single(comp(&[0.0, 0.0], 1.0)));
        let err = draw_component_params(&mut state, &data, &hyper, &mut RngStream::new(1)).unwrap_err();
        assert!(matches!(err, Error::SingularPrecision { class: 0, count: 1 }), "{err}");
    }

    #[test]
    fn identical_components_give_prior_label_probabilities() {
        let data = intercept_data(vec![0.3; 1], f64::NEG_INFINITY, f64::INFINITY);
        let params = MixtureParams::new(vec![comp(&[1.0], 2.0), comp(&[1.0], 2.0)], vec![0.3, 0.7]).unwrap();
        let hyper = Hyperpriors::simulation_default(2, 1);
        let mut state = state_for(&data, params);
        let mut rng = RngStream::new(10);
        let n = 200_000;
        let mut ones = 0;
        for _ in 0..n {
            ones += draw_class_labels(&mut state, &data, &hyper, &mut rng).unwrap()[0];
        }
        assert!((ones as f64 / n as f64 - 0.3).abs() < 0.005);
    }

    #[test]
    fn label_probabilities_follow_residuals() {
        // Standardized residuals 0 and 2 with equal σ and weights.
        let data = intercept_data(vec![0.0], f64::NEG_INFINITY, f64::INFINITY);
        let params = MixtureParams::new(vec![comp(&[0.0], 1.0), comp(&[-2.0], 1.0)], vec![0.5, 0.5]).unwrap();
        let hyper = Hyperpriors::simulation_default(2, 1);
        let mut state = state_for(&data, params);
        let expected = std_normal::pdf(0.0) / (std_normal::pdf(0.0) + std_normal::pdf(2.0));
        assert!((expected - 0.8808).abs() < 1e-4);
        let mut rng = RngStream::new(11);
        let n = 200_000;
        let mut first = 0;
        for _ in 0..n {
            first += draw_class_labels(&mut state, &data, &hyper, &mut rng).unwrap()[0];
        }
        assert!((first as f64 / n as f64 - expected).abs() < 0.004);
    }

    #[test]
    fn single_class_label_step_is_noop() {
        let data = intercept_data(vec![0.0, 1.0], f64::NEG_INFINITY, f64::INFINITY);
        let hyper = Hyperpriors::simulation_default(1, 1);
        let mut state = state_for(&data, MixtureParams::single(comp(&[0.0], 1.0)));
        let mut rng = RngStream::new(12);
        let before = rng.clone();
        let counts = draw_class_labels(&mut state, &data, &hyper, &mut rng).unwrap();
        assert_eq!(counts, vec![2]);
        assert_eq!(rng.next_u64_for_test(), before.clone().next_u64_for_test());
    }

    #[test]
    fn weight_draws() {
        let hyper = Hyperpriors::isotropic(2, 1, 1.0, 0.0, 1.0, 1.0, 1.0).unwrap();
        let mut rng = RngStream::new(13);
        let n = 100_000;
        let first: f64 = (0..n)
            .map(|_| draw_mixture_weights(&[10, 0], &hyper, &mut rng).unwrap()[0])
            .sum::<f64>()
            / n as f64;
        assert!((first - 11.0 / 12.0).abs() < 0.01);

        let prior = Hyperpriors::isotropic(3, 1, 2.0, 0.0, 1.0, 1.0, 1.0).unwrap();
        let mean0: f64 = (0..n)
            .map(|_| draw_mixture_weights(&[0, 0, 0], &prior, &mut rng).unwrap()[0])
            .sum::<f64>()
            / n as f64;
        assert!((mean0 - 1.0 / 3.0).abs() < 0.01);

        // α_c = 1/C: concentration n_c + 1/C, so an empty class has mean
        // (1/4) / (n + 1) here.
        let sim = Hyperpriors::simulation_default(4, 1);
        let w: f64 = (0..n)
            .map(|_| draw_mixture_weights(&[3, 3, 3, 0], &sim, &mut rng).unwrap()[3])
            .sum::<f64>()
            / n as f64;
        assert!((w - 0.25 / 10.0).abs() < 0.003, "{w}");
    }

    #[test]
    fn relabel_by_intercept() {
        let draw = MixtureParams::new(
            vec![comp(&[4.0], 1.0), comp(&[0.75], 1.0), comp(&[2.5], 1.0)],
            vec![0.4, 0.25, 0.35],
        )
        .unwrap();
        let perm = relabel_permutation(&draw, RelabelRule::ByIntercept);
        let sorted = draw.permuted(&perm);
        let intercepts: Vec<f64> = sorted.components.iter().map(|c| c.beta[0]).collect();
        assert_eq!(intercepts, vec![0.75, 2.5, 4.0]);
        assert_eq!(sorted.weights, vec![0.25, 0.35, 0.4]);
        assert_eq!(relabel_permutation(&draw, RelabelRule::None), vec![0, 1, 2]);
        assert_eq!(relabel_permutation(&draw, RelabelRule::ByWeight), vec![1, 2, 0]);
    }

    #[test]
    fn relabel_ties_keep_original_order() {
        let draw = MixtureParams::new(vec![comp(&[1.0], 1.0), comp(&[1.0], 2.0)], vec![0.5, 0.5]).unwrap();
        assert_eq!(relabel_permutation(&draw, RelabelRule::ByIntercept), vec![0, 1]);
        assert_eq!(relabel_permutation(&draw, RelabelRule::ByWeight), vec![0, 1]);
    }

    #[test]
    fn hyperprior_validation() {
        assert!(Hyperpriors::isotropic(2, 1, 0.0, 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(Hyperpriors::isotropic(2, 1, 1.0, 0.0, -1.0, 1.0, 1.0).is_err());
        assert!(Hyperpriors::isotropic(2, 1, 1.0, 0.0, 0.0, -1.0, 1.0).is_err());
        assert!(Hyperpriors::isotropic(2, 3, 1.0, 0.0, 0.0, 0.0, 0.0).is_ok());
    }

    impl RngStream {
        fn next_u64_for_test(&mut self) -> u64 {
            rand::RngCore::next_u64(self)
        }
    }
}
