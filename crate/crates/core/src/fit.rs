//! Model-fit criteria computed from a chain's pointwise log-likelihoods:
//! AIC, BIC, DIC, WAIC and PSIS-LOO, all on the deviance scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{DrawStore, RelabelRule};
use crate::model::{dataset_loglik, MixtureParams, ObservationSet};
use crate::numeric::{log_sum_exp, mean, variance};

/// Pareto shape above which importance-sampling estimates are unreliable.
pub const PARETO_K_THRESHOLD: f64 = 0.7;

/// Number of free parameters: (2 + p)·C − 1.
pub fn n_parameters(p: usize, n_components: usize) -> usize {
    (2 + p) * n_components - 1
}

pub fn aic_value(loglik: f64, k: usize) -> f64 {
    2.0 * k as f64 - 2.0 * loglik
}

pub fn bic_value(loglik: f64, k: usize, n: usize) -> f64 {
    k as f64 * (n as f64).ln() - 2.0 * loglik
}

fn require_draws(store: &DrawStore, min: usize) -> Result<()> {
    if store.len() < min {
        return Err(Error::InvalidData(format!(
            "criterion needs at least {min} retained draws, store has {}",
            store.len()
        )));
    }
    if store.loglik.iter().any(|row| row.len() != store.n_obs()) {
        return Err(Error::InvalidData("ragged log-likelihood matrix".into()));
    }
    Ok(())
}

/// Index of the retained draw with the highest total log-likelihood; the
/// first one wins ties.
pub fn plug_in_index(store: &DrawStore) -> Result<usize> {
    require_draws(store, 1)?;
    let totals = store.loglik_totals();
    let mut best = 0;
    for (s, &t) in totals.iter().enumerate() {
        if t > totals[best] {
            best = s;
        }
    }
    Ok(best)
}

/// The retained draw maximizing the data log-likelihood.
pub fn plug_in_estimate(store: &DrawStore) -> Result<MixtureParams> {
    Ok(store.draws[plug_in_index(store)?].clone())
}

fn plug_in_loglik(store: &DrawStore) -> Result<f64> {
    let s = plug_in_index(store)?;
    Ok(store.loglik[s].iter().sum())
}

pub fn aic(store: &DrawStore, data: &ObservationSet) -> Result<f64> {
    let k = n_parameters(data.p(), store.n_components());
    Ok(aic_value(plug_in_loglik(store)?, k))
}

pub fn bic(store: &DrawStore, data: &ObservationSet) -> Result<f64> {
    let k = n_parameters(data.p(), store.n_components());
    Ok(bic_value(plug_in_loglik(store)?, k, data.n()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dic {
    pub dic: f64,
    /// Effective number of parameters D̄ − D(θ̄).
    pub p_d: f64,
    pub mean_deviance: f64,
    pub deviance_at_mean: f64,
    /// Set when p_D < 0.
    pub negative_penalty: bool,
}

/// DIC from per-draw deviances and the deviance at the posterior mean.
pub fn dic_value(deviances: &[f64], deviance_at_mean: f64) -> Dic {
    let mean_deviance = mean(deviances);
    let p_d = mean_deviance - deviance_at_mean;
    Dic {
        dic: mean_deviance + p_d,
        p_d,
        mean_deviance,
        deviance_at_mean,
        negative_penalty: p_d < 0.0,
    }
}

/// DIC with θ̄ the componentwise posterior mean after ordering every draw's
/// components by intercept.
pub fn dic(store: &DrawStore, data: &ObservationSet) -> Result<Dic> {
    require_draws(store, 2)?;
    let deviances: Vec<f64> = store.loglik_totals().iter().map(|t| -2.0 * t).collect();
    let theta_bar = store.posterior_mean(RelabelRule::ByIntercept)?;
    let at_mean = -2.0 * dataset_loglik(data, &theta_bar)?.total;
    let result = dic_value(&deviances, at_mean);
    if result.negative_penalty {
        log::warn!("DIC effective parameter count is negative ({:.3})", result.p_d);
    }
    Ok(result)
}

fn columns(loglik: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = loglik.first().map_or(0, Vec::len);
    (0..n).map(|i| loglik.iter().map(|row| row[i]).collect()).collect()
}

/// √n times the standard deviation of the pointwise contributions.
fn pointwise_se(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    (values.len() as f64 * variance(values)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waic {
    pub waic: f64,
    /// Σ_i Var_s(ll_is), divisor S − 1.
    pub p_waic: f64,
    /// Log pointwise predictive density Σ_i log mean_s exp(ll_is).
    pub lppd: f64,
    pub se: f64,
}

/// WAIC from an S×n pointwise log-likelihood matrix.
pub fn waic_from_matrix(loglik: &[Vec<f64>]) -> Waic {
    let ln_s = (loglik.len() as f64).ln();
    let mut lppd = 0.0;
    let mut p_waic = 0.0;
    let mut contributions = Vec::new();
    for col in columns(loglik) {
        let lp = log_sum_exp(&col) - ln_s;
        let v = variance(&col);
        lppd += lp;
        p_waic += v;
        contributions.push(-2.0 * (lp - v));
    }
    Waic {
        waic: -2.0 * (lppd - p_waic),
        p_waic,
        lppd,
        se: pointwise_se(&contributions),
    }
}

pub fn waic(store: &DrawStore) -> Result<Waic> {
    require_draws(store, 2)?;
    Ok(waic_from_matrix(&store.loglik))
}

/// Pareto-smoothed log importance weights for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PsisWeights {
    /// Unnormalized smoothed log weights, maximum at most 0.
    pub log_weights: Vec<f64>,
    /// Estimated Pareto shape; NaN when no tail was fitted.
    pub k: f64,
    /// True when the tail could not be fitted and raw ratios are used.
    pub fallback: bool,
}

/// Tail length ⌈min(0.2·S, 3·√S)⌉.
pub fn psis_tail_length(s: usize) -> usize {
    let s = s as f64;
    (0.2 * s).min(3.0 * s.sqrt()).ceil() as usize
}

/// Generalized Pareto fit to positive exceedances sorted ascending, by the
/// Zhang–Stephens profile-posterior method with a weakly informative
/// adjustment of k towards 0.5. Returns (k, σ).
pub fn gpd_fit(x: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n == 0 {
        return None;
    }
    const PRIOR: f64 = 3.0;
    let m = 30 + (n as f64).sqrt().floor() as usize;
    let xstar = x[((n as f64 / 4.0 + 0.5).floor() as usize).max(1) - 1];
    let x_max = x[n - 1];
    if !(xstar > 0.0 && x_max > 0.0) {
        return None;
    }
    let theta: Vec<f64> = (1..=m)
        .map(|j| 1.0 / x_max + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / PRIOR / xstar)
        .collect();
    let profile: Vec<f64> = theta
        .iter()
        .map(|&t| {
            let k = x.iter().map(|&xi| (-t * xi).ln_1p()).sum::<f64>() / n as f64;
            n as f64 * ((-t / k).ln() - k - 1.0)
        })
        .collect();
    let norm = log_sum_exp(&profile);
    if !norm.is_finite() {
        return None;
    }
    let theta_hat: f64 = theta
        .iter()
        .zip(&profile)
        .map(|(t, l)| t * (l - norm).exp())
        .sum();
    let k = x.iter().map(|&xi| (-theta_hat * xi).ln_1p()).sum::<f64>() / n as f64;
    let sigma = -k / theta_hat;
    if !(sigma.is_finite() && sigma > 0.0 && k.is_finite()) {
        return None;
    }
    let k = (n as f64 * k + 10.0 * 0.5) / (n as f64 + 10.0);
    Some((k, sigma))
}

/// Quantile function of the generalized Pareto with location 0.
pub fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k == 0.0 {
        -sigma * (-p).ln_1p()
    } else {
        sigma * (-k * (-p).ln_1p()).exp_m1() / k
    }
}

/// Pareto smoothing of log importance ratios.
pub fn psis_smooth(log_ratios: &[f64]) -> PsisWeights {
    let s = log_ratios.len();
    let max = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lw: Vec<f64> = log_ratios.iter().map(|r| r - max).collect();
    let tail_len = psis_tail_length(s);
    if tail_len < 5 || tail_len >= s {
        return PsisWeights {
            log_weights: lw,
            k: f64::NAN,
            fallback: true,
        };
    }
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| lw[a].total_cmp(&lw[b]).then(a.cmp(&b)));
    let tail_ids = &order[s - tail_len..];
    let cutoff = lw[order[s - tail_len - 1]];
    let tail: Vec<f64> = tail_ids.iter().map(|&j| lw[j]).collect();
    if tail[tail_len - 1] - tail[0] <= f64::EPSILON / 100.0 {
        // Flat tail: nothing to smooth.
        return PsisWeights {
            log_weights: lw,
            k: 0.0,
            fallback: false,
        };
    }
    let exp_cutoff = cutoff.exp();
    let exceed: Vec<f64> = tail.iter().map(|t| t.exp() - exp_cutoff).collect();
    let Some((k, sigma)) = gpd_fit(&exceed) else {
        return PsisWeights {
            log_weights: lw,
            k: f64::NAN,
            fallback: true,
        };
    };
    for (rank, &j) in tail_ids.iter().enumerate() {
        let p = (rank as f64 + 0.5) / tail_len as f64;
        lw[j] = (gpd_quantile(p, k, sigma) + exp_cutoff).ln();
    }
    for w in &mut lw {
        if *w > 0.0 {
            *w = 0.0;
        }
    }
    PsisWeights {
        log_weights: lw,
        k,
        fallback: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Loo {
    /// −2·Σ elpd_i.
    pub loo: f64,
    pub p_loo: f64,
    pub se: f64,
    pub elpd_pointwise: Vec<f64>,
    pub pareto_k: Vec<f64>,
    /// Observations with k̂ above the threshold.
    pub high_k: Vec<usize>,
    /// Observations whose tail fit failed (raw importance sampling used).
    pub fallback: Vec<usize>,
}

pub fn psis_loo_from_matrix(loglik: &[Vec<f64>]) -> Loo {
    let s = loglik.len();
    if s < 100 {
        log::warn!("PSIS-LOO with only {s} draws");
    }
    let ln_s = (s as f64).ln();
    let mut elpd_pointwise = Vec::new();
    let mut pareto_k = Vec::new();
    let mut high_k = Vec::new();
    let mut fallback = Vec::new();
    let mut lppd = 0.0;
    for (i, col) in columns(loglik).into_iter().enumerate() {
        let ratios: Vec<f64> = col.iter().map(|l| -l).collect();
        let psis = psis_smooth(&ratios);
        let weighted: Vec<f64> = psis.log_weights.iter().zip(&col).map(|(w, l)| w + l).collect();
        elpd_pointwise.push(log_sum_exp(&weighted) - log_sum_exp(&psis.log_weights));
        lppd += log_sum_exp(&col) - ln_s;
        if psis.k > PARETO_K_THRESHOLD {
            high_k.push(i);
        }
        if psis.fallback {
            fallback.push(i);
        }
        pareto_k.push(psis.k);
    }
    if !high_k.is_empty() {
        log::warn!("{} observations with Pareto k above {PARETO_K_THRESHOLD}", high_k.len());
    }
    let elpd: f64 = elpd_pointwise.iter().sum();
    let deviance: Vec<f64> = elpd_pointwise.iter().map(|e| -2.0 * e).collect();
    Loo {
        loo: -2.0 * elpd,
        p_loo: lppd - elpd,
        se: pointwise_se(&deviance),
        elpd_pointwise,
        pareto_k,
        high_k,
        fallback,
    }
}

pub fn psis_loo(store: &DrawStore) -> Result<Loo> {
    require_draws(store, 1)?;
    Ok(psis_loo_from_matrix(&store.loglik))
}

/// All criteria for one fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub label: String,
    pub n_components: usize,
    pub n_parameters: usize,
    pub n_obs: usize,
    pub n_draws: usize,
    pub max_loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub dic: f64,
    pub p_dic: f64,
    pub waic: f64,
    pub p_waic: f64,
    pub loo: f64,
    pub p_loo: f64,
    pub loo_se: f64,
    pub pareto_k: Vec<f64>,
    /// Observation numbers (from 1) with k̂ above the threshold.
    pub high_pareto_k: Vec<usize>,
    /// Observation numbers (from 1) that used raw importance sampling.
    pub pareto_fallback: Vec<usize>,
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn criterion(&self, c: Criterion) -> f64 {
        match c {
            Criterion::Aic => self.aic,
            Criterion::Bic => self.bic,
            Criterion::Dic => self.dic,
            Criterion::Waic => self.waic,
            Criterion::Loo => self.loo,
        }
    }
}

pub fn fit_report(label: impl Into<String>, store: &DrawStore, data: &ObservationSet) -> Result<FitReport> {
    require_draws(store, 2)?;
    if store.n_obs() != data.n() {
        return Err(Error::InvalidData(format!(
            "draw store has {} observations, data has {}",
            store.n_obs(),
            data.n()
        )));
    }
    let k = n_parameters(data.p(), store.n_components());
    let max_loglik = plug_in_loglik(store)?;
    let d = dic(store, data)?;
    let w = waic(store)?;
    let l = psis_loo(store)?;
    let mut warnings = Vec::new();
    if d.negative_penalty {
        warnings.push(format!("negative DIC penalty {:.4}", d.p_d));
    }
    if store.len() < 100 {
        warnings.push(format!("only {} draws for PSIS-LOO", store.len()));
    }
    if !l.high_k.is_empty() {
        warnings.push(format!(
            "{} observations with Pareto k above {PARETO_K_THRESHOLD}",
            l.high_k.len()
        ));
    }
    if !l.fallback.is_empty() {
        warnings.push(format!(
            "{} observations fell back to raw importance sampling",
            l.fallback.len()
        ));
    }
    for note in &store.collapse {
        warnings.push(format!(
            "component {} collapsed by iteration {}",
            note.class + 1,
            note.iteration
        ));
    }
    Ok(FitReport {
        label: label.into(),
        n_components: store.n_components(),
        n_parameters: k,
        n_obs: data.n(),
        n_draws: store.len(),
        max_loglik,
        aic: aic_value(max_loglik, k),
        bic: bic_value(max_loglik, k, data.n()),
        dic: d.dic,
        p_dic: d.p_d,
        waic: w.waic,
        p_waic: w.p_waic,
        loo: l.loo,
        p_loo: l.p_loo,
        loo_se: l.se,
        pareto_k: l.pareto_k,
        high_pareto_k: l.high_k.iter().map(|i| i + 1).collect(),
        pareto_fallback: l.fallback.iter().map(|i| i + 1).collect(),
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Aic,
    Bic,
    Dic,
    Waic,
    Loo,
}

impl Criterion {
    pub const ALL: [Criterion; 5] = [Self::Aic, Self::Bic, Self::Dic, Self::Waic, Self::Loo];

    pub fn name(self) -> &'static str {
        match self {
            Self::Aic => "AIC",
            Self::Bic => "BIC",
            Self::Dic => "DIC",
            Self::Waic => "WAIC",
            Self::Loo => "LOO",
        }
    }
}

/// Index of the best (smallest) report for every criterion; the first
/// report wins ties.
pub fn compare(reports: &[FitReport]) -> Result<Vec<(Criterion, usize)>> {
    if reports.is_empty() {
        return Err(Error::InvalidData("no fit reports to compare".into()));
    }
    Ok(Criterion::ALL
        .iter()
        .map(|&c| {
            let mut best = 0;
            for (j, r) in reports.iter().enumerate() {
                if r.criterion(c) < reports[best].criterion(c) {
                    best = j;
                }
            }
            (c, best)
        })
        .collect())
}
