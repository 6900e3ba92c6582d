//! Synthetic data from three-component censored mixtures of regressions on
//! one normal covariate, and the replication harness that fits them.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::distributions::{sample_categorical, RngStream};
use crate::error::{Error, Result};
use crate::gibbs::{run_chain, ChainSettings, CollapseNote, Hyperpriors, RelabelRule};
use crate::model::{censored_density, ComponentParams, MixtureParams, ObservationSet};
use crate::posterior::{density_band, linear_grid, posterior_mean_density, DensityBand};

/// y* = β₀_c + β₁_c·x + σ_c·ε with x ~ N(0, covariate_variance), observed as
/// min(max(lower, y*), upper).
#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    pub intercepts: Vec<f64>,
    pub slopes: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub weights: Vec<f64>,
    pub covariate_variance: f64,
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        let c = self.weights.len();
        if c == 0 || self.intercepts.len() != c || self.slopes.len() != c || self.sigmas.len() != c {
            return Err(Error::InvalidSettings("DGP vectors differ in length".into()));
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-10 || self.weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidSettings(format!("DGP weights {:?}", self.weights)));
        }
        if self.sigmas.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidSettings(format!("DGP sigmas {:?}", self.sigmas)));
        }
        if !(self.covariate_variance > 0.0 && self.covariate_variance.is_finite()) {
            return Err(Error::InvalidSettings("covariate variance must be positive".into()));
        }
        if !(self.lower < self.upper) {
            return Err(Error::InvalidSettings(format!("bounds ({}, {})", self.lower, self.upper)));
        }
        if self.n == 0 {
            return Err(Error::InvalidSettings("DGP needs at least one observation".into()));
        }
        Ok(())
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    /// True parameters with design [1, x].
    pub fn params(&self) -> MixtureParams {
        MixtureParams {
            components: (0..self.n_components())
                .map(|c| ComponentParams {
                    beta: DVector::from_vec(vec![self.intercepts[c], self.slopes[c]]),
                    sigma2: self.sigmas[c] * self.sigmas[c],
                })
                .collect(),
            weights: self.weights.clone(),
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }
}

/// The four simulation designs; `id` in 1..=4.
pub fn builtin_dgp(id: u8) -> Result<DgpSpec> {
    let intercepts = match id {
        1 => vec![0.75, 2.5, 4.0],
        2 => vec![1.95, 2.5, 2.5],
        3 => vec![0.25, 2.5, 6.5],
        4 => vec![0.25, 0.5, 1.5],
        _ => return Err(Error::InvalidSettings(format!("unknown DGP {id}; expected 1 to 4"))),
    };
    Ok(DgpSpec {
        intercepts,
        slopes: vec![-0.1, 0.2, -0.4],
        sigmas: vec![0.25, 0.2, 1.0],
        weights: vec![0.25, 0.35, 0.4],
        covariate_variance: 4.0,
        lower: 0.0,
        upper: 7.5,
        n: 5000,
    })
}

/// Generated data with the hidden classes and latent outcomes.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: ObservationSet,
    pub classes: Vec<usize>,
    pub latent: Vec<f64>,
}

pub fn generate_with_latent(spec: &DgpSpec, rng: &mut RngStream) -> Result<Simulated> {
    spec.validate()?;
    let sd_x = spec.covariate_variance.sqrt();
    let mut classes = Vec::with_capacity(spec.n);
    let mut latent = Vec::with_capacity(spec.n);
    let mut xs = Vec::with_capacity(spec.n);
    let mut y = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let c = sample_categorical(&spec.weights, rng)?;
        let x = sd_x * rng.std_normal();
        let star = spec.intercepts[c] + spec.slopes[c] * x + spec.sigmas[c] * rng.std_normal();
        classes.push(c);
        latent.push(star);
        xs.push(x);
        y.push(star.max(spec.lower).min(spec.upper));
    }
    let design = DMatrix::from_fn(spec.n, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
    Ok(Simulated {
        data: ObservationSet::with_common_bounds(y, design, spec.lower, spec.upper)?,
        classes,
        latent,
    })
}

pub fn generate(spec: &DgpSpec, rng: &mut RngStream) -> Result<ObservationSet> {
    generate_with_latent(spec, rng).map(|s| s.data)
}

/// Settings of a replication study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySettings {
    pub dgp_ids: Vec<u8>,
    pub component_counts: Vec<usize>,
    pub replicates: usize,
    /// Observations per data set.
    pub n: usize,
    pub n_draws: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub grid_points: usize,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl StudySettings {
    /// 20 replicates of 2,000 observations, 2,000 draws with 1,000 burn-in.
    pub fn desk(dgp_ids: Vec<u8>, component_counts: Vec<usize>, seed: u64) -> Self {
        Self {
            dgp_ids,
            component_counts,
            replicates: 20,
            n: 2000,
            n_draws: 2000,
            burn_in: 1000,
            thin: 1,
            seed,
            grid_points: 751,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::InvalidSettings("a study needs at least 2 replicates".into()));
        }
        if self.dgp_ids.is_empty() || self.component_counts.is_empty() {
            return Err(Error::InvalidSettings("no DGPs or component counts".into()));
        }
        for &d in &self.dgp_ids {
            builtin_dgp(d)?;
        }
        if self.grid_points < 2 {
            return Err(Error::InvalidSettings("density grid needs at least 2 points".into()));
        }
        ChainSettings::new(1, self.n_draws, self.burn_in, self.thin, self.seed)?;
        Ok(())
    }
}

/// Stream id for a (DGP, C, replicate) triple; C = 0 addresses the data.
fn stream_id(dgp: u8, c: usize, replicate: usize) -> u64 {
    ((dgp as u64) << 48) | ((c as u64) << 32) | replicate as u64
}

/// Outcome of one replicate within a cell.
#[derive(Debug, Clone)]
pub struct ReplicateFit {
    pub replicate: usize,
    /// Posterior-mean continuous density at x = 0 on the cell grid.
    pub curve: Vec<f64>,
    /// Posterior mean after ordering components by intercept.
    pub estimate: MixtureParams,
    pub collapse: Vec<CollapseNote>,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub dgp: u8,
    pub n_components: usize,
    pub truth: DgpSpec,
    pub grid: Vec<f64>,
    /// True censored continuous density at x = 0.
    pub truth_curve: Vec<f64>,
    /// None when fewer than two replicates succeeded.
    pub band: Option<DensityBand>,
    pub fits: Vec<ReplicateFit>,
    pub failures: Vec<(usize, String)>,
}

fn fit_replicate(
    spec: &DgpSpec,
    dgp: u8,
    c: usize,
    replicate: usize,
    settings: &StudySettings,
    grid: &[f64],
) -> Result<ReplicateFit> {
    let mut data_rng = RngStream::with_stream(settings.seed, stream_id(dgp, 0, replicate));
    let data = generate(spec, &mut data_rng)?;
    let chain = ChainSettings::new(c, settings.n_draws, settings.burn_in, settings.thin, settings.seed)?;
    let hyper = Hyperpriors::simulation_default(c, 2);
    let mut rng = RngStream::with_stream(settings.seed, stream_id(dgp, c, replicate));
    let store = run_chain(&data, &hyper, &chain, &mut rng)?;
    let x0 = DVector::from_vec(vec![1.0, 0.0]);
    Ok(ReplicateFit {
        replicate,
        curve: posterior_mean_density(&store, &x0, grid, spec.lower, spec.upper)?,
        estimate: store.posterior_mean(RelabelRule::ByIntercept)?,
        collapse: store.collapse,
    })
}

/// Fits every (DGP, C) cell on `replicates` simulated data sets. Data sets
/// are shared across C within a DGP; failed chains are counted and skipped.
pub fn replicate_study(settings: &StudySettings) -> Result<Vec<CellResult>> {
    settings.validate()?;
    let cells: Vec<(u8, usize)> = settings
        .dgp_ids
        .iter()
        .flat_map(|&d| settings.component_counts.iter().map(move |&c| (d, c)))
        .collect();
    let jobs: Vec<(u8, usize, usize)> = cells
        .iter()
        .flat_map(|&(d, c)| (0..settings.replicates).map(move |r| (d, c, r)))
        .collect();
    let specs: Vec<(u8, DgpSpec)> = settings
        .dgp_ids
        .iter()
        .map(|&d| builtin_dgp(d).map(|s| (d, s.with_n(settings.n))))
        .collect::<Result<_>>()?;
    let spec_of = |d: u8| &specs.iter().find(|(id, _)| *id == d).expect("validated").1;
    let grid = {
        let s = &specs[0].1;
        linear_grid(s.lower, s.upper, settings.grid_points)
    };
    let run = || -> Vec<Result<ReplicateFit>> {
        jobs.par_iter()
            .map(|&(d, c, r)| fit_replicate(spec_of(d), d, c, r, settings, &grid))
            .collect()
    };
    let outcomes = match settings.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidSettings(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let mut results = Vec::with_capacity(cells.len());
    let mut outcomes = outcomes.into_iter();
    for &(d, c) in &cells {
        let spec = spec_of(d).clone();
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let truth_params = spec.params();
        let truth_curve = grid
            .iter()
            .map(|&v| censored_density(v, &x0, spec.lower, spec.upper, &truth_params).map(|d| d.density))
            .collect::<Result<Vec<_>>>()?;
        let mut fits = Vec::new();
        let mut failures = Vec::new();
        for r in 0..settings.replicates {
            match outcomes.next().expect("one outcome per job") {
                Ok(fit) => fits.push(fit),
                Err(e) => {
                    log::warn!("DGP {d}, C = {c}, replicate {r}: {e}");
                    failures.push((r, e.to_string()));
                }
            }
        }
        let curves: Vec<Vec<f64>> = fits.iter().map(|f| f.curve.clone()).collect();
        let band = if curves.len() >= 2 {
            Some(density_band(&grid, &curves)?)
        } else {
            None
        };
        results.push(CellResult {
            dgp: d,
            n_components: c,
            truth: spec,
            grid: grid.clone(),
            truth_curve,
            band,
            fits,
            failures,
        });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Censoring;

    #[test]
    fn builtin_intercepts() {
        assert_eq!(builtin_dgp(1).unwrap().intercepts, vec![0.75, 2.5, 4.0]);
        assert_eq!(builtin_dgp(2).unwrap().intercepts, vec![1.95, 2.5, 2.5]);
        assert_eq!(builtin_dgp(4).unwrap().intercepts, vec![0.25, 0.5, 1.5]);
        assert!(builtin_dgp(0).is_err());
        assert!(builtin_dgp(5).is_err());
        let s = builtin_dgp(3).unwrap();
        assert_eq!(s.slopes, vec![-0.1, 0.2, -0.4]);
        assert_eq!(s.sigmas, vec![0.25, 0.2, 1.0]);
        assert_eq!(s.weights, vec![0.25, 0.35, 0.4]);
        assert_eq!((s.covariate_variance, s.lower, s.upper), (4.0, 0.0, 7.5));
    }

    #[test]
    fn unbounded_spec_has_no_censoring() {
        let mut spec = builtin_dgp(4).unwrap().with_n(5000);
        spec.lower = f64::NEG_INFINITY;
        spec.upper = f64::INFINITY;
        let data = generate(&spec, &mut RngStream::new(1)).unwrap();
        assert_eq!(data.censored_count(), (0, 0));
    }

    #[test]
    fn clamping_matches_latent() {
        let spec = builtin_dgp(3).unwrap().with_n(20_000);
        let sim = generate_with_latent(&spec, &mut RngStream::new(2)).unwrap();
        for i in 0..spec.n {
            let y = sim.data.y()[i];
            let star = sim.latent[i];
            assert!((0.0..=7.5).contains(&y));
            match sim.data.censoring(i) {
                Censoring::Left => assert!(star <= 0.0),
                Censoring::Right => assert!(star >= 7.5),
                Censoring::Interior => assert_eq!(y, star),
            }
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = builtin_dgp(1).unwrap().with_n(100);
        let a = generate(&spec, &mut RngStream::new(7)).unwrap();
        let b = generate(&spec, &mut RngStream::new(7)).unwrap();
        assert_eq!(a.y(), b.y());
        assert_eq!(a.x(), b.x());
    }

    #[test]
    fn class_frequencies_and_censoring() {
        let n = 1_000_000;
        let s1 = generate_with_latent(&builtin_dgp(1).unwrap().with_n(n), &mut RngStream::new(3)).unwrap();
        let mut counts = [0usize; 3];
        s1.classes.iter().for_each(|&c| counts[c] += 1);
        for (c, w) in counts.iter().zip([0.25, 0.35, 0.4]) {
            assert!((*c as f64 / n as f64 - w).abs() < 0.002);
        }
        let left1 = s1.data.censored_count().0 as f64 / n as f64;
        let s3 = generate(&builtin_dgp(3).unwrap().with_n(n), &mut RngStream::new(4)).unwrap();
        let left3 = s3.censored_count().0 as f64 / n as f64;
        assert!(left1 < 0.05, "{left1}");
        assert!(left3 > left1, "{left3} vs {left1}");
    }

    #[test]
    fn latent_mean_at_zero_covariate() {
        // Intercept-only moment: E[y* − β₁x] = Σ π_c β₀c.
        let spec = builtin_dgp(2).unwrap().with_n(200_000);
        let sim = generate_with_latent(&spec, &mut RngStream::new(5)).unwrap();
        let shifted: Vec<f64> = (0..spec.n)
            .map(|i| sim.latent[i] - spec.slopes[sim.classes[i]] * sim.data.x()[(i, 1)])
            .collect();
        let m = crate::numeric::mean(&shifted);
        let se = (crate::numeric::variance(&shifted) / spec.n as f64).sqrt();
        let truth: f64 = spec.weights.iter().zip(&spec.intercepts).map(|(w, b)| w * b).sum();
        assert!((m - truth).abs() < 3.0 * se, "{m} {truth} {se}");
    }

    #[test]
    fn smoke_study() {
        let mut s = StudySettings::desk(vec![1], vec![1, 2], 11);
        s.replicates = 2;
        s.n = 200;
        s.n_draws = 40;
        s.burn_in = 20;
        s.grid_points = 16;
        let cells = replicate_study(&s).unwrap();
        assert_eq!(cells.len(), 2);
        for cell in &cells {
            assert_eq!(cell.fits.len() + cell.failures.len(), 2);
            if cell.failures.is_empty() {
                let band = cell.band.as_ref().unwrap();
                assert_eq!(band.grid.len(), 16);
            }
        }
        let again = replicate_study(&s).unwrap();
        assert_eq!(cells[1].fits[0].curve, again[1].fits[0].curve);
    }
}
