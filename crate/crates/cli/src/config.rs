//! Flat `key = value` run configuration with command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use tobitmix::io::{parse_init, parse_key_values, Bound};
use tobitmix::{InitStrategy, Treatment};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    File(PathBuf),
    Dgp(u8),
}

/// How group contrasts average over the posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContrastMethod {
    /// Evaluate at the posterior-mean parameters (components ordered by
    /// intercept before averaging).
    PosteriorMean,
    /// Average the quantity itself over draws.
    DrawAverage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: Option<DataSource>,
    pub outcome: String,
    pub covariates: Vec<String>,
    pub intercept: bool,
    pub lower: Bound,
    pub upper: Bound,
    pub n: usize,
    pub components: usize,
    pub draws: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub init: InitStrategy,
    pub prior_alpha: Option<f64>,
    pub prior_mean: f64,
    pub prior_tau: f64,
    pub prior_a: f64,
    pub prior_b: f64,
    pub out: PathBuf,
    pub stores: Vec<PathBuf>,
    pub store: Option<PathBuf>,
    pub query: Option<String>,
    pub column: Option<String>,
    pub treatment: Option<Treatment>,
    pub contrast: ContrastMethod,
    pub grid_points: usize,
    pub grid_min: Option<f64>,
    pub grid_max: Option<f64>,
    pub dgps: Vec<u8>,
    pub component_counts: Vec<usize>,
    pub replicates: usize,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            source: None,
            outcome: "y".into(),
            covariates: Vec::new(),
            intercept: true,
            lower: Bound::Value(f64::NEG_INFINITY),
            upper: Bound::Value(f64::INFINITY),
            n: 2000,
            components: 1,
            draws: 2000,
            burn_in: 1000,
            thin: 1,
            seed: 1,
            init: InitStrategy::ZeroOne,
            prior_alpha: None,
            prior_mean: 0.0,
            prior_tau: 10.0,
            prior_a: 0.0,
            prior_b: 0.0,
            out: PathBuf::from("out"),
            stores: Vec::new(),
            store: None,
            query: None,
            column: None,
            treatment: None,
            contrast: ContrastMethod::PosteriorMean,
            grid_points: 201,
            grid_min: None,
            grid_max: None,
            dgps: vec![1, 2, 3, 4],
            component_counts: vec![1, 2, 3, 4],
            replicates: 20,
            threads: None,
        }
    }
}

fn bad(key: &str, value: &str, expected: &str) -> CliError {
    CliError::Config(format!("`{key} = {value}`: expected {expected}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str, expected: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| bad(key, value, expected))
}

fn list<T: std::str::FromStr>(key: &str, value: &str, expected: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s, expected))
        .collect()
}

fn fmt_f64(v: f64) -> String {
    v.to_string()
}

fn fmt_list<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Loads an optional config file, then applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            for (k, v) in parse_key_values(&text)? {
                cfg.set(&k, &v)?;
            }
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override `{o}` is not key=value")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            k if k.starts_with("store.") => {}
            "data" => self.source = if value.is_empty() { None } else { Some(DataSource::File(value.into())) },
            "dgp" => {
                self.source = if value.is_empty() {
                    None
                } else {
                    Some(DataSource::Dgp(num(key, value, "a DGP id 1-4")?))
                }
            }
            "outcome" => self.outcome = value.into(),
            "covariates" => self.covariates = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect(),
            "intercept" => self.intercept = num(key, value, "true or false")?,
            "lower" => self.lower = Bound::Value(num(key, value, "a number or -inf")?),
            "upper" => self.upper = Bound::Value(num(key, value, "a number or inf")?),
            "lower_column" => self.lower = Bound::Column(value.into()),
            "upper_column" => self.upper = Bound::Column(value.into()),
            "n" => self.n = num(key, value, "a positive integer")?,
            "components" => self.components = num(key, value, "a positive integer")?,
            "draws" => self.draws = num(key, value, "a positive integer")?,
            "burn_in" => self.burn_in = num(key, value, "a nonnegative integer")?,
            "thin" => self.thin = num(key, value, "a positive integer")?,
            "seed" => self.seed = num(key, value, "an unsigned integer")?,
            "init" => self.init = parse_init(value)?,
            "prior.alpha" => {
                self.prior_alpha = if value == "auto" { None } else { Some(num(key, value, "a positive number or auto")?) }
            }
            "prior.mean" => self.prior_mean = num(key, value, "a number")?,
            "prior.tau" => self.prior_tau = num(key, value, "a nonnegative number")?,
            "prior.a" => self.prior_a = num(key, value, "a nonnegative number")?,
            "prior.b" => self.prior_b = num(key, value, "a nonnegative number")?,
            "out" => self.out = value.into(),
            "stores" => self.stores = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect(),
            "store" => self.store = Some(value.into()),
            "query" => self.query = Some(value.into()),
            "column" => self.column = Some(value.into()),
            "treatment" => {
                self.treatment = if value == "auto" { None } else { Some(value.parse()?) }
            }
            "contrast" => {
                self.contrast = match value {
                    "posterior-mean" => ContrastMethod::PosteriorMean,
                    "draw-average" => ContrastMethod::DrawAverage,
                    _ => return Err(bad(key, value, "posterior-mean or draw-average")),
                }
            }
            "grid_points" => self.grid_points = num(key, value, "an integer of at least 2")?,
            "grid_min" => self.grid_min = Some(num(key, value, "a number")?),
            "grid_max" => self.grid_max = Some(num(key, value, "a number")?),
            "dgps" => self.dgps = list(key, value, "comma-separated DGP ids")?,
            "component_counts" => self.component_counts = list(key, value, "comma-separated integers")?,
            "replicates" => self.replicates = num(key, value, "an integer of at least 2")?,
            "threads" => {
                self.threads = if value == "auto" { None } else { Some(num(key, value, "a positive integer or auto")?) }
            }
            _ => return Err(CliError::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.prior_tau >= 0.0) {
            return Err(CliError::Config(format!("prior.tau = {} must be nonnegative", self.prior_tau)));
        }
        if self.components == 0 {
            return Err(CliError::Config("components must be at least 1".into()));
        }
        if self.n == 0 {
            return Err(CliError::Config("n must be at least 1".into()));
        }
        if self.grid_points < 2 {
            return Err(CliError::Config("grid_points must be at least 2".into()));
        }
        Ok(())
    }

    /// The settings that determine a fit, in a form [`RunConfig::set`] reads
    /// back.
    pub fn fit_pairs(&self) -> Vec<(String, String)> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: String| pairs.push((k.to_string(), v));
        match &self.source {
            Some(DataSource::File(p)) => push("data", p.display().to_string()),
            Some(DataSource::Dgp(d)) => {
                push("dgp", d.to_string());
                push("n", self.n.to_string());
            }
            None => {}
        }
        push("outcome", self.outcome.clone());
        push("covariates", self.covariates.join(","));
        push("intercept", self.intercept.to_string());
        match &self.lower {
            Bound::Value(v) => push("lower", fmt_f64(*v)),
            Bound::Column(c) => push("lower_column", c.clone()),
        }
        match &self.upper {
            Bound::Value(v) => push("upper", fmt_f64(*v)),
            Bound::Column(c) => push("upper_column", c.clone()),
        }
        push("components", self.components.to_string());
        push("draws", self.draws.to_string());
        push("burn_in", self.burn_in.to_string());
        push("thin", self.thin.to_string());
        push("seed", self.seed.to_string());
        push(
            "init",
            match self.init {
                InitStrategy::ZeroOne => "zero-one".into(),
                InitStrategy::PerturbedLeastSquares => "perturbed-least-squares".into(),
            },
        );
        push("prior.alpha", self.prior_alpha.map_or("auto".into(), fmt_f64));
        push("prior.mean", fmt_f64(self.prior_mean));
        push("prior.tau", fmt_f64(self.prior_tau));
        push("prior.a", fmt_f64(self.prior_a));
        push("prior.b", fmt_f64(self.prior_b));
        push("out", self.out.display().to_string());
        pairs
    }

    pub fn study_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("dgps".into(), fmt_list(&self.dgps)),
            ("component_counts".into(), fmt_list(&self.component_counts)),
            ("replicates".into(), self.replicates.to_string()),
            ("n".into(), self.n.to_string()),
            ("draws".into(), self.draws.to_string()),
            ("burn_in".into(), self.burn_in.to_string()),
            ("thin".into(), self.thin.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("grid_points".into(), self.grid_points.to_string()),
        ]
    }
}
