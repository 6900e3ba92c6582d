use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use tobitmix::fit::{compare, fit_report, FitReport};
use tobitmix::io::{
    self, data_digest, format_key_values, read_exported, read_observations, write_ame, write_band, write_observations,
    write_quantities, write_recovery, write_store, write_text, DataSchema, RecoveryRow,
};
use tobitmix::numeric::{mean, variance};
use tobitmix::posterior::{
    average_marginal_effect, density_band, expected_outcome, expected_outcome_interior, l1_distance, linear_grid,
    prob_at_lower, DensityBand,
};
use tobitmix::simulate::{generate, replicate_study, StudySettings};
use tobitmix::{
    builtin_dgp, run_chain, ChainSettings, DrawStore, Hyperpriors, MixtureParams, ObservationSet, RelabelRule,
    RngStream, Treatment,
};

use crate::config::{ContrastMethod, DataSource, RunConfig};
use crate::CliError;

/// Name of the data copy kept next to a draw store.
pub const STORE_DATA_FILE: &str = "data.csv";

/// Stream reserved for generating data from a built-in DGP.
const DATA_STREAM: u64 = u64::MAX;

fn simulated(id: u8, cfg: &RunConfig) -> Result<(ObservationSet, Vec<String>), CliError> {
    let spec = builtin_dgp(id)?.with_n(cfg.n);
    let data = generate(&spec, &mut RngStream::with_stream(cfg.seed, DATA_STREAM))?;
    Ok((data, vec![io::INTERCEPT_NAME.to_string(), "x".to_string()]))
}

fn load_data(cfg: &RunConfig) -> Result<(ObservationSet, Vec<String>), CliError> {
    match &cfg.source {
        Some(DataSource::File(path)) => {
            if cfg.covariates.is_empty() && !cfg.intercept {
                return Err(CliError::Config("no covariates and no intercept".into()));
            }
            let schema = DataSchema {
                outcome: cfg.outcome.clone(),
                covariates: cfg.covariates.clone(),
                intercept: cfg.intercept,
                lower: cfg.lower.clone(),
                upper: cfg.upper.clone(),
            };
            let ingested = read_observations(path, &schema)?;
            if ingested.dropped > 0 {
                eprintln!("note: dropped {} rows with missing values", ingested.dropped);
            }
            Ok((ingested.data, ingested.columns))
        }
        Some(DataSource::Dgp(id)) => simulated(*id, cfg),
        None => Err(CliError::Config("set either `data = <path>` or `dgp = <1-4>`".into())),
    }
}

/// Writes a simulated data set and its generating parameters.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let Some(DataSource::Dgp(id)) = cfg.source else {
        return Err(CliError::Config("simulate needs `dgp = <1-4>`".into()));
    };
    let (data, _) = simulated(id, cfg)?;
    let spec = builtin_dgp(id)?.with_n(cfg.n);
    std::fs::create_dir_all(&cfg.out)?;
    // The intercept column is implied; the file carries only x.
    let x = nalgebra::DMatrix::from_fn(data.n(), 1, |i, _| data.x()[(i, 1)]);
    let exported = ObservationSet::new(data.y().to_vec(), x, data.lower().to_vec(), data.upper().to_vec())?;
    write_observations(&cfg.out.join("data.csv"), &exported, &["x".to_string()])?;
    let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let truth = vec![
        ("dgp".to_string(), id.to_string()),
        ("n".to_string(), cfg.n.to_string()),
        ("seed".to_string(), cfg.seed.to_string()),
        ("intercepts".to_string(), list(&spec.intercepts)),
        ("slopes".to_string(), list(&spec.slopes)),
        ("sigmas".to_string(), list(&spec.sigmas)),
        ("weights".to_string(), list(&spec.weights)),
        ("covariate_variance".to_string(), spec.covariate_variance.to_string()),
        ("lower".to_string(), spec.lower.to_string()),
        ("upper".to_string(), spec.upper.to_string()),
    ];
    write_text(&cfg.out.join("truth.txt"), &format_key_values(&truth))?;
    let (l, u) = data.censored_count();
    println!(
        "wrote {} observations ({l} left-censored, {u} right-censored) to {}",
        data.n(),
        cfg.out.join("data.csv").display()
    );
    Ok(())
}

pub fn hyperpriors(cfg: &RunConfig, p: usize) -> Result<Hyperpriors, CliError> {
    let c = cfg.components;
    Ok(Hyperpriors::isotropic(
        c,
        p,
        cfg.prior_alpha.unwrap_or(1.0 / c as f64),
        cfg.prior_mean,
        cfg.prior_tau,
        cfg.prior_a,
        cfg.prior_b,
    )?)
}

/// Runs one chain and writes the draw store plus a copy of the data.
pub fn cmd_fit(cfg: &RunConfig) -> Result<DrawStore, CliError> {
    let (data, columns) = load_data(cfg)?;
    let hyper = hyperpriors(cfg, data.p())?;
    let settings = ChainSettings::new(cfg.components, cfg.draws, cfg.burn_in, cfg.thin, cfg.seed)?.with_init(cfg.init);
    let store = run_chain(&data, &hyper, &settings, &mut RngStream::new(cfg.seed))?;
    write_store(&cfg.out, &store, &data, cfg.fit_pairs())?;
    write_observations(&cfg.out.join(STORE_DATA_FILE), &data, &columns)?;
    for note in &store.collapse {
        eprintln!(
            "note: component {} collapsed (weight below 1/(10n) for 500 iterations by iteration {})",
            note.class + 1,
            note.iteration
        );
    }
    let totals = store.loglik_totals();
    println!(
        "C = {}: {} retained draws, mean log-likelihood {:.4}, written to {}",
        cfg.components,
        store.len(),
        mean(&totals),
        cfg.out.display()
    );
    Ok(store)
}

/// Loads a store and the data it was fitted to, checking the digest.
pub fn load_store(dir: &Path) -> Result<(DrawStore, ObservationSet, Vec<String>), CliError> {
    let (store, meta) = io::read_store(dir)?;
    let ingested = read_exported(&dir.join(STORE_DATA_FILE))?;
    if data_digest(&ingested.data) != meta.data_digest {
        return Err(CliError::Config(format!(
            "{} does not match the data the store was fitted to",
            dir.join(STORE_DATA_FILE).display()
        )));
    }
    Ok((store, ingested.data, ingested.columns))
}

fn store_label(dir: &Path, index: usize) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .filter(|s| !s.is_empty() && s != "." && s != "..")
        .unwrap_or_else(|| format!("model{}", index + 1))
}

/// Fit criteria for every store plus a comparison table.
pub fn cmd_metrics(cfg: &RunConfig) -> Result<Vec<FitReport>, CliError> {
    if cfg.stores.is_empty() {
        return Err(CliError::Config("metrics needs `stores = <dir>,<dir>,...`".into()));
    }
    let mut reports = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    for (k, dir) in cfg.stores.iter().enumerate() {
        let (store, data, _) = load_store(dir)?;
        let mut label = store_label(dir, k);
        if labels.contains(&label) {
            label = format!("{label}_{}", k + 1);
        }
        labels.push(label.clone());
        reports.push(fit_report(label, &store, &data)?);
    }
    std::fs::create_dir_all(&cfg.out)?;
    let best = compare(&reports)?;
    let mut w = csv::Writer::from_path(cfg.out.join("metrics.csv")).map_err(tobitmix::Error::from)?;
    let mut header = vec!["criterion".to_string()];
    header.extend(labels.iter().cloned());
    header.push("best".into());
    w.write_record(&header).map_err(tobitmix::Error::from)?;
    let mut table = String::new();
    let _ = writeln!(table, "{}", header.join("\t"));
    for (criterion, b) in &best {
        let mut rec = vec![criterion.name().to_string()];
        rec.extend(reports.iter().map(|r| io::fmt_num(r.criterion(*criterion))));
        rec.push(labels[*b].clone());
        let _ = writeln!(
            table,
            "{}\t{}\t{}",
            criterion.name(),
            reports.iter().map(|r| format!("{:.2}", r.criterion(*criterion))).collect::<Vec<_>>().join("\t"),
            labels[*b]
        );
        w.write_record(&rec).map_err(tobitmix::Error::from)?;
    }
    w.flush()?;
    for r in &reports {
        let json = serde_json::to_string_pretty(r).map_err(tobitmix::Error::from)?;
        write_text(&cfg.out.join(format!("report_{}.json", r.label)), &json)?;
        for warning in &r.warnings {
            eprintln!("note ({}): {warning}", r.label);
        }
    }
    print!("{table}");
    Ok(reports)
}

fn column_index(columns: &[String], name: &str) -> Result<usize, CliError> {
    columns
        .iter()
        .position(|c| c == name)
        .ok_or_else(|| CliError::Config(format!("column `{name}` not in the fitted design ({})", columns.join(", "))))
}

fn is_binary(data: &ObservationSet, j: usize) -> bool {
    data.x().column(j).iter().all(|&v| v == 0.0 || v == 1.0)
}

fn common_bounds(cfg: &RunConfig, data: &ObservationSet) -> Result<(f64, f64), CliError> {
    let (l, u) = (data.lower()[0], data.upper()[0]);
    if data.lower().iter().all(|&v| v == l) && data.upper().iter().all(|&v| v == u) {
        return Ok((l, u));
    }
    match (&cfg.lower, &cfg.upper) {
        (io::Bound::Value(l), io::Bound::Value(u)) if l.is_finite() || u.is_finite() => Ok((*l, *u)),
        _ => Err(CliError::Config(
            "bounds differ across observations; set `lower` and `upper` for the summary".into(),
        )),
    }
}

/// Posterior summaries of a fitted store.
pub fn cmd_summarize(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let dir = cfg
        .store
        .as_ref()
        .ok_or_else(|| CliError::Config("summarize needs `store = <dir>`".into()))?;
    let query = cfg
        .query
        .as_deref()
        .ok_or_else(|| CliError::Config("summarize needs `query = ame | group-contrast | density`".into()))?;
    let (store, data, columns) = load_store(dir)?;
    std::fs::create_dir_all(&cfg.out)?;
    let mut written = Vec::new();
    match query {
        "ame" => {
            let name = cfg
                .column
                .as_deref()
                .ok_or_else(|| CliError::Config("query ame needs `column`".into()))?;
            let j = column_index(&columns, name)?;
            let treatment = cfg.treatment.unwrap_or(if is_binary(&data, j) {
                Treatment::Binary
            } else {
                Treatment::Continuous
            });
            let ame = average_marginal_effect(&store, &data, j, treatment)?;
            let path = cfg.out.join(format!("ame_{name}.csv"));
            write_ame(&path, &ame)?;
            println!(
                "AME of {name} ({treatment:?}): mean {:.4}, sd {:.4} over {} draws",
                mean(&ame),
                variance(&ame).sqrt(),
                ame.len()
            );
            written.push(path);
        }
        "group-contrast" => {
            let name = cfg
                .column
                .as_deref()
                .ok_or_else(|| CliError::Config("query group-contrast needs `column`".into()))?;
            let j = column_index(&columns, name)?;
            let (l, u) = common_bounds(cfg, &data)?;
            let rows = group_contrast(&store, &data, j, name, l, u, cfg.contrast)?;
            let path = cfg.out.join(format!("contrast_{name}.csv"));
            write_quantities(&path, &rows)?;
            for (q, v) in &rows {
                println!("{q}\t{v:.6}");
            }
            written.push(path);
        }
        "density" => {
            let (l, u) = common_bounds(cfg, &data)?;
            let y_min = data.y().iter().copied().fold(f64::INFINITY, f64::min);
            let y_max = data.y().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = cfg.grid_min.unwrap_or(if l.is_finite() { l } else { y_min });
            let hi = cfg.grid_max.unwrap_or(if u.is_finite() { u } else { y_max });
            let grid = linear_grid(lo, hi, cfg.grid_points);
            let x0 = data.covariate_means();
            let band = draw_density_band(&store, &x0, &grid, l, u)?;
            let path = cfg.out.join("density.csv");
            write_band(&path, &band, None)?;
            let masses = vec![
                ("mass_at_lower".to_string(), mean(&store.draws.iter().map(|p| prob_at_lower(&x0, p, l)).collect::<Vec<_>>())),
                (
                    "mass_at_upper".to_string(),
                    mean(&store.draws.iter().map(|p| tobitmix::posterior::prob_at_upper(&x0, p, u)).collect::<Vec<_>>()),
                ),
            ];
            let mpath = cfg.out.join("density_masses.csv");
            write_quantities(&mpath, &masses)?;
            println!("density at the covariate means written to {}", path.display());
            written.push(path);
            written.push(mpath);
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown query `{other}`; expected ame, group-contrast or density"
            )))
        }
    }
    Ok(written)
}

/// Per-draw censored densities at `x0`, summarized pointwise.
fn draw_density_band(store: &DrawStore, x0: &DVector<f64>, grid: &[f64], l: f64, u: f64) -> Result<DensityBand, CliError> {
    let curves = store
        .draws
        .iter()
        .map(|p| {
            grid.iter()
                .map(|&v| tobitmix::model::censored_density(v, x0, l, u, p).map(|d| d.density))
                .collect::<tobitmix::Result<Vec<_>>>()
        })
        .collect::<tobitmix::Result<Vec<_>>>()?;
    if curves.len() == 1 {
        let c = &curves[0];
        return Ok(DensityBand {
            grid: grid.to_vec(),
            mean: c.clone(),
            q05: c.clone(),
            q95: c.clone(),
        });
    }
    Ok(density_band(grid, &curves)?)
}

struct GroupValues {
    at_lower: f64,
    interior_mean: f64,
    mean: f64,
}

fn group_values(params: &[MixtureParams], x: &DVector<f64>, l: f64, u: f64) -> Result<GroupValues, CliError> {
    let mut p0 = Vec::new();
    let mut ei = Vec::new();
    let mut e = Vec::new();
    for p in params {
        p0.push(prob_at_lower(x, p, l));
        ei.push(expected_outcome_interior(x, p, l, u)?);
        e.push(expected_outcome(x, p, l, u)?);
    }
    Ok(GroupValues {
        at_lower: mean(&p0),
        interior_mean: mean(&ei),
        mean: mean(&e),
    })
}

/// The six rows: Pr(y = lower), E[y | interior] and E[y] for the group with
/// the binary column at 1, each followed by its difference from the group at
/// 0. Other covariates sit at their sample means.
pub fn group_contrast(
    store: &DrawStore,
    data: &ObservationSet,
    j: usize,
    name: &str,
    l: f64,
    u: f64,
    method: ContrastMethod,
) -> Result<Vec<(String, f64)>, CliError> {
    let params = match method {
        ContrastMethod::PosteriorMean => vec![store.posterior_mean(RelabelRule::ByIntercept)?],
        ContrastMethod::DrawAverage => store.draws.clone(),
    };
    let mut on = data.covariate_means();
    let mut off = on.clone();
    on[j] = 1.0;
    off[j] = 0.0;
    let g1 = group_values(&params, &on, l, u)?;
    let g0 = group_values(&params, &off, l, u)?;
    Ok(vec![
        (format!("Pr(y = lower | {name} = 1)"), g1.at_lower),
        (format!("Pr(y = lower | {name} = 1) - Pr(y = lower | {name} = 0)"), g1.at_lower - g0.at_lower),
        (format!("E[y | lower < y < upper, {name} = 1]"), g1.interior_mean),
        (
            format!("E[y | lower < y < upper, {name} = 1] - E[y | lower < y < upper, {name} = 0]"),
            g1.interior_mean - g0.interior_mean,
        ),
        (format!("E[y | {name} = 1]"), g1.mean),
        (format!("E[y | {name} = 1] - E[y | {name} = 0]"), g1.mean - g0.mean),
    ])
}

fn recovery_rows(fits: &[tobitmix::simulate::ReplicateFit], truth: &tobitmix::DgpSpec) -> Vec<RecoveryRow> {
    let mut rows = Vec::new();
    for f in fits {
        let matches = f.estimate.n_components() == truth.n_components();
        for (k, comp) in f.estimate.components.iter().enumerate() {
            let t = |v: &[f64]| if matches { v[k] } else { f64::NAN };
            for (parameter, estimate, tv) in [
                ("intercept", comp.beta[0], t(&truth.intercepts)),
                ("slope", comp.beta[1], t(&truth.slopes)),
                ("sigma", comp.sigma(), t(&truth.sigmas)),
                ("weight", f.estimate.weights[k], t(&truth.weights)),
            ] {
                rows.push(RecoveryRow {
                    replicate: f.replicate,
                    component: k,
                    parameter,
                    estimate,
                    truth: tv,
                });
            }
        }
    }
    rows
}

/// Replication study over DGPs and component counts; one directory per cell.
pub fn cmd_replicate(cfg: &RunConfig) -> Result<Vec<tobitmix::simulate::CellResult>, CliError> {
    let settings = StudySettings {
        dgp_ids: cfg.dgps.clone(),
        component_counts: cfg.component_counts.clone(),
        replicates: cfg.replicates,
        n: cfg.n,
        n_draws: cfg.draws,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        seed: cfg.seed,
        grid_points: cfg.grid_points,
        threads: cfg.threads,
    };
    let cells = replicate_study(&settings)?;
    for cell in &cells {
        let dir = cfg.out.join(format!("dgp{}", cell.dgp)).join(format!("C{}", cell.n_components));
        std::fs::create_dir_all(&dir)?;
        let mut summary = cfg.study_pairs();
        summary.push(("succeeded".into(), cell.fits.len().to_string()));
        summary.push(("failed".into(), cell.failures.len().to_string()));
        if let Some(band) = &cell.band {
            write_band(&dir.join("band.csv"), band, Some(&cell.truth_curve))?;
            let l1 = l1_distance(&cell.grid, &band.mean, &cell.truth_curve);
            summary.push(("l1_mean_vs_truth".into(), io::fmt_num(l1)));
        }
        write_recovery(&dir.join("recovery.csv"), &recovery_rows(&cell.fits, &cell.truth))?;
        let collapsed = cell.fits.iter().filter(|f| !f.collapse.is_empty()).count();
        summary.push(("replicates_with_collapse".into(), collapsed.to_string()));
        for (r, e) in &cell.failures {
            summary.push((format!("failure.{}", r + 1), e.clone()));
        }
        write_text(&dir.join("summary.txt"), &format_key_values(&summary))?;
        println!(
            "DGP {} C = {}: {} succeeded, {} failed -> {}",
            cell.dgp,
            cell.n_components,
            cell.fits.len(),
            cell.failures.len(),
            dir.display()
        );
    }
    Ok(cells)
}
