//! File formats: observation CSVs, the draw store (draws, pointwise
//! log-likelihoods and a key-value sidecar) and summary tables.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gibbs::{ChainSettings, CollapseNote, DrawStore, InitStrategy};
use crate::model::{ComponentParams, MixtureParams, ObservationSet};
use crate::posterior::DensityBand;

/// File names inside a draw store directory.
pub const DRAWS_FILE: &str = "draws.csv";
pub const LOGLIK_FILE: &str = "loglik.csv";
pub const META_FILE: &str = "meta.txt";

/// 10 significant digits.
pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.9e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn parse_num(s: &str, row: usize, column: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        value: s.to_string(),
    })
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidSettings(format!("line {}: expected key = value, got `{line}`", k + 1)))?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

pub fn format_key_values(pairs: &[(String, String)]) -> String {
    pairs.iter().fold(String::new(), |mut s, (k, v)| {
        let _ = writeln!(s, "{k} = {v}");
        s
    })
}

/// A censoring bound: one value for every row or a per-row column.
#[derive(Debug, Clone, PartialEq)]
pub enum Bound {
    Value(f64),
    Column(String),
}

/// Which columns of a CSV make up an [`ObservationSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct DataSchema {
    pub outcome: String,
    pub covariates: Vec<String>,
    /// Prepend a column of ones.
    pub intercept: bool,
    pub lower: Bound,
    pub upper: Bound,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub data: ObservationSet,
    /// Design column names, `(intercept)` first when added.
    pub columns: Vec<String>,
    /// Rows skipped for missing values.
    pub dropped: usize,
}

pub const INTERCEPT_NAME: &str = "(intercept)";

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "na" | "." | "NaN" | "nan")
}

/// Reads a CSV with a header row. Rows with a missing value in any used
/// column are dropped and counted.
pub fn read_observations(path: &Path, schema: &DataSchema) -> Result<Ingested> {
    let file = fs::File::open(path)
        .map_err(|e| Error::InvalidData(format!("cannot open {}: {e}", path.display())))?;
    read_observations_from(file, schema)
}

pub fn read_observations_from(reader: impl std::io::Read, schema: &DataSchema) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidData(format!("column `{name}` not found in header")))
    };
    let y_col = index(&schema.outcome)?;
    let x_cols: Vec<usize> = schema.covariates.iter().map(|c| index(c)).collect::<Result<_>>()?;
    let bound_col = |b: &Bound| match b {
        Bound::Value(_) => Ok(None),
        Bound::Column(name) => index(name).map(Some),
    };
    let (l_col, u_col) = (bound_col(&schema.lower)?, bound_col(&schema.upper)?);
    let mut used = vec![(y_col, schema.outcome.as_str())];
    used.extend(x_cols.iter().zip(&schema.covariates).map(|(&i, n)| (i, n.as_str())));
    if let (Some(i), Bound::Column(n)) = (l_col, &schema.lower) {
        used.push((i, n.as_str()));
    }
    if let (Some(i), Bound::Column(n)) = (u_col, &schema.upper) {
        used.push((i, n.as_str()));
    }

    let mut y = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut x_rows: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if used.iter().any(|&(i, _)| record.get(i).map_or(true, is_missing)) {
            dropped += 1;
            continue;
        }
        let get = |i: usize, name: &str| parse_num(&record[i], row, name);
        let yi = get(y_col, &schema.outcome)?;
        let li = match (&schema.lower, l_col) {
            (Bound::Value(v), _) => *v,
            (Bound::Column(n), Some(i)) => get(i, n)?,
            _ => unreachable!(),
        };
        let ui = match (&schema.upper, u_col) {
            (Bound::Value(v), _) => *v,
            (Bound::Column(n), Some(i)) => get(i, n)?,
            _ => unreachable!(),
        };
        if !(li < ui) {
            return Err(Error::InvalidData(format!("row {row}: lower {li} is not below upper {ui}")));
        }
        if !(li <= yi && yi <= ui) {
            return Err(Error::InvalidData(format!(
                "row {row}: outcome {yi} outside [{li}, {ui}]"
            )));
        }
        let mut xr = Vec::with_capacity(x_cols.len() + 1);
        if schema.intercept {
            xr.push(1.0);
        }
        for (&i, name) in x_cols.iter().zip(&schema.covariates) {
            xr.push(get(i, name)?);
        }
        y.push(yi);
        lower.push(li);
        upper.push(ui);
        x_rows.push(xr);
    }
    if dropped > 0 {
        log::info!("dropped {dropped} rows with missing values");
    }
    if y.is_empty() {
        return Err(Error::InvalidData("no complete rows".into()));
    }
    let p = x_rows[0].len();
    let x = DMatrix::from_fn(y.len(), p, |i, j| x_rows[i][j]);
    let mut columns = Vec::with_capacity(p);
    if schema.intercept {
        columns.push(INTERCEPT_NAME.to_string());
    }
    columns.extend(schema.covariates.iter().cloned());
    Ok(Ingested {
        data: ObservationSet::new(y, x, lower, upper)?,
        columns,
        dropped,
    })
}

/// Writes `y, lower, upper, <covariates>` with shortest round-trip number
/// formatting, so reading back with [`exported_schema`] is exact.
pub fn write_observations(path: &Path, data: &ObservationSet, columns: &[String]) -> Result<()> {
    fs::write(path, observations_csv(data, columns)?)?;
    Ok(())
}

pub fn observations_csv(data: &ObservationSet, columns: &[String]) -> Result<Vec<u8>> {
    if columns.len() != data.p() {
        return Err(Error::InvalidData(format!(
            "{} column names for {} covariates",
            columns.len(),
            data.p()
        )));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["y".to_string(), "lower".to_string(), "upper".to_string()];
    header.extend(columns.iter().cloned());
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec = vec![data.y()[i].to_string(), data.lower()[i].to_string(), data.upper()[i].to_string()];
        rec.extend((0..data.p()).map(|j| data.x()[(i, j)].to_string()));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Schema matching [`write_observations`] output.
pub fn exported_schema(columns: &[String]) -> DataSchema {
    DataSchema {
        outcome: "y".into(),
        covariates: columns.to_vec(),
        intercept: false,
        lower: Bound::Column("lower".into()),
        upper: Bound::Column("upper".into()),
    }
}

/// Reads a file written by [`write_observations`], taking the covariate
/// names from its header.
pub fn read_exported(path: &Path) -> Result<Ingested> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::InvalidData(format!("cannot open {}: {e}", path.display())))?;
    let headers = rdr.headers()?.clone();
    if headers.len() < 4 || &headers[0] != "y" || &headers[1] != "lower" || &headers[2] != "upper" {
        return Err(Error::InvalidData(format!(
            "{} does not start with y,lower,upper columns",
            path.display()
        )));
    }
    let columns: Vec<String> = headers.iter().skip(3).map(String::from).collect();
    read_observations(path, &exported_schema(&columns))
}

/// SHA-256 of the canonical export of the data, hex encoded.
pub fn data_digest(data: &ObservationSet) -> String {
    let names: Vec<String> = (1..=data.p()).map(|j| format!("x{j}")).collect();
    let bytes = observations_csv(data, &names).expect("names match p");
    Sha256::digest(&bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Sidecar metadata of a draw store.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreMeta {
    pub settings: ChainSettings,
    pub n_obs: usize,
    pub p: usize,
    pub data_digest: String,
    pub collapse: Vec<CollapseNote>,
    /// Extra key-value pairs (the run configuration), kept in order.
    pub extra: Vec<(String, String)>,
}

fn init_name(init: InitStrategy) -> &'static str {
    match init {
        InitStrategy::ZeroOne => "zero-one",
        InitStrategy::PerturbedLeastSquares => "perturbed-least-squares",
    }
}

pub fn parse_init(s: &str) -> Result<InitStrategy> {
    match s {
        "zero-one" => Ok(InitStrategy::ZeroOne),
        "perturbed-least-squares" => Ok(InitStrategy::PerturbedLeastSquares),
        other => Err(Error::InvalidSettings(format!("unknown init `{other}`"))),
    }
}

impl StoreMeta {
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let s = &self.settings;
        let mut pairs: Vec<(String, String)> = vec![
            ("store.n_components".into(), s.n_components.to_string()),
            ("store.n_draws".into(), s.n_draws.to_string()),
            ("store.burn_in".into(), s.burn_in.to_string()),
            ("store.thin".into(), s.thin.to_string()),
            ("store.seed".into(), s.seed.to_string()),
            ("store.init".into(), init_name(s.init).into()),
            ("store.retained".into(), s.retained().to_string()),
            ("store.n_obs".into(), self.n_obs.to_string()),
            ("store.p".into(), self.p.to_string()),
            ("store.data_digest".into(), self.data_digest.clone()),
        ];
        let collapse: Vec<String> = self
            .collapse
            .iter()
            .map(|c| format!("{}@{}", c.class + 1, c.iteration))
            .collect();
        pairs.push(("store.collapse".into(), collapse.join(" ")));
        pairs.extend(self.extra.iter().cloned());
        pairs
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| {
            pairs
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::InvalidData(format!("metadata lacks `{k}`")))
        };
        let num = |k: &str| -> Result<u64> {
            get(k)?
                .parse()
                .map_err(|_| Error::InvalidData(format!("metadata `{k}` is not an integer")))
        };
        let settings = ChainSettings::new(
            num("store.n_components")? as usize,
            num("store.n_draws")? as usize,
            num("store.burn_in")? as usize,
            num("store.thin")? as usize,
            num("store.seed")?,
        )?
        .with_init(parse_init(get("store.init")?)?);
        let collapse = get("store.collapse")
            .unwrap_or("")
            .split_whitespace()
            .map(|tok| {
                let (c, it) = tok
                    .split_once('@')
                    .ok_or_else(|| Error::InvalidData(format!("collapse note `{tok}`")))?;
                let bad = || Error::InvalidData(format!("collapse note `{tok}`"));
                Ok(CollapseNote {
                    class: c.parse::<usize>().map_err(|_| bad())?.checked_sub(1).ok_or_else(bad)?,
                    iteration: it.parse().map_err(|_| bad())?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            settings,
            n_obs: num("store.n_obs")? as usize,
            p: num("store.p")? as usize,
            data_digest: get("store.data_digest")?.to_string(),
            collapse,
            extra: pairs.iter().filter(|(k, _)| !k.starts_with("store.")).cloned().collect(),
        })
    }
}

/// Header of the draws CSV: β class-major, then σ², then π.
pub fn draws_header(c: usize, p: usize) -> Vec<String> {
    let mut h = vec!["draw".to_string()];
    for k in 1..=c {
        for j in 1..=p {
            h.push(format!("beta_{k}_{j}"));
        }
    }
    h.extend((1..=c).map(|k| format!("sigma2_{k}")));
    h.extend((1..=c).map(|k| format!("pi_{k}")));
    h
}

fn draws_csv(store: &DrawStore) -> Result<Vec<u8>> {
    let c = store.n_components();
    let p = store.draws.first().map_or(0, MixtureParams::dim);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(draws_header(c, p))?;
    for (s, d) in store.draws.iter().enumerate() {
        let mut rec = vec![(s + 1).to_string()];
        for comp in &d.components {
            rec.extend(comp.beta.iter().map(|&b| fmt_num(b)));
        }
        rec.extend(d.components.iter().map(|comp| fmt_num(comp.sigma2)));
        rec.extend(d.weights.iter().map(|&w| fmt_num(w)));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn loglik_csv(store: &DrawStore) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["draw".to_string()];
    header.extend((1..=store.n_obs()).map(|i| format!("obs_{i}")));
    w.write_record(&header)?;
    for (s, row) in store.loglik.iter().enumerate() {
        let mut rec = vec![(s + 1).to_string()];
        rec.extend(row.iter().map(|&v| fmt_num(v)));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Writes draws.csv, loglik.csv and meta.txt into `dir`.
pub fn write_store(dir: &Path, store: &DrawStore, data: &ObservationSet, extra: Vec<(String, String)>) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(DRAWS_FILE), draws_csv(store)?)?;
    fs::write(dir.join(LOGLIK_FILE), loglik_csv(store)?)?;
    let meta = StoreMeta {
        settings: store.settings.clone(),
        n_obs: data.n(),
        p: data.p(),
        data_digest: data_digest(data),
        collapse: store.collapse.clone(),
        extra,
    };
    fs::write(dir.join(META_FILE), format_key_values(&meta.to_pairs()))?;
    Ok(())
}

fn read_matrix(path: &Path, expected_cols: usize) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.len() != expected_cols + 1 {
        return Err(Error::InvalidData(format!(
            "{} has {} columns, expected {}",
            path.display(),
            headers.len(),
            expected_cols + 1
        )));
    }
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = (1..rec.len())
            .map(|j| parse_num(&rec[j], r + 1, &headers[j]))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Reads a draw store directory written by [`write_store`].
pub fn read_store(dir: &Path) -> Result<(DrawStore, StoreMeta)> {
    let text = fs::read_to_string(dir.join(META_FILE))
        .map_err(|e| Error::InvalidData(format!("cannot read {}: {e}", dir.join(META_FILE).display())))?;
    let meta = StoreMeta::from_pairs(&parse_key_values(&text)?)?;
    let (c, p) = (meta.settings.n_components, meta.p);
    let raw = read_matrix(&dir.join(DRAWS_FILE), c * p + 2 * c)?;
    let draws = raw
        .iter()
        .map(|row| {
            let components = (0..c)
                .map(|k| {
                    let beta = DVector::from_row_slice(&row[k * p..(k + 1) * p]);
                    ComponentParams::new(beta, row[c * p + k])
                })
                .collect::<Result<Vec<_>>>()?;
            let w = &row[c * p + c..];
            let total: f64 = w.iter().sum();
            MixtureParams::new(components, w.iter().map(|v| v / total).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let loglik = read_matrix(&dir.join(LOGLIK_FILE), meta.n_obs)?;
    if loglik.len() != draws.len() {
        return Err(Error::InvalidData(format!(
            "{} draws but {} log-likelihood rows",
            draws.len(),
            loglik.len()
        )));
    }
    let store = DrawStore {
        draws,
        loglik,
        settings: meta.settings.clone(),
        collapse: meta.collapse.clone(),
    };
    Ok((store, meta))
}

fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// `grid,mean,q05,q95[,truth]`.
pub fn write_band(path: &Path, band: &DensityBand, truth: Option<&[f64]>) -> Result<()> {
    let header: &[&str] = if truth.is_some() {
        &["grid", "mean", "q05", "q95", "truth"]
    } else {
        &["grid", "mean", "q05", "q95"]
    };
    write_table(
        path,
        header,
        (0..band.grid.len()).map(|g| {
            let mut r = vec![
                fmt_num(band.grid[g]),
                fmt_num(band.mean[g]),
                fmt_num(band.q05[g]),
                fmt_num(band.q95[g]),
            ];
            if let Some(t) = truth {
                r.push(fmt_num(t[g]));
            }
            r
        }),
    )
}

/// `grid,density`.
pub fn write_curve(path: &Path, grid: &[f64], values: &[f64]) -> Result<()> {
    write_table(
        path,
        &["grid", "density"],
        grid.iter().zip(values).map(|(g, v)| vec![fmt_num(*g), fmt_num(*v)]),
    )
}

/// `draw,ame`.
pub fn write_ame(path: &Path, ame: &[f64]) -> Result<()> {
    write_table(
        path,
        &["draw", "ame"],
        ame.iter().enumerate().map(|(s, v)| vec![(s + 1).to_string(), fmt_num(*v)]),
    )
}

/// One row of a parameter-recovery table.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryRow {
    pub replicate: usize,
    pub component: usize,
    pub parameter: &'static str,
    pub estimate: f64,
    /// NaN when the fitted and true component counts differ.
    pub truth: f64,
}

pub fn write_recovery(path: &Path, rows: &[RecoveryRow]) -> Result<()> {
    write_table(
        path,
        &["replicate", "component", "parameter", "estimate", "truth"],
        rows.iter().map(|r| {
            vec![
                (r.replicate + 1).to_string(),
                (r.component + 1).to_string(),
                r.parameter.to_string(),
                fmt_num(r.estimate),
                if r.truth.is_nan() { String::new() } else { fmt_num(r.truth) },
            ]
        }),
    )
}

/// `quantity,value` rows.
pub fn write_quantities(path: &Path, rows: &[(String, f64)]) -> Result<()> {
    write_table(
        path,
        &["quantity", "value"],
        rows.iter().map(|(q, v)| vec![q.clone(), fmt_num(*v)]),
    )
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::RngStream;
    use crate::gibbs::{run_chain, Hyperpriors};
    use crate::model::Censoring;

    fn schema(lower: Bound, upper: Bound) -> DataSchema {
        DataSchema {
            outcome: "hours".into(),
            covariates: vec!["age".into(), "kids".into()],
            intercept: true,
            lower,
            upper,
        }
    }

    #[test]
    fn number_format_has_ten_significant_digits() {
        assert_eq!(fmt_num(1.0 / 3.0), "3.333333333e-1");
        assert_eq!(fmt_num(-12345.678901234), "-1.234567890e4");
        assert_eq!(fmt_num(f64::INFINITY), "inf");
        assert_eq!("3.333333333e-1".parse::<f64>().unwrap(), 0.3333333333);
    }

    #[test]
    fn left_censoring_detected() {
        let csv = "hours,age,kids\n0,30,1\n12.5,41,0\n7,25,2\n";
        let ing = read_observations_from(csv.as_bytes(), &schema(Bound::Value(0.0), Bound::Value(f64::INFINITY))).unwrap();
        assert_eq!(ing.data.n(), 3);
        assert_eq!(ing.data.censored_count(), (1, 0));
        assert_eq!(ing.data.censoring(0), Censoring::Left);
        assert_eq!(ing.columns, vec!["(intercept)", "age", "kids"]);
        assert_eq!(ing.data.x()[(1, 0)], 1.0);
        assert_eq!(ing.data.x()[(1, 1)], 41.0);
    }

    #[test]
    fn missing_rows_dropped() {
        let csv = "hours,age,kids,other\n0,30,1,\n12.5,,0,3\n7,25,2,x\n";
        let ing = read_observations_from(csv.as_bytes(), &schema(Bound::Value(0.0), Bound::Value(f64::INFINITY))).unwrap();
        assert_eq!(ing.data.n(), 2);
        assert_eq!(ing.dropped, 1);
    }

    #[test]
    fn parse_error_names_row_and_column() {
        let csv = "hours,age,kids\n0,30,1\n12.5,forty,0\n";
        let err = read_observations_from(csv.as_bytes(), &schema(Bound::Value(0.0), Bound::Value(f64::INFINITY))).unwrap_err();
        match err {
            Error::Parse { row, column, value } => {
                assert_eq!((row, column.as_str(), value.as_str()), (2, "age", "forty"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn outcome_outside_bounds_rejected() {
        let csv = "hours,age,kids\n-1,30,1\n";
        let err = read_observations_from(csv.as_bytes(), &schema(Bound::Value(0.0), Bound::Value(10.0))).unwrap_err();
        assert!(matches!(err, Error::InvalidData(_)));
        let missing_col = read_observations_from(
            "hours,age\n1,2\n".as_bytes(),
            &schema(Bound::Value(0.0), Bound::Value(10.0)),
        );
        assert!(missing_col.is_err());
    }

    #[test]
    fn per_row_bounds() {
        let csv = "hours,age,kids,lo,hi\n0,30,1,0,40\n40,41,0,0,40\n3,1,1,-inf,inf\n";
        let s = schema(Bound::Column("lo".into()), Bound::Column("hi".into()));
        let ing = read_observations_from(csv.as_bytes(), &s).unwrap();
        assert_eq!(ing.data.censored_count(), (1, 1));
        assert_eq!(ing.data.lower()[2], f64::NEG_INFINITY);
    }

    #[test]
    fn export_round_trip_is_exact() {
        let x = DMatrix::from_fn(4, 2, |i, j| if j == 0 { 1.0 } else { 0.1 * i as f64 + 1e-17 });
        let data = ObservationSet::new(
            vec![0.0, 1.0 / 3.0, std::f64::consts::E, 7.5],
            x,
            vec![0.0, 0.0, f64::NEG_INFINITY, 0.0],
            vec![7.5, 7.5, f64::INFINITY, 7.5],
        )
        .unwrap();
        let cols = vec!["one".to_string(), "x".to_string()];
        let bytes = observations_csv(&data, &cols).unwrap();
        let back = read_observations_from(bytes.as_slice(), &exported_schema(&cols)).unwrap();
        assert_eq!(back.data, data);
        assert_eq!(data_digest(&back.data), data_digest(&data));
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let x = DMatrix::from_fn(30, 2, |i, j| if j == 0 { 1.0 } else { (i as f64).sin() });
        let y: Vec<f64> = (0..30).map(|i| ((i as f64).cos() + 1.0).max(0.5)).collect();
        let data = ObservationSet::with_common_bounds(y, x, 0.5, 10.0).unwrap();
        let settings = ChainSettings::new(2, 30, 10, 2, 4).unwrap();
        let hyper = Hyperpriors::isotropic(2, 2, 1.0, 0.0, 1.0, 2.0, 2.0).unwrap();
        let store = run_chain(&data, &hyper, &settings, &mut RngStream::new(4)).unwrap();
        write_store(dir.path(), &store, &data, vec![("components".into(), "2".into())]).unwrap();
        let (back, meta) = read_store(dir.path()).unwrap();
        assert_eq!(back.len(), 10);
        assert_eq!(meta.settings, settings);
        assert_eq!(meta.extra, vec![("components".to_string(), "2".to_string())]);
        assert_eq!(meta.data_digest, data_digest(&data));
        for (a, b) in store.draws.iter().zip(&back.draws) {
            for (ca, cb) in a.components.iter().zip(&b.components) {
                assert!(((ca.sigma2 - cb.sigma2) / ca.sigma2).abs() < 1e-9);
            }
        }
        for (a, b) in store.loglik.iter().flatten().zip(back.loglik.iter().flatten()) {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn key_values() {
        let pairs = parse_key_values("# c\n a = 1 \n\nb=x y\n").unwrap();
        assert_eq!(pairs, vec![("a".into(), "1".into()), ("b".into(), "x y".into())]);
        assert!(parse_key_values("novalue\n").is_err());
        assert_eq!(parse_key_values(&format_key_values(&pairs)).unwrap(), pairs);
    }
}
