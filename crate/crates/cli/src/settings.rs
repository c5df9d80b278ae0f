use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::ValueEnum;
use otcf::data::{
    load_csv, parse_config, parse_delimiter, parse_label_map, LoadReport, Role, Schema,
};
use otcf::data::{split_by_treatment, ObservationalDataset};
use otcf::estimators::{default_grid, linspace};
use otcf::points::Points;
use otcf::univariate::EmpiricalCdf;

use crate::args::DataArgs;
use crate::error::{CliError, CliResult};

/// Values from `--config`, consulted for any option missing on the command line.
#[derive(Debug, Default)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let entries = parse_config(&text)?
            .into_iter()
            .map(|(k, v)| (k.replace('_', "-"), v))
            .collect();
        Ok(Config { entries })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn string(&self, cli: &Option<String>, key: &str) -> Option<String> {
        cli.clone().or_else(|| self.raw(key).map(String::from))
    }

    pub fn path(&self, cli: &Option<PathBuf>, key: &str) -> Option<PathBuf> {
        cli.clone().or_else(|| self.raw(key).map(PathBuf::from))
    }

    pub fn parsed<T: FromStr>(&self, cli: Option<T>, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match (cli, self.raw(key)) {
            (Some(v), _) => Ok(Some(v)),
            (None, Some(s)) => s
                .parse()
                .map(Some)
                .map_err(|e| CliError::usage(format!("config key {key}: {e}"))),
            (None, None) => Ok(None),
        }
    }

    pub fn choice<T: ValueEnum>(&self, cli: Option<T>, key: &str) -> CliResult<Option<T>> {
        match (cli, self.raw(key)) {
            (Some(v), _) => Ok(Some(v)),
            (None, Some(s)) => T::from_str(s, true)
                .map(Some)
                .map_err(|e| CliError::usage(format!("config key {key}: {e}"))),
            (None, None) => Ok(None),
        }
    }

    pub fn flag(&self, cli: bool, key: &str) -> CliResult<bool> {
        Ok(cli || self.parsed::<bool>(None, key)?.unwrap_or(false))
    }

    /// Grid specs from the command line, else `;`-separated from the config.
    pub fn grids(&self, cli: &[String], key: &str) -> Vec<String> {
        if !cli.is_empty() {
            return cli.to_vec();
        }
        self.raw(key)
            .map(|s| {
                s.split(';')
                    .map(|g| g.trim().to_string())
                    .filter(|g| !g.is_empty())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn out_dir(&self, cli: &Option<PathBuf>) -> CliResult<PathBuf> {
        let dir = self
            .path(cli, "out")
            .ok_or_else(|| CliError::usage("missing --out directory"))?;
        std::fs::create_dir_all(&dir).map_err(|source| CliError::Write {
            path: dir.clone(),
            source,
        })?;
        Ok(dir)
    }
}

pub fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn header(path: &Path, delimiter: u8) -> CliResult<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .from_path(path)
        .map_err(otcf::Error::from)?;
    let h = rdr.headers().map_err(otcf::Error::from)?;
    Ok(h.iter().map(|s| s.trim().to_string()).collect())
}

/// Loads the dataset named by `--data`, filling the schema from flags, then
/// config, then defaults.
pub fn load_data(args: &DataArgs, cfg: &Config) -> CliResult<(ObservationalDataset, LoadReport)> {
    let path = cfg
        .path(&args.data, "data")
        .ok_or_else(|| CliError::usage("missing --data file"))?;
    let outcome = cfg
        .string(&args.outcome, "outcome")
        .unwrap_or_else(|| "y".into());
    let treatment = cfg
        .string(&args.treatment, "treatment")
        .unwrap_or_else(|| "t".into());
    let delimiter = match cfg.string(&args.delimiter, "delimiter") {
        Some(d) => parse_delimiter(&d)?,
        None => b',',
    };
    let covariates = match cfg.string(&args.covariates, "covariates") {
        Some(c) => split_list(&c),
        None => header(&path, delimiter)?
            .into_iter()
            .filter(|h| *h != outcome && *h != treatment)
            .collect(),
    };
    let mut schema = Schema::new(&outcome, &treatment, &[]);
    schema.covariates = covariates;
    schema.delimiter = delimiter;
    if let Some(roles) = cfg.string(&args.roles, "roles") {
        schema.roles = split_list(&roles)
            .iter()
            .map(|r| r.parse::<Role>())
            .collect::<Result<_, _>>()?;
    }
    if let Some(labels) = cfg.string(&args.labels, "labels") {
        schema.labels = parse_label_map(&labels)?;
    }
    let (data, report) = load_csv(&path, &schema)?;
    if report.dropped > 0 {
        log::warn!(
            "dropped {} of {} rows ({} incomplete, {} by label)",
            report.dropped,
            report.rows_read,
            report.dropped_missing,
            report.dropped_label
        );
    }
    Ok((data, report))
}

/// Covariate indices for a comma-separated name list.
pub fn column_indices(data: &ObservationalDataset, names: &str) -> CliResult<Vec<usize>> {
    split_list(names)
        .iter()
        .map(|n| {
            data.column_index(n)
                .ok_or_else(|| CliError::usage(format!("unknown covariate {n:?}")))
        })
        .collect()
}

/// Named columns, or the mediator columns when none are given.
pub fn columns_or_mediators(
    data: &ObservationalDataset,
    names: Option<&str>,
) -> CliResult<Vec<usize>> {
    let cols = match names {
        Some(n) => column_indices(data, n)?,
        None => data.mediator_columns(),
    };
    if cols.is_empty() {
        return Err(CliError::usage("no covariate columns selected"));
    }
    Ok(cols)
}

/// One axis: `lo:hi:n` or an explicit comma list.
pub fn parse_axis(spec: &str) -> CliResult<Vec<f64>> {
    let bad = || {
        CliError::usage(format!(
            "bad grid {spec:?}; expected lo:hi:n or a comma list"
        ))
    };
    let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
    let values = match parts[..] {
        [lo, hi, n] => {
            let lo: f64 = lo.parse().map_err(|_| bad())?;
            let hi: f64 = hi.parse().map_err(|_| bad())?;
            let n: usize = n.parse().map_err(|_| bad())?;
            if n == 0 || hi < lo {
                return Err(bad());
            }
            linspace(lo, hi, n)
        }
        [list] => list
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?,
        _ => return Err(bad()),
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(bad());
    }
    Ok(values)
}

/// Cartesian product of the axes, first axis varying slowest.
pub fn product(axes: &[Vec<f64>]) -> CliResult<Points> {
    let mut rows: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in axes {
        rows = rows
            .into_iter()
            .flat_map(|r| {
                axis.iter().map(move |&v| {
                    let mut r = r.clone();
                    r.push(v);
                    r
                })
            })
            .collect();
    }
    Ok(Points::from_rows(&rows)?)
}

/// Axis between the 1st and 99th percentile of the control values.
pub fn control_axis(data: &ObservationalDataset, column: usize, n: usize) -> CliResult<Vec<f64>> {
    let (g0, _) = split_by_treatment(data)?;
    let values = g0.column(data, column);
    if n == 101 {
        return Ok(default_grid(&values)?);
    }
    let cdf = EmpiricalCdf::fit(&values)?;
    Ok(linspace(cdf.quantile(0.01)?, cdf.quantile(0.99)?, n))
}

/// The user's grid, or a default over the control support of `columns`.
pub fn covariate_grid(
    data: &ObservationalDataset,
    columns: &[usize],
    specs: &[String],
) -> CliResult<Points> {
    if !specs.is_empty() {
        if specs.len() != columns.len() {
            return Err(CliError::usage(format!(
                "{} grid axes given for {} columns",
                specs.len(),
                columns.len()
            )));
        }
        let axes: Vec<Vec<f64>> = specs
            .iter()
            .map(|s| parse_axis(s))
            .collect::<CliResult<_>>()?;
        return product(&axes);
    }
    let per_axis = if columns.len() == 1 { 101 } else { 21 };
    let axes: Vec<Vec<f64>> = columns
        .iter()
        .map(|&c| control_axis(data, c, per_axis))
        .collect::<CliResult<_>>()?;
    product(&axes)
}
