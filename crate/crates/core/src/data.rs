//! Observational data: `(y, t, x)` rows, treatment-group views and CSV ingestion.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::Points;

/// Causal role of a covariate column.
///
/// Mediators are influenced by the treatment and get transported; colliders
/// are not and pass through unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[default]
    Mediator,
    Collider,
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mediator" | "m" => Ok(Role::Mediator),
            "collider" | "c" => Ok(Role::Collider),
            other => Err(Error::Schema(format!("unknown covariate role {other:?}"))),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Mediator => "mediator",
            Role::Collider => "collider",
        })
    }
}

/// Immutable, validated sample of `(y_i, t_i, x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationalDataset {
    outcomes: Vec<f64>,
    treatments: Vec<u8>,
    covariates: Points,
    names: Vec<String>,
    roles: Vec<Role>,
}

impl ObservationalDataset {
    /// Builds a dataset, checking lengths, labels and finiteness.
    /// An empty `roles` means every column is a mediator.
    pub fn new(
        outcomes: Vec<f64>,
        treatments: Vec<u8>,
        covariates: Points,
        names: Vec<String>,
        roles: Vec<Role>,
    ) -> Result<Self> {
        let n = outcomes.len();
        if n == 0 {
            return Err(Error::NoUsableRows);
        }
        if treatments.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: treatments.len(),
            });
        }
        if covariates.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: covariates.len(),
            });
        }
        let k = covariates.dim();
        if names.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: names.len(),
            });
        }
        let roles = if roles.is_empty() {
            vec![Role::Mediator; k]
        } else {
            roles
        };
        if roles.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: roles.len(),
            });
        }
        if let Some(line) = treatments.iter().position(|&t| t > 1) {
            return Err(Error::InvalidTreatmentLabel {
                label: treatments[line].to_string(),
                line: line + 1,
            });
        }
        if let Some(i) = outcomes.iter().position(|y| !y.is_finite()) {
            return Err(Error::NonFinite {
                column: "outcome".into(),
                line: i + 1,
            });
        }
        if let Some(pos) = covariates.as_slice().iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                column: names[pos % k].clone(),
                line: pos / k + 1,
            });
        }
        Ok(ObservationalDataset {
            outcomes,
            treatments,
            covariates,
            names,
            roles,
        })
    }

    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    /// Number of covariate columns.
    pub fn k(&self) -> usize {
        self.covariates.dim()
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn treatments(&self) -> &[u8] {
        &self.treatments
    }

    pub fn covariates(&self) -> &Points {
        &self.covariates
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.covariates.row(i)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.covariates.column(j)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn mediator_columns(&self) -> Vec<usize> {
        self.columns_with(Role::Mediator)
    }

    pub fn collider_columns(&self) -> Vec<usize> {
        self.columns_with(Role::Collider)
    }

    fn columns_with(&self, role: Role) -> Vec<usize> {
        (0..self.k()).filter(|&j| self.roles[j] == role).collect()
    }

    pub fn with_roles(mut self, roles: Vec<Role>) -> Result<Self> {
        if roles.len() != self.k() {
            return Err(Error::DimensionMismatch {
                expected: self.k(),
                got: roles.len(),
            });
        }
        self.roles = roles;
        Ok(self)
    }

    /// Rows `indices` (repeats allowed), in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        ObservationalDataset {
            outcomes: indices.iter().map(|&i| self.outcomes[i]).collect(),
            treatments: indices.iter().map(|&i| self.treatments[i]).collect(),
            covariates: self.covariates.select(indices),
            names: self.names.clone(),
            roles: self.roles.clone(),
        }
    }

    /// Keeps only the listed covariate columns.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::invalid("at least one covariate column is required"));
        }
        let k = self.k();
        if let Some(&bad) = columns.iter().find(|&&j| j >= k) {
            return Err(Error::invalid(format!(
                "column {bad} out of range (k = {k})"
            )));
        }
        let mut data = Vec::with_capacity(self.n() * columns.len());
        for row in self.covariates.rows() {
            data.extend(columns.iter().map(|&j| row[j]));
        }
        Ok(ObservationalDataset {
            outcomes: self.outcomes.clone(),
            treatments: self.treatments.clone(),
            covariates: Points::new(data, columns.len())?,
            names: columns.iter().map(|&j| self.names[j].clone()).collect(),
            roles: columns.iter().map(|&j| self.roles[j]).collect(),
        })
    }

    /// Rescales the listed columns to pooled mean 0 and standard deviation 1.
    pub fn standardize_columns(&self, columns: &[usize]) -> Result<Self> {
        let k = self.k();
        let mut out = self.clone();
        let mut values = out.covariates.as_slice().to_vec();
        for &j in columns {
            if j >= k {
                return Err(Error::invalid(format!("column {j} out of range (k = {k})")));
            }
            let (mean, sd) = crate::univariate::mean_sd(&self.column(j));
            if !(sd > 0.0) {
                return Err(Error::ZeroVariance(self.names[j].clone()));
            }
            for v in values.iter_mut().skip(j).step_by(k) {
                *v = (*v - mean) / sd;
            }
        }
        out.covariates = Points::new(values, k)?;
        Ok(out)
    }

    /// Writes the dataset as CSV with columns `y,t,<covariates>`.
    /// Floats use the shortest representation that parses back to the same bits.
    pub fn write_csv<W: Write>(&self, writer: W, delimiter: u8) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(delimiter)
            .from_writer(writer);
        let mut header = vec!["y".to_string(), "t".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.n() {
            record.clear();
            record.push(format!("{:?}", self.outcomes[i]));
            record.push(self.treatments[i].to_string());
            record.extend(self.row(i).iter().map(|x| format!("{x:?}")));
            w.write_record(&record)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Row indices belonging to one treatment arm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupView {
    group: u8,
    indices: Vec<usize>,
}

impl GroupView {
    pub fn group(&self) -> u8 {
        self.group
    }

    /// Sorted, distinct row indices into the parent dataset.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn outcomes(&self, data: &ObservationalDataset) -> Vec<f64> {
        self.indices.iter().map(|&i| data.outcomes()[i]).collect()
    }

    /// The group's rows restricted to `columns`.
    pub fn points(&self, data: &ObservationalDataset, columns: &[usize]) -> Points {
        let mut out = Vec::with_capacity(self.len() * columns.len());
        for &i in &self.indices {
            let row = data.row(i);
            out.extend(columns.iter().map(|&j| row[j]));
        }
        Points::new(out, columns.len().max(1)).expect("column count is positive")
    }

    pub fn column(&self, data: &ObservationalDataset, column: usize) -> Vec<f64> {
        self.indices.iter().map(|&i| data.row(i)[column]).collect()
    }
}

/// Splits the rows into control (`t = 0`) and treated (`t = 1`) views.
pub fn split_by_treatment(data: &ObservationalDataset) -> Result<(GroupView, GroupView)> {
    let (mut control, mut treated) = (Vec::new(), Vec::new());
    for (i, &t) in data.treatments().iter().enumerate() {
        if t == 0 {
            control.push(i);
        } else {
            treated.push(i);
        }
    }
    if control.is_empty() {
        return Err(Error::DegenerateTreatment(0));
    }
    if treated.is_empty() {
        return Err(Error::DegenerateTreatment(1));
    }
    Ok((
        GroupView {
            group: 0,
            indices: control,
        },
        GroupView {
            group: 1,
            indices: treated,
        },
    ))
}

/// What to do with a raw treatment label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelAction {
    Assign(u8),
    Drop,
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub outcome: String,
    pub treatment: String,
    pub covariates: Vec<String>,
    /// Empty means all mediators.
    pub roles: Vec<Role>,
    pub delimiter: u8,
    /// Explicit treatment label mapping. Labels `0` and `1` are accepted
    /// natively; anything else must be listed here.
    pub labels: BTreeMap<String, LabelAction>,
}

impl Schema {
    pub fn new(outcome: &str, treatment: &str, covariates: &[&str]) -> Self {
        Schema {
            outcome: outcome.into(),
            treatment: treatment.into(),
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
            roles: Vec::new(),
            delimiter: b',',
            labels: BTreeMap::new(),
        }
    }

    pub fn with_label(mut self, label: &str, action: LabelAction) -> Self {
        self.labels.insert(label.to_string(), action);
        self
    }

    /// Builds a schema from `key=value` entries (`outcome`, `treatment`,
    /// `covariates`, `roles`, `delimiter`, `labels`). Unknown keys are ignored
    /// so one config file can also carry command options.
    pub fn from_config(config: &BTreeMap<String, String>) -> Result<Self> {
        let get = |key: &str| {
            config
                .get(key)
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::Schema(format!("missing key {key:?}")))
        };
        let mut schema = Schema::new(get("outcome")?, get("treatment")?, &[]);
        schema.covariates = split_list(get("covariates")?);
        if schema.covariates.is_empty() {
            return Err(Error::Schema("no covariate columns".into()));
        }
        if let Some(roles) = config.get("roles").filter(|s| !s.trim().is_empty()) {
            schema.roles = split_list(roles)
                .iter()
                .map(|r| r.parse())
                .collect::<Result<_>>()?;
        }
        if let Some(d) = config.get("delimiter") {
            schema.delimiter = parse_delimiter(d)?;
        }
        if let Some(labels) = config.get("labels") {
            schema.labels = parse_label_map(labels)?;
        }
        Ok(schema)
    }
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

pub fn parse_delimiter(s: &str) -> Result<u8> {
    match s {
        "\\t" | "tab" => Ok(b'\t'),
        _ => match s.as_bytes() {
            [b] if b.is_ascii() && *b != b'"' && *b != b'\n' && *b != b'\r' => Ok(*b),
            _ => Err(Error::Schema(format!(
                "delimiter must be one ascii byte, got {s:?}"
            ))),
        },
    }
}

/// Parses `raw:action` pairs such as `2:drop,yes:1,no:0`.
pub fn parse_label_map(s: &str) -> Result<BTreeMap<String, LabelAction>> {
    let mut map = BTreeMap::new();
    for entry in s.split(',').map(str::trim).filter(|e| !e.is_empty()) {
        let (raw, action) = entry
            .split_once(':')
            .ok_or_else(|| Error::Schema(format!("label entry {entry:?} is not raw:action")))?;
        let action = match action.trim() {
            "0" => LabelAction::Assign(0),
            "1" => LabelAction::Assign(1),
            "drop" => LabelAction::Drop,
            other => return Err(Error::Schema(format!("unknown label action {other:?}"))),
        };
        map.insert(raw.trim().to_string(), action);
    }
    Ok(map)
}

/// Parses a `key=value` config file body. `#` starts a comment line.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Schema(format!("config line {} has no '=': {line:?}", lineno + 1))
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Schema(format!(
                "config line {} has an empty key",
                lineno + 1
            )));
        }
        out.insert(key.to_string(), value.trim().to_string());
    }
    Ok(out)
}

/// Rows read versus kept during ingestion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub dropped: usize,
    pub dropped_missing: usize,
    pub dropped_label: usize,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "N/A" | "null" | "NULL")
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<(ObservationalDataset, LoadReport)> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(std::io::BufReader::new(file), schema)
}

/// Parses CSV from any reader. Incomplete rows are dropped and counted; bad
/// labels and non-finite numbers are errors.
pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<(ObservationalDataset, LoadReport)> {
    if schema.covariates.is_empty() {
        return Err(Error::Schema("no covariate columns".into()));
    }
    if !schema.roles.is_empty() && schema.roles.len() != schema.covariates.len() {
        return Err(Error::Schema(format!(
            "{} roles for {} covariates",
            schema.roles.len(),
            schema.covariates.len()
        )));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("column {name:?} not found in header")))
    };
    let y_col = find(&schema.outcome)?;
    let t_col = find(&schema.treatment)?;
    let x_cols: Vec<usize> = schema
        .covariates
        .iter()
        .map(|c| find(c))
        .collect::<Result<_>>()?;

    let mut report = LoadReport::default();
    let (mut ys, mut ts, mut xs) = (Vec::new(), Vec::new(), Vec::new());
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record)? {
        report.rows_read += 1;
        let line = report.rows_read + 1;
        let cell = |c: usize| record.get(c).map(str::trim).unwrap_or("");
        let mapped = std::iter::once(y_col)
            .chain(std::iter::once(t_col))
            .chain(x_cols.iter().copied());
        if mapped.clone().any(|c| is_missing(cell(c))) {
            report.dropped_missing += 1;
            continue;
        }
        let raw_t = cell(t_col);
        let t = match schema.labels.get(raw_t) {
            Some(LabelAction::Assign(t)) => *t,
            Some(LabelAction::Drop) => {
                report.dropped_label += 1;
                continue;
            }
            None => match raw_t {
                "0" => 0,
                "1" => 1,
                _ => {
                    return Err(Error::InvalidTreatmentLabel {
                        label: raw_t.to_string(),
                        line,
                    })
                }
            },
        };
        ys.push(parse_number(cell(y_col), &schema.outcome, line)?);
        ts.push(t);
        for (&c, name) in x_cols.iter().zip(&schema.covariates) {
            xs.push(parse_number(cell(c), name, line)?);
        }
    }
    report.dropped = report.dropped_missing + report.dropped_label;
    if ys.is_empty() {
        return Err(Error::NoUsableRows);
    }
    let covariates = Points::new(xs, x_cols.len())?;
    let data = ObservationalDataset::new(
        ys,
        ts,
        covariates,
        schema.covariates.clone(),
        schema.roles.clone(),
    )?;
    Ok((data, report))
}

fn parse_number(cell: &str, column: &str, line: usize) -> Result<f64> {
    let v: f64 = cell.parse().map_err(|_| {
        Error::Schema(format!(
            "column {column:?} line {line}: {cell:?} is not a number"
        ))
    })?;
    if !v.is_finite() {
        return Err(Error::NonFinite {
            column: column.to_string(),
            line,
        });
    }
    Ok(v)
}
