//! Balanced panel data model and delimited-text ingestion.
//!
//! A panel holds `N` units observed over the same `T` periods, with one
//! outcome and `p` covariates per cell. Storage is unit-major: the outcome
//! of unit `i` at period `t` lives at `i * T + t`, covariate `a` of the same
//! cell at `(i * T + t) * p + a`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Column layout of a delimited panel file.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSchema {
    pub unit_column: String,
    pub time_column: String,
    pub outcome_column: String,
    pub covariate_columns: Vec<String>,
    /// Prepend a constant-one covariate.
    pub intercept: bool,
}

impl DataSchema {
    pub fn new(
        unit_column: impl Into<String>,
        time_column: impl Into<String>,
        outcome_column: impl Into<String>,
        covariate_columns: Vec<String>,
        intercept: bool,
    ) -> Self {
        Self {
            unit_column: unit_column.into(),
            time_column: time_column.into(),
            outcome_column: outcome_column.into(),
            covariate_columns,
            intercept,
        }
    }

    /// Parses `unit,time,y,x1,...` into a schema.
    pub fn from_spec(spec: &str, intercept: bool) -> Result<Self> {
        let cols: Vec<String> = spec
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if cols.len() < 3 {
            return Err(Error::SchemaMismatch(format!(
                "schema `{spec}` must name at least unit, time and outcome columns"
            )));
        }
        let schema = Self::new(
            cols[0].clone(),
            cols[1].clone(),
            cols[2].clone(),
            cols[3..].to_vec(),
            intercept,
        );
        schema.validate()?;
        Ok(schema)
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_columns.len() + usize::from(self.intercept)
    }

    pub fn validate(&self) -> Result<()> {
        if self.covariate_columns.is_empty() && !self.intercept {
            return Err(Error::SchemaMismatch(
                "no covariate columns and no intercept".into(),
            ));
        }
        let mut seen = HashSet::new();
        for name in [&self.unit_column, &self.time_column, &self.outcome_column]
            .into_iter()
            .chain(self.covariate_columns.iter())
        {
            if !seen.insert(name.as_str()) {
                return Err(Error::SchemaMismatch(format!("column `{name}` listed twice")));
            }
        }
        Ok(())
    }
}

/// Immutable balanced panel.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    n_units: usize,
    n_periods: usize,
    n_covariates: usize,
    y: Vec<f64>,
    x: Vec<f64>,
    unit_ids: Vec<String>,
    time_labels: Vec<String>,
}

impl PanelData {
    /// Builds a panel from flat unit-major buffers.
    pub fn from_flat(
        n_units: usize,
        n_periods: usize,
        n_covariates: usize,
        y: Vec<f64>,
        x: Vec<f64>,
        unit_ids: Vec<String>,
    ) -> Result<Self> {
        let time_labels = (0..n_periods).map(|t| t.to_string()).collect();
        Self::from_parts(n_units, n_periods, n_covariates, y, x, unit_ids, time_labels)
    }

    fn from_parts(
        n_units: usize,
        n_periods: usize,
        n_covariates: usize,
        y: Vec<f64>,
        x: Vec<f64>,
        unit_ids: Vec<String>,
        time_labels: Vec<String>,
    ) -> Result<Self> {
        if n_units < 1 {
            return Err(Error::InvalidPanel("panel needs at least one unit".into()));
        }
        if n_periods < 2 {
            return Err(Error::InvalidPanel(format!(
                "panel needs at least two periods, got {n_periods}"
            )));
        }
        if n_covariates < 1 {
            return Err(Error::InvalidPanel("panel needs at least one covariate".into()));
        }
        if y.len() != n_units * n_periods {
            return Err(Error::ShapeMismatch(format!(
                "outcome has {} cells, expected {}x{}",
                y.len(),
                n_units,
                n_periods
            )));
        }
        if x.len() != n_units * n_periods * n_covariates {
            return Err(Error::ShapeMismatch(format!(
                "covariates have {} cells, expected {}x{}x{}",
                x.len(),
                n_units,
                n_periods,
                n_covariates
            )));
        }
        if unit_ids.len() != n_units {
            return Err(Error::ShapeMismatch(format!(
                "{} unit ids for {} units",
                unit_ids.len(),
                n_units
            )));
        }
        if time_labels.len() != n_periods {
            return Err(Error::ShapeMismatch(format!(
                "{} time labels for {} periods",
                time_labels.len(),
                n_periods
            )));
        }
        if let Some(k) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                what: format!("outcome of unit {} period {}", unit_ids[k / n_periods], k % n_periods),
            });
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            let cell = k / n_covariates;
            return Err(Error::NonFiniteValue {
                what: format!(
                    "covariate {} of unit {} period {}",
                    k % n_covariates,
                    unit_ids[cell / n_periods],
                    cell % n_periods
                ),
            });
        }
        let mut seen = HashSet::with_capacity(n_units);
        for id in &unit_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidPanel(format!("duplicate unit id `{id}`")));
            }
        }
        Ok(Self {
            n_units,
            n_periods,
            n_covariates,
            y,
            x,
            unit_ids,
            time_labels,
        })
    }

    /// Builds a panel from nested arrays: `y[i][t]` and `x[i][t][a]`.
    pub fn from_arrays(y: &[Vec<f64>], x: &[Vec<Vec<f64>>], unit_ids: &[String]) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::ShapeMismatch("empty outcome array".into()));
        }
        let t = y[0].len();
        if x.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "outcome has {n} units, covariates have {}",
                x.len()
            )));
        }
        let p = x[0].first().map_or(0, Vec::len);
        let mut flat_y = Vec::with_capacity(n * t);
        let mut flat_x = Vec::with_capacity(n * t * p);
        for i in 0..n {
            if y[i].len() != t {
                return Err(Error::ShapeMismatch(format!(
                    "unit {i} has {} outcome periods, expected {t}",
                    y[i].len()
                )));
            }
            if x[i].len() != t {
                return Err(Error::ShapeMismatch(format!(
                    "unit {i} has {} covariate periods, expected {t}",
                    x[i].len()
                )));
            }
            flat_y.extend_from_slice(&y[i]);
            for (s, row) in x[i].iter().enumerate() {
                if row.len() != p {
                    return Err(Error::ShapeMismatch(format!(
                        "unit {i} period {s} has {} covariates, expected {p}",
                        row.len()
                    )));
                }
                flat_x.extend_from_slice(row);
            }
        }
        Self::from_flat(n, t, p, flat_y, flat_x, unit_ids.to_vec())
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn n_obs(&self) -> usize {
        self.n_units * self.n_periods
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn time_labels(&self) -> &[String] {
        &self.time_labels
    }

    #[inline]
    pub fn y(&self, unit: usize, time: usize) -> f64 {
        self.y[unit * self.n_periods + time]
    }

    #[inline]
    pub fn x(&self, unit: usize, time: usize, covariate: usize) -> f64 {
        self.x[(unit * self.n_periods + time) * self.n_covariates + covariate]
    }

    /// Covariate row of one cell.
    #[inline]
    pub fn x_row(&self, unit: usize, time: usize) -> &[f64] {
        let start = (unit * self.n_periods + time) * self.n_covariates;
        &self.x[start..start + self.n_covariates]
    }

    /// Outcomes of one unit over all periods.
    pub fn y_unit(&self, unit: usize) -> &[f64] {
        &self.y[unit * self.n_periods..(unit + 1) * self.n_periods]
    }

    pub fn y_flat(&self) -> &[f64] {
        &self.y
    }

    pub fn x_flat(&self) -> &[f64] {
        &self.x
    }

    /// Writes the panel as delimited text with header `unit,time,y,x1..xp`.
    pub fn write_delimited<W: Write>(&self, writer: W, delimiter: u8) -> Result<()> {
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(writer);
        let mut header = vec!["unit".to_string(), "time".to_string(), "y".to_string()];
        header.extend((1..=self.n_covariates).map(|a| format!("x{a}")));
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.n_units {
            for t in 0..self.n_periods {
                record.clear();
                record.push(self.unit_ids[i].clone());
                record.push(self.time_labels[t].clone());
                record.push(format_float(self.y(i, t)));
                record.extend(self.x_row(i, t).iter().map(|v| format_float(*v)));
                w.write_record(&record)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Schema matching [`PanelData::write_delimited`] output.
    pub fn serialized_schema(&self) -> DataSchema {
        DataSchema::new(
            "unit",
            "time",
            "y",
            (1..=self.n_covariates).map(|a| format!("x{a}")).collect(),
            false,
        )
    }
}

/// Seventeen significant digits, which round-trips every finite `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Orders labels numerically when all of them parse as numbers, otherwise
/// lexicographically.
fn sort_labels(labels: &mut [String]) {
    let numeric: Option<Vec<f64>> = labels.iter().map(|l| l.trim().parse::<f64>().ok()).collect();
    match numeric {
        Some(_) => labels.sort_by(|a, b| {
            let (x, y) = (a.trim().parse::<f64>().unwrap(), b.trim().parse::<f64>().unwrap());
            x.partial_cmp(&y).unwrap_or(Ordering::Equal).then_with(|| a.cmp(b))
        }),
        None => labels.sort(),
    }
}

pub fn load_panel_path(path: impl AsRef<Path>, schema: &DataSchema, delimiter: u8) -> Result<PanelData> {
    let file = std::fs::File::open(path.as_ref())?;
    load_panel(std::io::BufReader::new(file), schema, delimiter)
}

/// Reads a delimited panel with a header row. Rows may come in any order;
/// the result is sorted by unit then time, and time labels are densified
/// to `0..T` by rank.
pub fn load_panel<R: Read>(source: R, schema: &DataSchema, delimiter: u8) -> Result<PanelData> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::SchemaMismatch(format!("column `{name}` not found in header")))
    };
    let unit_col = find(&schema.unit_column)?;
    let time_col = find(&schema.time_column)?;
    let y_col = find(&schema.outcome_column)?;
    let x_cols = schema
        .covariate_columns
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;
    let p = schema.n_covariates();

    // (unit, time) -> (y, covariates)
    let mut cells: HashMap<(String, String), (f64, Vec<f64>)> = HashMap::new();
    let mut units: BTreeMap<String, ()> = BTreeMap::new();
    let mut times: BTreeMap<String, ()> = BTreeMap::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let line = row_idx + 2;
        if record.len() != headers.len() {
            return Err(Error::SchemaMismatch(format!(
                "line {line}: {} fields, header has {}",
                record.len(),
                headers.len()
            )));
        }
        let parse = |col: usize, name: &str| -> Result<f64> {
            let raw = &record[col];
            let v: f64 = raw.parse().map_err(|_| {
                Error::SchemaMismatch(format!("line {line}: `{raw}` in column `{name}` is not a number"))
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    what: format!("line {line}, column `{name}`"),
                });
            }
            Ok(v)
        };
        let unit = record[unit_col].to_string();
        let time = record[time_col].to_string();
        let y = parse(y_col, &schema.outcome_column)?;
        let mut x = Vec::with_capacity(p);
        if schema.intercept {
            x.push(1.0);
        }
        for (c, name) in x_cols.iter().zip(&schema.covariate_columns) {
            x.push(parse(*c, name)?);
        }
        units.insert(unit.clone(), ());
        times.insert(time.clone(), ());
        if cells.insert((unit.clone(), time.clone()), (y, x)).is_some() {
            return Err(Error::DuplicateObservation { unit, time });
        }
    }

    let mut unit_ids: Vec<String> = units.into_keys().collect();
    let mut time_labels: Vec<String> = times.into_keys().collect();
    if unit_ids.is_empty() {
        return Err(Error::InvalidPanel("no observations".into()));
    }
    sort_labels(&mut unit_ids);
    sort_labels(&mut time_labels);
    let (n, t) = (unit_ids.len(), time_labels.len());
    let mut ys = Vec::with_capacity(n * t);
    let mut xs = Vec::with_capacity(n * t * p);
    for unit in &unit_ids {
        for time in &time_labels {
            match cells.remove(&(unit.clone(), time.clone())) {
                Some((y, x)) => {
                    ys.push(y);
                    xs.extend(x);
                }
                None => {
                    return Err(Error::MissingCell {
                        unit: unit.clone(),
                        time: time.clone(),
                    })
                }
            }
        }
    }
    PanelData::from_parts(n, t, p, ys, xs, unit_ids, time_labels)
}
