//! Learning samples: typed covariates, a right-censored survival response
//! and non-negative case weights, with CSV ingestion.
//!
//! Incomplete records are excluded listwise at load time. A tree node is
//! represented purely by a [`CaseWeights`] vector over the full sample;
//! observations outside the node carry weight zero.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Measurement scale of a covariate. Level order is significant: it fixes
/// the one-hot column order for categorical covariates and the score order
/// for ordinal ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum CovariateKind {
    Numeric,
    Categorical { levels: Vec<String> },
    Ordinal { levels: Vec<String> },
}

impl CovariateKind {
    pub fn levels(&self) -> Option<&[String]> {
        match self {
            CovariateKind::Numeric => None,
            CovariateKind::Categorical { levels } | CovariateKind::Ordinal { levels } => {
                Some(levels)
            }
        }
    }
}

/// Name and scale of a covariate, without its observations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateInfo {
    pub name: String,
    #[serde(flatten)]
    pub kind: CovariateKind,
}

/// A single covariate value, as supplied for prediction.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateValue {
    Number(f64),
    Level(String),
}

/// Covariate values of one observation keyed by covariate name.
pub type Observation = BTreeMap<String, CovariateValue>;

/// Binary split condition. Observations satisfying it go to the left child.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Split {
    /// `x <= cutoff`; for ordinal covariates the cutoff is a level index.
    LessEq { cutoff: f64 },
    /// Level membership for categorical covariates.
    InLevels { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
enum ColumnData {
    Numeric(Vec<f64>),
    Codes(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    info: CovariateInfo,
    data: ColumnData,
}

impl Covariate {
    pub fn numeric(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidCovariate {
                name,
                message: format!("non-finite value {bad}"),
            });
        }
        Ok(Covariate {
            info: CovariateInfo {
                name,
                kind: CovariateKind::Numeric,
            },
            data: ColumnData::Numeric(values),
        })
    }

    pub fn categorical(
        name: impl Into<String>,
        levels: Vec<String>,
        codes: Vec<usize>,
    ) -> Result<Self> {
        let name = name.into();
        check_levels(&name, &levels, &codes)?;
        Ok(Covariate {
            info: CovariateInfo {
                name,
                kind: CovariateKind::Categorical { levels },
            },
            data: ColumnData::Codes(codes),
        })
    }

    pub fn ordinal(name: impl Into<String>, levels: Vec<String>, codes: Vec<usize>) -> Result<Self> {
        let name = name.into();
        check_levels(&name, &levels, &codes)?;
        Ok(Covariate {
            info: CovariateInfo {
                name,
                kind: CovariateKind::Ordinal { levels },
            },
            data: ColumnData::Codes(codes),
        })
    }

    /// Builds a categorical covariate from raw strings, with levels sorted.
    pub fn categorical_from_strings<S: AsRef<str>>(
        name: impl Into<String>,
        values: &[S],
    ) -> Result<Self> {
        let levels: Vec<String> = values
            .iter()
            .map(|s| s.as_ref().to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let codes = values
            .iter()
            .map(|s| levels.binary_search_by(|l| l.as_str().cmp(s.as_ref())).unwrap())
            .collect();
        Covariate::categorical(name, levels, codes)
    }

    pub fn name(&self) -> &str {
        &self.info.name
    }

    pub fn kind(&self) -> &CovariateKind {
        &self.info.kind
    }

    pub fn info(&self) -> &CovariateInfo {
        &self.info
    }

    pub fn len(&self) -> usize {
        match &self.data {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Codes(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Numeric value, or the level index for categorical and ordinal covariates.
    pub fn score(&self, i: usize) -> f64 {
        match &self.data {
            ColumnData::Numeric(v) => v[i],
            ColumnData::Codes(c) => c[i] as f64,
        }
    }

    pub fn code(&self, i: usize) -> Option<usize> {
        match &self.data {
            ColumnData::Numeric(_) => None,
            ColumnData::Codes(c) => Some(c[i]),
        }
    }

    pub fn value(&self, i: usize) -> CovariateValue {
        match (&self.data, self.info.kind.levels()) {
            (ColumnData::Numeric(v), _) => CovariateValue::Number(v[i]),
            (ColumnData::Codes(c), Some(levels)) => CovariateValue::Level(levels[c[i]].clone()),
            (ColumnData::Codes(c), None) => CovariateValue::Number(c[i] as f64),
        }
    }

    /// Whether observation `i` satisfies `split`.
    pub fn satisfies(&self, i: usize, split: &Split) -> Result<bool> {
        match (&self.info.kind, split) {
            (CovariateKind::Numeric | CovariateKind::Ordinal { .. }, Split::LessEq { cutoff }) => {
                Ok(self.score(i) <= *cutoff)
            }
            (CovariateKind::Categorical { levels }, Split::InLevels { levels: left }) => {
                let code = self.code(i).expect("categorical column stores codes");
                Ok(left.iter().any(|l| *l == levels[code]))
            }
            _ => Err(Error::SplitMismatch(self.info.name.clone())),
        }
    }

    fn take(&self, rows: &[usize]) -> Covariate {
        let data = match &self.data {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Codes(c) => ColumnData::Codes(rows.iter().map(|&r| c[r]).collect()),
        };
        Covariate {
            info: self.info.clone(),
            data,
        }
    }

    fn map_numeric(&self, f: impl Fn(f64) -> f64) -> Result<Covariate> {
        match &self.data {
            ColumnData::Numeric(v) => {
                Covariate::numeric(self.info.name.clone(), v.iter().map(|&x| f(x)).collect())
            }
            ColumnData::Codes(_) => Err(Error::InvalidCovariate {
                name: self.info.name.clone(),
                message: "not a numeric covariate".into(),
            }),
        }
    }
}

fn check_levels(name: &str, levels: &[String], codes: &[usize]) -> Result<()> {
    let invalid = |message: String| Error::InvalidCovariate {
        name: name.to_string(),
        message,
    };
    if levels.len() < 2 {
        return Err(invalid(format!(
            "needs at least two levels, got {}",
            levels.len()
        )));
    }
    let mut seen = HashSet::new();
    for l in levels {
        if !seen.insert(l) {
            return Err(invalid(format!("duplicate level `{l}`")));
        }
    }
    if let Some(c) = codes.iter().find(|&&c| c >= levels.len()) {
        return Err(invalid(format!("level index {c} out of range")));
    }
    Ok(())
}

impl CovariateInfo {
    /// Routing rule shared by prediction: whether `value` satisfies `split`.
    pub fn goes_left(&self, split: &Split, value: &CovariateValue) -> Result<bool> {
        let mismatch = || Error::SplitMismatch(self.name.clone());
        match (&self.kind, split) {
            (CovariateKind::Numeric, Split::LessEq { cutoff }) => match value {
                CovariateValue::Number(x) if x.is_finite() => Ok(*x <= *cutoff),
                CovariateValue::Number(_) => Err(Error::MissingValue(self.name.clone())),
                CovariateValue::Level(_) => Err(mismatch()),
            },
            (CovariateKind::Ordinal { levels }, Split::LessEq { cutoff }) => {
                let code = match value {
                    CovariateValue::Level(l) => self.level_index(levels, l)?,
                    CovariateValue::Number(_) => return Err(mismatch()),
                };
                Ok(code as f64 <= *cutoff)
            }
            (CovariateKind::Categorical { levels }, Split::InLevels { levels: left }) => {
                let l = match value {
                    CovariateValue::Level(l) => l,
                    CovariateValue::Number(_) => return Err(mismatch()),
                };
                self.level_index(levels, l)?;
                Ok(left.contains(l))
            }
            _ => Err(mismatch()),
        }
    }

    fn level_index(&self, levels: &[String], level: &str) -> Result<usize> {
        levels
            .iter()
            .position(|l| l == level)
            .ok_or_else(|| Error::UnseenLevel {
                covariate: self.name.clone(),
                level: level.to_string(),
            })
    }

    /// Parses a raw CSV cell for this covariate; `None` when missing.
    pub fn parse_cell(&self, cell: &str) -> Option<CovariateValue> {
        let cell = cell.trim();
        if is_missing(cell) {
            return None;
        }
        match self.kind {
            CovariateKind::Numeric => parse_finite(cell).map(CovariateValue::Number),
            _ => Some(CovariateValue::Level(cell.to_string())),
        }
    }
}

/// One right-censored survival outcome. `event == false` means censored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Surv {
    pub time: f64,
    pub event: bool,
}

impl Surv {
    pub fn new(time: f64, event: bool) -> Self {
        Surv { time, event }
    }
}

/// Non-negative case weights, one per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseWeights(Vec<f64>);

impl CaseWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some(bad) = w.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::InvalidWeights(format!(
                "weights must be finite and non-negative, got {bad}"
            )));
        }
        Ok(CaseWeights(w))
    }

    pub fn unit(n: usize) -> Self {
        CaseWeights(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn positive_count(&self) -> usize {
        self.0.iter().filter(|&&w| w > 0.0).count()
    }

    pub fn is_integral(&self) -> bool {
        self.0.iter().all(|w| w.fract() == 0.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Covariates plus survival response for `n` observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: Vec<Covariate>,
    response: Vec<Surv>,
}

impl Dataset {
    pub fn new(covariates: Vec<Covariate>, response: Vec<Surv>) -> Result<Self> {
        let n = response.len();
        let mut names = HashSet::new();
        for c in &covariates {
            if c.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    got: c.len(),
                });
            }
            if !names.insert(c.name()) {
                return Err(Error::DuplicateCovariate(c.name().to_string()));
            }
        }
        if let Some(s) = response.iter().find(|s| !(s.time.is_finite() && s.time >= 0.0)) {
            return Err(Error::InvalidRow {
                row: 0,
                message: format!("survival time must be finite and non-negative, got {}", s.time),
            });
        }
        Ok(Dataset {
            covariates,
            response,
        })
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn m(&self) -> usize {
        self.covariates.len()
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn response(&self) -> &[Surv] {
        &self.response
    }

    pub fn covariate(&self, name: &str) -> Result<&Covariate> {
        self.covariates
            .iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
    }

    pub fn infos(&self) -> Vec<CovariateInfo> {
        self.covariates.iter().map(|c| c.info().clone()).collect()
    }

    pub fn observation(&self, i: usize) -> Observation {
        self.covariates
            .iter()
            .map(|c| (c.name().to_string(), c.value(i)))
            .collect()
    }

    /// Keeps only the named covariates, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<Dataset> {
        let covariates = names
            .iter()
            .map(|n| self.covariate(n).cloned())
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(covariates, self.response.clone())
    }

    /// Rows in the given order; indices may repeat.
    pub fn take_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            covariates: self.covariates.iter().map(|c| c.take(rows)).collect(),
            response: rows.iter().map(|&r| self.response[r]).collect(),
        }
    }

    /// Applies `f` to the values of a numeric covariate.
    pub fn map_covariate(&self, name: &str, f: impl Fn(f64) -> f64) -> Result<Dataset> {
        let covariates = self
            .covariates
            .iter()
            .map(|c| {
                if c.name() == name {
                    c.map_numeric(&f)
                } else {
                    Ok(c.clone())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            covariates,
            response: self.response.clone(),
        })
    }

    pub fn event_count(&self) -> usize {
        self.response.iter().filter(|s| s.event).count()
    }

    /// Writes the dataset in the dialect read by [`load_csv`]: covariates in
    /// order, then `time` and `event` (0/1).
    pub fn write_csv<W: Write>(&self, out: W, time_col: &str, event_col: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.covariates.iter().map(|c| c.name()).collect();
        header.push(time_col);
        header.push(event_col);
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self
                .covariates
                .iter()
                .map(|c| match c.value(i) {
                    CovariateValue::Number(x) => format!("{x}"),
                    CovariateValue::Level(l) => l,
                })
                .collect();
            rec.push(format!("{}", self.response[i].time));
            rec.push(if self.response[i].event { "1" } else { "0" }.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }
}

/// Splits `w` by `split` on covariate `name`: `left + right == w` elementwise.
pub fn subset_weights(
    ds: &Dataset,
    w: &CaseWeights,
    name: &str,
    split: &Split,
) -> Result<(CaseWeights, CaseWeights)> {
    let cov = ds.covariate(name)?;
    if w.len() != ds.n() {
        return Err(Error::LengthMismatch {
            expected: ds.n(),
            got: w.len(),
        });
    }
    let mut left = Vec::with_capacity(w.len());
    let mut right = Vec::with_capacity(w.len());
    for (i, &wi) in w.as_slice().iter().enumerate() {
        if cov.satisfies(i, split)? {
            left.push(wi);
            right.push(0.0);
        } else {
            left.push(0.0);
            right.push(wi);
        }
    }
    Ok((CaseWeights(left), CaseWeights(right)))
}

/// Declared role and scale of a covariate column.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnKind {
    Numeric,
    /// Levels inferred as the sorted distinct values when `None`.
    Categorical(Option<Vec<String>>),
    Ordinal(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Numeric,
        }
    }

    pub fn categorical(name: impl Into<String>, levels: Option<Vec<String>>) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Categorical(levels),
        }
    }
}

/// Which CSV columns hold the response, weights and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub time: String,
    pub event: String,
    pub weights: Option<String>,
    pub covariates: Vec<ColumnSpec>,
}

/// Result of [`load_csv`].
#[derive(Debug, Clone)]
pub struct Loaded {
    pub dataset: Dataset,
    pub weights: CaseWeights,
    /// Rows excluded for missing or unparseable values.
    pub dropped: usize,
    pub raw_rows: usize,
}

pub(crate) fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "N/A" | "NaN" | "nan" | "?" | ".")
}

pub(crate) fn parse_finite(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_event(cell: &str) -> Option<bool> {
    match cell {
        "1" | "true" | "TRUE" | "True" => Some(true),
        "0" | "false" | "FALSE" | "False" => Some(false),
        _ => None,
    }
}

/// Parses the time and event cells of data row `row` (1-based). `None` when
/// either is missing; errors on an invalid event code or negative time.
pub fn parse_response(row: usize, time: &str, event: &str) -> Result<Option<Surv>> {
    let event = if is_missing(event) {
        None
    } else {
        Some(parse_event(event).ok_or_else(|| Error::InvalidEvent {
            row,
            value: event.to_string(),
        })?)
    };
    let time = parse_finite(time);
    if let Some(t) = time {
        if t < 0.0 {
            return Err(Error::InvalidRow {
                row,
                message: format!("negative survival time {t}"),
            });
        }
    }
    Ok(time.zip(event).map(|(t, e)| Surv::new(t, e)))
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Loaded> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(input: R, schema: &Schema) -> Result<Loaded> {
    if schema.covariates.is_empty() {
        return Err(Error::InvalidConfig("schema declares no covariates".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let time_idx = col(&schema.time)?;
    let event_idx = col(&schema.event)?;
    let weight_idx = schema.weights.as_deref().map(col).transpose()?;
    let cov_idx = schema
        .covariates
        .iter()
        .map(|c| col(&c.name))
        .collect::<Result<Vec<_>>>()?;

    let mut raw_rows = 0;
    let mut dropped = 0;
    let mut response = Vec::new();
    let mut weights = Vec::new();
    let mut cells: Vec<Vec<String>> = vec![Vec::new(); schema.covariates.len()];

    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        raw_rows += 1;
        let get = |i: usize| rec.get(i).unwrap_or("").trim();

        let surv = parse_response(row, get(time_idx), get(event_idx))?;
        let weight = match weight_idx {
            None => Some(1.0),
            Some(i) => parse_finite(get(i)),
        };
        if let Some(w) = weight {
            if w < 0.0 {
                return Err(Error::InvalidRow {
                    row,
                    message: format!("negative case weight {w}"),
                });
            }
        }

        let mut complete = surv.is_some() && weight.is_some();
        let mut row_cells = Vec::with_capacity(cov_idx.len());
        for (spec, &ci) in schema.covariates.iter().zip(&cov_idx) {
            let cell = get(ci);
            let ok = !is_missing(cell)
                && match &spec.kind {
                    ColumnKind::Numeric => parse_finite(cell).is_some(),
                    ColumnKind::Categorical(Some(levels)) | ColumnKind::Ordinal(levels) => {
                        levels.iter().any(|l| l == cell)
                    }
                    ColumnKind::Categorical(None) => true,
                };
            complete &= ok;
            row_cells.push(cell.to_string());
        }
        if !complete {
            dropped += 1;
            continue;
        }
        response.push(surv.unwrap());
        weights.push(weight.unwrap());
        for (dst, cell) in cells.iter_mut().zip(row_cells) {
            dst.push(cell);
        }
    }

    if response.is_empty() {
        return Err(Error::NoRows { dropped });
    }

    let covariates = schema
        .covariates
        .iter()
        .zip(cells)
        .map(|(spec, col)| build_covariate(spec, &col))
        .collect::<Result<Vec<_>>>()?;

    Ok(Loaded {
        dataset: Dataset::new(covariates, response)?,
        weights: CaseWeights::new(weights)?,
        dropped,
        raw_rows,
    })
}

fn build_covariate(spec: &ColumnSpec, cells: &[String]) -> Result<Covariate> {
    let codes = |levels: &[String]| -> Vec<usize> {
        cells
            .iter()
            .map(|c| levels.iter().position(|l| l == c).expect("validated level"))
            .collect()
    };
    match &spec.kind {
        ColumnKind::Numeric => Covariate::numeric(
            spec.name.clone(),
            cells.iter().map(|c| c.parse::<f64>().expect("validated number")).collect(),
        ),
        ColumnKind::Categorical(None) => Covariate::categorical_from_strings(spec.name.clone(), cells),
        ColumnKind::Categorical(Some(levels)) => {
            Covariate::categorical(spec.name.clone(), levels.clone(), codes(levels))
        }
        ColumnKind::Ordinal(levels) => {
            Covariate::ordinal(spec.name.clone(), levels.clone(), codes(levels))
        }
    }
}
