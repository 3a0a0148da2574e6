//! Typed CSV ingestion into a columnar, dictionary-encoded table.
//!
//! A [`Schema`] names every column the engine will read and assigns it a
//! role. Loading is strict: unparseable, missing, or non-finite values fail
//! with row and column context instead of being silently dropped, and
//! categorical codes are assigned by sorted level order so the same data
//! always encodes the same way regardless of row order.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Role a column plays in the analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    /// Continuous covariate.
    Numeric,
    /// Discrete covariate, dictionary encoded.
    Categorical,
    /// The treatment assignment; categorical, exactly one per schema.
    Treatment,
    /// Opaque row identifier, kept as text.
    UnitId,
    /// Observation period; parsed as a number, encoded against the sorted
    /// distinct period values.
    TimePeriod,
    /// Grouping key for cluster-robust covariance.
    ClusterId,
    /// Outcome column; at least one per schema.
    Kpi,
    /// Instrumental variable for two-stage fits.
    Instrument,
    /// 0/1 flag marking rows eligible for a specific treatment level.
    Eligibility,
}

impl ColumnKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ColumnKind::Numeric => "numeric",
            ColumnKind::Categorical => "categorical",
            ColumnKind::Treatment => "treatment",
            ColumnKind::UnitId => "unit_id",
            ColumnKind::TimePeriod => "time_period",
            ColumnKind::ClusterId => "cluster_id",
            ColumnKind::Kpi => "kpi",
            ColumnKind::Instrument => "instrument",
            ColumnKind::Eligibility => "eligibility",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// Ordered list of columns the loader will read. Column order in the schema,
/// not in the file, fixes the layout of the encoded table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "Vec<ColumnSpec>", into = "Vec<ColumnSpec>")]
pub struct Schema {
    columns: Vec<ColumnSpec>,
}

impl TryFrom<Vec<ColumnSpec>> for Schema {
    type Error = Error;
    fn try_from(columns: Vec<ColumnSpec>) -> Result<Self> {
        Schema::new(columns)
    }
}

impl From<Schema> for Vec<ColumnSpec> {
    fn from(s: Schema) -> Vec<ColumnSpec> {
        s.columns
    }
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        let mut seen = HashMap::new();
        for c in &columns {
            if c.name.is_empty() {
                return Err(Error::Schema("empty column name".into()));
            }
            if seen.insert(c.name.clone(), ()).is_some() {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name)));
            }
        }
        let count = |k: ColumnKind| columns.iter().filter(|c| c.kind == k).count();
        if count(ColumnKind::Treatment) != 1 {
            return Err(Error::Schema(format!(
                "schema needs exactly one treatment column, found {}",
                count(ColumnKind::Treatment)
            )));
        }
        if count(ColumnKind::Kpi) == 0 {
            return Err(Error::Schema("schema needs at least one kpi column".into()));
        }
        for k in [
            ColumnKind::TimePeriod,
            ColumnKind::ClusterId,
            ColumnKind::UnitId,
        ] {
            if count(k) > 1 {
                return Err(Error::Schema(format!(
                    "at most one {} column is allowed, found {}",
                    k.as_str(),
                    count(k)
                )));
            }
        }
        Ok(Schema { columns })
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn kind_of(&self, name: &str) -> Option<ColumnKind> {
        self.columns.iter().find(|c| c.name == name).map(|c| c.kind)
    }

    fn first_of(&self, kind: ColumnKind) -> Option<&str> {
        self.columns
            .iter()
            .find(|c| c.kind == kind)
            .map(|c| c.name.as_str())
    }

    pub fn treatment_name(&self) -> &str {
        self.first_of(ColumnKind::Treatment)
            .expect("validated schema has a treatment column")
    }

    pub fn time_period_name(&self) -> Option<&str> {
        self.first_of(ColumnKind::TimePeriod)
    }

    pub fn cluster_name(&self) -> Option<&str> {
        self.first_of(ColumnKind::ClusterId)
    }

    pub fn names_of(&self, kind: ColumnKind) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|c| c.kind == kind)
            .map(|c| c.name.as_str())
            .collect()
    }
}

/// Dictionary-encoded categorical column. Levels are sorted, so code 0 is
/// always the lexicographically smallest level.
#[derive(Debug, Clone, PartialEq)]
pub struct CatColumn {
    pub codes: Vec<u32>,
    pub levels: Vec<String>,
}

impl CatColumn {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, code: u32) -> &str {
        &self.levels[code as usize]
    }

    pub fn code_of(&self, level: &str) -> Option<u32> {
        self.levels
            .binary_search_by(|l| l.as_str().cmp(level))
            .ok()
            .map(|i| i as u32)
    }
}

/// Period column: numeric period values encoded against their sorted
/// distinct set. Code 0 is the earliest period.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodColumn {
    pub codes: Vec<u32>,
    pub values: Vec<f64>,
}

impl PeriodColumn {
    pub fn n_periods(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    Categorical(CatColumn),
    Period(PeriodColumn),
    Text(Vec<String>),
}

impl Column {
    fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(c) => c.codes.len(),
            Column::Period(p) => p.codes.len(),
            Column::Text(t) => t.len(),
        }
    }
}

/// Columnar table with every schema column parsed and encoded.
#[derive(Debug, Clone)]
pub struct EncodedTable {
    schema: Schema,
    n_rows: usize,
    columns: Vec<Column>,
}

impl EncodedTable {
    /// Assembles a table from already encoded columns, enforcing the same
    /// invariants the loader guarantees.
    pub fn from_columns(schema: Schema, columns: Vec<Column>) -> Result<Self> {
        if columns.len() != schema.columns().len() {
            return Err(Error::DimensionMismatch(format!(
                "{} schema columns but {} data columns",
                schema.columns().len(),
                columns.len()
            )));
        }
        let n_rows = columns.first().map_or(0, Column::len);
        for (spec, col) in schema.columns().iter().zip(&columns) {
            if col.len() != n_rows {
                return Err(Error::DimensionMismatch(format!(
                    "column `{}` has {} rows, expected {n_rows}",
                    spec.name,
                    col.len()
                )));
            }
            match col {
                Column::Numeric(v) => {
                    if let Some(row) = v.iter().position(|x| !x.is_finite()) {
                        return Err(Error::NonFiniteValue {
                            row: row + 1,
                            column: spec.name.clone(),
                        });
                    }
                }
                Column::Categorical(c) => {
                    if !c.levels.windows(2).all(|w| w[0] < w[1]) {
                        return Err(Error::Schema(format!(
                            "column `{}`: levels must be sorted and distinct",
                            spec.name
                        )));
                    }
                    if c.codes.iter().any(|&v| v as usize >= c.levels.len()) {
                        return Err(Error::Schema(format!(
                            "column `{}`: code out of range",
                            spec.name
                        )));
                    }
                }
                Column::Period(p) => {
                    if !p.values.windows(2).all(|w| w[0] < w[1]) {
                        return Err(Error::Schema(format!(
                            "column `{}`: period values must be sorted and distinct",
                            spec.name
                        )));
                    }
                    if p.codes.iter().any(|&v| v as usize >= p.values.len()) {
                        return Err(Error::Schema(format!(
                            "column `{}`: period code out of range",
                            spec.name
                        )));
                    }
                }
                Column::Text(_) => {}
            }
        }
        Ok(EncodedTable {
            schema,
            n_rows,
            columns,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    /// Bytes of column storage held on the heap.
    pub fn heap_bytes(&self) -> usize {
        use std::mem::size_of;
        self.columns
            .iter()
            .map(|col| match col {
                Column::Numeric(v) => v.len() * size_of::<f64>(),
                Column::Categorical(c) => {
                    c.codes.len() * size_of::<u32>()
                        + c.levels.iter().map(String::len).sum::<usize>()
                }
                Column::Period(p) => {
                    p.codes.len() * size_of::<u32>() + p.values.len() * size_of::<f64>()
                }
                Column::Text(t) => t.iter().map(String::len).sum(),
            })
            .sum()
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        let pos = self
            .schema
            .position(name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))?;
        Ok(&self.columns[pos])
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64]> {
        match self.column(name)? {
            Column::Numeric(v) => Ok(v),
            _ => Err(Error::Invalid(format!("column `{name}` is not numeric"))),
        }
    }

    pub fn categorical(&self, name: &str) -> Result<&CatColumn> {
        match self.column(name)? {
            Column::Categorical(c) => Ok(c),
            _ => Err(Error::Invalid(format!(
                "column `{name}` is not categorical"
            ))),
        }
    }

    pub fn treatment(&self) -> &CatColumn {
        match self.column(self.schema.treatment_name()) {
            Ok(Column::Categorical(c)) => c,
            _ => unreachable!("loader encodes the treatment column as categorical"),
        }
    }

    pub fn period(&self) -> Option<&PeriodColumn> {
        let name = self.schema.time_period_name()?;
        match self.column(name) {
            Ok(Column::Period(p)) => Some(p),
            _ => None,
        }
    }

    pub fn cluster(&self) -> Option<&CatColumn> {
        let name = self.schema.cluster_name()?;
        match self.column(name) {
            Ok(Column::Categorical(c)) => Some(c),
            _ => None,
        }
    }

    pub fn kpi_names(&self) -> Vec<&str> {
        self.schema.names_of(ColumnKind::Kpi)
    }

    /// KPI columns in schema order, each a length-n slice.
    pub fn kpi_columns(&self) -> Vec<&[f64]> {
        self.schema
            .names_of(ColumnKind::Kpi)
            .iter()
            .map(|name| self.numeric(name).expect("kpi columns are numeric"))
            .collect()
    }

    pub fn instrument_names(&self) -> Vec<&str> {
        self.schema.names_of(ColumnKind::Instrument)
    }
}

/// Reads `path` against `schema`. Extra columns in the file are ignored;
/// schema columns must all be present.
pub fn load_table(path: impl AsRef<Path>, schema: &Schema) -> Result<EncodedTable> {
    let path = path.as_ref();
    let label = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: label.clone(),
        source,
    })?;
    load_table_from_reader(file, schema, &label)
}

/// Reader-based variant of [`load_table`]; `label` appears in error messages
/// in place of a path.
pub fn load_table_from_reader(
    rdr: impl Read,
    schema: &Schema,
    label: &str,
) -> Result<EncodedTable> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(rdr);
    let headers = csv
        .headers()
        .map_err(|source| Error::Csv {
            path: label.to_string(),
            source,
        })?
        .clone();

    let field_pos: Vec<usize> = schema
        .columns()
        .iter()
        .map(|spec| {
            headers
                .iter()
                .position(|h| h == spec.name)
                .ok_or_else(|| Error::MissingColumn(spec.name.clone()))
        })
        .collect::<Result<_>>()?;

    enum Builder {
        Num(Vec<f64>),
        Cat {
            codes: Vec<u32>,
            seen: HashMap<String, u32>,
            levels: Vec<String>,
        },
        Text(Vec<String>),
    }

    let mut builders: Vec<Builder> = schema
        .columns()
        .iter()
        .map(|spec| match spec.kind {
            ColumnKind::Categorical | ColumnKind::Treatment | ColumnKind::ClusterId => {
                Builder::Cat {
                    codes: Vec::new(),
                    seen: HashMap::new(),
                    levels: Vec::new(),
                }
            }
            ColumnKind::UnitId => Builder::Text(Vec::new()),
            _ => Builder::Num(Vec::new()),
        })
        .collect();

    for (rec_idx, record) in csv.records().enumerate() {
        let record = record.map_err(|source| Error::Csv {
            path: label.to_string(),
            source,
        })?;
        let row = rec_idx + 1;
        for (spec_idx, spec) in schema.columns().iter().enumerate() {
            let raw = record.get(field_pos[spec_idx]).unwrap_or("");
            if raw.is_empty() {
                return Err(Error::MissingValue {
                    row,
                    column: spec.name.clone(),
                });
            }
            match &mut builders[spec_idx] {
                Builder::Num(values) => {
                    let v = f64::from_str(raw).map_err(|_| Error::UnparseableValue {
                        row,
                        column: spec.name.clone(),
                        value: raw.to_string(),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::NonFiniteValue {
                            row,
                            column: spec.name.clone(),
                        });
                    }
                    values.push(v);
                }
                Builder::Cat {
                    codes,
                    seen,
                    levels,
                } => {
                    let code = match seen.get(raw) {
                        Some(&c) => c,
                        None => {
                            let c = levels.len() as u32;
                            seen.insert(raw.to_string(), c);
                            levels.push(raw.to_string());
                            c
                        }
                    };
                    codes.push(code);
                }
                Builder::Text(values) => values.push(raw.to_string()),
            }
        }
    }

    let columns: Vec<Column> = schema
        .columns()
        .iter()
        .zip(builders)
        .map(|(spec, b)| match b {
            Builder::Num(values) => {
                if spec.kind == ColumnKind::TimePeriod {
                    Column::Period(encode_periods(values))
                } else {
                    Column::Numeric(values)
                }
            }
            Builder::Cat { codes, levels, .. } => Column::Categorical(sort_levels(codes, levels)),
            Builder::Text(values) => Column::Text(values),
        })
        .collect();

    EncodedTable::from_columns(schema.clone(), columns)
}

/// Remaps first-appearance codes onto lexicographically sorted levels.
fn sort_levels(codes: Vec<u32>, levels: Vec<String>) -> CatColumn {
    let mut order: Vec<u32> = (0..levels.len() as u32).collect();
    order.sort_by(|&a, &b| levels[a as usize].cmp(&levels[b as usize]));
    let mut remap = vec![0u32; levels.len()];
    for (new_code, &old_code) in order.iter().enumerate() {
        remap[old_code as usize] = new_code as u32;
    }
    let sorted_levels: Vec<String> = order
        .iter()
        .map(|&old| levels[old as usize].clone())
        .collect();
    CatColumn {
        codes: codes.into_iter().map(|c| remap[c as usize]).collect(),
        levels: sorted_levels,
    }
}

fn encode_periods(values: Vec<f64>) -> PeriodColumn {
    let mut distinct = values.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let codes = values
        .iter()
        .map(|v| distinct.partition_point(|d| d < v) as u32)
        .collect();
    PeriodColumn {
        codes,
        values: distinct,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ColumnSummary {
    pub name: String,
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distinct: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TableSummary {
    pub n_rows: usize,
    pub columns: Vec<ColumnSummary>,
}

/// Per-column descriptive statistics; cheap enough to run on every load.
pub fn summarize(table: &EncodedTable) -> TableSummary {
    let columns = table
        .schema
        .columns()
        .iter()
        .zip(&table.columns)
        .map(|(spec, col)| {
            let mut s = ColumnSummary {
                name: spec.name.clone(),
                kind: spec.kind.as_str(),
                distinct: None,
                mean: None,
                min: None,
                max: None,
            };
            match col {
                Column::Numeric(v) if !v.is_empty() => {
                    s.mean = Some(crate::stats::compensated_sum(v) / v.len() as f64);
                    s.min = v.iter().copied().reduce(f64::min);
                    s.max = v.iter().copied().reduce(f64::max);
                }
                Column::Categorical(c) => s.distinct = Some(c.n_levels()),
                Column::Period(p) => {
                    s.distinct = Some(p.n_periods());
                    s.min = p.values.first().copied();
                    s.max = p.values.last().copied();
                }
                _ => {}
            }
            s
        })
        .collect();
    TableSummary {
        n_rows: table.n_rows,
        columns,
    }
}
