//! Model description and sparse design construction.
//!
//! A [`DesignSpec`] names the treatment, the covariates, and which
//! interactions to include; [`build_layout`] expands that into a
//! deterministic [`ColumnLayout`] mapping every coefficient to a meaning.
//! The design matrix is `[1 | A | X | A×X | A×T]` with reference levels
//! dropped: the lexicographically smallest treatment level and the earliest
//! period absorb into the intercept block.
//!
//! Treatment effects never require predicting counterfactual outcomes row by
//! row. [`effect_contrast`] builds the vector `c` with segment covariate
//! means in the interaction slots, so that `cᵀβ̂` is the segment's effect and
//! `cᵀ Cov(β̂) c` its variance — no n×p matrix is ever materialized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{CatColumn, Column, ColumnKind, EncodedTable};
use crate::sparse::{DesignRows, SparseDesignMatrix};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub treatment: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Include treatment × covariate interactions (needed for CATEs).
    #[serde(default)]
    pub interact_treatment_covariates: bool,
    /// Include treatment × period interactions (needed for time-dynamic
    /// effects); requires a time_period column.
    #[serde(default)]
    pub interact_treatment_time: bool,
}

impl DesignSpec {
    pub fn main_effects(treatment: impl Into<String>) -> Self {
        DesignSpec {
            treatment: treatment.into(),
            covariates: Vec::new(),
            interact_treatment_covariates: false,
            interact_treatment_time: false,
        }
    }
}

/// One expanded covariate design slot: either a numeric column as-is or a
/// single non-reference level of a categorical column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CovSlot {
    /// Index into [`ColumnLayout::covariates`].
    pub cov: usize,
    /// Dummy level code for categorical covariates, `None` for numeric.
    pub level: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub name: String,
    /// Level dictionary for categorical covariates, `None` for numeric.
    pub levels: Option<Vec<String>>,
}

/// Meaning of one design-matrix column.
#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Intercept,
    /// Main effect of a non-reference treatment level.
    Treatment {
        level: u32,
    },
    /// Covariate slot (numeric value or level dummy).
    Covariate {
        slot: usize,
    },
    /// Treatment × covariate interaction.
    Interaction {
        level: u32,
        slot: usize,
    },
    /// Treatment × period interaction for a non-reference period.
    Period {
        level: u32,
        period: u32,
    },
}

/// Deterministic mapping between model terms and design-matrix columns:
/// intercept, then treatment dummies, covariate slots, treatment × covariate
/// blocks (treatment-major), and treatment × period blocks.
#[derive(Debug, Clone)]
pub struct ColumnLayout {
    treatment_name: String,
    treatment_levels: Vec<String>,
    covariates: Vec<Covariate>,
    slots: Vec<CovSlot>,
    period_name: Option<String>,
    period_values: Vec<f64>,
    interact_cov: bool,
    interact_time: bool,
    terms: Vec<Term>,
    names: Vec<String>,
    inter_start: usize,
    time_start: usize,
}

impl ColumnLayout {
    /// Total number of design columns, p.
    pub fn n_cols(&self) -> usize {
        self.terms.len()
    }

    pub fn treatment_name(&self) -> &str {
        &self.treatment_name
    }

    /// All treatment levels; index 0 is the reference.
    pub fn treatment_levels(&self) -> &[String] {
        &self.treatment_levels
    }

    pub fn n_treatments(&self) -> usize {
        self.treatment_levels.len()
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn slots(&self) -> &[CovSlot] {
        &self.slots
    }

    pub fn has_cov_interactions(&self) -> bool {
        self.interact_cov
    }

    pub fn has_time_interactions(&self) -> bool {
        self.interact_time
    }

    /// Distinct period values when the model has a time axis.
    pub fn period_values(&self) -> &[f64] {
        &self.period_values
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// Human-readable column names, e.g. `arm[b]`, `spend`, `arm[b]×spend`,
    /// `arm[b]×week[3]`.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    #[inline]
    pub fn intercept_col(&self) -> usize {
        0
    }

    /// Main-effect column of treatment level `k ≥ 1`.
    #[inline]
    pub fn treatment_col(&self, k: u32) -> usize {
        debug_assert!(k >= 1);
        k as usize
    }

    /// Column of covariate slot `s`.
    #[inline]
    pub fn slot_col(&self, s: usize) -> usize {
        self.treatment_levels.len() + s
    }

    /// Column of the (treatment level k) × (slot s) interaction.
    #[inline]
    pub fn interaction_col(&self, k: u32, s: usize) -> usize {
        debug_assert!(self.interact_cov && k >= 1);
        self.inter_start + (k as usize - 1) * self.slots.len() + s
    }

    /// Column of the (treatment level k) × (period t ≥ 1) interaction.
    #[inline]
    pub fn period_col(&self, k: u32, t: u32) -> usize {
        debug_assert!(self.interact_time && k >= 1 && t >= 1);
        self.time_start + (k as usize - 1) * (self.period_values.len() - 1) + (t as usize - 1)
    }

    pub fn treatment_code(&self, level: &str) -> Result<u32> {
        self.treatment_levels
            .iter()
            .position(|l| l == level)
            .map(|i| i as u32)
            .ok_or_else(|| Error::UnknownLevel {
                column: self.treatment_name.clone(),
                level: level.to_string(),
            })
    }

    pub fn period_code(&self, value: f64) -> Result<u32> {
        self.period_values
            .iter()
            .position(|&v| v == value)
            .map(|i| i as u32)
            .ok_or_else(|| Error::UnknownLevel {
                column: self.period_name.clone().unwrap_or_else(|| "period".into()),
                level: format!("{value}"),
            })
    }
}

/// Expands a [`DesignSpec`] against a table into a concrete column layout.
pub fn build_layout(table: &EncodedTable, spec: &DesignSpec) -> Result<ColumnLayout> {
    let schema = table.schema();
    match schema.kind_of(&spec.treatment) {
        None => return Err(Error::UnknownColumn(spec.treatment.clone())),
        Some(ColumnKind::Treatment) => {}
        Some(_) => return Err(Error::TreatmentNotCategorical(spec.treatment.clone())),
    }
    let treatment = table.treatment();
    if treatment.n_levels() < 2 {
        return Err(Error::FewerThanTwoTreatmentLevels {
            column: spec.treatment.clone(),
            found: treatment.n_levels(),
        });
    }

    let mut covariates = Vec::with_capacity(spec.covariates.len());
    let mut slots = Vec::new();
    for (ci, name) in spec.covariates.iter().enumerate() {
        if name == &spec.treatment {
            return Err(Error::Invalid(format!(
                "treatment column `{name}` cannot also be a covariate"
            )));
        }
        if spec.covariates[..ci].contains(name) {
            return Err(Error::Invalid(format!("duplicate covariate `{name}`")));
        }
        match schema.kind_of(name) {
            None => return Err(Error::UnknownColumn(name.clone())),
            Some(ColumnKind::Numeric) => {
                covariates.push(Covariate {
                    name: name.clone(),
                    levels: None,
                });
                slots.push(CovSlot {
                    cov: ci,
                    level: None,
                });
            }
            Some(ColumnKind::Categorical) => {
                let cat = table.categorical(name)?;
                covariates.push(Covariate {
                    name: name.clone(),
                    levels: Some(cat.levels.clone()),
                });
                for level in 1..cat.n_levels() as u32 {
                    slots.push(CovSlot {
                        cov: ci,
                        level: Some(level),
                    });
                }
            }
            Some(other) => {
                return Err(Error::Invalid(format!(
                    "column `{name}` has kind {}, which cannot be a covariate",
                    other.as_str()
                )))
            }
        }
    }

    let (period_name, period_values) = if spec.interact_treatment_time {
        let period = table.period().ok_or(Error::NoTimeAxis)?;
        (
            schema.time_period_name().map(str::to_string),
            period.values.clone(),
        )
    } else {
        (None, Vec::new())
    };

    let k = treatment.n_levels();
    let c = slots.len();
    let t = period_values.len();
    let inter_start = k + c;
    let time_start = inter_start
        + if spec.interact_treatment_covariates {
            (k - 1) * c
        } else {
            0
        };

    let mut terms = Vec::new();
    terms.push(Term::Intercept);
    for level in 1..k as u32 {
        terms.push(Term::Treatment { level });
    }
    for slot in 0..c {
        terms.push(Term::Covariate { slot });
    }
    if spec.interact_treatment_covariates {
        for level in 1..k as u32 {
            for slot in 0..c {
                terms.push(Term::Interaction { level, slot });
            }
        }
    }
    if spec.interact_treatment_time {
        for level in 1..k as u32 {
            for period in 1..t as u32 {
                terms.push(Term::Period { level, period });
            }
        }
    }

    let mut layout = ColumnLayout {
        treatment_name: spec.treatment.clone(),
        treatment_levels: treatment.levels.clone(),
        covariates,
        slots,
        period_name,
        period_values,
        interact_cov: spec.interact_treatment_covariates,
        interact_time: spec.interact_treatment_time,
        terms,
        names: Vec::new(),
        inter_start,
        time_start,
    };
    layout.names = layout.terms.iter().map(|t| term_name(&layout, t)).collect();
    Ok(layout)
}

fn slot_name(layout: &ColumnLayout, s: usize) -> String {
    let slot = &layout.slots[s];
    let cov = &layout.covariates[slot.cov];
    match (slot.level, &cov.levels) {
        (Some(l), Some(levels)) => format!("{}[{}]", cov.name, levels[l as usize]),
        _ => cov.name.clone(),
    }
}

fn term_name(layout: &ColumnLayout, term: &Term) -> String {
    match term {
        Term::Intercept => "intercept".into(),
        Term::Treatment { level } => format!(
            "{}[{}]",
            layout.treatment_name, layout.treatment_levels[*level as usize]
        ),
        Term::Covariate { slot } => slot_name(layout, *slot),
        Term::Interaction { level, slot } => format!(
            "{}[{}]×{}",
            layout.treatment_name,
            layout.treatment_levels[*level as usize],
            slot_name(layout, *slot)
        ),
        Term::Period { level, period } => format!(
            "{}[{}]×{}[{}]",
            layout.treatment_name,
            layout.treatment_levels[*level as usize],
            layout.period_name.as_deref().unwrap_or("period"),
            layout.period_values[*period as usize]
        ),
    }
}

/// Borrowed view of one covariate's data, dispatched once per build instead
/// of per row.
enum CovData<'a> {
    Numeric(&'a [f64]),
    Categorical(&'a CatColumn),
}

fn cov_data<'a>(table: &'a EncodedTable, layout: &ColumnLayout) -> Result<Vec<CovData<'a>>> {
    layout
        .covariates
        .iter()
        .map(|cov| match table.column(&cov.name)? {
            Column::Numeric(v) => Ok(CovData::Numeric(v)),
            Column::Categorical(c) => Ok(CovData::Categorical(c)),
            _ => Err(Error::Invalid(format!(
                "column `{}` changed kind between layout and build",
                cov.name
            ))),
        })
        .collect()
}

/// Streams the sparse pattern of single design rows without materializing
/// the matrix. Column indices are produced in increasing order.
pub struct RowPatterns<'a> {
    layout: &'a ColumnLayout,
    treatment: &'a [u32],
    covs: Vec<CovData<'a>>,
    periods: Option<&'a [u32]>,
}

impl<'a> RowPatterns<'a> {
    pub fn new(table: &'a EncodedTable, layout: &'a ColumnLayout) -> Result<Self> {
        let periods = if layout.interact_time {
            Some(table.period().ok_or(Error::NoTimeAxis)?.codes.as_slice())
        } else {
            None
        };
        Ok(RowPatterns {
            layout,
            treatment: &table.treatment().codes,
            covs: cov_data(table, layout)?,
            periods,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.treatment.len()
    }

    /// Maximum number of nonzeros any row can have.
    pub fn max_nnz(&self) -> usize {
        let l = self.layout;
        2 + l.slots.len()
            + if l.interact_cov { l.slots.len() } else { 0 }
            + if l.interact_time { 1 } else { 0 }
    }

    /// Writes row `i`'s nonzero (column, value) pairs into `cols`/`vals`.
    pub fn fill(&self, i: usize, cols: &mut Vec<u32>, vals: &mut Vec<f64>) {
        cols.clear();
        vals.clear();
        let l = self.layout;
        cols.push(0);
        vals.push(1.0);
        let k = self.treatment[i];
        if k > 0 {
            cols.push(l.treatment_col(k) as u32);
            vals.push(1.0);
        }
        for (s, slot) in l.slots.iter().enumerate() {
            if let Some(v) = slot_value(&self.covs[slot.cov], slot.level, i) {
                cols.push(l.slot_col(s) as u32);
                vals.push(v);
            }
        }
        if l.interact_cov && k > 0 {
            for (s, slot) in l.slots.iter().enumerate() {
                if let Some(v) = slot_value(&self.covs[slot.cov], slot.level, i) {
                    cols.push(l.interaction_col(k, s) as u32);
                    vals.push(v);
                }
            }
        }
        if let Some(periods) = self.periods {
            let t = periods[i];
            if k > 0 && t > 0 {
                cols.push(l.period_col(k, t) as u32);
                vals.push(1.0);
            }
        }
    }
}

#[inline]
fn slot_value(data: &CovData<'_>, level: Option<u32>, row: usize) -> Option<f64> {
    match (data, level) {
        (CovData::Numeric(v), None) => {
            let x = v[row];
            (x != 0.0).then_some(x)
        }
        (CovData::Categorical(c), Some(l)) => (c.codes[row] == l).then_some(1.0),
        _ => unreachable!("slot/covariate kind mismatch"),
    }
}

/// Materializes the design matrix in compressed sparse column form.
/// Columns build independently, so this parallelizes over p.
pub fn build_design(table: &EncodedTable, layout: &ColumnLayout) -> Result<SparseDesignMatrix> {
    let n = table.n_rows();
    let treatment = &table.treatment().codes;
    let covs = cov_data(table, layout)?;
    let periods = if layout.interact_time {
        Some(table.period().ok_or(Error::NoTimeAxis)?.codes.as_slice())
    } else {
        None
    };

    let columns = crate::exec::map_indexed(layout.n_cols(), |j| {
        let mut rows = Vec::new();
        let mut vals = Vec::new();
        match &layout.terms[j] {
            Term::Intercept => {
                rows.extend(0..n as u32);
                vals.extend(std::iter::repeat_n(1.0, n));
            }
            Term::Treatment { level } => {
                for (i, &k) in treatment.iter().enumerate() {
                    if k == *level {
                        rows.push(i as u32);
                        vals.push(1.0);
                    }
                }
            }
            Term::Covariate { slot } => {
                let s = &layout.slots[*slot];
                for i in 0..n {
                    if let Some(v) = slot_value(&covs[s.cov], s.level, i) {
                        rows.push(i as u32);
                        vals.push(v);
                    }
                }
            }
            Term::Interaction { level, slot } => {
                let s = &layout.slots[*slot];
                for (i, &k) in treatment.iter().enumerate() {
                    if k == *level {
                        if let Some(v) = slot_value(&covs[s.cov], s.level, i) {
                            rows.push(i as u32);
                            vals.push(v);
                        }
                    }
                }
            }
            Term::Period { level, period } => {
                let periods = periods.expect("time interactions imply period codes");
                for i in 0..n {
                    if treatment[i] == *level && periods[i] == *period {
                        rows.push(i as u32);
                        vals.push(1.0);
                    }
                }
            }
        }
        (rows, vals)
    });

    Ok(SparseDesignMatrix::from_columns(n, columns))
}

/// Row-major variant of [`build_design`], built by streaming row patterns.
pub fn build_design_rows(table: &EncodedTable, layout: &ColumnLayout) -> Result<DesignRows> {
    let patterns = RowPatterns::new(table, layout)?;
    let n = patterns.n_rows();
    let rows: Vec<(Vec<u32>, Vec<f64>)> = crate::exec::map_indexed(n, |i| {
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        patterns.fill(i, &mut cols, &mut vals);
        (cols, vals)
    });
    Ok(DesignRows::from_rows(layout.n_cols(), rows))
}

/// A row subset defined by equality predicates on categorical columns. An
/// empty predicate list selects the whole population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    #[serde(default)]
    pub filter: Vec<(String, String)>,
}

impl Segment {
    pub fn population() -> Self {
        Segment { filter: Vec::new() }
    }

    pub fn level(column: impl Into<String>, level: impl Into<String>) -> Self {
        Segment {
            filter: vec![(column.into(), level.into())],
        }
    }

    pub fn label(&self) -> String {
        if self.filter.is_empty() {
            "all".into()
        } else {
            self.filter
                .iter()
                .map(|(c, l)| format!("{c}={l}"))
                .collect::<Vec<_>>()
                .join("&")
        }
    }

    /// 0/1 row mask; errors on unknown columns or levels.
    pub fn mask(&self, table: &EncodedTable) -> Result<Vec<bool>> {
        let mut mask = vec![true; table.n_rows()];
        for (column, level) in &self.filter {
            let cat = table.categorical(column)?;
            let code = cat.code_of(level).ok_or_else(|| Error::UnknownLevel {
                column: column.clone(),
                level: level.clone(),
            })?;
            for (m, &c) in mask.iter_mut().zip(&cat.codes) {
                *m &= c == code;
            }
        }
        Ok(mask)
    }
}

/// Contrast vector in sparse form: `point = Σ values·β[support]`.
#[derive(Debug, Clone)]
pub struct ContrastVector {
    pub support: Vec<usize>,
    pub values: Vec<f64>,
    /// Rows the segment selected.
    pub n_segment: usize,
    pub treatment_level: String,
    pub segment_label: String,
    pub period: Option<f64>,
}

impl ContrastVector {
    pub fn dense(&self, p: usize) -> Vec<f64> {
        let mut c = vec![0.0; p];
        for (&j, &v) in self.support.iter().zip(&self.values) {
            c[j] = v;
        }
        c
    }

    pub fn dot(&self, beta: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.values)
            .map(|(&j, &v)| v * beta[j])
            .sum()
    }
}

/// Builds the contrast for the effect of `level` (vs the reference level) on
/// `segment`, optionally at a single period value. With `period = None` and a
/// time axis present, the contrast averages over the segment's observed
/// period distribution.
///
/// Interaction entries hold the segment means of the covariate slots, read
/// straight off the table through the segment mask — no row subset is copied
/// and no counterfactual rows are predicted.
pub fn effect_contrast(
    layout: &ColumnLayout,
    table: &EncodedTable,
    level: &str,
    segment: &Segment,
    period: Option<f64>,
) -> Result<ContrastVector> {
    let k = layout.treatment_code(level)?;
    if k == 0 {
        return Err(Error::ReferenceLevelRequested(level.to_string()));
    }
    let mask = segment.mask(table)?;
    let n_segment = mask.iter().filter(|&&m| m).count();
    if n_segment == 0 {
        return Err(Error::EmptySegment(segment.label()));
    }
    if period.is_some() && !layout.interact_time {
        return Err(Error::NoTimeAxis);
    }

    let mut support = vec![layout.treatment_col(k)];
    let mut values = vec![1.0];

    if layout.interact_cov && !layout.slots.is_empty() {
        let covs = cov_data(table, layout)?;
        for (s, slot) in layout.slots.iter().enumerate() {
            let mut acc = crate::stats::Acc::new();
            match (&covs[slot.cov], slot.level) {
                (CovData::Numeric(v), None) => {
                    for (i, &m) in mask.iter().enumerate() {
                        if m {
                            acc.add(v[i]);
                        }
                    }
                }
                (CovData::Categorical(c), Some(l)) => {
                    for (i, &m) in mask.iter().enumerate() {
                        if m && c.codes[i] == l {
                            acc.add(1.0);
                        }
                    }
                }
                _ => unreachable!("slot/covariate kind mismatch"),
            }
            let mean = acc.value() / n_segment as f64;
            if mean != 0.0 {
                support.push(layout.interaction_col(k, s));
                values.push(mean);
            }
        }
    }

    if layout.interact_time {
        let codes = &table.period().ok_or(Error::NoTimeAxis)?.codes;
        match period {
            Some(v) => {
                let t = layout.period_code(v)?;
                if t > 0 {
                    support.push(layout.period_col(k, t));
                    values.push(1.0);
                }
            }
            None => {
                let t_count = layout.period_values.len();
                let mut counts = vec![0usize; t_count];
                for (i, &m) in mask.iter().enumerate() {
                    if m {
                        counts[codes[i] as usize] += 1;
                    }
                }
                for t in 1..t_count as u32 {
                    let share = counts[t as usize] as f64 / n_segment as f64;
                    if share != 0.0 {
                        support.push(layout.period_col(k, t));
                        values.push(share);
                    }
                }
            }
        }
    }

    Ok(ContrastVector {
        support,
        values,
        n_segment,
        treatment_level: level.to_string(),
        segment_label: segment.label(),
        period,
    })
}
