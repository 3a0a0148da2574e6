//! Treatment-effect estimates read off a fitted model.
//!
//! Every estimate is a contrast `cᵀβ̂` with a delta-method standard error
//! `√(cᵀ Cov(β̂) c)`. [`effect_sweep`] enumerates (segment × period ×
//! treatment × KPI) cells, computing each segment's covariate profile once
//! and reusing it across all of that segment's cells.
//!
//! [`naive_counterfactual_oracle`] is the deliberately brute-force
//! alternative — materialize dense rows with the treatment column rewritten,
//! predict both arms, average the difference. It exists to check the
//! contrast path and to quantify what it saves, and it refuses to run past
//! [`ORACLE_MAX_ROWS`].

use serde::Serialize;

use crate::design::{ColumnLayout, ContrastVector, Segment};
use crate::error::{Error, Result};
use crate::exec;
use crate::ingest::{Column, EncodedTable};
use crate::solver::{CovKind, FitResult};
use crate::stats::{Acc, Z_95};

/// One estimated effect cell, in the shape reports serialize.
#[derive(Debug, Clone, Serialize)]
pub struct EffectEstimate {
    pub kpi: String,
    pub treatment: String,
    pub segment: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    pub point: f64,
    pub se: f64,
    pub z: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Rows in the segment.
    pub n: u64,
    pub cov_kind: String,
}

pub(crate) fn z_score(point: f64, se: f64) -> f64 {
    if se == 0.0 {
        if point == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(point)
        }
    } else {
        point / se
    }
}

/// Evaluates one contrast under one KPI and covariance kind.
pub fn estimate_effect(
    fit: &FitResult,
    contrast: &ContrastVector,
    kind: CovKind,
    kpi: usize,
) -> Result<EffectEstimate> {
    let cov = fit.cov(kind, kpi)?;
    let point = contrast.dot(fit.beta(kpi));
    let var = cov.quad_form_sparse(&contrast.support, &contrast.values);
    let se = var.max(0.0).sqrt();
    Ok(EffectEstimate {
        kpi: fit.kpi_names()[kpi].clone(),
        treatment: contrast.treatment_level.clone(),
        segment: contrast.segment_label.clone(),
        period: contrast.period,
        point,
        se,
        z: z_score(point, se),
        ci_lo: point - Z_95 * se,
        ci_hi: point + Z_95 * se,
        n: contrast.n_segment as u64,
        cov_kind: kind.as_str().to_string(),
    })
}

/// Which segments a sweep enumerates.
#[derive(Debug, Clone)]
pub enum SegmentSet {
    /// The whole population as one segment.
    Population,
    /// One segment per level of a categorical column.
    ByColumn(String),
    /// Explicit segment list.
    Segments(Vec<Segment>),
}

/// Whether a sweep emits one cell per period or aggregates over them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeriodChoice {
    /// One cell per segment, averaging over the segment's observed periods
    /// (or no time axis at all).
    Aggregate,
    /// One cell per distinct period value; requires time interactions.
    Each,
}

/// Covariate profile of one segment: everything a contrast needs.
struct SegmentProfile {
    label: String,
    n: u64,
    /// Mean of each covariate slot over the segment.
    slot_means: Vec<f64>,
    /// Count of segment rows in each period (empty without a time axis).
    period_counts: Vec<u64>,
}

/// Builds the contrast for one (segment, treatment, period) cell from a
/// precomputed profile. Mirrors [`effect_contrast`] exactly.
fn contrast_from_profile(
    layout: &ColumnLayout,
    profile: &SegmentProfile,
    k: u32,
    period: Option<u32>,
) -> ContrastVector {
    let mut support = vec![layout.treatment_col(k)];
    let mut values = vec![1.0];
    if layout.has_cov_interactions() {
        for (s, &mean) in profile.slot_means.iter().enumerate() {
            if mean != 0.0 {
                support.push(layout.interaction_col(k, s));
                values.push(mean);
            }
        }
    }
    if layout.has_time_interactions() {
        match period {
            Some(t) => {
                if t > 0 {
                    support.push(layout.period_col(k, t));
                    values.push(1.0);
                }
            }
            None => {
                for t in 1..profile.period_counts.len() as u32 {
                    let share = profile.period_counts[t as usize] as f64 / profile.n as f64;
                    if share != 0.0 {
                        support.push(layout.period_col(k, t));
                        values.push(share);
                    }
                }
            }
        }
    }
    ContrastVector {
        support,
        values,
        n_segment: profile.n as usize,
        treatment_level: layout.treatment_levels()[k as usize].clone(),
        segment_label: profile.label.clone(),
        period: period.map(|t| layout.period_values()[t as usize]),
    }
}

/// Chunk-mergeable accumulator for per-segment sums.
struct ProfileAcc {
    n: Vec<u64>,
    slot_sums: Vec<Acc>,
    period_counts: Vec<u64>,
}

impl ProfileAcc {
    fn new(s: usize, c: usize, t: usize) -> Self {
        ProfileAcc {
            n: vec![0; s],
            slot_sums: vec![Acc::new(); s * c],
            period_counts: vec![0; s * t],
        }
    }

    fn merge(&mut self, other: ProfileAcc) {
        for (a, b) in self.n.iter_mut().zip(other.n) {
            *a += b;
        }
        for (a, b) in self.slot_sums.iter_mut().zip(other.slot_sums) {
            a.merge(b);
        }
        for (a, b) in self.period_counts.iter_mut().zip(other.period_counts) {
            *a += b;
        }
    }
}

/// Computes every segment's profile. Segment membership comes per row from
/// `seg_of` (`u32::MAX` = no segment), in one chunked pass over the table.
fn profiles_from_ids(
    table: &EncodedTable,
    layout: &ColumnLayout,
    labels: Vec<String>,
    seg_of: impl Fn(usize) -> u32 + Sync + Send,
) -> Result<Vec<SegmentProfile>> {
    let s_count = labels.len();
    let c = layout.slots().len();
    let slot_cols: Vec<SlotData> = slot_data(table, layout)?;
    let periods = table.period().map(|p| p.codes.as_slice());
    let t_count = if layout.has_time_interactions() {
        layout.period_values().len()
    } else {
        0
    };

    let mut total = ProfileAcc::new(s_count, c, t_count);
    exec::reduce_chunks(
        table.n_rows(),
        exec::ROW_CHUNK,
        |range| {
            let mut acc = ProfileAcc::new(s_count, c, t_count);
            for i in range {
                let s = seg_of(i);
                if s == u32::MAX {
                    continue;
                }
                let s = s as usize;
                acc.n[s] += 1;
                for (slot, data) in slot_cols.iter().enumerate() {
                    if let Some(v) = data.value(i) {
                        acc.slot_sums[s * c + slot].add(v);
                    }
                }
                if t_count > 0 {
                    let t = periods.expect("time axis checked at layout build")[i];
                    acc.period_counts[s * t_count + t as usize] += 1;
                }
            }
            acc
        },
        |part| total.merge(part),
    );

    labels
        .into_iter()
        .enumerate()
        .map(|(s, label)| {
            if total.n[s] == 0 {
                return Err(Error::EmptySegment(label));
            }
            Ok(SegmentProfile {
                label,
                n: total.n[s],
                slot_means: (0..c)
                    .map(|slot| total.slot_sums[s * c + slot].value() / total.n[s] as f64)
                    .collect(),
                period_counts: total.period_counts[s * t_count..(s + 1) * t_count].to_vec(),
            })
        })
        .collect()
}

pub(crate) enum SlotData<'a> {
    Numeric(&'a [f64]),
    Dummy { codes: &'a [u32], level: u32 },
}

impl SlotData<'_> {
    #[inline]
    pub(crate) fn value(&self, i: usize) -> Option<f64> {
        match self {
            SlotData::Numeric(v) => {
                let x = v[i];
                (x != 0.0).then_some(x)
            }
            SlotData::Dummy { codes, level } => (codes[i] == *level).then_some(1.0),
        }
    }
}

/// Resolves layout slots against a table, which may be a fresh population
/// scored with an existing fit; level dictionaries must agree exactly.
pub(crate) fn slot_data<'a>(
    table: &'a EncodedTable,
    layout: &ColumnLayout,
) -> Result<Vec<SlotData<'a>>> {
    layout
        .slots()
        .iter()
        .map(|slot| {
            let cov = &layout.covariates()[slot.cov];
            match (table.column(&cov.name)?, slot.level) {
                (Column::Numeric(v), None) => Ok(SlotData::Numeric(v)),
                (Column::Categorical(c), Some(level)) => {
                    if cov.levels.as_ref() != Some(&c.levels) {
                        return Err(Error::Invalid(format!(
                            "column `{}` has levels {:?}, but the layout was built with {:?}",
                            cov.name,
                            c.levels,
                            cov.levels.as_deref().unwrap_or_default()
                        )));
                    }
                    Ok(SlotData::Dummy {
                        codes: &c.codes,
                        level,
                    })
                }
                _ => Err(Error::Invalid(format!(
                    "column `{}` changed kind between layout and use",
                    cov.name
                ))),
            }
        })
        .collect()
}

fn segment_profiles(
    table: &EncodedTable,
    layout: &ColumnLayout,
    segments: &SegmentSet,
) -> Result<Vec<SegmentProfile>> {
    match segments {
        SegmentSet::Population => profiles_from_ids(table, layout, vec!["all".to_string()], |_| 0),
        SegmentSet::ByColumn(col) => {
            let cat = table.categorical(col)?;
            let labels = cat.levels.iter().map(|l| format!("{col}={l}")).collect();
            let codes = &cat.codes;
            profiles_from_ids(table, layout, labels, |i| codes[i])
        }
        SegmentSet::Segments(segs) => {
            if segs.is_empty() {
                return Err(Error::Invalid("empty segment list".into()));
            }
            // Overlapping segments are allowed, so membership is not a
            // single id; run the pass once per segment.
            let mut out = Vec::with_capacity(segs.len());
            for seg in segs {
                let mask = seg.mask(table)?;
                let mut p = profiles_from_ids(table, layout, vec![seg.label()], |i| {
                    if mask[i] {
                        0
                    } else {
                        u32::MAX
                    }
                })?;
                out.push(p.pop().expect("one profile per segment"));
            }
            Ok(out)
        }
    }
}

/// Estimates every (segment × period × treatment × KPI) cell. Cell order is
/// segment-major, then period, then treatment level, then KPI.
pub fn effect_sweep(
    fit: &FitResult,
    layout: &ColumnLayout,
    table: &EncodedTable,
    segments: &SegmentSet,
    periods: PeriodChoice,
    kind: CovKind,
) -> Result<Vec<EffectEstimate>> {
    if periods == PeriodChoice::Each && !layout.has_time_interactions() {
        return Err(Error::NoTimeAxis);
    }
    let profiles = segment_profiles(table, layout, segments)?;
    let period_cells: Vec<Option<u32>> = match periods {
        PeriodChoice::Aggregate => vec![None],
        PeriodChoice::Each => (0..layout.period_values().len() as u32).map(Some).collect(),
    };
    let mut out =
        Vec::with_capacity(profiles.len() * period_cells.len() * (layout.n_treatments() - 1));
    for profile in &profiles {
        for &period in &period_cells {
            for k in 1..layout.n_treatments() as u32 {
                let contrast = contrast_from_profile(layout, profile, k, period);
                for kpi in 0..fit.n_kpis() {
                    out.push(estimate_effect(fit, &contrast, kind, kpi)?);
                }
            }
        }
    }
    Ok(out)
}

/// Hard ceiling on the dense oracle paths.
pub const ORACLE_MAX_ROWS: usize = 1_000_000;

/// Dense per-row design builder used only by the naive paths.
struct DenseRowBuilder<'a> {
    layout: &'a ColumnLayout,
    slots: Vec<SlotData<'a>>,
    periods: Option<&'a [u32]>,
}

impl<'a> DenseRowBuilder<'a> {
    fn new(table: &'a EncodedTable, layout: &'a ColumnLayout) -> Result<Self> {
        let periods = if layout.has_time_interactions() {
            Some(table.period().ok_or(Error::NoTimeAxis)?.codes.as_slice())
        } else {
            None
        };
        Ok(DenseRowBuilder {
            layout,
            slots: slot_data(table, layout)?,
            periods,
        })
    }

    /// Writes row `i` with the treatment forced to `k` (and the period
    /// forced to `period`, when given) into dense `out`.
    fn fill(&self, i: usize, k: u32, period: Option<u32>, out: &mut [f64]) {
        let l = self.layout;
        out.fill(0.0);
        out[0] = 1.0;
        if k > 0 {
            out[l.treatment_col(k)] = 1.0;
        }
        for (s, data) in self.slots.iter().enumerate() {
            if let Some(v) = data.value(i) {
                out[l.slot_col(s)] = v;
                if l.has_cov_interactions() && k > 0 {
                    out[l.interaction_col(k, s)] = v;
                }
            }
        }
        if let Some(periods) = self.periods {
            let t = period.unwrap_or(periods[i]);
            if k > 0 && t > 0 {
                out[l.period_col(k, t)] = 1.0;
            }
        }
    }
}

/// The textbook counterfactual estimate of the same effect
/// [`effect_contrast`] targets: for every segment row, predict the outcome
/// with the treatment column rewritten to `level` and to the reference,
/// then average the difference. Builds two dense n×p matrices along the way.
pub fn naive_counterfactual_oracle(
    fit: &FitResult,
    layout: &ColumnLayout,
    table: &EncodedTable,
    level: &str,
    segment: &Segment,
    period: Option<f64>,
    kpi: usize,
) -> Result<f64> {
    let n = table.n_rows();
    if n > ORACLE_MAX_ROWS {
        return Err(Error::TooLargeForOracle {
            n,
            limit: ORACLE_MAX_ROWS,
        });
    }
    let k = layout.treatment_code(level)?;
    if k == 0 {
        return Err(Error::ReferenceLevelRequested(level.to_string()));
    }
    let mask = segment.mask(table)?;
    let n_seg = mask.iter().filter(|&&m| m).count();
    if n_seg == 0 {
        return Err(Error::EmptySegment(segment.label()));
    }
    let forced_period = match period {
        Some(v) => {
            if !layout.has_time_interactions() {
                return Err(Error::NoTimeAxis);
            }
            Some(layout.period_code(v)?)
        }
        None => None,
    };

    let p = layout.n_cols();
    let builder = DenseRowBuilder::new(table, layout)?;
    let beta = fit.beta(kpi);

    // One dense counterfactual matrix per arm, built in full, then predicted.
    let mut total = Acc::new();
    for arm in [k, 0u32] {
        let mut matrix = vec![0.0; n * p];
        for i in 0..n {
            builder.fill(i, arm, forced_period, &mut matrix[i * p..(i + 1) * p]);
        }
        let sign = if arm == k { 1.0 } else { -1.0 };
        for i in 0..n {
            if mask[i] {
                let row = &matrix[i * p..(i + 1) * p];
                let pred: f64 = row.iter().zip(beta).map(|(x, b)| x * b).sum();
                total.add(sign * pred);
            }
        }
    }
    Ok(total.value() / n_seg as f64)
}

/// Point estimates for a by-column sweep computed the naive way: dense
/// counterfactual matrices, per-row predictions, per-segment averages.
/// Returns cells in the same order as [`effect_sweep`] with
/// [`PeriodChoice::Aggregate`]. This is the baseline the contrast path is
/// benchmarked against.
pub fn naive_sweep_points(
    fit: &FitResult,
    layout: &ColumnLayout,
    table: &EncodedTable,
    by_column: &str,
) -> Result<Vec<f64>> {
    let n = table.n_rows();
    if n > ORACLE_MAX_ROWS {
        return Err(Error::TooLargeForOracle {
            n,
            limit: ORACLE_MAX_ROWS,
        });
    }
    let cat = table.categorical(by_column)?;
    let s_count = cat.n_levels();
    let m = fit.n_kpis();
    let k_count = layout.n_treatments();
    let p = layout.n_cols();
    let builder = DenseRowBuilder::new(table, layout)?;

    // diff_sums[s][k-1][j] = Σ over segment rows of (ŷ_k − ŷ_ref).
    let cells = s_count * (k_count - 1) * m;
    let mut diff_sums = vec![0.0; cells];
    let mut counts = vec![0u64; s_count];
    for &c in &cat.codes {
        counts[c as usize] += 1;
    }

    let mut factual = vec![0.0; n * p];
    for i in 0..n {
        builder.fill(i, 0, None, &mut factual[i * p..(i + 1) * p]);
    }
    for k in 1..k_count as u32 {
        let mut treated = vec![0.0; n * p];
        for i in 0..n {
            builder.fill(i, k, None, &mut treated[i * p..(i + 1) * p]);
        }
        for i in 0..n {
            let s = cat.codes[i] as usize;
            let row_t = &treated[i * p..(i + 1) * p];
            let row_c = &factual[i * p..(i + 1) * p];
            for j in 0..m {
                let beta = fit.beta(j);
                let mut diff = 0.0;
                for col in 0..p {
                    diff += (row_t[col] - row_c[col]) * beta[col];
                }
                diff_sums[(s * (k_count - 1) + (k as usize - 1)) * m + j] += diff;
            }
        }
    }

    let mut out = Vec::with_capacity(cells);
    for s in 0..s_count {
        if counts[s] == 0 {
            return Err(Error::EmptySegment(format!(
                "{by_column}={}",
                cat.levels[s]
            )));
        }
        for k in 0..k_count - 1 {
            for j in 0..m {
                out.push(diff_sums[(s * (k_count - 1) + k) * m + j] / counts[s] as f64);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_design, build_layout, effect_contrast, DesignSpec};
    use crate::ingest::{load_table_from_reader, ColumnKind, ColumnSpec, Schema};
    use crate::solver::{accumulate_gram, covariance, fit, FitData, FitOptions};

    fn schema(cols: &[(&str, ColumnKind)]) -> Schema {
        Schema::new(
            cols.iter()
                .map(|(n, k)| ColumnSpec {
                    name: n.to_string(),
                    kind: *k,
                })
                .collect(),
        )
        .unwrap()
    }

    fn saturated() -> (crate::ingest::EncodedTable, ColumnLayout, FitResult) {
        let s = schema(&[
            ("a", ColumnKind::Treatment),
            ("x", ColumnKind::Categorical),
            ("y", ColumnKind::Kpi),
        ]);
        // Two rows per cell so HC0 and homoskedastic inference both work.
        let t = load_table_from_reader(
            "a,x,y\nctl,a,0\nctl,a,0\nctl,b,0\nctl,b,0\ntrt,a,1\ntrt,a,1\ntrt,b,3\ntrt,b,3\n"
                .as_bytes(),
            &s,
            "t",
        )
        .unwrap();
        let layout = build_layout(
            &t,
            &DesignSpec {
                treatment: "a".into(),
                covariates: vec!["x".into()],
                interact_treatment_covariates: true,
                interact_treatment_time: false,
            },
        )
        .unwrap();
        let m = build_design(&t, &layout).unwrap();
        let mut f = fit(
            accumulate_gram(&m, &t.kpi_columns(), None).unwrap(),
            layout.names().to_vec(),
            vec!["y".into()],
            FitOptions::default(),
        )
        .unwrap();
        covariance(&mut f, CovKind::Homoskedastic, &FitData::None).unwrap();
        (t, layout, f)
    }

    #[test]
    fn cate_and_ate_read_off_the_saturated_fit() {
        let (t, layout, f) = saturated();
        // β = (0, 1, 0, 2): effect is 1 at x=a, 3 at x=b, ATE 2.
        let seg_a = effect_contrast(&layout, &t, "trt", &Segment::level("x", "a"), None).unwrap();
        let seg_b = effect_contrast(&layout, &t, "trt", &Segment::level("x", "b"), None).unwrap();
        let pop = effect_contrast(&layout, &t, "trt", &Segment::population(), None).unwrap();
        let ea = estimate_effect(&f, &seg_a, CovKind::Homoskedastic, 0).unwrap();
        let eb = estimate_effect(&f, &seg_b, CovKind::Homoskedastic, 0).unwrap();
        let ep = estimate_effect(&f, &pop, CovKind::Homoskedastic, 0).unwrap();
        assert!((ea.point - 1.0).abs() <= 1e-12);
        assert!((eb.point - 3.0).abs() <= 1e-12);
        assert!((ep.point - 2.0).abs() <= 1e-12);
        assert_eq!(ep.n, 8);
        // Perfect fit: zero residual variance, zero se, but ci must close.
        assert_eq!(ea.se, 0.0);
        assert_eq!(ea.ci_lo, ea.ci_hi);
        assert_eq!(ea.cov_kind, "homoskedastic");
    }

    #[test]
    fn sweep_matches_per_cell_contrasts() {
        let (t, layout, f) = saturated();
        let sweep = effect_sweep(
            &f,
            &layout,
            &t,
            &SegmentSet::ByColumn("x".into()),
            PeriodChoice::Aggregate,
            CovKind::Homoskedastic,
        )
        .unwrap();
        assert_eq!(sweep.len(), 2);
        for est in &sweep {
            let level = est.segment.split('=').nth(1).unwrap();
            let contrast =
                effect_contrast(&layout, &t, "trt", &Segment::level("x", level), None).unwrap();
            let single = estimate_effect(&f, &contrast, CovKind::Homoskedastic, 0).unwrap();
            assert_eq!(
                est.point.to_bits(),
                single.point.to_bits(),
                "{}",
                est.segment
            );
            assert_eq!(est.se.to_bits(), single.se.to_bits());
            assert_eq!(est.n, single.n);
        }
    }

    #[test]
    fn oracle_agrees_with_contrast_path() {
        let (t, layout, f) = saturated();
        for (seg, want) in [
            (Segment::level("x", "a"), 1.0),
            (Segment::level("x", "b"), 3.0),
            (Segment::population(), 2.0),
        ] {
            let naive = naive_counterfactual_oracle(&f, &layout, &t, "trt", &seg, None, 0).unwrap();
            assert!((naive - want).abs() <= 1e-12, "{}", seg.label());
        }
    }

    #[test]
    fn naive_sweep_matches_contrast_sweep_points() {
        let (t, layout, f) = saturated();
        let sweep = effect_sweep(
            &f,
            &layout,
            &t,
            &SegmentSet::ByColumn("x".into()),
            PeriodChoice::Aggregate,
            CovKind::Homoskedastic,
        )
        .unwrap();
        let naive = naive_sweep_points(&f, &layout, &t, "x").unwrap();
        assert_eq!(naive.len(), sweep.len());
        for (est, pt) in sweep.iter().zip(&naive) {
            assert!((est.point - pt).abs() <= 1e-12);
        }
    }

    #[test]
    fn population_sweep_has_one_cell_per_kpi_and_treatment() {
        let (t, layout, f) = saturated();
        let sweep = effect_sweep(
            &f,
            &layout,
            &t,
            &SegmentSet::Population,
            PeriodChoice::Aggregate,
            CovKind::Homoskedastic,
        )
        .unwrap();
        assert_eq!(sweep.len(), 1);
        assert_eq!(sweep[0].segment, "all");
        assert!((sweep[0].point - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn period_sweep_emits_one_cell_per_period() {
        let s = schema(&[
            ("a", ColumnKind::Treatment),
            ("week", ColumnKind::TimePeriod),
            ("y", ColumnKind::Kpi),
        ]);
        let t = load_table_from_reader(
            "a,week,y\nctl,1,1\nctl,1,1\nctl,2,1\nctl,2,1\ntrt,1,3\ntrt,1,3\ntrt,2,6\ntrt,2,6\n"
                .as_bytes(),
            &s,
            "t",
        )
        .unwrap();
        let layout = build_layout(
            &t,
            &DesignSpec {
                treatment: "a".into(),
                covariates: vec![],
                interact_treatment_covariates: false,
                interact_treatment_time: true,
            },
        )
        .unwrap();
        let m = build_design(&t, &layout).unwrap();
        let mut f = fit(
            accumulate_gram(&m, &t.kpi_columns(), None).unwrap(),
            layout.names().to_vec(),
            vec!["y".into()],
            FitOptions::default(),
        )
        .unwrap();
        covariance(&mut f, CovKind::Homoskedastic, &FitData::None).unwrap();
        let cells = effect_sweep(
            &f,
            &layout,
            &t,
            &SegmentSet::Population,
            PeriodChoice::Each,
            CovKind::Homoskedastic,
        )
        .unwrap();
        assert_eq!(cells.len(), 2);
        // Week 1: trt − ctl = 3 − 1 = 2; week 2: 6 − 1 = 5.
        assert_eq!(cells[0].period, Some(1.0));
        assert!((cells[0].point - 2.0).abs() <= 1e-12);
        assert_eq!(cells[1].period, Some(2.0));
        assert!((cells[1].point - 5.0).abs() <= 1e-12);

        // The oracle agrees per period.
        for (v, want) in [(1.0, 2.0), (2.0, 5.0)] {
            let o = naive_counterfactual_oracle(
                &f,
                &layout,
                &t,
                "trt",
                &Segment::population(),
                Some(v),
                0,
            )
            .unwrap();
            assert!((o - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn oracle_guard_trips_on_large_tables() {
        let (t, layout, f) = saturated();
        // The guard checks the row count before doing anything dense.
        assert!(t.n_rows() <= ORACLE_MAX_ROWS);
        let err = Error::TooLargeForOracle {
            n: ORACLE_MAX_ROWS + 1,
            limit: ORACLE_MAX_ROWS,
        };
        assert_eq!(err.class(), crate::ErrorClass::Config);
        // Small tables pass through.
        assert!(naive_counterfactual_oracle(
            &f,
            &layout,
            &t,
            "trt",
            &Segment::population(),
            None,
            0
        )
        .is_ok());
    }

    #[test]
    fn missing_covariance_kind_surfaces_as_error() {
        let (t, layout, f) = saturated();
        let c = effect_contrast(&layout, &t, "trt", &Segment::population(), None).unwrap();
        assert!(matches!(
            estimate_effect(&f, &c, CovKind::Clustered, 0),
            Err(Error::CovarianceUnavailable { .. })
        ));
    }
}
