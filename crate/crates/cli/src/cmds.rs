//! Subcommand implementations. Every command returns its deterministic
//! results block as a JSON value plus the per-phase timings; the caller
//! wraps both into the report envelope.

use std::collections::BTreeMap;
use std::path::Path;

use effx_core::blb::{blb_estimate, BlbConfig, DistributionEstimate, StatError};
use effx_core::compress::{compress, CompressedDataset};
use effx_core::design::{
    build_design_rows, build_layout, effect_contrast, ColumnLayout, ContrastVector, Segment,
};
use effx_core::effects::{
    effect_sweep, naive_sweep_points, EffectEstimate, PeriodChoice, SegmentSet,
};
use effx_core::ingest::{load_table, Column, ColumnKind, EncodedTable};
use effx_core::policy::{
    eligibility_mask, evaluate_policy, evaluate_policy_blb, greedy_policy, individual_effects,
    EffectMatrix, PolicyAssignment, PolicyEvalResult,
};
use effx_core::solver::{
    covariance, fit, gram_from_groups, gram_from_rows, CovKind, FitData, FitOptions, FitResult,
};
use effx_core::sparse::DesignRows;
use effx_core::synth::synth_table;
use effx_core::tsls::{fit_2sls, TslsFit, WEAK_INSTRUMENT_F};
use effx_core::{Error, Result};
use serde::Serialize;
use serde_json::Value;

use crate::config::{BenchConfig, EffectRequest, Method, PolicyConfig, RunConfig};
use crate::report::Phases;

fn to_results<T: Serialize>(results: &T) -> Value {
    serde_json::to_value(results).expect("results hold only plain data")
}

fn load_input(cfg: &RunConfig, phases: &mut Phases) -> Result<EncodedTable> {
    let path = cfg.input()?.to_path_buf();
    let schema = cfg.schema()?;
    phases.time("ingest", || load_table(&path, schema))
}

fn build_model(
    cfg: &RunConfig,
    table: &EncodedTable,
    phases: &mut Phases,
) -> Result<(ColumnLayout, DesignRows)> {
    let layout = build_layout(table, cfg.design()?)?;
    let rows = phases.time("design", || build_design_rows(table, &layout))?;
    Ok((layout, rows))
}

fn fit_ols(
    table: &EncodedTable,
    layout: &ColumnLayout,
    rows: &DesignRows,
    kind: CovKind,
    phases: &mut Phases,
) -> Result<FitResult> {
    let kpis = table.kpi_columns();
    let gram = phases.time("gram", || gram_from_rows(rows, &kpis, None))?;
    let mut f = phases.time("fit", || {
        fit(
            gram,
            layout.names().to_vec(),
            table.kpi_names().iter().map(|s| s.to_string()).collect(),
            FitOptions::default(),
        )
    })?;
    phases.time("covariance", || {
        covariance(
            &mut f,
            kind,
            &FitData::Rows {
                rows,
                kpis,
                weights: None,
                clusters: table.cluster().map(|c| c.codes.as_slice()),
            },
        )
    })?;
    Ok(f)
}

fn resolve_instruments(cfg: &RunConfig, flag: &[String], table: &EncodedTable) -> Vec<String> {
    if !flag.is_empty() {
        return flag.to_vec();
    }
    if !cfg.instruments.is_empty() {
        return cfg.instruments.clone();
    }
    table
        .instrument_names()
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn tsls_covariates(cfg: &RunConfig) -> Vec<String> {
    cfg.design
        .as_ref()
        .map(|d| d.covariates.clone())
        .unwrap_or_default()
}

fn require_homoskedastic(cfg: &RunConfig) -> Result<()> {
    match cfg.covariance {
        None | Some(CovKind::Homoskedastic) => Ok(()),
        Some(other) => Err(Error::Invalid(format!(
            "two-stage fits report homoskedastic covariance only, not `{}`",
            other.as_str()
        ))),
    }
}

#[derive(Serialize)]
struct CoefBlock {
    kpi: String,
    beta: Vec<f64>,
    se: Vec<f64>,
    sigma2: Option<f64>,
}

#[derive(Serialize)]
struct FirstStage {
    level: String,
    f: f64,
    weak: bool,
}

#[derive(Serialize)]
struct FitResults {
    method: &'static str,
    covariance: &'static str,
    n_rows: u64,
    df_resid: f64,
    terms: Vec<String>,
    estimates: Vec<CoefBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    first_stage: Option<Vec<FirstStage>>,
}

fn ols_coef_blocks(f: &FitResult, kind: CovKind) -> Result<Vec<CoefBlock>> {
    let p = f.n_cols();
    (0..f.n_kpis())
        .map(|j| {
            let cov = f.cov(kind, j)?;
            let sigma2 = f.sigma2()[j];
            Ok(CoefBlock {
                kpi: f.kpi_names()[j].clone(),
                beta: f.beta(j).to_vec(),
                se: (0..p).map(|c| cov.get(c, c).max(0.0).sqrt()).collect(),
                sigma2: sigma2.is_finite().then_some(sigma2),
            })
        })
        .collect()
}

fn tsls_coef_blocks(f: &TslsFit) -> Vec<CoefBlock> {
    let p = f.n_cols();
    (0..f.n_kpis())
        .map(|j| {
            let sigma2 = f.sigma2()[j];
            CoefBlock {
                kpi: f.kpi_names()[j].clone(),
                beta: f.beta(j).to_vec(),
                se: (0..p)
                    .map(|c| f.coef_variance(c, j).max(0.0).sqrt())
                    .collect(),
                sigma2: sigma2.is_finite().then_some(sigma2),
            }
        })
        .collect()
}

fn first_stage_report(f: &TslsFit) -> Vec<FirstStage> {
    f.treatment_levels()[1..]
        .iter()
        .zip(f.first_stage_f())
        .map(|(level, &stat)| FirstStage {
            level: level.clone(),
            f: stat,
            weak: stat < WEAK_INSTRUMENT_F,
        })
        .collect()
}

pub fn cmd_fit(cfg: &RunConfig, method: Method, instruments: &[String]) -> Result<(Value, Phases)> {
    let mut phases = Phases::new();
    let table = load_input(cfg, &mut phases)?;
    let results = match method {
        Method::Ols => {
            let (layout, rows) = build_model(cfg, &table, &mut phases)?;
            let kind = cfg.covariance();
            let f = fit_ols(&table, &layout, &rows, kind, &mut phases)?;
            FitResults {
                method: "ols",
                covariance: kind.as_str(),
                n_rows: f.n_rows(),
                df_resid: f.df_resid(),
                terms: f.term_names().to_vec(),
                estimates: ols_coef_blocks(&f, kind)?,
                first_stage: None,
            }
        }
        Method::Tsls => {
            require_homoskedastic(cfg)?;
            let instruments = resolve_instruments(cfg, instruments, &table);
            let covariates = tsls_covariates(cfg);
            let f = phases.time("fit", || fit_2sls(&table, &instruments, &covariates))?;
            FitResults {
                method: "2sls",
                covariance: "homoskedastic",
                n_rows: f.n_rows(),
                df_resid: f.df_resid(),
                terms: f.term_names().to_vec(),
                estimates: tsls_coef_blocks(&f),
                first_stage: Some(first_stage_report(&f)),
            }
        }
    };
    Ok((to_results(&results), phases))
}

#[derive(Serialize)]
struct EffectsResults {
    method: &'static str,
    covariance: &'static str,
    n_estimates: u64,
    estimates: Vec<EffectEstimate>,
}

fn validate_effect_request(
    req: &EffectRequest,
    treatment_column: &str,
    levels: &[String],
    kpi_names: &[&str],
) -> Result<()> {
    for t in &req.treatments {
        if !levels.contains(t) {
            return Err(Error::UnknownLevel {
                column: treatment_column.to_string(),
                level: t.clone(),
            });
        }
        if t == &levels[0] {
            return Err(Error::ReferenceLevelRequested(t.clone()));
        }
    }
    for k in &req.kpis {
        if !kpi_names.contains(&k.as_str()) {
            return Err(Error::UnknownColumn(k.clone()));
        }
    }
    Ok(())
}

fn retain_requested(estimates: &mut Vec<EffectEstimate>, req: &EffectRequest) {
    if !req.treatments.is_empty() {
        estimates.retain(|e| req.treatments.contains(&e.treatment));
    }
    if !req.kpis.is_empty() {
        estimates.retain(|e| req.kpis.contains(&e.kpi));
    }
}

pub fn cmd_effects(
    cfg: &RunConfig,
    method: Method,
    instruments: &[String],
    req: &EffectRequest,
) -> Result<(Value, Phases)> {
    let mut phases = Phases::new();
    let table = load_input(cfg, &mut phases)?;
    let treatment_column = table.schema().treatment_name().to_string();
    let (covariance_str, mut estimates) = match method {
        Method::Ols => {
            let (layout, rows) = build_model(cfg, &table, &mut phases)?;
            let kind = cfg.covariance();
            let f = fit_ols(&table, &layout, &rows, kind, &mut phases)?;
            validate_effect_request(
                req,
                &treatment_column,
                layout.treatment_levels(),
                &table.kpi_names(),
            )?;
            let segments = match &req.segments {
                None => SegmentSet::Population,
                Some(col) => SegmentSet::ByColumn(col.clone()),
            };
            let periods = if req.periods {
                PeriodChoice::Each
            } else {
                PeriodChoice::Aggregate
            };
            let est = phases.time("sweep", || {
                effect_sweep(&f, &layout, &table, &segments, periods, kind)
            })?;
            (kind.as_str(), est)
        }
        Method::Tsls => {
            require_homoskedastic(cfg)?;
            if req.segments.is_some() || req.periods {
                return Err(Error::Invalid(
                    "two-stage effects are population-level; segment and period breakdowns are not supported".into(),
                ));
            }
            let instruments = resolve_instruments(cfg, instruments, &table);
            let covariates = tsls_covariates(cfg);
            let f = phases.time("fit", || fit_2sls(&table, &instruments, &covariates))?;
            validate_effect_request(
                req,
                &treatment_column,
                f.treatment_levels(),
                &table.kpi_names(),
            )?;
            ("homoskedastic", f.late_estimates()?)
        }
    };
    retain_requested(&mut estimates, req);
    let results = EffectsResults {
        method: method.as_str(),
        covariance: covariance_str,
        n_estimates: estimates.len() as u64,
        estimates,
    };
    Ok((to_results(&results), phases))
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Serialize)]
struct ArtifactReport {
    path: String,
    bytes: u64,
    fnv1a64: String,
}

#[derive(Serialize)]
struct CompressResults {
    n_rows: u64,
    n_groups: u64,
    ratio: f64,
    kpis: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    artifact: Option<ArtifactReport>,
}

fn write_artifact(
    cd: &CompressedDataset,
    path: &Path,
    phases: &mut Phases,
) -> Result<ArtifactReport> {
    let label = path.display().to_string();
    phases.time("write_artifact", || {
        let mut bytes = Vec::new();
        cd.write_to(&mut bytes).map_err(|source| Error::Io {
            path: label.clone(),
            source,
        })?;
        let reread = CompressedDataset::read_from(&mut bytes.as_slice(), &label)?;
        if &reread != cd {
            return Err(Error::CorruptArtifact {
                path: label.clone(),
                detail: "round-trip mismatch".into(),
            });
        }
        std::fs::write(path, &bytes).map_err(|source| Error::Io {
            path: label.clone(),
            source,
        })?;
        Ok(ArtifactReport {
            path: label.clone(),
            bytes: bytes.len() as u64,
            fnv1a64: format!("{:016x}", fnv1a64(&bytes)),
        })
    })
}

pub fn cmd_compress(cfg: &RunConfig, artifact: Option<&Path>) -> Result<(Value, Phases)> {
    let mut phases = Phases::new();
    let table = load_input(cfg, &mut phases)?;
    let layout = build_layout(&table, cfg.design()?)?;
    let cd = phases.time("compress", || compress(&table, &layout))?;
    let artifact = match artifact.or(cfg.artifact.as_deref()) {
        Some(path) => Some(write_artifact(&cd, path, &mut phases)?),
        None => None,
    };
    let results = CompressResults {
        n_rows: cd.n_total(),
        n_groups: cd.n_groups() as u64,
        ratio: cd.compression_ratio(),
        kpis: cd.kpi_names().to_vec(),
        artifact,
    };
    Ok((to_results(&results), phases))
}

pub struct PolicyOverrides {
    pub policy: Option<String>,
    pub baseline: Option<String>,
    pub kpi: Option<String>,
    pub blb: bool,
    pub gamma: Option<f64>,
    pub resamples: Option<usize>,
    pub assignments: Option<std::path::PathBuf>,
}

fn parse_policy(
    spec: &str,
    effects: &EffectMatrix,
    layout: &ColumnLayout,
) -> Result<PolicyAssignment> {
    let n = effects.n_rows();
    let k = effects.n_actions();
    match spec {
        "greedy" => greedy_policy(effects),
        "control" => Ok(PolicyAssignment::constant(n, 0, k)),
        _ => match spec.strip_prefix("all:") {
            Some(level) => Ok(PolicyAssignment::constant(
                n,
                layout.treatment_code(level)?,
                k,
            )),
            None => Err(Error::Invalid(format!(
                "unknown policy `{spec}` (expected greedy, control, or all:<level>)"
            ))),
        },
    }
}

fn unit_ids(table: &EncodedTable) -> Option<&[String]> {
    let name = table
        .schema()
        .names_of(ColumnKind::UnitId)
        .first()
        .copied()?;
    match table.column(name) {
        Ok(Column::Text(ids)) => Some(ids),
        _ => None,
    }
}

fn write_assignments(
    table: &EncodedTable,
    levels: &[String],
    policy: &PolicyAssignment,
    path: &Path,
) -> Result<()> {
    let io = |source: csv::Error| match source.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.display().to_string(),
            source,
        },
        other => Error::Invalid(format!("writing {}: {other:?}", path.display())),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["unit_id", "action"]).map_err(io)?;
    let ids = unit_ids(table);
    for (i, &action) in policy.actions().iter().enumerate() {
        let id = match ids {
            Some(ids) => ids[i].clone(),
            None => (i + 1).to_string(),
        };
        w.write_record([id.as_str(), levels[action as usize].as_str()])
            .map_err(io)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

#[derive(Serialize)]
struct PolicyResults {
    kpi: String,
    policy: String,
    baseline: String,
    assignment_counts: BTreeMap<String, u64>,
    eval: PolicyEvalResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    distribution: Option<DistributionEstimate>,
}

pub fn cmd_policy(cfg: &RunConfig, over: &PolicyOverrides) -> Result<(Value, Phases)> {
    let mut phases = Phases::new();
    let table = load_input(cfg, &mut phases)?;
    let (layout, rows) = build_model(cfg, &table, &mut phases)?;
    let default_section = PolicyConfig::default();
    let section = cfg.policy.as_ref().unwrap_or(&default_section);

    let kpi_name = over
        .kpi
        .clone()
        .or_else(|| section.kpi.clone())
        .unwrap_or_else(|| table.kpi_names()[0].to_string());
    let kpi = table
        .kpi_names()
        .iter()
        .position(|k| *k == kpi_name)
        .ok_or_else(|| Error::UnknownColumn(kpi_name.clone()))?;

    let kind = cfg.covariance();
    let f = fit_ols(&table, &layout, &rows, kind, &mut phases)?;

    let rules: Vec<(String, String)> = section
        .eligibility
        .iter()
        .map(|r| (r.level.clone(), r.column.clone()))
        .collect();
    let mask = if rules.is_empty() {
        None
    } else {
        Some(eligibility_mask(&table, &layout, &rules)?)
    };
    let effects = phases.time("effect_matrix", || {
        individual_effects(&f, &layout, &table, kpi, mask)
    })?;

    let policy_spec = over
        .policy
        .clone()
        .or_else(|| section.policy.clone())
        .unwrap_or_else(|| "greedy".to_string());
    let baseline_spec = over
        .baseline
        .clone()
        .or_else(|| section.baseline.clone())
        .unwrap_or_else(|| "control".to_string());
    let pi = parse_policy(&policy_spec, &effects, &layout)?;
    let pi0 = parse_policy(&baseline_spec, &effects, &layout)?;

    let (eval, distribution) = if over.blb || section.blb {
        let mut bc = cfg.blb.clone();
        if let Some(g) = over.gamma {
            bc.gamma = g;
        }
        if let Some(r) = over.resamples {
            bc.resamples = r;
        }
        let (eval, est) = phases.time("evaluate", || {
            evaluate_policy_blb(&layout, &table, kpi, &pi, &pi0, &bc)
        })?;
        (eval, Some(est))
    } else {
        let eval = phases.time("evaluate", || {
            evaluate_policy(&f, &layout, &table, kpi, kind, &pi, &pi0)
        })?;
        (eval, None)
    };

    let levels = layout.treatment_levels();
    let mut assignment_counts: BTreeMap<String, u64> = BTreeMap::new();
    for &a in pi.actions() {
        *assignment_counts
            .entry(levels[a as usize].clone())
            .or_insert(0) += 1;
    }
    if let Some(path) = over
        .assignments
        .as_deref()
        .or(section.assignments.as_deref())
    {
        write_assignments(&table, levels, &pi, path)?;
    }

    let results = PolicyResults {
        kpi: kpi_name,
        policy: policy_spec,
        baseline: baseline_spec,
        assignment_counts,
        eval,
        distribution,
    };
    Ok((to_results(&results), phases))
}

#[derive(Serialize)]
struct BlbCell {
    kpi: String,
    treatment: String,
    segment: String,
    point: f64,
    se: f64,
    ci_lo: f64,
    ci_hi: f64,
    subset_size: usize,
    n_subsets: usize,
    skipped_subsets: Vec<usize>,
}

#[derive(Serialize)]
struct BlbResults {
    config: BlbConfig,
    estimates: Vec<BlbCell>,
}

/// BLB distribution of one contrast: each resample refits the coefficients
/// under multinomial weights through the weighted Gram path and re-reads
/// `cᵀβ̂(w)`.
fn blb_contrast(
    rows: &DesignRows,
    layout: &ColumnLayout,
    kpi_col: &[f64],
    kpi_name: &str,
    contrast: &ContrastVector,
    bc: &BlbConfig,
) -> Result<DistributionEstimate> {
    let kpis = [kpi_col];
    let statistic = |idx: &[usize], w: &[f64]| {
        let gram = effx_core::solver::gram_from_row_subset(rows, &kpis, idx, w)
            .map_err(|e| StatError::Failed(e.to_string()))?;
        let f = fit(
            gram,
            layout.names().to_vec(),
            vec![kpi_name.to_string()],
            FitOptions::default(),
        )
        .map_err(|e| match e {
            Error::RankDeficient { .. } => StatError::Degenerate(e.to_string()),
            other => StatError::Failed(other.to_string()),
        })?;
        Ok(contrast.dot(f.beta(0)))
    };
    blb_estimate(kpi_col.len(), bc, statistic)
}

pub fn cmd_blb(cfg: &RunConfig, req: &EffectRequest, bc: &BlbConfig) -> Result<(Value, Phases)> {
    if req.periods {
        return Err(Error::Invalid(
            "per-period bootstrap cells are not supported; `effects --periods` reports delta-method cells".into(),
        ));
    }
    let mut phases = Phases::new();
    let table = load_input(cfg, &mut phases)?;
    let (layout, rows) = build_model(cfg, &table, &mut phases)?;
    validate_effect_request(
        req,
        table.schema().treatment_name(),
        layout.treatment_levels(),
        &table.kpi_names(),
    )?;

    let segments: Vec<Segment> = match &req.segments {
        None => vec![Segment::population()],
        Some(col) => table
            .categorical(col)?
            .levels
            .iter()
            .map(|l| Segment::level(col.clone(), l.clone()))
            .collect(),
    };
    let levels: Vec<String> = layout.treatment_levels()[1..]
        .iter()
        .filter(|l| req.treatments.is_empty() || req.treatments.contains(l))
        .cloned()
        .collect();
    let kpi_names = table.kpi_names();
    let kpi_cols = table.kpi_columns();
    let kpis: Vec<usize> = (0..kpi_names.len())
        .filter(|&j| req.kpis.is_empty() || req.kpis.iter().any(|k| k == kpi_names[j]))
        .collect();

    let mut estimates = Vec::new();
    phases.time("bootstrap", || {
        for segment in &segments {
            for level in &levels {
                let contrast = effect_contrast(&layout, &table, level, segment, None)?;
                for &j in &kpis {
                    let est =
                        blb_contrast(&rows, &layout, kpi_cols[j], kpi_names[j], &contrast, bc)?;
                    estimates.push(BlbCell {
                        kpi: kpi_names[j].to_string(),
                        treatment: level.clone(),
                        segment: segment.label(),
                        point: est.point,
                        se: est.se,
                        ci_lo: est.ci_lo,
                        ci_hi: est.ci_hi,
                        subset_size: est.subset_size,
                        n_subsets: est.n_subsets,
                        skipped_subsets: est.skipped(),
                    });
                }
            }
        }
        Ok(())
    })?;

    let results = BlbResults {
        config: bc.clone(),
        estimates,
    };
    Ok((to_results(&results), phases))
}

#[derive(Serialize)]
struct NaiveReport {
    n_cells: u64,
    max_rel_diff: f64,
}

#[derive(Serialize)]
struct CompressionReport {
    n_groups: u64,
    ratio: f64,
    max_beta_rel_diff: f64,
}

#[derive(Serialize)]
struct BenchResults {
    n_rows: u64,
    n_design_cols: u64,
    n_effects: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    naive: Option<NaiveReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    compression: Option<CompressionReport>,
}

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

pub fn cmd_bench(bench: &BenchConfig) -> Result<(Value, Phases)> {
    if bench.segment_levels == 0 {
        return Err(Error::Invalid("bench needs segment_levels >= 1".into()));
    }
    let mut phases = Phases::new();
    let synth_cfg = bench.synth();
    let table = phases.time("synth", || synth_table(&synth_cfg))?;
    let layout = build_layout(&table, &synth_cfg.design_spec())?;
    let rows = phases.time("design", || build_design_rows(&table, &layout))?;
    let kpis = table.kpi_columns();
    let gram = phases.time("gram", || gram_from_rows(&rows, &kpis, None))?;
    let mut f = phases.time("fit", || {
        fit(
            gram,
            layout.names().to_vec(),
            table.kpi_names().iter().map(|s| s.to_string()).collect(),
            FitOptions::default(),
        )
    })?;
    phases.time("covariance", || {
        covariance(
            &mut f,
            CovKind::Homoskedastic,
            &FitData::Rows {
                rows: &rows,
                kpis: table.kpi_columns(),
                weights: None,
                clusters: None,
            },
        )
    })?;
    let sweep = phases.time("contrast_sweep", || {
        effect_sweep(
            &f,
            &layout,
            &table,
            &SegmentSet::ByColumn("seg".into()),
            PeriodChoice::Aggregate,
            CovKind::Homoskedastic,
        )
    })?;

    let naive = if bench.n_rows <= bench.naive_max_rows {
        let points = phases.time("naive_sweep", || {
            naive_sweep_points(&f, &layout, &table, "seg")
        })?;
        let max_rel_diff = sweep
            .iter()
            .zip(&points)
            .map(|(e, &p)| rel_diff(e.point, p))
            .fold(0.0, f64::max);
        if let (Some(naive_ms), Some(contrast_ms)) = (
            phases.elapsed_ms("naive_sweep"),
            phases.elapsed_ms("contrast_sweep"),
        ) {
            phases.derive(
                "naive_over_contrast_speedup",
                naive_ms / contrast_ms.max(1e-9),
            );
        }
        Some(NaiveReport {
            n_cells: points.len() as u64,
            max_rel_diff,
        })
    } else {
        None
    };

    let compression = if bench.compress {
        let cd = phases.time("compress", || compress(&table, &layout))?;
        let raw = phases.time("raw_fit", || {
            let gram = gram_from_rows(&rows, &kpis, None)?;
            fit(
                gram,
                layout.names().to_vec(),
                table.kpi_names().iter().map(|s| s.to_string()).collect(),
                FitOptions::default(),
            )
        })?;
        let compressed = phases.time("compressed_fit", || {
            fit(
                gram_from_groups(&cd),
                layout.names().to_vec(),
                table.kpi_names().iter().map(|s| s.to_string()).collect(),
                FitOptions::default(),
            )
        })?;
        let mut max_beta_rel_diff = 0.0f64;
        for j in 0..raw.n_kpis() {
            for (a, b) in raw.beta(j).iter().zip(compressed.beta(j)) {
                max_beta_rel_diff = max_beta_rel_diff.max(rel_diff(*a, *b));
            }
        }
        if let (Some(raw_ms), Some(comp_ms)) = (
            phases.elapsed_ms("raw_fit"),
            phases.elapsed_ms("compressed_fit"),
        ) {
            phases.derive("raw_over_compressed_speedup", raw_ms / comp_ms.max(1e-9));
        }
        Some(CompressionReport {
            n_groups: cd.n_groups() as u64,
            ratio: cd.compression_ratio(),
            max_beta_rel_diff,
        })
    } else {
        None
    };

    let results = BenchResults {
        n_rows: table.n_rows() as u64,
        n_design_cols: layout.n_cols() as u64,
        n_effects: sweep.len() as u64,
        naive,
        compression,
    };
    Ok((to_results(&results), phases))
}
