//! Run configuration: one JSON document with unknown keys rejected.
//! Command-line flags override config keys, which override built-in
//! defaults.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use effx_core::blb::BlbConfig;
use effx_core::design::DesignSpec;
use effx_core::effects::ORACLE_MAX_ROWS;
use effx_core::ingest::Schema;
use effx_core::solver::CovKind;
use effx_core::synth::SynthConfig;
use effx_core::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Input CSV.
    pub input: Option<PathBuf>,
    /// Typed column list; anything in the file but not here is ignored.
    pub schema: Option<Schema>,
    pub design: Option<DesignSpec>,
    pub covariance: Option<CovKind>,
    pub method: Method,
    /// Instrument columns for two-stage fits; empty means every
    /// instrument-kind column in the schema.
    pub instruments: Vec<String>,
    pub effects: EffectRequest,
    pub blb: BlbConfig,
    pub policy: Option<PolicyConfig>,
    pub bench: Option<BenchConfig>,
    /// Seeds every stochastic stage of the run when set, overriding the
    /// per-section seeds.
    pub seed: Option<u64>,
    /// Destination for the serialized compressed dataset.
    pub artifact: Option<PathBuf>,
    /// Also write the JSON report here.
    pub output: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Invalid(format!("config {}: {e}", path.display())))?;
        if let Some(seed) = cfg.seed {
            cfg.blb.seed = seed;
            if let Some(bench) = &mut cfg.bench {
                bench.seed = seed;
            }
        }
        Ok(cfg)
    }

    pub fn input(&self) -> Result<&Path> {
        self.input.as_deref().ok_or_else(|| {
            Error::Invalid("no input file: set `input` in the config or pass --input".into())
        })
    }

    pub fn schema(&self) -> Result<&Schema> {
        self.schema
            .as_ref()
            .ok_or_else(|| Error::Invalid("the config must declare `schema`".into()))
    }

    pub fn design(&self) -> Result<&DesignSpec> {
        self.design
            .as_ref()
            .ok_or_else(|| Error::Invalid("the config must declare `design`".into()))
    }

    pub fn covariance(&self) -> CovKind {
        self.covariance.unwrap_or(CovKind::Homoskedastic)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Ols,
    #[serde(rename = "2sls")]
    Tsls,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Ols => "ols",
            Method::Tsls => "2sls",
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ols" => Ok(Method::Ols),
            "2sls" => Ok(Method::Tsls),
            other => Err(Error::Invalid(format!(
                "unknown method `{other}` (expected ols or 2sls)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EffectRequest {
    /// Treatment levels to report; empty means every non-reference level.
    pub treatments: Vec<String>,
    /// Categorical column whose levels partition the population; absent
    /// means one population-wide segment.
    pub segments: Option<String>,
    /// Emit one cell per period instead of aggregating over the time axis.
    pub periods: bool,
    /// KPIs to report; empty means all of them.
    pub kpis: Vec<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    /// KPI the policy optimizes; defaults to the first KPI column.
    pub kpi: Option<String>,
    /// `greedy`, `control`, or `all:<level>`.
    pub policy: Option<String>,
    pub baseline: Option<String>,
    pub eligibility: Vec<EligibilityRule>,
    /// Bootstrap the policy statistic instead of the delta method.
    pub blb: bool,
    /// Per-user assignment dump (CSV: unit_id, action).
    pub assignments: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EligibilityRule {
    pub level: String,
    pub column: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub n_rows: usize,
    pub n_treatments: usize,
    pub segment_levels: usize,
    pub n_numeric: usize,
    pub numeric_distinct: usize,
    pub n_kpis: usize,
    pub n_periods: usize,
    pub noise: f64,
    pub seed: u64,
    /// The naive counterfactual baseline is skipped above this row count.
    pub naive_max_rows: usize,
    /// Also time fitting from the compressed dataset against raw rows.
    pub compress: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n_rows: 10_000,
            n_treatments: 2,
            segment_levels: 20,
            n_numeric: 0,
            numeric_distinct: 0,
            n_kpis: 2,
            n_periods: 0,
            noise: 1.0,
            seed: 0,
            naive_max_rows: ORACLE_MAX_ROWS,
            compress: false,
        }
    }
}

impl BenchConfig {
    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_rows: self.n_rows,
            n_treatments: self.n_treatments,
            segment_levels: self.segment_levels,
            n_numeric: self.n_numeric,
            numeric_distinct: self.numeric_distinct,
            n_kpis: self.n_kpis,
            n_periods: self.n_periods,
            n_clusters: 0,
            noise: self.noise,
            seed: self.seed,
        }
    }
}
