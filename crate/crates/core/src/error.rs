//! Error type shared by every engine module.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// The request itself is malformed: unknown columns, bad parameters.
    Config,
    /// The data violates the schema or an operation's preconditions.
    Data,
    /// The computation ran but failed numerically.
    Numeric,
}

impl ErrorClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorClass::Config => "config",
            ErrorClass::Data => "data",
            ErrorClass::Numeric => "numeric",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    // --- ingest ---
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("column `{0}` not found in input")]
    MissingColumn(String),
    #[error("row {row}: cannot parse `{value}` in column `{column}` as a number")]
    UnparseableValue {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: missing value in column `{column}`")]
    MissingValue { row: usize, column: String },
    #[error("row {row}: non-finite value in column `{column}`")]
    NonFiniteValue { row: usize, column: String },
    #[error("corrupt artifact {path}: {detail}")]
    CorruptArtifact { path: String, detail: String },

    // --- design ---
    #[error("column `{0}` is not part of the table")]
    UnknownColumn(String),
    #[error("treatment column `{0}` must be categorical with at least two levels")]
    TreatmentNotCategorical(String),
    #[error("treatment column `{column}` has {found} level(s); at least two are required")]
    FewerThanTwoTreatmentLevels { column: String, found: usize },
    #[error("segment `{0}` selects no rows")]
    EmptySegment(String),
    #[error("effects against the reference level `{0}` are identically zero; pick a non-reference level")]
    ReferenceLevelRequested(String),
    #[error("design has no time axis; period-specific contrasts need `interact_treatment_time`")]
    NoTimeAxis,
    #[error("unknown level `{level}` in column `{column}`")]
    UnknownLevel { column: String, level: String },

    // --- solver ---
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("normal equations are rank deficient; involved columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },
    #[error("clustered covariance requested but the table has no cluster_id column")]
    MissingClusterIds,
    #[error("covariance `{kind}` has not been computed for this fit")]
    CovarianceUnavailable { kind: String },
    #[error("residual variance undefined: {residual_df} residual degrees of freedom")]
    NoResidualDf { residual_df: f64 },

    // --- effects ---
    #[error("oracle refused: n = {n} exceeds the dense-path guard of {limit} rows")]
    TooLargeForOracle { n: usize, limit: usize },

    // --- tsls ---
    #[error("two-stage design needs at least one instrument column")]
    NoInstruments,

    // --- blb ---
    #[error("invalid bootstrap configuration: {0}")]
    BadBootstrapConfig(String),
    #[error("subset {subset}, resample {resample}: statistic failed: {message}")]
    StatisticFailed {
        subset: usize,
        resample: usize,
        message: String,
    },
    #[error("all {0} subsets were degenerate; no distribution estimate is possible")]
    AllSubsetsDegenerate(usize),

    // --- policy ---
    #[error("row {0}: no eligible action (control must always be eligible)")]
    NoEligibleAction(usize),
    #[error("eligibility column `{column}` must be 0/1; row {row} holds {value}")]
    BadEligibilityValue {
        column: String,
        row: usize,
        value: f64,
    },

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    /// Stable machine-readable identifier for front-end error reports.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            Io { .. } => "io",
            Csv { .. } => "csv",
            Schema(_) => "schema",
            MissingColumn(_) => "missing_column",
            UnparseableValue { .. } => "unparseable_value",
            MissingValue { .. } => "missing_value",
            NonFiniteValue { .. } => "non_finite_value",
            CorruptArtifact { .. } => "corrupt_artifact",
            UnknownColumn(_) => "unknown_column",
            TreatmentNotCategorical(_) => "treatment_not_categorical",
            FewerThanTwoTreatmentLevels { .. } => "fewer_than_two_treatment_levels",
            EmptySegment(_) => "empty_segment",
            ReferenceLevelRequested(_) => "reference_level_requested",
            NoTimeAxis => "no_time_axis",
            UnknownLevel { .. } => "unknown_level",
            DimensionMismatch(_) => "dimension_mismatch",
            RankDeficient { .. } => "rank_deficient",
            MissingClusterIds => "missing_cluster_ids",
            CovarianceUnavailable { .. } => "covariance_unavailable",
            NoResidualDf { .. } => "no_residual_df",
            TooLargeForOracle { .. } => "too_large_for_oracle",
            NoInstruments => "no_instruments",
            BadBootstrapConfig(_) => "bad_bootstrap_config",
            StatisticFailed { .. } => "statistic_failed",
            AllSubsetsDegenerate(_) => "all_subsets_degenerate",
            NoEligibleAction(_) => "no_eligible_action",
            BadEligibilityValue { .. } => "bad_eligibility_value",
            Invalid(_) => "invalid_request",
        }
    }

    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Schema(_)
            | MissingColumn(_)
            | UnknownColumn(_)
            | TreatmentNotCategorical(_)
            | ReferenceLevelRequested(_)
            | NoTimeAxis
            | UnknownLevel { .. }
            | CovarianceUnavailable { .. }
            | TooLargeForOracle { .. }
            | NoInstruments
            | BadBootstrapConfig(_)
            | Invalid(_) => ErrorClass::Config,
            Io { .. }
            | Csv { .. }
            | CorruptArtifact { .. }
            | UnparseableValue { .. }
            | MissingValue { .. }
            | NonFiniteValue { .. }
            | FewerThanTwoTreatmentLevels { .. }
            | EmptySegment(_)
            | DimensionMismatch(_)
            | MissingClusterIds
            | NoEligibleAction(_)
            | BadEligibilityValue { .. } => ErrorClass::Data,
            RankDeficient { .. }
            | NoResidualDf { .. }
            | StatisticFailed { .. }
            | AllSubsetsDegenerate(_) => ErrorClass::Numeric,
        }
    }
}
