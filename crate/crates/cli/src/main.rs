//! `effx`: batch front end for the estimation engine.
//!
//! Every subcommand reads one JSON config (flags override config keys),
//! prints a report with a deterministic `results` block and a free-form
//! `telemetry` block on stdout, and signals failures with a
//! `{code, message, context}` JSON line on stderr. Exit codes: 0 success,
//! 1 bad request, 2 bad data, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use effx_core::{exec, memtrack, Error, ErrorClass, Result};
use serde_json::{json, Value};

mod cmds;
mod config;
mod report;

use config::{Method, RunConfig};
use report::Report;

#[global_allocator]
static ALLOC: memtrack::TrackingAllocator = memtrack::TrackingAllocator;

#[derive(Parser)]
#[command(
    name = "effx",
    version,
    about = "Treatment-effect estimation over observational event tables"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override config keys.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Input CSV (overrides the config's `input`).
    #[arg(long, global = true, value_name = "PATH")]
    input: Option<PathBuf>,
    /// Worker threads; defaults to $EFFX_THREADS, then the core count.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Covariance: homoskedastic, hc0, hc1, or clustered.
    #[arg(long, global = true, value_name = "KIND")]
    covariance: Option<String>,
    /// Seed for every stochastic stage.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Also write the JSON report to this file.
    #[arg(long, global = true, value_name = "PATH")]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model and report coefficients.
    Fit {
        /// ols (default) or 2sls.
        #[arg(long)]
        method: Option<String>,
        /// Instrument columns for 2sls (comma separated).
        #[arg(long, value_delimiter = ',')]
        instruments: Vec<String>,
    },
    /// Estimate effects across treatments, segments, periods, and KPIs.
    Effects {
        /// ols (default) or 2sls.
        #[arg(long)]
        method: Option<String>,
        /// Instrument columns for 2sls (comma separated).
        #[arg(long, value_delimiter = ',')]
        instruments: Vec<String>,
        /// Categorical column whose levels partition the population.
        #[arg(long)]
        segments: Option<String>,
        /// One cell per period instead of aggregating over the time axis.
        #[arg(long)]
        periods: bool,
        /// Treatment levels to report (comma separated).
        #[arg(long, value_delimiter = ',')]
        treatments: Vec<String>,
        /// KPIs to report (comma separated).
        #[arg(long, value_delimiter = ',')]
        kpis: Vec<String>,
    },
    /// Collapse rows into sufficient statistics; optionally persist them.
    Compress {
        /// Write the serialized compressed dataset here.
        #[arg(long, value_name = "PATH")]
        artifact: Option<PathBuf>,
    },
    /// Score a targeting policy against a baseline.
    PolicyEval {
        /// greedy (default), control, or all:<level>.
        #[arg(long)]
        policy: Option<String>,
        /// Baseline policy, same forms (default control).
        #[arg(long)]
        baseline: Option<String>,
        /// KPI the policy optimizes (default: the first KPI).
        #[arg(long)]
        kpi: Option<String>,
        /// Bootstrap the statistic instead of the delta method.
        #[arg(long)]
        blb: bool,
        /// Bootstrap subset exponent (with --blb).
        #[arg(long)]
        gamma: Option<f64>,
        /// Resamples per subset (with --blb).
        #[arg(long)]
        resamples: Option<usize>,
        /// Per-user assignment dump (CSV: unit_id, action).
        #[arg(long, value_name = "PATH")]
        assignments: Option<PathBuf>,
    },
    /// Bag-of-little-bootstraps intervals for effect estimates.
    Blb {
        /// Subset exponent: subsets have ~n^gamma rows.
        #[arg(long)]
        gamma: Option<f64>,
        /// Resamples per subset.
        #[arg(long)]
        resamples: Option<usize>,
        /// Categorical column whose levels partition the population.
        #[arg(long)]
        segments: Option<String>,
        /// Treatment levels to report (comma separated).
        #[arg(long, value_delimiter = ',')]
        treatments: Vec<String>,
        /// KPIs to report (comma separated).
        #[arg(long, value_delimiter = ',')]
        kpis: Vec<String>,
    },
    /// Synthetic benchmark: contrast path vs naive and compressed paths.
    Bench {
        /// Synthetic table size.
        #[arg(long)]
        n_rows: Option<usize>,
        /// Skip the naive counterfactual baseline above this row count.
        #[arg(long)]
        naive_max_rows: Option<usize>,
        /// Also time fitting from compressed sufficient statistics.
        #[arg(long)]
        compress: bool,
    },
}

fn error_body(e: &Error) -> Value {
    let mut context = serde_json::Map::new();
    context.insert("class".into(), e.class().as_str().into());
    match e {
        Error::Io { path, .. } | Error::Csv { path, .. } | Error::CorruptArtifact { path, .. } => {
            context.insert("path".into(), path.clone().into());
        }
        Error::RankDeficient { columns } => {
            context.insert("columns".into(), columns.clone().into());
        }
        Error::UnknownColumn(c) | Error::MissingColumn(c) => {
            context.insert("column".into(), c.clone().into());
        }
        Error::UnknownLevel { column, level } => {
            context.insert("column".into(), column.clone().into());
            context.insert("level".into(), level.clone().into());
        }
        Error::UnparseableValue { row, column, .. }
        | Error::MissingValue { row, column }
        | Error::NonFiniteValue { row, column } => {
            context.insert("row".into(), (*row).into());
            context.insert("column".into(), column.clone().into());
        }
        Error::BadEligibilityValue { column, row, value } => {
            context.insert("row".into(), (*row).into());
            context.insert("column".into(), column.clone().into());
            context.insert("value".into(), (*value).into());
        }
        Error::StatisticFailed {
            subset, resample, ..
        } => {
            context.insert("subset".into(), (*subset).into());
            context.insert("resample".into(), (*resample).into());
        }
        Error::CovarianceUnavailable { kind } => {
            context.insert("kind".into(), kind.clone().into());
        }
        _ => {}
    }
    json!({ "code": e.code(), "message": e.to_string(), "context": Value::Object(context) })
}

fn exit_for(class: ErrorClass) -> ExitCode {
    ExitCode::from(match class {
        ErrorClass::Config => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let body = json!({
                "code": "usage",
                "message": e.render().to_string(),
                "context": { "class": "config" },
            });
            eprintln!("{body}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_body(&e));
            exit_for(e.class())
        }
    }
}

fn env_threads() -> Option<usize> {
    std::env::var("EFFX_THREADS").ok()?.parse().ok()
}

fn method_of(cfg: &RunConfig, flag: &Option<String>) -> Result<Method> {
    match flag {
        Some(s) => s.parse(),
        None => Ok(cfg.method),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.common.config.as_deref())?;
    if let Some(input) = cli.common.input {
        cfg.input = Some(input);
    }
    if let Some(kind) = &cli.common.covariance {
        cfg.covariance = Some(kind.parse()?);
    }
    if let Some(seed) = cli.common.seed {
        cfg.seed = Some(seed);
        cfg.blb.seed = seed;
        if let Some(bench) = &mut cfg.bench {
            bench.seed = seed;
        }
    }
    if let Some(output) = cli.common.output {
        cfg.output = Some(output);
    }
    let threads = cli.common.threads.or_else(env_threads).or(cfg.threads);

    let report = exec::with_threads(threads, || -> Result<Report> {
        let (command_name, (results, phases)) = dispatch(&cli.command, &cfg)?;
        Ok(Report {
            results,
            telemetry: phases.finish(command_name),
        })
    })?;
    report::emit(&report, cfg.output.as_deref())
}

fn dispatch(command: &Command, cfg: &RunConfig) -> Result<(&'static str, (Value, report::Phases))> {
    match command {
        Command::Fit {
            method,
            instruments,
        } => {
            let method = method_of(cfg, method)?;
            Ok(("fit", cmds::cmd_fit(cfg, method, instruments)?))
        }
        Command::Effects {
            method,
            instruments,
            segments,
            periods,
            treatments,
            kpis,
        } => {
            let method = method_of(cfg, method)?;
            let mut req = cfg.effects.clone();
            if segments.is_some() {
                req.segments = segments.clone();
            }
            if *periods {
                req.periods = true;
            }
            if !treatments.is_empty() {
                req.treatments = treatments.clone();
            }
            if !kpis.is_empty() {
                req.kpis = kpis.clone();
            }
            Ok((
                "effects",
                cmds::cmd_effects(cfg, method, instruments, &req)?,
            ))
        }
        Command::Compress { artifact } => {
            Ok(("compress", cmds::cmd_compress(cfg, artifact.as_deref())?))
        }
        Command::PolicyEval {
            policy,
            baseline,
            kpi,
            blb,
            gamma,
            resamples,
            assignments,
        } => {
            let over = cmds::PolicyOverrides {
                policy: policy.clone(),
                baseline: baseline.clone(),
                kpi: kpi.clone(),
                blb: *blb,
                gamma: *gamma,
                resamples: *resamples,
                assignments: assignments.clone(),
            };
            Ok(("policy-eval", cmds::cmd_policy(cfg, &over)?))
        }
        Command::Blb {
            gamma,
            resamples,
            segments,
            treatments,
            kpis,
        } => {
            let mut req = cfg.effects.clone();
            if segments.is_some() {
                req.segments = segments.clone();
            }
            if !treatments.is_empty() {
                req.treatments = treatments.clone();
            }
            if !kpis.is_empty() {
                req.kpis = kpis.clone();
            }
            let mut bc = cfg.blb.clone();
            if let Some(g) = gamma {
                bc.gamma = *g;
            }
            if let Some(r) = resamples {
                bc.resamples = *r;
            }
            Ok(("blb", cmds::cmd_blb(cfg, &req, &bc)?))
        }
        Command::Bench {
            n_rows,
            naive_max_rows,
            compress,
        } => {
            let mut bench = cfg.bench.clone().unwrap_or_default();
            if let Some(seed) = cfg.seed {
                bench.seed = seed;
            }
            if let Some(n) = n_rows {
                bench.n_rows = *n;
            }
            if let Some(n) = naive_max_rows {
                bench.naive_max_rows = *n;
            }
            if *compress {
                bench.compress = true;
            }
            Ok(("bench", cmds::cmd_bench(&bench)?))
        }
    }
}
