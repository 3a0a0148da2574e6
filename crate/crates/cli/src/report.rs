//! Report envelope: a deterministic `results` block next to a free-form
//! `telemetry` block (timings, thread count, peak heap), so callers can
//! hash or diff the former and ignore the latter.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use effx_core::{exec, memtrack, Error, Result};
use serde::Serialize;
use serde_json::Value;

#[derive(Serialize)]
pub struct Report {
    pub results: Value,
    pub telemetry: Telemetry,
}

#[derive(Serialize)]
pub struct Telemetry {
    pub command: &'static str,
    pub engine_version: &'static str,
    pub threads: usize,
    pub elapsed_ms: BTreeMap<String, f64>,
    /// Timing-derived quantities such as speedup ratios.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub derived: BTreeMap<String, f64>,
    pub peak_alloc_bytes: u64,
}

/// Wall-clock accounting per named phase.
#[derive(Default)]
pub struct Phases {
    marks: BTreeMap<String, f64>,
    derived: BTreeMap<String, f64>,
}

impl Phases {
    pub fn new() -> Self {
        Phases::default()
    }

    pub fn time<R>(&mut self, name: &str, f: impl FnOnce() -> Result<R>) -> Result<R> {
        let start = Instant::now();
        let out = f()?;
        self.record(name, start.elapsed().as_secs_f64());
        Ok(out)
    }

    pub fn record(&mut self, name: &str, seconds: f64) {
        self.marks.insert(name.to_string(), seconds * 1e3);
    }

    pub fn elapsed_ms(&self, name: &str) -> Option<f64> {
        self.marks.get(name).copied()
    }

    pub fn derive(&mut self, name: &str, value: f64) {
        self.derived.insert(name.to_string(), value);
    }

    pub fn finish(self, command: &'static str) -> Telemetry {
        Telemetry {
            command,
            engine_version: env!("CARGO_PKG_VERSION"),
            threads: exec::current_threads(),
            elapsed_ms: self.marks,
            derived: self.derived,
            peak_alloc_bytes: memtrack::peak_bytes() as u64,
        }
    }
}

/// Prints the report to stdout and, when asked, writes the same document
/// to a file.
pub fn emit(report: &Report, output: Option<&Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("reports hold only plain data");
    println!("{json}");
    if let Some(path) = output {
        std::fs::write(path, format!("{json}\n")).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}
