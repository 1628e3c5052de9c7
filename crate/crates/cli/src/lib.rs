//! Experiment runner behind the `hvsg` binary.
//!
//! [`execute`] turns a resolved [`RunConfig`] into a [`Report`]; [`run`] also
//! writes the artifacts and maps the outcome to an exit status.

pub mod commands;
pub mod config;

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

pub use config::{Experiment, Format, Overrides, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CHECK: i32 = 3;
pub const EXIT_INTEGRITY: i32 = 4;

pub const TOOL: &str = "hvsg";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Integrity(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Integrity(_) => EXIT_INTEGRITY,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Integrity(m) => write!(f, "integrity failure: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<hvsg_core::Error> for CliError {
    fn from(e: hvsg_core::Error) -> Self {
        use hvsg_core::Error as E;
        match e {
            E::InvalidParameter(_) | E::Config(_) | E::Sampler(_) | E::Json(_) => CliError::Config(e.to_string()),
            E::Integrity(_) => CliError::Integrity(e.to_string()),
            E::Domain(_) | E::Format(_) | E::Io(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// One statistical acceptance check; only `--check` turns failures into exit 3.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: Vec<&'static str>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn write_body(&self, out: &mut String) {
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
    }

    fn to_json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|r| {
                    let obj = self
                        .columns
                        .iter()
                        .zip(r)
                        .map(|(c, v)| (c.to_string(), cell_value(v)))
                        .collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }
}

fn cell_value(v: &str) -> Value {
    if v.is_empty() {
        return Value::Null;
    }
    if let Ok(b) = v.parse::<bool>() {
        return Value::Bool(b);
    }
    if let Ok(i) = v.parse::<i64>() {
        return json!(i);
    }
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => json!(x),
        _ => Value::String(v.to_string()),
    }
}

/// Secondary file; CSV text gets the provenance header prepended.
#[derive(Debug, Clone)]
pub enum Extra {
    Csv { name: String, body: Vec<u8> },
    Binary { name: String, bytes: Vec<u8> },
}

#[derive(Debug, Clone)]
pub struct Report {
    pub experiment: Experiment,
    pub table: Table,
    /// Experiment-specific JSON payload.
    pub results: Value,
    /// `key value` lines shown in the CSV header.
    pub summary: Vec<(String, String)>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub extras: Vec<Extra>,
}

impl Report {
    pub fn new(experiment: Experiment, table: Table) -> Self {
        Self {
            experiment,
            table,
            results: Value::Null,
            summary: Vec::new(),
            checks: Vec::new(),
            warnings: Vec::new(),
            extras: Vec::new(),
        }
    }

    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Provenance lines shared by every text artifact.
pub fn provenance(cfg: &RunConfig, experiment: Experiment) -> Vec<String> {
    vec![
        format!("tool {TOOL} {VERSION}"),
        format!("config_sha256 {}", cfg.hash()),
        format!("seed {}", cfg.seed),
        format!("experiment {}", experiment.name()),
    ]
}

pub fn render_csv(cfg: &RunConfig, report: &Report) -> String {
    let mut out = String::new();
    for line in provenance(cfg, report.experiment) {
        let _ = writeln!(out, "# {line}");
    }
    for w in &report.warnings {
        let _ = writeln!(out, "# warning {w}");
    }
    for (k, v) in &report.summary {
        let _ = writeln!(out, "# {k} {v}");
    }
    for c in &report.checks {
        let _ = writeln!(out, "# check {} {} {}", c.name, if c.pass { "pass" } else { "fail" }, c.detail);
    }
    report.table.write_body(&mut out);
    out
}

pub fn render_json(cfg: &RunConfig, report: &Report) -> String {
    let v = json!({
        "tool": TOOL,
        "version": VERSION,
        "config_sha256": cfg.hash(),
        "seed": cfg.seed,
        "experiment": report.experiment.name(),
        "warnings": report.warnings,
        "checks": report.checks,
        "table": report.table.to_json(),
        "results": report.results,
    });
    let mut s = serde_json::to_string_pretty(&v).expect("report serializes");
    s.push('\n');
    s
}

/// Runs the configured experiment on a pool of `cfg.threads` workers.
pub fn execute(cfg: &RunConfig) -> Result<Report, CliError> {
    let experiment = cfg
        .experiment
        .ok_or_else(|| CliError::Config("no experiment selected".into()))?;
    let body = || match experiment {
        Experiment::Fluct => commands::fluct(cfg),
        Experiment::Born => commands::born(cfg),
        Experiment::Traj => commands::traj(cfg),
        Experiment::Bell => commands::bell(cfg),
        Experiment::Oracle => commands::oracle(cfg),
    };
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Runtime(e.to_string()))?
            .install(body),
        None => body(),
    }
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Writes the primary artifact (and extras, when an output directory is set).
pub fn write_artifacts(cfg: &RunConfig, report: &Report) -> Result<(), CliError> {
    let primary = match cfg.output.format {
        Format::Csv => render_csv(cfg, report),
        Format::Json => render_json(cfg, report),
    };
    let Some(dir) = &cfg.output.dir else {
        std::io::stdout().write_all(primary.as_bytes())?;
        if !report.extras.is_empty() {
            eprintln!("warning: extra artifacts need --out and were not written");
        }
        return Ok(());
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    let name = format!("{}.{}", report.experiment.name(), cfg.output.format.extension());
    write_file(dir, &name, primary.as_bytes())?;
    let header: String = provenance(cfg, report.experiment)
        .iter()
        .map(|l| format!("# {l}\n"))
        .collect();
    for extra in &report.extras {
        match extra {
            Extra::Csv { name, body } => {
                let mut bytes = header.clone().into_bytes();
                bytes.extend_from_slice(body);
                write_file(dir, name, &bytes)?;
            }
            Extra::Binary { name, bytes } => {
                write_file(dir, name, bytes)?;
                // The binary layout has no room for metadata; it goes alongside.
                let side = json!({
                    "tool": TOOL,
                    "version": VERSION,
                    "config_sha256": cfg.hash(),
                    "seed": cfg.seed,
                    "file": name,
                });
                write_file(dir, &format!("{name}.json"), format!("{side}\n").as_bytes())?;
            }
        }
    }
    Ok(())
}

/// Executes, writes artifacts and returns the exit status.
pub fn run(cfg: &RunConfig) -> i32 {
    let report = match execute(cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if let Err(e) = write_artifacts(cfg, &report) {
        eprintln!("{e}");
        return e.exit_code();
    }
    if cfg.check && !report.all_checks_pass() {
        for c in report.checks.iter().filter(|c| !c.pass) {
            eprintln!("check failed: {} ({})", c.name, c.detail);
        }
        return EXIT_CHECK;
    }
    EXIT_OK
}
