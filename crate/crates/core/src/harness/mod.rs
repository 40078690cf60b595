//! Compile, validate, time, and persist an optimized variant.

mod compile;
mod shell;
mod store;
mod timing;
mod validate;

use std::collections::BTreeMap;
use std::io;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayError;
use crate::ingest::IngestError;

pub use compile::{compile_source, compile_with_retry, Attempt, CompileLoop, FEEDBACK_TAIL_LINES};
pub use shell::{run_shell, Captured};
pub use store::{persist_run, RunArtifacts, RunDir, RunManifest, RunStatus, MANIFEST_FILE};
pub(crate) use store::write_artifacts;
pub use timing::{improvement_percent, measure_runtime, RuntimeStats};
pub use validate::{capture_reference, validate_output, Mismatch, Reference, ValidationResult};

/// Default number of timed executions.
pub const DEFAULT_RUNS: usize = 5;
/// LLM retries after the first failed compile.
pub const DEFAULT_MAX_RETRIES: usize = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("compiler not found (exit 127): {0}")]
    CompilerMissing(String),
    #[error("compilation still failing after {} attempts", .0.attempts.len())]
    RetryExhausted(Box<CompileLoop>),
    #[error("execution failed with {}: {stderr_tail}", code.map_or("a signal".to_string(), |c| format!("exit code {c}")))]
    ExecutionFailure { code: Option<i32>, stderr_tail: String },
    #[error("execution exceeded {0} s")]
    Timeout(u64),
    #[error("baseline runtime is zero")]
    ZeroBaseline,
    #[error("could not write {}: {source}", path.display())]
    WriteFailure { path: PathBuf, source: io::Error },
    #[error("could not read {}: {source}", path.display())]
    ReadFailure { path: PathBuf, source: io::Error },
    #[error("artifact `{name}` does not match its recorded digest")]
    DigestMismatch { name: String },
    #[error("artifact `{0}` is listed in the manifest but missing")]
    MissingArtifact(String),
    #[error("malformed manifest: {0}")]
    BadManifest(String),
    #[error("invalid build spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Template(#[from] IngestError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

fn default_runs() -> usize {
    DEFAULT_RUNS
}
fn default_source_name() -> String {
    "main.cu".into()
}
fn default_bin_name() -> String {
    "app".into()
}
fn default_timeout() -> u64 {
    600
}

/// How to build and run one application variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildSpec {
    /// Template with `{src}` and `{bin}`.
    pub compile_cmd: String,
    /// Template with `{bin}` and `{args}`.
    pub exec_cmd: String,
    #[serde(default)]
    pub args: String,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Directory the commands run in and output files are read from.
    pub workdir: PathBuf,
    /// File name the source is written under (the extension matters to compilers).
    #[serde(default = "default_source_name")]
    pub source_name: String,
    #[serde(default = "default_bin_name")]
    pub bin_name: String,
    /// Files (relative to `workdir`) the program writes and that must match the reference.
    #[serde(default)]
    pub output_files: Vec<String>,
    /// Relative tolerance for numeric stdout comparison; bit-exact when absent.
    #[serde(default)]
    pub numeric_tolerance: Option<f64>,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
}

impl BuildSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let need = |tpl: &str, ph: &str, what: &str| {
            if tpl.contains(ph) {
                Ok(())
            } else {
                Err(HarnessError::InvalidSpec(format!("{what} lacks {ph}")))
            }
        };
        need(&self.compile_cmd, "{src}", "compile_cmd")?;
        need(&self.compile_cmd, "{bin}", "compile_cmd")?;
        need(&self.exec_cmd, "{bin}", "exec_cmd")?;
        if self.runs == 0 {
            return Err(HarnessError::InvalidSpec("runs must be at least 1".into()));
        }
        Ok(())
    }

    pub(crate) fn exec_line(&self, bin: &std::path::Path) -> Result<String, HarnessError> {
        let mut subs = BTreeMap::new();
        subs.insert("bin".to_string(), shell::quote(bin));
        subs.insert("args".to_string(), self.args.clone());
        Ok(crate::ingest::render_template(&self.exec_cmd, &subs)?)
    }
}
