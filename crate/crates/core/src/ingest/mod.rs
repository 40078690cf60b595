//! Ingestion of normalized profiler exports.
//!
//! Vendor exports sit upstream of an adapter boundary; everything in here
//! reads (and writes back) the normalized formats:
//!
//! * `kernels.csv`: `kernel_name,time_ns[,source_file]`
//! * `pcsamples.csv`: optional `# unit=cycles|samples`, then
//!   `kernel_name,source_line,stall_type,cycles`
//! * `counters.csv`: `run_id,runtime_ns,<counter...>`
//! * `roofline.json`: array of [`RooflineRaw`]
//! * `counter_dictionary.json`: flat `name -> description` map

mod bundle;
mod dictionary;
mod formats;
mod profiler;

use std::io;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bundle::DiagnosticBundle;
pub use dictionary::{load_counter_dictionary, parse_counter_dictionary, CounterDictionary};
pub use formats::{
    parse_counter_matrix, parse_kernel_times, parse_pc_samples, parse_roofline, read_counter_matrix,
    read_kernel_times, read_roofline, write_counter_matrix, write_kernel_times, write_pc_samples,
    write_roofline, PcSampleReader,
};
pub use profiler::{invoke_profiler, render_template, ProfilerCommand};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{origin}:{line}: malformed row: {reason}")]
    MalformedRow { origin: String, line: u64, reason: String },
    #[error("{origin}: unexpected header, expected `{expected}`")]
    BadHeader { origin: String, expected: String },
    #[error("duplicate kernel `{0}`")]
    DuplicateKernel(String),
    #[error("{origin}: missing required column `runtime_ns`")]
    MissingRuntimeColumn { origin: String },
    #[error("{origin}:{line}: ragged row with {found} fields, expected {expected}")]
    RaggedRow { origin: String, line: u64, expected: usize, found: usize },
    #[error("{origin}: counter matrix needs at least two runs, found {runs}")]
    FewerThanTwoRuns { origin: String, runs: usize },
    #[error("{origin}: no counter columns")]
    NoCounters { origin: String },
    #[error("duplicate counter `{0}`")]
    DuplicateCounter(String),
    #[error("roofline entry for `{kernel}`: {reason}")]
    InvalidRoofline { kernel: String, reason: String },
    #[error("{origin}: {source}")]
    Json { origin: String, source: serde_json::Error },
    #[error("{kind} entry references unknown kernel `{kernel}`")]
    UnknownKernel { kind: &'static str, kernel: String },
    #[error("unbound placeholder `{{{0}}}` in command template")]
    UnboundPlaceholder(String),
    #[error("could not launch `{command}`: {source}")]
    Spawn { command: String, source: io::Error },
    #[error("profiler exited with code {code}: {stderr_tail}")]
    NonZeroExit { code: i32, stderr_tail: String },
    #[error("profiler output `{}` was not produced", .0.display())]
    MissingOutput(PathBuf),
}

impl IngestError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        IngestError::Io { path: path.into(), source }
    }
}

/// Per-kernel wall time from a lightweight profiling pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelProfile {
    pub kernel_name: String,
    pub time_ns: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_file: Option<String>,
}

impl KernelProfile {
    pub fn new(name: impl Into<String>, time_ns: u64) -> Self {
        KernelProfile { kernel_name: name.into(), time_ns, source_file: None }
    }
}

/// Roofline facts for one kernel. Rates are per second; intensity is ops/byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RooflineRaw {
    pub kernel_name: String,
    pub achieved_compute: f64,
    pub peak_compute: f64,
    pub achieved_bandwidth: f64,
    pub peak_bandwidth: f64,
    pub arithmetic_intensity: f64,
    #[serde(default)]
    pub profiler_notes: Vec<String>,
}

impl RooflineRaw {
    pub(crate) fn validate(&self) -> Result<(), IngestError> {
        let bad = |reason: &str| IngestError::InvalidRoofline {
            kernel: self.kernel_name.clone(),
            reason: reason.to_string(),
        };
        let rates = [
            self.achieved_compute,
            self.peak_compute,
            self.achieved_bandwidth,
            self.peak_bandwidth,
            self.arithmetic_intensity,
        ];
        if rates.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(bad("rates and intensity must be finite and non-negative"));
        }
        if self.peak_compute <= 0.0 || self.peak_bandwidth <= 0.0 {
            return Err(bad("peaks must be positive"));
        }
        if self.kernel_name.is_empty() {
            return Err(bad("empty kernel name"));
        }
        Ok(())
    }
}

/// One PC-sampling row: stalled cycles (or samples) on a source line.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StallSample {
    pub kernel_name: String,
    pub source_line: u32,
    pub stall_type: String,
    pub cycles: u64,
}

/// Unit of the `cycles` column. Saliency is ratio-based so either works.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StallUnit {
    #[default]
    Cycles,
    Samples,
}

impl StallUnit {
    pub fn as_str(self) -> &'static str {
        match self {
            StallUnit::Cycles => "cycles",
            StallUnit::Samples => "samples",
        }
    }
}

/// Counter values per profiling run (rows) and counter (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterMatrix {
    pub run_ids: Vec<String>,
    pub counter_names: Vec<String>,
    /// Row-major, `run_ids.len()` rows of `counter_names.len()` values.
    pub values: Vec<Vec<f64>>,
    /// Runtimes as recorded, in nanoseconds.
    pub runtime_ns: Vec<f64>,
}

impl CounterMatrix {
    pub fn n_runs(&self) -> usize {
        self.run_ids.len()
    }

    pub fn n_counters(&self) -> usize {
        self.counter_names.len()
    }

    /// Runtimes in seconds.
    pub fn runtimes_s(&self) -> Vec<f64> {
        self.runtime_ns.iter().map(|ns| ns / 1e9).collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[j]).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.counter_names.iter().position(|n| n == name)
    }

    /// Mean raw value of a counter across runs.
    pub fn column_mean(&self, name: &str) -> Option<f64> {
        let j = self.column_index(name)?;
        let n = self.n_runs() as f64;
        Some(self.values.iter().map(|row| row[j]).sum::<f64>() / n)
    }
}
