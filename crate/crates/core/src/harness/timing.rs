use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::shell::run_shell;
use super::{BuildSpec, HarnessError};
use crate::util::tail_lines;

/// Wall-clock samples of repeated executions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub samples_ns: Vec<u64>,
    pub mean_ns: u64,
    pub min_ns: u64,
    pub max_ns: u64,
}

impl RuntimeStats {
    /// Panics on an empty sample list.
    pub fn from_samples(samples_ns: Vec<u64>) -> Self {
        assert!(!samples_ns.is_empty(), "runtime stats need at least one sample");
        let sum: u128 = samples_ns.iter().map(|&s| s as u128).sum();
        let n = samples_ns.len() as u128;
        let mean_ns = ((sum + n / 2) / n) as u64;
        let min_ns = *samples_ns.iter().min().expect("non-empty");
        let max_ns = *samples_ns.iter().max().expect("non-empty");
        RuntimeStats { samples_ns, mean_ns, min_ns, max_ns }
    }
}

static PROCESS_GATE: Mutex<()> = Mutex::new(());

fn host_lock_path() -> PathBuf {
    std::env::var_os("OPTIMAS_LOCK_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir)
        .join("optimas-measure.lock")
}

fn host_lock(path: &Path) -> Result<File, HarnessError> {
    let file = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(path)
        .map_err(|e| HarnessError::WriteFailure { path: path.into(), source: e })?;
    file.lock().map_err(|e| HarnessError::WriteFailure { path: path.into(), source: e })?;
    Ok(file)
}

/// Executes the binary `spec.runs` times back to back, holding a host-wide
/// lock so no other measurement overlaps.
pub fn measure_runtime(binary: &Path, spec: &BuildSpec) -> Result<RuntimeStats, HarnessError> {
    if spec.runs == 0 {
        return Err(HarnessError::InvalidSpec("runs must be at least 1".into()));
    }
    let cmd = spec.exec_line(binary)?;
    let _gate = PROCESS_GATE.lock().unwrap_or_else(|e| e.into_inner());
    let _host = host_lock(&host_lock_path())?;
    let mut samples = Vec::with_capacity(spec.runs);
    for _ in 0..spec.runs {
        let out = run_shell(&cmd, &spec.workdir, spec.timeout_s, false)?;
        if !out.success() {
            return Err(HarnessError::ExecutionFailure { code: out.code, stderr_tail: tail_lines(&out.stderr_text(), 20) });
        }
        samples.push(out.elapsed.as_nanos() as u64);
    }
    Ok(RuntimeStats::from_samples(samples))
}

/// `100 * (base - opt) / base` on mean runtimes; negative when slower.
pub fn improvement_percent(base: &RuntimeStats, opt: &RuntimeStats) -> Result<f64, HarnessError> {
    if base.mean_ns == 0 {
        return Err(HarnessError::ZeroBaseline);
    }
    let b = base.mean_ns as f64;
    Ok(100.0 * (b - opt.mean_ns as f64) / b)
}
