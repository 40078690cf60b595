//! The append-only optimization corpus.
//!
//! Layout under an output root:
//!
//! ```text
//! runs/<timestamp>-<uuid>/...      run directories
//! corpus/index.ndjson              one IndexEntry per line
//! corpus/records/<uuid>.json       one CorpusRecord per run
//! ```
//!
//! Record URLs are relative to the output root.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Component, Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::config::PipelineConfig;
use crate::harness::{RunManifest, RunStatus, RuntimeStats, MANIFEST_FILE};
use crate::prompt::parse_response;
use crate::util::sha256_hex;

pub const RUNS_DIR: &str = "runs";
pub const CORPUS_DIR: &str = "corpus";
pub const INDEX_FILE: &str = "index.ndjson";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("run at {} has no readable manifest: {reason}", path.display())]
    IncompleteRun { path: PathBuf, reason: String },
    #[error("run directory {} is not under the corpus root", .0.display())]
    OutsideRoot(PathBuf),
    #[error("a record for run {0} already exists")]
    DuplicateRecord(Uuid),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {reason}", path.display())]
    BadIndex { path: PathBuf, line: usize, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

/// One optimization outcome. Keys follow the dataset schema; `Config` holds
/// the input configuration (program arguments).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    #[serde(rename = "App")]
    pub app: String,
    #[serde(rename = "Config")]
    pub config: String,
    #[serde(rename = "Prompt")]
    pub prompt_url: String,
    #[serde(rename = "LLM")]
    pub llm: String,
    #[serde(rename = "HW")]
    pub hw: String,
    #[serde(rename = "SW")]
    pub sw: String,
    #[serde(rename = "Compile")]
    pub compile: String,
    #[serde(rename = "Exec")]
    pub exec: String,
    #[serde(rename = "Opt_Code")]
    pub opt_code_url: String,
    #[serde(rename = "Applied")]
    pub applied: Vec<String>,
    #[serde(rename = "Ignored")]
    pub ignored: Vec<String>,
    #[serde(rename = "Errors")]
    pub errors: String,
    #[serde(rename = "Base_RT")]
    pub base_rt: String,
    #[serde(rename = "Opt_RT")]
    pub opt_rt: String,
}

/// `12_400_000` ns -> `"12.4ms"`.
pub fn format_duration(ns: u64) -> String {
    format!("{}ms", ns as f64 / 1e6)
}

/// Milliseconds in a `"<decimal>ms"` string, if positive and finite.
pub fn parse_duration(s: &str) -> Option<f64> {
    let v: f64 = s.strip_suffix("ms")?.parse().ok()?;
    (v.is_finite() && v > 0.0).then_some(v)
}

fn read_stats(dir: &Path, name: &str) -> Option<RuntimeStats> {
    let text = fs::read_to_string(dir.join(name)).ok()?;
    serde_json::from_str::<Option<RuntimeStats>>(&text).ok().flatten()
}

fn url_of(root: &Path, file: &Path) -> Result<String, CorpusError> {
    let rel = file.strip_prefix(root).map_err(|_| CorpusError::OutsideRoot(file.to_path_buf()))?;
    Ok(rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"))
}

/// Builds the record for a finished run directory under `root`.
pub fn emit_record(run_dir: &Path, root: &Path) -> Result<CorpusRecord, CorpusError> {
    let incomplete = |reason: String| CorpusError::IncompleteRun { path: run_dir.to_path_buf(), reason };
    if !run_dir.join(MANIFEST_FILE).is_file() {
        return Err(incomplete("manifest.json is missing".into()));
    }
    let manifest = RunManifest::load_unverified(run_dir).map_err(|e| incomplete(e.to_string()))?;
    let cfg = PipelineConfig::from_snapshot(&manifest.config_snapshot).map_err(|e| incomplete(e.to_string()))?;
    let (applied, ignored) = fs::read_to_string(run_dir.join("response.txt"))
        .ok()
        .and_then(|r| parse_response(&r).ok())
        .map(|a| {
            (
                a.applied.into_iter().map(|e| e.transformation).collect(),
                a.withheld.into_iter().map(|w| w.candidate).collect(),
            )
        })
        .unwrap_or_default();
    let timed = matches!(manifest.status, RunStatus::Improved | RunStatus::NoGain);
    Ok(CorpusRecord {
        app: manifest.app.clone(),
        config: cfg.eval.args.clone(),
        prompt_url: url_of(root, &run_dir.join("prompt_1.txt"))?,
        llm: cfg.llm.label(),
        hw: cfg.hw(),
        sw: cfg.sw(),
        compile: cfg.eval.compile_cmd.clone(),
        exec: cfg.eval.exec_cmd.clone(),
        opt_code_url: url_of(root, &run_dir.join("optimized.src"))?,
        applied,
        ignored,
        errors: manifest.error.clone().unwrap_or_default(),
        base_rt: read_stats(run_dir, "baseline_stats.json").map(|s| format_duration(s.mean_ns)).unwrap_or_default(),
        opt_rt: if timed {
            read_stats(run_dir, "opt_stats.json").map(|s| format_duration(s.mean_ns)).unwrap_or_default()
        } else {
            String::new()
        },
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

fn check_url(root: &Path, field: &str, url: &str, out: &mut Vec<Violation>) {
    let mut v = |m: String| out.push(Violation { field: field.into(), message: m });
    let p = Path::new(url);
    if url.is_empty() {
        return v("is empty".into());
    }
    if !p.components().all(|c| matches!(c, Component::Normal(_))) {
        return v(format!("`{url}` must be a plain path relative to the corpus root"));
    }
    let full = root.join(p);
    let bytes = match fs::read(&full) {
        Ok(b) => b,
        Err(_) => return v(format!("`{url}` does not exist")),
    };
    let dir = full.parent().expect("joined path has a parent");
    let name = full.file_name().expect("normal component").to_string_lossy().into_owned();
    match RunManifest::load_unverified(dir) {
        Err(_) => v(format!("`{url}` has no run manifest beside it")),
        Ok(m) => match m.digests.get(&name) {
            None => v(format!("`{url}` is not listed in its run manifest")),
            Some(d) if *d != sha256_hex(&bytes) => v(format!("`{url}` does not match its manifest digest")),
            Some(_) => {}
        },
    }
}

/// Every invariant a record must satisfy; empty when valid.
pub fn validate_record(record: &CorpusRecord, root: &Path) -> Vec<Violation> {
    let mut out = Vec::new();
    for (field, value) in [
        ("App", &record.app),
        ("LLM", &record.llm),
        ("HW", &record.hw),
        ("SW", &record.sw),
        ("Compile", &record.compile),
        ("Exec", &record.exec),
    ] {
        if value.trim().is_empty() {
            out.push(Violation { field: field.into(), message: "is empty".into() });
        }
    }
    check_url(root, "Prompt", &record.prompt_url, &mut out);
    check_url(root, "Opt_Code", &record.opt_code_url, &mut out);
    for (field, value) in [("Base_RT", &record.base_rt), ("Opt_RT", &record.opt_rt)] {
        if value.is_empty() {
            if record.errors.trim().is_empty() {
                out.push(Violation { field: field.into(), message: "is empty but Errors is empty too".into() });
            }
        } else if parse_duration(value).is_none() {
            out.push(Violation { field: field.into(), message: format!("`{value}` is not a positive `<ms>ms` duration") });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub run_uuid: Uuid,
    pub created_at: DateTime<Utc>,
    pub app: String,
    pub llm: String,
    pub status: RunStatus,
    /// Relative to the corpus directory.
    pub record: String,
}

/// Handle on `<root>/corpus`.
#[derive(Debug, Clone)]
pub struct Corpus {
    root: PathBuf,
}

impl Corpus {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Corpus { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir(&self) -> PathBuf {
        self.root.join(CORPUS_DIR)
    }

    /// Writes the record file and appends its index line, under an
    /// exclusive lock on the index. Existing records are never rewritten.
    pub fn append(&self, manifest: &RunManifest, record: &CorpusRecord) -> Result<IndexEntry, CorpusError> {
        let dir = self.dir();
        let records = dir.join("records");
        fs::create_dir_all(&records).map_err(io_err(&records))?;
        let lock_path = dir.join(".lock");
        let lock = OpenOptions::new().create(true).truncate(false).write(true).open(&lock_path).map_err(io_err(&lock_path))?;
        lock.lock().map_err(io_err(&lock_path))?;

        let rel = format!("records/{}.json", manifest.run_uuid);
        let path = dir.join(&rel);
        let mut f = match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(CorpusError::DuplicateRecord(manifest.run_uuid))
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        let mut body = serde_json::to_string_pretty(record).expect("record serializes");
        body.push('\n');
        f.write_all(body.as_bytes()).map_err(io_err(&path))?;

        let entry = IndexEntry {
            run_uuid: manifest.run_uuid,
            created_at: manifest.created_at,
            app: record.app.clone(),
            llm: record.llm.clone(),
            status: manifest.status,
            record: rel,
        };
        let index = dir.join(INDEX_FILE);
        let mut line = serde_json::to_string(&entry).expect("entry serializes");
        line.push('\n');
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index)
            .and_then(|mut f| f.write_all(line.as_bytes()))
            .map_err(io_err(&index))?;
        Ok(entry)
    }

    /// Index entries in append order. A missing index is an empty corpus.
    pub fn entries(&self) -> Result<Vec<IndexEntry>, CorpusError> {
        let index = self.dir().join(INDEX_FILE);
        let f = match File::open(&index) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&index)(e)),
        };
        let mut out = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(io_err(&index))?;
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(&line)
                .map_err(|e| CorpusError::BadIndex { path: index.clone(), line: i + 1, reason: e.to_string() })?;
            out.push(e);
        }
        Ok(out)
    }

    pub fn len(&self) -> Result<usize, CorpusError> {
        Ok(self.entries()?.len())
    }

    pub fn is_empty(&self) -> Result<bool, CorpusError> {
        Ok(self.len()? == 0)
    }

    pub fn record(&self, entry: &IndexEntry) -> Result<CorpusRecord, CorpusError> {
        let path = self.dir().join(&entry.record);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| CorpusError::BadIndex { path, line: 0, reason: e.to_string() })
    }

    /// Violations per run, only for records that have any.
    pub fn validate_all(&self) -> Result<Vec<(Uuid, Vec<Violation>)>, CorpusError> {
        let mut out = Vec::new();
        for e in self.entries()? {
            let v = validate_record(&self.record(&e)?, &self.root);
            if !v.is_empty() {
                out.push((e.run_uuid, v));
            }
        }
        Ok(out)
    }
}
