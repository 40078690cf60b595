use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use super::{HarnessError, RuntimeStats};
use crate::util::sha256_hex;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Improved,
    NoGain,
    InvalidOutput,
    CompileFailed,
    RuntimeError,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Improved => "improved",
            RunStatus::NoGain => "no-gain",
            RunStatus::InvalidOutput => "invalid-output",
            RunStatus::CompileFailed => "compile-failed",
            RunStatus::RuntimeError => "runtime-error",
        }
    }
}

/// Index of a run directory: identity, outcome, and a digest per artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_uuid: Uuid,
    pub created_at: DateTime<Utc>,
    pub app: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub improvement_percent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Relative artifact path -> SHA-256 hex.
    pub digests: BTreeMap<String, String>,
    pub config_snapshot: serde_json::Value,
}

impl RunManifest {
    pub fn dir_name(&self) -> String {
        format!("{}-{}", self.created_at.format("%Y%m%dT%H%M%S%.3fZ"), self.run_uuid)
    }

    /// Reads `manifest.json` from `dir` and checks every recorded digest.
    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let m = Self::load_unverified(dir)?;
        m.verify(dir)?;
        Ok(m)
    }

    pub fn load_unverified(dir: &Path) -> Result<Self, HarnessError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| HarnessError::ReadFailure { path, source: e })?;
        serde_json::from_str(&text).map_err(|e| HarnessError::BadManifest(e.to_string()))
    }

    pub fn verify(&self, dir: &Path) -> Result<(), HarnessError> {
        for (name, digest) in &self.digests {
            let bytes = fs::read(dir.join(name)).map_err(|_| HarnessError::MissingArtifact(name.clone()))?;
            if sha256_hex(&bytes) != *digest {
                return Err(HarnessError::DigestMismatch { name: name.clone() });
            }
        }
        Ok(())
    }
}

/// A run directory under construction. Every file written through it gets
/// a manifest digest; [`RunDir::finish`] writes `manifest.json`.
pub struct RunDir {
    path: PathBuf,
    manifest: RunManifest,
}

impl RunDir {
    /// Creates `<root>/<timestamp>-<uuid>/` with an empty `logs/`.
    pub fn create(root: &Path, uuid: Option<Uuid>, app: &str, config_snapshot: serde_json::Value) -> Result<Self, HarnessError> {
        let manifest = RunManifest {
            run_uuid: uuid.unwrap_or_else(Uuid::new_v4),
            created_at: Utc::now(),
            app: app.to_string(),
            status: RunStatus::RuntimeError,
            improvement_percent: None,
            error: None,
            digests: BTreeMap::new(),
            config_snapshot,
        };
        let path = root.join(manifest.dir_name());
        fs::create_dir_all(path.join("logs")).map_err(|e| HarnessError::WriteFailure { path: path.clone(), source: e })?;
        Ok(RunDir { path, manifest })
    }

    /// Reopens a finished run to add artifacts. Existing digests must verify.
    pub fn open(path: &Path) -> Result<Self, HarnessError> {
        let manifest = RunManifest::load(path)?;
        Ok(RunDir { path: path.to_path_buf(), manifest })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn manifest_mut(&mut self) -> &mut RunManifest {
        &mut self.manifest
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), HarnessError> {
        let path = self.path.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| HarnessError::WriteFailure { path: parent.into(), source: e })?;
        }
        fs::write(&path, bytes).map_err(|e| HarnessError::WriteFailure { path, source: e })?;
        self.manifest.digests.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), HarnessError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::BadManifest(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Records every file under `src` as `<prefix>/<relative path>`.
    pub fn copy_tree(&mut self, src: &Path, prefix: &str) -> Result<(), HarnessError> {
        let mut stack = vec![src.to_path_buf()];
        while let Some(dir) = stack.pop() {
            let entries = fs::read_dir(&dir).map_err(|e| HarnessError::ReadFailure { path: dir.clone(), source: e })?;
            let mut entries: Vec<_> = entries.filter_map(Result::ok).map(|e| e.path()).collect();
            entries.sort();
            for p in entries {
                if p.is_dir() {
                    stack.push(p);
                    continue;
                }
                let rel = p.strip_prefix(src).expect("walked from src").to_string_lossy().replace('\\', "/");
                let bytes = fs::read(&p).map_err(|e| HarnessError::ReadFailure { path: p.clone(), source: e })?;
                self.write(&format!("{prefix}/{rel}"), &bytes)?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self, status: RunStatus) -> Result<RunManifest, HarnessError> {
        self.manifest.status = status;
        self.save()?;
        Ok(self.manifest)
    }

    /// Writes the manifest keeping the current status.
    pub fn save(&self) -> Result<(), HarnessError> {
        let path = self.path.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self.manifest).map_err(|e| HarnessError::BadManifest(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| HarnessError::WriteFailure { path, source: e })
    }
}

/// Everything a finished optimization leaves behind.
#[derive(Debug, Clone, Default)]
pub struct RunArtifacts {
    pub prompts: Vec<String>,
    pub response: String,
    pub optimized_source: String,
    pub baseline_stats: Option<RuntimeStats>,
    pub opt_stats: Option<RuntimeStats>,
    pub ear_report: serde_json::Value,
    pub corpus_record: serde_json::Value,
    /// File name under `logs/` -> content.
    pub logs: BTreeMap<String, String>,
}

/// Writes the fixed-name layout into a fresh run directory.
pub fn persist_run(
    root: &Path,
    uuid: Option<Uuid>,
    app: &str,
    config_snapshot: serde_json::Value,
    artifacts: &RunArtifacts,
    status: RunStatus,
) -> Result<(RunManifest, PathBuf), HarnessError> {
    let mut dir = RunDir::create(root, uuid, app, config_snapshot)?;
    write_artifacts(&mut dir, artifacts)?;
    let path = dir.path().to_path_buf();
    Ok((dir.finish(status)?, path))
}

pub(crate) fn write_artifacts(dir: &mut RunDir, a: &RunArtifacts) -> Result<(), HarnessError> {
    for (i, p) in a.prompts.iter().enumerate() {
        dir.write(&format!("prompt_{}.txt", i + 1), p.as_bytes())?;
    }
    dir.write("response.txt", a.response.as_bytes())?;
    dir.write("optimized.src", a.optimized_source.as_bytes())?;
    dir.write_json("baseline_stats.json", &a.baseline_stats)?;
    dir.write_json("opt_stats.json", &a.opt_stats)?;
    dir.write_json("ear_report.json", &a.ear_report)?;
    // The corpus record is derived from the finished manifest and added afterwards.
    if !a.corpus_record.is_null() {
        dir.write_json("corpus_record.json", &a.corpus_record)?;
    }
    for (name, text) in &a.logs {
        dir.write(&format!("logs/{name}"), text.as_bytes())?;
    }
    Ok(())
}
