use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::shell::run_shell;
use super::{BuildSpec, HarnessError};
use crate::util::{sha256_hex, tail_lines};

/// Expected output of the baseline program.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reference {
    #[serde(with = "bytes_lossless")]
    pub stdout: Vec<u8>,
    /// Output file (relative to the workdir) -> SHA-256 hex.
    pub files: BTreeMap<String, String>,
}

mod bytes_lossless {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Mismatch {
    /// First byte offset where stdout differs (or where the shorter one ends).
    Stdout { offset: usize },
    MissingFile { name: String },
    FileDigest { name: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationResult {
    pub valid: bool,
    pub mismatches: Vec<Mismatch>,
}

fn run_once(binary: &Path, spec: &BuildSpec) -> Result<Vec<u8>, HarnessError> {
    let out = run_shell(&spec.exec_line(binary)?, &spec.workdir, spec.timeout_s, true)?;
    if !out.success() {
        return Err(HarnessError::ExecutionFailure { code: out.code, stderr_tail: tail_lines(&out.stderr_text(), 20) });
    }
    Ok(out.stdout)
}

fn file_digests(spec: &BuildSpec) -> BTreeMap<String, Option<String>> {
    spec.output_files
        .iter()
        .map(|name| (name.clone(), fs::read(spec.workdir.join(name)).ok().map(|b| sha256_hex(&b))))
        .collect()
}

/// Runs the baseline once and records its stdout and output-file digests.
pub fn capture_reference(binary: &Path, spec: &BuildSpec) -> Result<Reference, HarnessError> {
    let stdout = run_once(binary, spec)?;
    let mut files = BTreeMap::new();
    for (name, digest) in file_digests(spec) {
        let digest = digest.ok_or_else(|| HarnessError::ExecutionFailure {
            code: Some(0),
            stderr_tail: format!("baseline did not produce `{name}`"),
        })?;
        files.insert(name, digest);
    }
    Ok(Reference { stdout, files })
}

fn first_divergence(a: &[u8], b: &[u8]) -> Option<usize> {
    match a.iter().zip(b).position(|(x, y)| x != y) {
        Some(i) => Some(i),
        None if a.len() != b.len() => Some(a.len().min(b.len())),
        None => None,
    }
}

/// Byte offset of the first token that differs beyond `rel_tol`.
fn numeric_divergence(expected: &[u8], got: &[u8], rel_tol: f64) -> Option<usize> {
    let tokens = |b: &[u8]| -> Vec<(usize, String)> {
        let text = String::from_utf8_lossy(b).into_owned();
        let mut out = Vec::new();
        let mut start = None;
        for (i, c) in text.char_indices() {
            match (c.is_whitespace(), start) {
                (false, None) => start = Some(i),
                (true, Some(s)) => {
                    out.push((s, text[s..i].to_string()));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((s, text[s..].to_string()));
        }
        out
    };
    let (te, tg) = (tokens(expected), tokens(got));
    for ((_, e), (off, g)) in te.iter().zip(&tg) {
        let same = match (e.parse::<f64>(), g.parse::<f64>()) {
            (Ok(x), Ok(y)) => x == y || (x - y).abs() <= rel_tol * x.abs().max(y.abs()),
            _ => e == g,
        };
        if !same {
            return Some(*off);
        }
    }
    (te.len() != tg.len()).then(|| tg.get(te.len()).map_or(got.len(), |(o, _)| *o))
}

/// Runs the candidate once and compares its stdout and output files with the
/// reference. Bit-exact unless the spec opts into a numeric tolerance.
pub fn validate_output(binary: &Path, spec: &BuildSpec, reference: &Reference) -> Result<ValidationResult, HarnessError> {
    for name in reference.files.keys() {
        let _ = fs::remove_file(spec.workdir.join(name));
    }
    let stdout = run_once(binary, spec)?;
    let mut mismatches = Vec::new();
    let offset = match spec.numeric_tolerance {
        Some(tol) => numeric_divergence(&reference.stdout, &stdout, tol),
        None => first_divergence(&reference.stdout, &stdout),
    };
    if let Some(offset) = offset {
        mismatches.push(Mismatch::Stdout { offset });
    }
    for (name, expected) in &reference.files {
        match fs::read(spec.workdir.join(name)) {
            Err(_) => mismatches.push(Mismatch::MissingFile { name: name.clone() }),
            Ok(bytes) if sha256_hex(&bytes) != *expected => mismatches.push(Mismatch::FileDigest { name: name.clone() }),
            Ok(_) => {}
        }
    }
    Ok(ValidationResult { valid: mismatches.is_empty(), mismatches })
}
