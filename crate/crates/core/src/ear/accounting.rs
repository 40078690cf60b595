use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use similar::{DiffOp, TextDiff};

use crate::prompt::OptimizedArtifact;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accounting {
    pub implemented: usize,
    pub withheld: usize,
    pub hallucinated: usize,
    /// Per applied edit, in artifact order.
    pub implemented_edits: Vec<bool>,
}

/// One unified-diff hunk with the edits and evidence that claim it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffHunk {
    pub header: String,
    pub text: String,
    pub edit_ids: Vec<String>,
    pub evidence_ids: Vec<String>,
}

fn normalized(s: &str) -> String {
    let mut s = s.replace("\r\n", "\n");
    if !s.is_empty() && !s.ends_with('\n') {
        s.push('\n');
    }
    s
}

/// Original-coordinate line span touched by one diff op, 1-based inclusive.
/// An insertion touches the lines on both sides of the insertion point.
fn op_region(op: &DiffOp) -> Option<(u32, u32)> {
    match *op {
        DiffOp::Equal { .. } => None,
        DiffOp::Delete { old_index, old_len, .. } | DiffOp::Replace { old_index, old_len, .. } => {
            Some((old_index as u32 + 1, (old_index + old_len) as u32))
        }
        DiffOp::Insert { old_index, .. } => Some(((old_index as u32).max(1), old_index as u32 + 1)),
    }
}

/// Changed regions of `original` (1-based inclusive line ranges) when
/// turning it into `new`.
pub fn changed_regions(original: &str, new: &str) -> Vec<(u32, u32)> {
    let (a, b) = (normalized(original), normalized(new));
    TextDiff::from_lines(&a, &b).ops().iter().filter_map(op_region).collect()
}

fn overlaps((s, e): (u32, u32), regions: &[(u32, u32)]) -> bool {
    regions.iter().any(|&(rs, re)| s <= re && rs <= e)
}

/// An applied edit is implemented when its claimed range overlaps a changed
/// region of the original; otherwise it is hallucinated. Edits without a
/// parsed range cannot be verified and count as hallucinated.
pub fn edit_accounting(artifact: &OptimizedArtifact, original_source: &str) -> Accounting {
    let regions = changed_regions(original_source, &artifact.full_source);
    let implemented_edits: Vec<bool> =
        artifact.applied.iter().map(|e| e.range().is_some_and(|r| overlaps(r, &regions))).collect();
    let implemented = implemented_edits.iter().filter(|&&b| b).count();
    Accounting {
        implemented,
        withheld: artifact.withheld.len(),
        hallucinated: implemented_edits.len() - implemented,
        implemented_edits,
    }
}

/// Unified diff with three lines of context.
pub fn unified_diff(original: &str, new: &str) -> String {
    let (a, b) = (normalized(original), normalized(new));
    TextDiff::from_lines(&a, &b).unified_diff().context_radius(3).header("original", "optimized").to_string()
}

/// Hunks of the unified diff, each tagged with the applied edits whose line
/// ranges overlap it and the evidence those edits cite.
pub fn diff_hunks(original: &str, artifact: &OptimizedArtifact) -> Vec<DiffHunk> {
    let (a, b) = (normalized(original), normalized(&artifact.full_source));
    let diff = TextDiff::from_lines(&a, &b);
    let mut udiff = diff.unified_diff();
    udiff.context_radius(3);
    udiff
        .iter_hunks()
        .map(|hunk| {
            let regions: Vec<_> = hunk.ops().iter().filter_map(op_region).collect();
            let claiming: Vec<_> =
                artifact.applied.iter().filter(|e| e.range().is_some_and(|r| overlaps(r, &regions))).collect();
            let evidence: BTreeSet<String> = claiming.iter().flat_map(|e| e.evidence_ids.iter().cloned()).collect();
            DiffHunk {
                header: hunk.header().to_string(),
                text: hunk.to_string(),
                edit_ids: claiming.iter().map(|e| e.edit_id.clone()).collect(),
                evidence_ids: evidence.into_iter().collect(),
            }
        })
        .collect()
}
