use std::collections::{BTreeMap, BTreeSet, HashMap};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::Measured;
use crate::diag::{Anchor, DiagnosticLine, Direction};
use crate::ingest::{DiagnosticBundle, RooflineRaw};
use crate::prompt::{OptimizedArtifact, PromptPackage};

/// Kernel bucket for counter evidence when no edit names a kernel.
pub const APP_KERNEL: &str = "<app>";

/// Overrides the expected direction of diagnostics whose ID or
/// stall/counter name matches `pattern` (a regex, unanchored).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionRule {
    pub pattern: String,
    pub expected: Direction,
}

impl DirectionRule {
    pub fn compile(&self) -> Result<Regex, regex::Error> {
        Regex::new(&self.pattern)
    }

    fn matches(&self, line: &DiagnosticLine) -> bool {
        // Invalid patterns are rejected at config load; here they just never match.
        let Ok(re) = self.compile() else { return false };
        re.is_match(line.id.as_str()) || line.anchor.evidence_name().is_some_and(|n| re.is_match(n))
    }
}

/// Default expected movement of a diagnostic's metric, or `None` when the
/// diagnostic has nothing re-measurable (bound type, notes, or a kernel
/// already saturated on both resources).
pub fn expected_direction(line: &DiagnosticLine, rules: &[DirectionRule]) -> Option<Direction> {
    let default = match &line.anchor {
        Anchor::Stall { .. } => Direction::Decrease,
        Anchor::Utilization { compute_saturated: true, memory_saturated: true, .. } => return None,
        Anchor::Utilization { .. } => Direction::Increase,
        Anchor::Counter { coefficient, .. } if *coefficient > 0.0 => Direction::Decrease,
        Anchor::Counter { coefficient, .. } if *coefficient < 0.0 => Direction::Increase,
        Anchor::Counter { .. } | Anchor::Bound { .. } | Anchor::Note { .. } => return None,
    };
    Some(rules.iter().find(|r| r.matches(line)).map_or(default, |r| r.expected))
}

fn ratio(achieved: f64, peak: f64) -> Option<f64> {
    (peak > 0.0 && achieved.is_finite()).then(|| (achieved / peak).clamp(0.0, 1.0))
}

fn utilization(r: &RooflineRaw, compute: bool) -> Option<f64> {
    if compute {
        ratio(r.achieved_compute, r.peak_compute)
    } else {
        ratio(r.achieved_bandwidth, r.peak_bandwidth)
    }
}

fn kernel_stall_total(b: &DiagnosticBundle, kernel: &str, stall_type: &str) -> Option<f64> {
    let mut it = b.stalls.iter().filter(|s| s.kernel_name == kernel && s.stall_type == stall_type).peekable();
    it.peek()?;
    Some(it.map(|s| s.cycles as f64).sum())
}

/// The same quantity read from both bundles, if both have it.
fn measure_pair(anchor: &Anchor, pre: &DiagnosticBundle, post: &DiagnosticBundle) -> Option<(f64, f64)> {
    match anchor {
        Anchor::Stall { kernel, line, stall_type } => {
            let at_line = |b: &DiagnosticBundle| b.stall_cycles(kernel, *line, stall_type).map(|c| c as f64);
            match (at_line(pre), at_line(post)) {
                (Some(a), Some(b)) => Some((a, b)),
                // Edits move code, so fall back to the kernel-wide total of that stall.
                _ => Some((kernel_stall_total(pre, kernel, stall_type)?, kernel_stall_total(post, kernel, stall_type)?)),
            }
        }
        Anchor::Utilization { kernel, compute_saturated, .. } => {
            let compute = !compute_saturated;
            Some((utilization(pre.roofline_for(kernel)?, compute)?, utilization(post.roofline_for(kernel)?, compute)?))
        }
        Anchor::Counter { name, .. } => {
            Some((pre.counters.as_ref()?.column_mean(name)?, post.counters.as_ref()?.column_mean(name)?))
        }
        Anchor::Bound { .. } | Anchor::Note { .. } => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticMove {
    pub id: String,
    pub expected: Direction,
    pub pre: f64,
    pub post: f64,
    pub moved_as_expected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelVerdict {
    pub kernel: String,
    pub moves: Vec<DiagnosticMove>,
    /// Strict majority of `moves` went the expected way.
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionOutcome {
    pub value: Measured,
    /// Edited kernels with at least one measurable diagnostic.
    pub kernels: Vec<KernelVerdict>,
}

impl DirectionOutcome {
    pub fn not_measured() -> Self {
        DirectionOutcome { value: Measured::NotMeasured, kernels: Vec::new() }
    }
}

/// Share of edited kernels whose cited, re-measurable diagnostics mostly
/// moved the expected way between `pre` and `post`. Ties are inconsistent.
/// Kernels with nothing measurable are left out; if none remain, or there
/// is no `post`, the result is not measured.
pub fn directional_consistency(
    pre: &DiagnosticBundle,
    post: Option<&DiagnosticBundle>,
    artifact: &OptimizedArtifact,
    pkg: &PromptPackage,
    rules: &[DirectionRule],
) -> DirectionOutcome {
    let Some(post) = post else { return DirectionOutcome::not_measured() };
    let lines: HashMap<&str, &DiagnosticLine> = pkg.diagnostics().map(|d| (d.id.as_str(), d)).collect();

    let per_edit: Vec<Vec<&DiagnosticLine>> = artifact
        .applied
        .iter()
        .map(|e| e.evidence_ids.iter().filter_map(|id| lines.get(id.as_str()).copied()).collect())
        .collect();
    let edited: Vec<&str> = {
        let set: BTreeSet<&str> =
            per_edit.iter().flatten().filter_map(|d| d.anchor.kernel()).collect();
        set.into_iter().collect()
    };

    // kernel -> cited diagnostics, deduplicated and ordered by id
    let mut cited: BTreeMap<String, BTreeMap<&str, &DiagnosticLine>> = BTreeMap::new();
    for diags in &per_edit {
        let mut kernels: Vec<&str> = diags.iter().filter_map(|d| d.anchor.kernel()).collect();
        if kernels.is_empty() && !diags.is_empty() {
            // Counter-only citations are application-wide.
            kernels = if edited.is_empty() { vec![APP_KERNEL] } else { edited.clone() };
        }
        for k in kernels {
            let slot = cited.entry(k.to_string()).or_default();
            for d in diags {
                if d.anchor.kernel().is_none_or(|dk| dk == k) {
                    slot.insert(d.id.as_str(), d);
                }
            }
        }
    }

    let mut verdicts = Vec::new();
    for (kernel, diags) in cited {
        let moves: Vec<DiagnosticMove> = diags
            .values()
            .filter_map(|d| {
                let expected = expected_direction(d, rules)?;
                let (a, b) = measure_pair(&d.anchor, pre, post)?;
                let moved = match expected {
                    Direction::Decrease => b < a,
                    Direction::Increase => b > a,
                };
                Some(DiagnosticMove { id: d.id.to_string(), expected, pre: a, post: b, moved_as_expected: moved })
            })
            .collect();
        if moves.is_empty() {
            continue;
        }
        let good = moves.iter().filter(|m| m.moved_as_expected).count();
        verdicts.push(KernelVerdict { kernel, consistent: 2 * good > moves.len(), moves });
    }
    if verdicts.is_empty() {
        return DirectionOutcome::not_measured();
    }
    let consistent = verdicts.iter().filter(|v| v.consistent).count();
    DirectionOutcome { value: Measured::Value(consistent as f64 / verdicts.len() as f64), kernels: verdicts }
}
