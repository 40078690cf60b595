use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::diag::Anchor;
use crate::insight::SalientStall;
use crate::prompt::{EditRecord, OptimizedArtifact, PromptPackage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub value: f64,
    /// Per applied edit, in artifact order.
    pub covered: Vec<bool>,
    pub empty_applied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub value: f64,
    pub localized: Vec<bool>,
    pub no_hotspots: bool,
}

fn fraction(flags: &[bool]) -> f64 {
    if flags.is_empty() {
        0.0
    } else {
        flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64
    }
}

/// An edit is covered when it cites an ID embedded in the prompt or, failing
/// that, names a stall type or counter that appears in the prompt.
/// Edits that did not parse are never covered.
pub fn evidence_coverage(artifact: &OptimizedArtifact, pkg: &PromptPackage) -> Coverage {
    let names: BTreeSet<&str> = pkg.diagnostics().filter_map(|d| d.anchor.evidence_name()).collect();
    let covered: Vec<bool> = artifact
        .applied
        .iter()
        .map(|e| {
            e.is_parsed()
                && (e.evidence_ids.iter().any(|id| pkg.embedded_ids.iter().any(|x| x.as_str() == id))
                    || names.iter().any(|n| e.transformation.contains(n) || e.evidence_ids.iter().any(|id| id == n)))
        })
        .collect();
    Coverage { value: fraction(&covered), empty_applied: covered.is_empty(), covered }
}

fn cited_kernels<'a>(edit: &EditRecord, anchors: &HashMap<&str, &'a Anchor>) -> BTreeSet<&'a str> {
    edit.evidence_ids.iter().filter_map(|id| anchors.get(id.as_str())).filter_map(|a| a.kernel()).collect()
}

/// An edit is localized when its line range widened by `window` on both
/// sides contains a salient line. When the edit cites kernel-specific
/// diagnostics only those kernels' salient lines count.
pub fn localization_agreement(
    artifact: &OptimizedArtifact,
    salient: &[SalientStall],
    pkg: &PromptPackage,
    window: u32,
) -> Localization {
    let anchors: HashMap<&str, &Anchor> = pkg.diagnostics().map(|d| (d.id.as_str(), &d.anchor)).collect();
    let localized: Vec<bool> = artifact
        .applied
        .iter()
        .map(|e| {
            let Some((start, end)) = e.range() else { return false };
            let lo = start.saturating_sub(window);
            let hi = end.saturating_add(window);
            let kernels = cited_kernels(e, &anchors);
            salient.iter().any(|s| {
                (kernels.is_empty() || kernels.contains(s.kernel_name.as_str()))
                    && (lo..=hi).contains(&s.source_line)
            })
        })
        .collect();
    let no_hotspots = salient.is_empty();
    Localization { value: if no_hotspots { 0.0 } else { fraction(&localized) }, localized, no_hotspots }
}
