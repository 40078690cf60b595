//! Evidence-aligned scoring of one optimization exchange.
//!
//! * evidence coverage: share of applied edits citing an embedded diagnostic
//! * localization agreement: share of applied edits near a salient stall line
//! * directional consistency: share of edited kernels whose cited diagnostics
//!   mostly moved the expected way in a post-optimization profile
//! * edit accounting: implemented / withheld / hallucinated counts

mod accounting;
mod coverage;
mod direction;

use serde::{Deserialize, Serialize};

use crate::ingest::DiagnosticBundle;
use crate::insight::SalientStall;
use crate::prompt::{OptimizedArtifact, PromptPackage};

pub use accounting::{changed_regions, diff_hunks, edit_accounting, unified_diff, Accounting, DiffHunk};
pub use coverage::{evidence_coverage, localization_agreement, Coverage, Localization};
pub use direction::{directional_consistency, expected_direction, DirectionOutcome, DirectionRule, KernelVerdict};

/// Default half-width, in lines, of the localization window.
pub const DEFAULT_WINDOW: u32 = 3;

/// A fraction that may be unavailable; serialized as a number or `"not-measured"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measured {
    NotMeasured,
    Value(f64),
}

impl Measured {
    pub fn value(self) -> Option<f64> {
        match self {
            Measured::Value(v) => Some(v),
            Measured::NotMeasured => None,
        }
    }
}

impl Serialize for Measured {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Measured::NotMeasured => s.serialize_str("not-measured"),
            Measured::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Measured {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Measured::Value(v)),
            Raw::Text(t) if t == "not-measured" => Ok(Measured::NotMeasured),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"not-measured\", got {t:?}"))),
        }
    }
}

fn default_window() -> u32 {
    DEFAULT_WINDOW
}

/// The `ear:` block of `config.yml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarConfig {
    #[serde(default = "default_window")]
    pub window: u32,
    /// Direction overrides, first match wins.
    #[serde(default)]
    pub rules: Vec<DirectionRule>,
}

impl Default for EarConfig {
    fn default() -> Self {
        EarConfig { window: DEFAULT_WINDOW, rules: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditScore {
    pub edit_id: String,
    pub covered: bool,
    pub localized: bool,
    pub implemented: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EARReport {
    pub evidence_coverage: f64,
    pub localization_agreement: f64,
    pub directional_consistency: Measured,
    pub implemented: usize,
    pub withheld: usize,
    pub hallucinated: usize,
    pub per_edit: Vec<EditScore>,
    /// `empty-applied`, `no-hotspots`.
    #[serde(default)]
    pub flags: Vec<String>,
    #[serde(default)]
    pub direction_detail: Vec<KernelVerdict>,
}

/// Computes every metric for one exchange. `post` is the re-profiled bundle
/// when one exists.
pub fn score_exchange(
    pkg: &PromptPackage,
    artifact: &OptimizedArtifact,
    original_source: &str,
    salient: &[SalientStall],
    pre: &DiagnosticBundle,
    post: Option<&DiagnosticBundle>,
    cfg: &EarConfig,
) -> EARReport {
    let cov = evidence_coverage(artifact, pkg);
    let loc = localization_agreement(artifact, salient, pkg, cfg.window);
    let acc = edit_accounting(artifact, original_source);
    let dir = directional_consistency(pre, post, artifact, pkg, &cfg.rules);
    let mut flags = Vec::new();
    if cov.empty_applied {
        flags.push("empty-applied".to_string());
    }
    if loc.no_hotspots {
        flags.push("no-hotspots".to_string());
    }
    let per_edit = artifact
        .applied
        .iter()
        .enumerate()
        .map(|(i, e)| EditScore {
            edit_id: e.edit_id.clone(),
            covered: cov.covered[i],
            localized: loc.localized[i],
            implemented: acc.implemented_edits[i],
        })
        .collect();
    EARReport {
        evidence_coverage: cov.value,
        localization_agreement: loc.value,
        directional_consistency: dir.value,
        implemented: acc.implemented,
        withheld: acc.withheld,
        hallucinated: acc.hallucinated,
        per_edit,
        flags,
        direction_detail: dir.kernels,
    }
}

/// Replaces the directional score of an existing report.
pub fn with_direction(mut report: EARReport, outcome: DirectionOutcome) -> EARReport {
    report.directional_consistency = outcome.value;
    report.direction_detail = outcome.kernels;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measured_serde() {
        assert_eq!(serde_json::to_string(&Measured::NotMeasured).unwrap(), "\"not-measured\"");
        assert_eq!(serde_json::to_string(&Measured::Value(0.5)).unwrap(), "0.5");
        assert_eq!(serde_json::from_str::<Measured>("1.0").unwrap(), Measured::Value(1.0));
        assert_eq!(serde_json::from_str::<Measured>("\"not-measured\"").unwrap(), Measured::NotMeasured);
        assert!(serde_json::from_str::<Measured>("\"nope\"").is_err());
    }
}
