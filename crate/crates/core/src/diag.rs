//! Diagnostic identifiers and the tagged summary lines shared by the
//! analysis, prompt and scoring stages.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Which analysis produced a diagnostic line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    /// PC-sampling stall saliency.
    Pc,
    /// Counter interaction analysis (eOMP).
    Ia,
    /// Roofline classification.
    Rl,
}

impl Source {
    pub fn prefix(self) -> &'static str {
        match self {
            Source::Pc => "PC",
            Source::Ia => "IA",
            Source::Rl => "RL",
        }
    }

    pub fn from_prefix(prefix: &str) -> Option<Self> {
        match prefix {
            "PC" => Some(Source::Pc),
            "IA" => Some(Source::Ia),
            "RL" => Some(Source::Rl),
            _ => None,
        }
    }
}

/// A diagnostic ID such as `PC-01`, `IA-03` or `RL-12`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiagnosticId(String);

impl DiagnosticId {
    /// `index` is 1-based; numbers are zero-padded to two digits.
    pub fn new(source: Source, index: usize) -> Self {
        DiagnosticId(format!("{}-{:02}", source.prefix(), index))
    }

    /// Parses `XX-nn` where `XX` is a known prefix and `nn` is at least two digits.
    pub fn parse(s: &str) -> Option<Self> {
        let (prefix, num) = s.split_once('-')?;
        Source::from_prefix(prefix)?;
        if num.len() < 2 || !num.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        Some(DiagnosticId(s.to_string()))
    }

    pub fn source(&self) -> Source {
        let prefix = self.0.split('-').next().unwrap_or_default();
        Source::from_prefix(prefix).expect("constructed ids carry a known prefix")
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DiagnosticId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resource {
    Compute,
    Memory,
}

/// Expected movement of a metric after a successful optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Decrease,
    Increase,
}

/// What a diagnostic line measures. Scoring uses this to re-measure the
/// same quantity in a post-optimization profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Anchor {
    Stall {
        kernel: String,
        line: u32,
        stall_type: String,
    },
    Utilization {
        kernel: String,
        compute_saturated: bool,
        memory_saturated: bool,
    },
    Bound {
        kernel: String,
    },
    Note {
        kernel: String,
    },
    Counter {
        name: String,
        /// Mean signed regression coefficient against runtime.
        coefficient: f64,
    },
}

impl Anchor {
    pub fn kernel(&self) -> Option<&str> {
        match self {
            Anchor::Stall { kernel, .. }
            | Anchor::Utilization { kernel, .. }
            | Anchor::Bound { kernel }
            | Anchor::Note { kernel } => Some(kernel),
            Anchor::Counter { .. } => None,
        }
    }

    /// Source line the diagnostic points at, if any.
    pub fn line(&self) -> Option<u32> {
        match self {
            Anchor::Stall { line, .. } => Some(*line),
            _ => None,
        }
    }

    /// Stall-type or counter name usable for fuzzy evidence matching.
    pub fn evidence_name(&self) -> Option<&str> {
        match self {
            Anchor::Stall { stall_type, .. } => Some(stall_type),
            Anchor::Counter { name, .. } => Some(name),
            _ => None,
        }
    }
}

/// One ID-tagged summary line as it appears in a prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticLine {
    pub id: DiagnosticId,
    pub text: String,
    pub anchor: Anchor,
}

impl DiagnosticLine {
    /// `"<ID>: <text>"`.
    pub fn rendered(&self) -> String {
        format!("{}: {}", self.id, self.text)
    }
}

/// Reassigns sequential IDs (`XX-01`, `XX-02`, ...) in list order.
pub fn renumber(lines: &mut [DiagnosticLine], source: Source) {
    for (i, line) in lines.iter_mut().enumerate() {
        line.id = DiagnosticId::new(source, i + 1);
    }
}
