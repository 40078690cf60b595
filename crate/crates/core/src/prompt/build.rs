use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{PromptError, PromptPackage};
use crate::diag::DiagnosticLine;

/// Guardrails present in every prompt. Configured extras are appended.
pub const DEFAULT_GUARDRAILS: [&str; 7] = [
    "Keep the signature of every kernel and function exactly as it is.",
    "Never rename a kernel or function, and never emit a second copy of one.",
    "Return complete, syntactically valid source that compiles as-is, headers and main included.",
    "For every edit, cite the diagnostic IDs (PC-xx, IA-xx, RL-xx) that motivate it.",
    "Edit only the regions the diagnostics implicate; leave all other lines untouched.",
    "Rely only on the measurements listed above; do not invent profiling data.",
    "Answer in the reply format below, using the line numbers shown in the numbered source.",
];

const NO_DATA: &str = "(no data provided)";

const TASK: &str = "Act as a GPU performance engineer. Rewrite the source above so that it runs faster, \
guided only by the performance analysis above. Reply with the complete replacement file.";

const REPLY_FORMAT: &str = "\
### OPTIMIZED CODE
```
<complete optimized source>
```
### APPLIED
- [A<n>] lines <start>-<end> | <transformation> | evidence: <ID>, <ID>
### WITHHELD
- <candidate optimization> | reason: <why it was not applied>
";

/// ID-tagged diagnostic lines grouped by prompt section.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptSections {
    pub stall: Vec<DiagnosticLine>,
    pub counters: Vec<DiagnosticLine>,
    pub roofline: Vec<DiagnosticLine>,
}

impl PromptSections {
    pub fn all(&self) -> impl Iterator<Item = &DiagnosticLine> {
        self.stall.iter().chain(&self.counters).chain(&self.roofline)
    }

    pub fn is_empty(&self) -> bool {
        self.stall.is_empty() && self.counters.is_empty() && self.roofline.is_empty()
    }
}

/// Prefixes each line with its 1-based number, right-aligned to width 4:
/// `"a\nb"` becomes `"   1| a\n   2| b"`.
pub fn number_source(source: &str) -> String {
    number_source_from(source, 1)
}

/// Like [`number_source`] with numbering starting at `first_line`.
pub fn number_source_from(source: &str, first_line: u32) -> String {
    let mut out = String::with_capacity(source.len() + source.len() / 8);
    for (i, line) in source.split_inclusive('\n').enumerate() {
        let _ = write!(out, "{:>4}| {}", first_line as usize + i, line);
    }
    out
}

/// Inverse of [`number_source`].
pub fn strip_numbers(numbered: &str) -> String {
    numbered
        .split_inclusive('\n')
        .map(|l| l.split_once("| ").map_or(l, |(_, rest)| rest))
        .collect()
}

fn section(out: &mut String, title: &str, lines: &[DiagnosticLine]) {
    let _ = writeln!(out, "### {title}:");
    if lines.is_empty() {
        out.push_str(NO_DATA);
        out.push('\n');
    }
    for l in lines {
        out.push_str(&l.rendered());
        out.push('\n');
    }
}

pub(super) fn render(pkg: &PromptPackage) -> String {
    let mut out = String::with_capacity(pkg.numbered_source.len() + 4096);
    out.push_str("# Begin Source Code\n");
    out.push_str(&pkg.numbered_source);
    if !pkg.numbered_source.is_empty() && !pkg.numbered_source.ends_with('\n') {
        out.push('\n');
    }
    out.push_str("# End Source Code\n");
    out.push_str("# Begin Performance Analysis\n");
    section(&mut out, "STALL ANALYSIS", &pkg.sections.stall);
    section(&mut out, "IMPORTANT HARDWARE COUNTERS", &pkg.sections.counters);
    section(&mut out, "ROOFLINE ANALYSIS", &pkg.sections.roofline);
    out.push_str("# End Performance Analysis\n");
    out.push_str("# Instructions\n");
    out.push_str(TASK);
    out.push_str("\nRules:\n");
    for g in &pkg.guardrails {
        let _ = writeln!(out, "- {g}");
    }
    out.push_str("Reply format:\n");
    out.push_str(REPLY_FORMAT);
    if let Some(feedback) = &pkg.compiler_feedback {
        out.push_str("# Compiler Feedback\n");
        out.push_str("The previous reply did not compile. Fix these errors and answer in the same format.\n");
        out.push_str(feedback);
        if !feedback.ends_with('\n') {
            out.push('\n');
        }
    }
    out
}

pub(super) fn package(
    source: &str,
    first_line: u32,
    sections: PromptSections,
    guardrails: Vec<String>,
    compiler_feedback: Option<String>,
) -> PromptPackage {
    let embedded_ids: BTreeSet<_> = sections.all().map(|l| l.id.clone()).collect();
    let mut pkg = PromptPackage {
        prompt_text: String::new(),
        embedded_ids,
        numbered_source: number_source_from(source, first_line),
        guardrails,
        source: source.to_string(),
        first_line,
        sections,
        compiler_feedback,
        chunk_index: 0,
        chunk_total: 1,
    };
    pkg.prompt_text = render(&pkg);
    pkg
}

/// Assembles the prompt. Fails when all three analysis sections are empty.
pub fn build_prompt(
    source: &str,
    sections: PromptSections,
    extra_guardrails: &[String],
) -> Result<PromptPackage, PromptError> {
    if sections.is_empty() {
        return Err(PromptError::NoDiagnostics);
    }
    let mut guardrails: Vec<String> = DEFAULT_GUARDRAILS.iter().map(|g| g.to_string()).collect();
    for g in extra_guardrails {
        if !guardrails.contains(g) {
            guardrails.push(g.clone());
        }
    }
    Ok(package(source, 1, sections, guardrails, None))
}
