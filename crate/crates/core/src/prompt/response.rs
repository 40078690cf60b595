use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::PromptError;

static APPLIED_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^- \[A(\d+)\] lines (\d+)-(\d+) \| (.*?) \| evidence:[ \t]*(.*)$").unwrap());

/// One edit the model claims to have made.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRecord {
    /// `A<n>` as written, or `U<n>` for lines that did not match the grammar.
    pub edit_id: String,
    /// Original-source line range; absent when the line was unparseable.
    pub line_start: Option<u32>,
    pub line_end: Option<u32>,
    pub transformation: String,
    pub evidence_ids: Vec<String>,
}

impl EditRecord {
    pub fn range(&self) -> Option<(u32, u32)> {
        Some((self.line_start?, self.line_end?))
    }

    pub fn is_parsed(&self) -> bool {
        self.range().is_some()
    }
}

/// A candidate optimization the model chose not to apply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Withheld {
    pub candidate: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizedArtifact {
    pub full_source: String,
    pub applied: Vec<EditRecord>,
    pub withheld: Vec<Withheld>,
    pub raw_response: String,
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Preamble,
    Code,
    Applied,
    Withheld,
    Other,
}

fn header(line: &str) -> Option<Section> {
    let title = line.trim_end().strip_prefix("### ")?;
    Some(match title.trim_end_matches(':') {
        "OPTIMIZED CODE" => Section::Code,
        "APPLIED" => Section::Applied,
        "WITHHELD" => Section::Withheld,
        _ => Section::Other,
    })
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

fn parse_applied(line: &str, seen: &mut HashSet<String>, unparsed: &mut usize) -> EditRecord {
    if let Some(c) = APPLIED_LINE.captures(line) {
        let id = format!("A{}", &c[1]);
        let start: Option<u32> = c[2].parse().ok();
        let end: Option<u32> = c[3].parse().ok();
        if let (Some(s), Some(e)) = (start, end) {
            if s >= 1 && s <= e && seen.insert(id.clone()) {
                let evidence_ids = c[5]
                    .split(',')
                    .map(str::trim)
                    .filter(|t| !t.is_empty())
                    .map(str::to_string)
                    .collect();
                return EditRecord {
                    edit_id: id,
                    line_start: Some(s),
                    line_end: Some(e),
                    transformation: c[4].trim().to_string(),
                    evidence_ids,
                };
            }
        }
    }
    log::warn!("APPLIED entry does not follow the grammar, keeping it uncited: {line}");
    *unparsed += 1;
    EditRecord {
        edit_id: format!("U{unparsed}"),
        line_start: None,
        line_end: None,
        transformation: line.trim_start_matches('-').trim().to_string(),
        evidence_ids: Vec::new(),
    }
}

fn parse_withheld(line: &str) -> Withheld {
    let body = line.strip_prefix("- ").unwrap_or(line).trim();
    match body.rsplit_once(" | reason: ") {
        Some((candidate, reason)) => Withheld { candidate: candidate.trim().into(), reason: reason.trim().into() },
        None => Withheld { candidate: body.into(), reason: String::new() },
    }
}

/// Parses a reply in the fixed grammar. Malformed `APPLIED` entries are kept
/// with no line range and no evidence instead of being dropped.
pub fn parse_response(raw: &str) -> Result<OptimizedArtifact, PromptError> {
    let mut section = Section::Preamble;
    let mut in_fence = false;
    let mut blocks: Vec<String> = Vec::new();
    let mut applied = Vec::new();
    let mut withheld = Vec::new();
    let mut seen = HashSet::new();
    let mut unparsed = 0usize;

    for line in raw.split_inclusive('\n') {
        let bare = line.trim_end_matches(['\n', '\r']);
        if in_fence {
            if is_fence(bare) && bare.trim() == "```" {
                in_fence = false;
            } else if section == Section::Code {
                blocks.last_mut().expect("open block").push_str(line);
            }
            continue;
        }
        if is_fence(bare) {
            in_fence = true;
            if section == Section::Code {
                blocks.push(String::new());
            }
            continue;
        }
        if let Some(next) = header(bare) {
            section = next;
            continue;
        }
        if bare.trim().is_empty() {
            continue;
        }
        match section {
            Section::Applied => applied.push(parse_applied(bare.trim(), &mut seen, &mut unparsed)),
            Section::Withheld => withheld.push(parse_withheld(bare.trim())),
            _ => {}
        }
    }

    match blocks.len() {
        0 => Err(PromptError::MissingCodeBlock),
        1 => {
            let full_source = blocks.pop().unwrap_or_default();
            if full_source.trim().is_empty() {
                return Err(PromptError::MissingCodeBlock);
            }
            Ok(OptimizedArtifact { full_source, applied, withheld, raw_response: raw.to_string() })
        }
        n => Err(PromptError::MultipleCodeBlocks(n)),
    }
}
