//! Prompt assembly, chunking, and parsing of the model's structured reply.
//!
//! Prompt layout:
//!
//! ```text
//! # Begin Source Code
//!    1| ...
//! # End Source Code
//! # Begin Performance Analysis
//! ### STALL ANALYSIS:
//! ### IMPORTANT HARDWARE COUNTERS:
//! ### ROOFLINE ANALYSIS:
//! # End Performance Analysis
//! # Instructions
//! ```
//!
//! Reply grammar:
//!
//! ```text
//! ### OPTIMIZED CODE
//! <one fenced block with the full source>
//! ### APPLIED
//! - [A1] lines 28-31 | add __restrict__ | evidence: PC-01, IA-02
//! ### WITHHELD
//! - <candidate> | reason: <why>
//! ```

mod build;
mod chunk;
mod response;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diag::{DiagnosticId, DiagnosticLine};

pub use build::{build_prompt, number_source, number_source_from, strip_numbers, PromptSections, DEFAULT_GUARDRAILS};
pub use chunk::chunk_prompt;
pub use response::{parse_response, EditRecord, OptimizedArtifact, Withheld};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("no diagnostics to embed: every analysis section is empty")]
    NoDiagnostics,
    #[error("source line {line} is {chars} chars; the prompt limit leaves room for {room}")]
    LineTooLong { line: u32, chars: usize, room: usize },
    #[error("limit {limit} does not exceed the fixed prompt overhead of {overhead} chars")]
    LimitBelowOverhead { limit: usize, overhead: usize },
    #[error("reply has no fenced code block under `### OPTIMIZED CODE`")]
    MissingCodeBlock,
    #[error("reply has {0} fenced code blocks under `### OPTIMIZED CODE`, expected one")]
    MultipleCodeBlocks(usize),
}

/// A rendered prompt and everything needed to re-render or score it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPackage {
    pub prompt_text: String,
    pub embedded_ids: BTreeSet<DiagnosticId>,
    pub numbered_source: String,
    pub guardrails: Vec<String>,
    /// Source text of this package (a slice of the original when chunked).
    pub source: String,
    /// Original line number of the first line of `source`.
    pub first_line: u32,
    pub sections: PromptSections,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compiler_feedback: Option<String>,
    pub chunk_index: usize,
    pub chunk_total: usize,
}

impl PromptPackage {
    /// All diagnostic lines embedded in the prompt.
    pub fn diagnostics(&self) -> impl Iterator<Item = &DiagnosticLine> {
        self.sections.all()
    }

    /// Re-renders the prompt with a `# Compiler Feedback` section appended.
    pub fn with_compiler_feedback(&self, feedback: &str) -> PromptPackage {
        let mut pkg = self.clone();
        pkg.compiler_feedback = Some(feedback.to_string());
        pkg.prompt_text = build::render(&pkg);
        pkg
    }
}
