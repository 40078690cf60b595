use super::build::{number_source_from, package, PromptSections};
use super::{PromptError, PromptPackage};
use crate::diag::DiagnosticLine;

const NO_DATA_COST: usize = "(no data provided)\n".len();

fn chars(s: &str) -> usize {
    s.chars().count()
}

fn render_chunk(pkg: &PromptPackage, source: &str, first_line: u32, stall: Vec<DiagnosticLine>) -> PromptPackage {
    let sections = PromptSections { stall, counters: pkg.sections.counters.clone(), roofline: pkg.sections.roofline.clone() };
    package(source, first_line, sections, pkg.guardrails.clone(), pkg.compiler_feedback.clone())
}

/// Splits `pkg` at source-line boundaries so every chunk's prompt is at most
/// `limit_chars` characters. Stall lines travel with the chunk holding their
/// source line; counter and roofline lines repeat in every chunk. Line numbers
/// stay in original coordinates.
pub fn chunk_prompt(pkg: &PromptPackage, limit_chars: usize) -> Result<Vec<PromptPackage>, PromptError> {
    if chars(&pkg.prompt_text) <= limit_chars {
        let mut single = pkg.clone();
        single.chunk_index = 0;
        single.chunk_total = 1;
        return Ok(vec![single]);
    }

    let overhead = chars(&render_chunk(pkg, "", pkg.first_line, Vec::new()).prompt_text);
    if limit_chars <= overhead {
        return Err(PromptError::LimitBelowOverhead { limit: limit_chars, overhead });
    }

    let lines: Vec<&str> = pkg.source.split_inclusive('\n').collect();
    let stall_at = |line_no: u32| pkg.sections.stall.iter().filter(move |d| d.anchor.line() == Some(line_no));

    let mut chunks = Vec::new();
    let mut start = 0usize;
    while start < lines.len() {
        let mut size = overhead;
        let mut stall: Vec<DiagnosticLine> = Vec::new();
        let mut end = start;
        while end < lines.len() {
            let line_no = pkg.first_line + end as u32;
            let numbered = number_source_from(lines[end], line_no);
            let mut cost = chars(&numbered) + usize::from(!numbered.ends_with('\n'));
            let new: Vec<&DiagnosticLine> = stall_at(line_no).collect();
            if !new.is_empty() {
                cost += new.iter().map(|d| chars(&d.rendered()) + 1).sum::<usize>();
                if stall.is_empty() {
                    cost -= NO_DATA_COST;
                }
            }
            if size + cost > limit_chars {
                if end == start {
                    return Err(PromptError::LineTooLong {
                        line: line_no,
                        chars: chars(lines[end]),
                        room: limit_chars - overhead,
                    });
                }
                break;
            }
            size += cost;
            stall.extend(new.into_iter().cloned());
            end += 1;
        }
        let text: String = lines[start..end].concat();
        let chunk = render_chunk(pkg, &text, pkg.first_line + start as u32, stall);
        debug_assert_eq!(chars(&chunk.prompt_text), size);
        chunks.push(chunk);
        start = end;
    }

    let total = chunks.len();
    for (i, c) in chunks.iter_mut().enumerate() {
        c.chunk_index = i;
        c.chunk_total = total;
    }
    Ok(chunks)
}
