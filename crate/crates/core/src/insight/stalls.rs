use std::collections::{BTreeMap, HashMap};

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use super::InsightError;
use crate::diag::{Anchor, DiagnosticId, DiagnosticLine, Source};
use crate::exec::ExecMode;
use crate::ingest::StallSample;
use crate::util::{fmt_pct, truncate_bytes, truncate_chars};

/// Placeholder snippet for lines outside the kernel source.
pub const LINE_UNAVAILABLE: &str = "<line unavailable>";
/// Upper bound on the rendered stall summary, newline separators included.
pub const SUMMARY_BYTE_BUDGET: usize = 6144;
const SNIPPET_CHARS: usize = 120;
const STALL_NAME_BYTES: usize = 48;
const FOLD_CHUNK: usize = 8192;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StallKey {
    pub kernel: String,
    pub line: u32,
    pub stall_type: String,
}

/// Stalled cycles per (kernel, line, stall type), ordered by key.
pub type StallAggregate = BTreeMap<StallKey, u64>;

type Partial<'a> = FxHashMap<(&'a str, u32, &'a str), u64>;

fn tally<'a>(samples: &'a [StallSample], mode: ExecMode) -> Partial<'a> {
    mode.fold_chunks(
        samples,
        FOLD_CHUNK,
        Partial::default,
        |mut acc, s| {
            *acc.entry((s.kernel_name.as_str(), s.source_line, s.stall_type.as_str())).or_default() += s.cycles;
            acc
        },
        |mut a, b| {
            if a.len() < b.len() {
                return merge_into(b, a);
            }
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
            a
        },
    )
}

fn merge_into<'a>(mut into: Partial<'a>, from: Partial<'a>) -> Partial<'a> {
    for (k, v) in from {
        *into.entry(k).or_default() += v;
    }
    into
}

/// Running totals keyed by interned kernel and stall names.
#[derive(Default)]
struct Totals {
    names: FxHashMap<String, u32>,
    table: Vec<String>,
    sums: FxHashMap<(u32, u32, u32), u64>,
}

impl Totals {
    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&i) = self.names.get(name) {
            return i;
        }
        let i = self.table.len() as u32;
        self.table.push(name.to_string());
        self.names.insert(name.to_string(), i);
        i
    }

    fn absorb(&mut self, partial: Partial<'_>) {
        for ((kernel, line, stall_type), cycles) in partial {
            let key = (self.intern(kernel), line, self.intern(stall_type));
            *self.sums.entry(key).or_default() += cycles;
        }
    }

    fn finish(self) -> StallAggregate {
        let table = self.table;
        self.sums
            .into_iter()
            .map(|((k, line, st), c)| {
                (StallKey { kernel: table[k as usize].clone(), line, stall_type: table[st as usize].clone() }, c)
            })
            .collect()
    }
}

/// Sums cycles per (kernel, line, stall type).
pub fn aggregate_stalls(samples: &[StallSample], mode: ExecMode) -> StallAggregate {
    let mut totals = Totals::default();
    totals.absorb(tally(samples, mode));
    totals.finish()
}

/// Aggregates a sample stream holding at most `chunk` samples in memory at
/// a time (plus one entry per distinct key).
pub fn aggregate_stream<I, E>(samples: I, chunk: usize, mode: ExecMode) -> Result<StallAggregate, E>
where
    I: IntoIterator<Item = Result<StallSample, E>>,
{
    let chunk = chunk.max(1);
    let mut totals = Totals::default();
    let mut buf = Vec::with_capacity(chunk);
    for sample in samples {
        buf.push(sample?);
        if buf.len() == chunk {
            totals.absorb(tally(&buf, mode));
            buf.clear();
        }
    }
    totals.absorb(tally(&buf, mode));
    Ok(totals.finish())
}

/// One retained source line and its dominant stall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalientStall {
    pub kernel_name: String,
    pub source_line: u32,
    pub stall_type: String,
    /// All stalled cycles on the line.
    pub line_cycles: u64,
    /// Cycles of the dominant stall type.
    pub dominant_cycles: u64,
    /// dominant_cycles / line_cycles.
    pub dominance_share: f64,
    /// dominant_cycles / all stalled cycles of the kernel.
    pub kernel_share: f64,
    pub code_snippet: String,
}

/// Fills `code_snippet`, splitting each kernel's source into lines once.
fn attach_snippets(retained: &mut [SalientStall], sources: &BTreeMap<String, String>) {
    let mut split: HashMap<&str, Vec<&str>> = HashMap::new();
    for s in retained.iter_mut() {
        let lines = match sources.get_key_value(&s.kernel_name) {
            Some((k, text)) => split.entry(k.as_str()).or_insert_with(|| text.lines().collect()),
            None => {
                s.code_snippet = LINE_UNAVAILABLE.to_string();
                continue;
            }
        };
        s.code_snippet = lines
            .get(s.source_line as usize - 1)
            .map_or_else(|| LINE_UNAVAILABLE.to_string(), |l| l.trim().to_string());
    }
}

/// Keeps, per line, the dominant stall when it holds at least
/// `tau_saliency` of that line's stalled cycles; ranks retained lines by
/// total line cycles and truncates to `top_n`.
pub fn filter_salient(
    agg: &StallAggregate,
    sources: &BTreeMap<String, String>,
    tau_saliency: f64,
    top_n: usize,
) -> Result<Vec<SalientStall>, InsightError> {
    if !(tau_saliency > 0.0 && tau_saliency <= 1.0) {
        return Err(InsightError::InvalidThreshold { name: "tau_saliency", value: tau_saliency, range: "(0, 1]" });
    }
    if top_n == 0 {
        return Err(InsightError::InvalidThreshold { name: "top_n", value: 0.0, range: ">= 1" });
    }

    let mut kernel_totals: HashMap<&str, u64> = HashMap::new();
    // (kernel, line) -> (line total, dominant type, dominant cycles); keys arrive sorted
    // by stall type within a line, so strict `>` keeps the lexicographically first on ties.
    let mut lines: BTreeMap<(&str, u32), (u64, &str, u64)> = BTreeMap::new();
    for (key, &cycles) in agg {
        *kernel_totals.entry(key.kernel.as_str()).or_default() += cycles;
        let entry = lines.entry((key.kernel.as_str(), key.line)).or_insert((0, key.stall_type.as_str(), 0));
        entry.0 += cycles;
        if cycles > entry.2 {
            entry.1 = key.stall_type.as_str();
            entry.2 = cycles;
        }
    }

    let mut retained: Vec<SalientStall> = lines
        .into_iter()
        .filter(|(_, (total, _, _))| *total > 0)
        .filter_map(|((kernel, line), (total, stall, dominant))| {
            let share = dominant as f64 / total as f64;
            (share >= tau_saliency).then(|| SalientStall {
                kernel_name: kernel.to_string(),
                source_line: line,
                stall_type: stall.to_string(),
                line_cycles: total,
                dominant_cycles: dominant,
                dominance_share: share,
                kernel_share: dominant as f64 / kernel_totals[kernel] as f64,
                code_snippet: String::new(),
            })
        })
        .collect();
    retained.sort_by(|a, b| {
        b.line_cycles
            .cmp(&a.line_cycles)
            .then_with(|| a.kernel_name.cmp(&b.kernel_name))
            .then_with(|| a.source_line.cmp(&b.source_line))
    });
    retained.truncate(top_n);
    attach_snippets(&mut retained, sources);
    Ok(retained)
}

/// Renders one `PC-xx` line per salient stall, in order, stopping before
/// the total would exceed [`SUMMARY_BYTE_BUDGET`].
pub fn render_stall_summary(salient: &[SalientStall]) -> Vec<DiagnosticLine> {
    let mut used = 0usize;
    let mut out = Vec::new();
    for s in salient {
        let id = DiagnosticId::new(Source::Pc, out.len() + 1);
        let text = format!(
            "line {} `{}` — {}: {} of line stalls, {} of kernel stalls",
            s.source_line,
            truncate_chars(&s.code_snippet, SNIPPET_CHARS),
            truncate_bytes(&s.stall_type, STALL_NAME_BYTES),
            fmt_pct(s.dominance_share),
            fmt_pct(s.kernel_share),
        );
        let line = DiagnosticLine {
            id,
            text,
            anchor: Anchor::Stall {
                kernel: s.kernel_name.clone(),
                line: s.source_line,
                stall_type: s.stall_type.clone(),
            },
        };
        let cost = line.rendered().len() + 1;
        if used + cost > SUMMARY_BYTE_BUDGET {
            log::warn!("stall summary truncated at {} entries to stay within {SUMMARY_BYTE_BUDGET} bytes", out.len());
            break;
        }
        used += cost;
        out.push(line);
    }
    out
}
