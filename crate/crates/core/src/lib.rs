//! Core of the optimas pipeline.
//!
//! Raw profiler exports are distilled into short, ID-tagged diagnostic
//! lines (hot kernels, roofline state, salient PC stalls, runtime-relevant
//! hardware counters), assembled into a prompt for an interchangeable LLM
//! backend, and the returned code is compiled, validated bit-for-bit,
//! timed, and scored with evidence-alignment metrics.
//!
//! Module map:
//!
//! | module       | stage                                                   |
//! |--------------|---------------------------------------------------------|
//! | [`ingest`]   | normalized CSV/JSON parsers, profiler invocation        |
//! | [`insight`]  | hotspot selection, roofline classification, stalls      |
//! | [`counters`] | z-scoring and ensemble OMP counter selection            |
//! | [`prompt`]   | prompt assembly, chunking, response parsing             |
//! | [`gateway`]  | completion backends with retries                        |
//! | [`harness`]  | compile/retry loop, validation, timing, run directories |
//! | [`ear`]      | evidence coverage, localization, direction, accounting  |
//! | [`corpus`]   | append-only optimization corpus                         |
//! | [`config`]   | `config.yml` loading                                    |
//! | [`pipeline`] | stage orchestration                                     |

pub mod config;
pub mod corpus;
pub mod counters;
pub mod diag;
pub mod ear;
pub mod exec;
pub mod gateway;
pub mod harness;
pub mod ingest;
pub mod insight;
pub mod pipeline;
pub mod prompt;
pub(crate) mod util;

pub use diag::{Anchor, DiagnosticId, DiagnosticLine, Direction, Source};
pub use exec::ExecMode;
