//! The three summarizers that turn raw diagnostics into prompt lines:
//! hot-kernel selection, roofline classification, and PC-stall saliency.

mod hotspot;
mod roofline;
mod stalls;

use thiserror::Error;

pub use hotspot::{select_hot_kernels, KernelSet};
pub use roofline::{
    classify_roofline, summarize_roofline, utilization_sentence, BoundType, RooflineSummary, UtilizationState,
};
pub use stalls::{
    aggregate_stalls, aggregate_stream, filter_salient, render_stall_summary, SalientStall, StallAggregate,
    StallKey, LINE_UNAVAILABLE, SUMMARY_BYTE_BUDGET,
};

pub const DEFAULT_ALPHA: f64 = 0.8;
pub const DEFAULT_TAU_SAT: f64 = 0.70;
pub const DEFAULT_TAU_SALIENCY: f64 = 0.30;
pub const DEFAULT_TOP_N: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum InsightError {
    #[error("kernel profile is empty")]
    EmptyProfile,
    #[error("every kernel reports zero time")]
    ZeroTotalTime,
    #[error("{name} = {value} is outside {range}")]
    InvalidThreshold { name: &'static str, value: f64, range: &'static str },
    #[error("roofline for `{0}` has a non-positive peak")]
    NonPositivePeak(String),
}
