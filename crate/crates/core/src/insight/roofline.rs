use serde::{Deserialize, Serialize};

use super::InsightError;
use crate::diag::{renumber, Anchor, DiagnosticId, DiagnosticLine, Source};
use crate::ingest::RooflineRaw;
use crate::util::{fmt_compact, fmt_pct};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UtilizationState {
    Underutilized,
    Saturated,
}

impl UtilizationState {
    fn of(rho: f64, tau_sat: f64) -> Self {
        if rho >= tau_sat {
            UtilizationState::Saturated
        } else {
            UtilizationState::Underutilized
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            UtilizationState::Underutilized => "underutilized",
            UtilizationState::Saturated => "saturated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundType {
    ComputeBound,
    MemoryBound,
}

impl BoundType {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundType::ComputeBound => "compute-bound",
            BoundType::MemoryBound => "memory-bound",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RooflineSummary {
    pub kernel_name: String,
    pub rho_compute: f64,
    pub rho_memory: f64,
    pub compute_state: UtilizationState,
    pub memory_state: UtilizationState,
    pub bound_type: BoundType,
    pub arithmetic_intensity: f64,
    /// peak_compute / peak_bandwidth, ops/byte.
    pub ridge_point: f64,
    /// A utilization above 1 was clamped.
    pub clamped: bool,
    pub summary_lines: Vec<DiagnosticLine>,
}

/// `"Compute underutilized (62%), memory bandwidth saturated (91%)"`.
pub fn utilization_sentence(
    rho_compute: f64,
    compute: UtilizationState,
    rho_memory: f64,
    memory: UtilizationState,
) -> String {
    format!(
        "Compute {} ({}), memory bandwidth {} ({})",
        compute.as_str(),
        fmt_pct(rho_compute),
        memory.as_str(),
        fmt_pct(rho_memory)
    )
}

fn clamp_rho(raw: f64, what: &str, kernel: &str) -> (f64, bool) {
    if raw > 1.0 {
        log::warn!("{kernel}: {what} utilization {raw:.3} exceeds peak, clamping to 1");
        (1.0, true)
    } else {
        (raw.max(0.0), false)
    }
}

/// Classifies one kernel against the roofline. Summary lines are numbered
/// from `RL-01`; use [`summarize_roofline`] for globally sequential IDs.
pub fn classify_roofline(raw: &RooflineRaw, tau_sat: f64) -> Result<RooflineSummary, InsightError> {
    if !(tau_sat > 0.0 && tau_sat < 1.0) {
        return Err(InsightError::InvalidThreshold { name: "tau_sat", value: tau_sat, range: "(0, 1)" });
    }
    if !(raw.peak_compute > 0.0 && raw.peak_bandwidth > 0.0) {
        return Err(InsightError::NonPositivePeak(raw.kernel_name.clone()));
    }
    let kernel = raw.kernel_name.as_str();
    let (rho_compute, c_clamped) = clamp_rho(raw.achieved_compute / raw.peak_compute, "compute", kernel);
    let (rho_memory, m_clamped) = clamp_rho(raw.achieved_bandwidth / raw.peak_bandwidth, "memory", kernel);
    let compute_state = UtilizationState::of(rho_compute, tau_sat);
    let memory_state = UtilizationState::of(rho_memory, tau_sat);
    let ridge_point = raw.peak_compute / raw.peak_bandwidth;
    let bound_type =
        if raw.arithmetic_intensity < ridge_point { BoundType::MemoryBound } else { BoundType::ComputeBound };

    let mut lines = vec![
        DiagnosticLine {
            id: DiagnosticId::new(Source::Rl, 1),
            text: format!(
                "[{kernel}] {}",
                utilization_sentence(rho_compute, compute_state, rho_memory, memory_state)
            ),
            anchor: Anchor::Utilization {
                kernel: kernel.to_string(),
                compute_saturated: compute_state == UtilizationState::Saturated,
                memory_saturated: memory_state == UtilizationState::Saturated,
            },
        },
        DiagnosticLine {
            id: DiagnosticId::new(Source::Rl, 2),
            text: format!(
                "[{kernel}] Bound type: {} (arithmetic intensity {} ops/byte, ridge point {} ops/byte)",
                bound_type.as_str(),
                fmt_compact(raw.arithmetic_intensity),
                fmt_compact(ridge_point)
            ),
            anchor: Anchor::Bound { kernel: kernel.to_string() },
        },
    ];
    for note in raw.profiler_notes.iter().filter(|n| !n.trim().is_empty()) {
        lines.push(DiagnosticLine {
            id: DiagnosticId::new(Source::Rl, lines.len() + 1),
            text: format!("[{kernel}] Profiler note: {}", note.trim()),
            anchor: Anchor::Note { kernel: kernel.to_string() },
        });
    }

    Ok(RooflineSummary {
        kernel_name: kernel.to_string(),
        rho_compute,
        rho_memory,
        compute_state,
        memory_state,
        bound_type,
        arithmetic_intensity: raw.arithmetic_intensity,
        ridge_point,
        clamped: c_clamped || m_clamped,
        summary_lines: lines,
    })
}

/// Classifies every entry (optionally restricted to `keep`) and numbers
/// all summary lines sequentially across kernels.
pub fn summarize_roofline(
    raws: &[RooflineRaw],
    tau_sat: f64,
    keep: impl Fn(&str) -> bool,
) -> Result<(Vec<RooflineSummary>, Vec<DiagnosticLine>), InsightError> {
    let summaries = raws
        .iter()
        .filter(|r| keep(&r.kernel_name))
        .map(|r| classify_roofline(r, tau_sat))
        .collect::<Result<Vec<_>, _>>()?;
    let mut lines: Vec<DiagnosticLine> = summaries.iter().flat_map(|s| s.summary_lines.clone()).collect();
    renumber(&mut lines, Source::Rl);
    Ok((summaries, lines))
}
