use serde::{Deserialize, Serialize};

use super::InsightError;
use crate::ingest::KernelProfile;

/// The smallest set of kernels whose cumulative time reaches `alpha` of
/// the application total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSet {
    /// Descending by time, ties by name.
    pub selected: Vec<String>,
    pub coverage_fraction: f64,
    pub alpha: f64,
}

impl KernelSet {
    pub fn contains(&self, kernel: &str) -> bool {
        self.selected.iter().any(|k| k == kernel)
    }
}

/// Picks the shortest descending-time prefix covering `alpha` of total time.
///
/// The coverage test compares the exact ratio `cumulative / total` against
/// `alpha`, so a cumulative time of exactly `alpha * total` is accepted.
pub fn select_hot_kernels(profiles: &[KernelProfile], alpha: f64) -> Result<KernelSet, InsightError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(InsightError::InvalidThreshold { name: "alpha", value: alpha, range: "(0, 1]" });
    }
    if profiles.is_empty() {
        return Err(InsightError::EmptyProfile);
    }
    let total: u128 = profiles.iter().map(|p| p.time_ns as u128).sum();
    if total == 0 {
        return Err(InsightError::ZeroTotalTime);
    }
    let mut ordered: Vec<&KernelProfile> = profiles.iter().collect();
    ordered.sort_by(|a, b| b.time_ns.cmp(&a.time_ns).then_with(|| a.kernel_name.cmp(&b.kernel_name)));

    let mut selected = Vec::new();
    let mut cumulative: u128 = 0;
    for p in ordered {
        selected.push(p.kernel_name.clone());
        cumulative += p.time_ns as u128;
        if cumulative as f64 / total as f64 >= alpha {
            break;
        }
    }
    Ok(KernelSet { selected, coverage_fraction: cumulative as f64 / total as f64, alpha })
}
