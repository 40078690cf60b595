//! Sparse selection of the hardware counters that best explain runtime.
//!
//! Counters are z-scored per column, then an ensemble of randomized
//! orthogonal matching pursuit runs picks up to `kappa` counters each;
//! counters are ranked by their least-squares weight averaged over runs.

mod describe;
mod eomp;
mod zscore;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use describe::describe_counters;
pub use eomp::{eomp_rank, eomp_select, least_squares, EompOutcome, EompRun, RankedCounter};
pub use zscore::{zscore_normalize, NormalizedCounters};

#[derive(Debug, Error, PartialEq)]
pub enum CounterError {
    #[error("every counter column has zero variance")]
    AllColumnsDegenerate,
    #[error("counter matrix needs at least two runs, found {0}")]
    TooFewRuns(usize),
    #[error("dimension mismatch: matrix has {rows} rows, runtime vector has {len}")]
    DimensionMismatch { rows: usize, len: usize },
    #[error("normal equations are singular")]
    SingularSystem,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EompConfig {
    /// Sparsity budget per run.
    pub kappa: usize,
    /// Size of the candidate pool sampled from at each step.
    pub tau_pool: usize,
    /// Number of ensemble runs.
    pub ensembles: usize,
    pub seed: u64,
    /// A run stops early once every remaining correlation is below this.
    pub epsilon_stop: f64,
    /// Ridge-regularize the residual solve. Without it, collinear supports
    /// raise [`CounterError::SingularSystem`].
    pub regularize: bool,
}

impl Default for EompConfig {
    fn default() -> Self {
        EompConfig { kappa: 5, tau_pool: 5, ensembles: 10, seed: 0, epsilon_stop: 1e-9, regularize: true }
    }
}

impl EompConfig {
    pub fn validate(&self) -> Result<(), CounterError> {
        if self.kappa == 0 || self.tau_pool == 0 || self.ensembles == 0 {
            return Err(CounterError::InvalidConfig("kappa, tau_pool and ensembles must be positive".into()));
        }
        if !(self.epsilon_stop > 0.0) {
            return Err(CounterError::InvalidConfig("epsilon_stop must be positive".into()));
        }
        Ok(())
    }
}

/// One selected counter after ensemble averaging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterImportance {
    pub counter_name: String,
    /// Mean |coefficient| over all runs, zero for runs that skipped it.
    pub avg_weight: f64,
    pub selection_frequency: f64,
    /// Mean signed coefficient over the runs that selected it.
    pub mean_coefficient: f64,
    pub description: String,
    pub diagnostic_id: String,
}
