use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CounterError, CounterImportance, EompConfig, NormalizedCounters};
use crate::diag::{DiagnosticId, Source};
use crate::exec::ExecMode;

const REFINEMENT_STEPS: usize = 3;

/// Trace of one ensemble run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EompRun {
    /// Column indices in selection order.
    pub selected: Vec<usize>,
    /// Least-squares coefficients on the final support, aligned with `selected`.
    pub coefficients: Vec<f64>,
    /// ‖r‖₂ before the first selection and after each one.
    pub residual_norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCounter {
    pub index: usize,
    pub avg_weight: f64,
    pub selection_frequency: f64,
    pub mean_coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EompOutcome {
    /// Sorted by avg_weight descending, at most `kappa` entries.
    pub ranked: Vec<RankedCounter>,
    pub runs: Vec<EompRun>,
}

/// Least-squares coefficients of `t` on the columns `support` of `d`.
///
/// With `regularize`, solves the ridge system with
/// λ = 1e-8·trace(G)/|S| and then applies a few steps of iterative
/// refinement, which recovers the unregularized solution whenever the
/// Gram matrix is well conditioned and stays bounded when it is not.
pub fn least_squares(d: &DMatrix<f64>, support: &[usize], t: &DVector<f64>, regularize: bool) -> Result<DVector<f64>, CounterError> {
    let ds = d.select_columns(support);
    let gram = ds.transpose() * &ds;
    let rhs = ds.transpose() * t;
    if !regularize {
        return gram.cholesky().map(|c| c.solve(&rhs)).ok_or(CounterError::SingularSystem);
    }
    let k = support.len();
    let lambda = (1e-8 * gram.trace() / k as f64).max(f64::MIN_POSITIVE);
    let shifted = &gram + DMatrix::identity(k, k) * lambda;
    let chol = shifted.cholesky().ok_or(CounterError::SingularSystem)?;
    let mut a = chol.solve(&rhs);
    for _ in 0..REFINEMENT_STEPS {
        let correction = chol.solve(&(&rhs - &gram * &a));
        a += correction;
    }
    Ok(a)
}

fn residual(d: &DMatrix<f64>, support: &[usize], a: &DVector<f64>, t: &DVector<f64>) -> DVector<f64> {
    t - d.select_columns(support) * a
}

/// Picks from the top-`tau_pool` correlations with probability
/// proportional to correlation. Ties in the pool order go to the lower index.
fn sample_from_pool(corr: &[(usize, f64)], tau_pool: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut pool: Vec<(usize, f64)> = corr.to_vec();
    pool.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    pool.truncate(tau_pool);
    if pool.len() == 1 {
        return pool[0].0;
    }
    let positive: Vec<(usize, f64)> = pool.iter().copied().filter(|(_, c)| *c > 0.0).collect();
    let total: f64 = positive.iter().map(|(_, c)| c).sum();
    let all_equal = positive.windows(2).all(|w| w[0].1 == w[1].1);
    if positive.is_empty() || all_equal || !total.is_finite() {
        let candidates = if positive.is_empty() { &pool } else { &positive };
        return candidates[rng.random_range(0..candidates.len())].0;
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, c) in &positive {
        acc += c;
        if u < acc {
            return *i;
        }
    }
    positive.last().expect("non-empty").0
}

fn single_run(d: &DMatrix<f64>, t: &DVector<f64>, cfg: &EompConfig, kappa: usize, run: usize) -> Result<EompRun, CounterError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(run as u64);
    let mut selected: Vec<usize> = Vec::with_capacity(kappa);
    let mut in_support = vec![false; d.ncols()];
    let mut r = t.clone();
    let mut residual_norms = vec![r.norm()];
    let mut coefficients = DVector::zeros(0);

    while selected.len() < kappa {
        let corr: Vec<(usize, f64)> = (0..d.ncols())
            .filter(|&i| !in_support[i])
            .map(|i| (i, d.column(i).dot(&r).abs()))
            .collect();
        let max = corr.iter().map(|(_, c)| *c).fold(0.0f64, f64::max);
        if corr.is_empty() || max < cfg.epsilon_stop {
            break;
        }
        let pick = sample_from_pool(&corr, cfg.tau_pool, &mut rng);
        selected.push(pick);
        in_support[pick] = true;
        coefficients = least_squares(d, &selected, t, cfg.regularize)?;
        r = residual(d, &selected, &coefficients, t);
        residual_norms.push(r.norm());
    }
    Ok(EompRun { selected, coefficients: coefficients.iter().copied().collect(), residual_norms })
}

/// Runs the ensemble over a normalized N×C matrix `d` against runtimes `t`.
pub fn eomp_rank(d: &DMatrix<f64>, t: &[f64], cfg: &EompConfig, mode: ExecMode) -> Result<EompOutcome, CounterError> {
    cfg.validate()?;
    if d.nrows() != t.len() {
        return Err(CounterError::DimensionMismatch { rows: d.nrows(), len: t.len() });
    }
    if d.ncols() == 0 {
        return Err(CounterError::InvalidConfig("no counter columns".into()));
    }
    let kappa = if cfg.kappa > d.ncols() {
        log::warn!("kappa {} exceeds the {} available counters; using {}", cfg.kappa, d.ncols(), d.ncols());
        d.ncols()
    } else {
        cfg.kappa
    };
    let t = DVector::from_column_slice(t);
    let runs = mode
        .map_range(cfg.ensembles, |e| single_run(d, &t, cfg, kappa, e))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let e = cfg.ensembles as f64;
    let mut weight = vec![0.0; d.ncols()];
    let mut signed = vec![0.0; d.ncols()];
    let mut count = vec![0usize; d.ncols()];
    for run in &runs {
        for (&i, &a) in run.selected.iter().zip(&run.coefficients) {
            weight[i] += a.abs();
            signed[i] += a;
            count[i] += 1;
        }
    }
    let mut ranked: Vec<RankedCounter> = (0..d.ncols())
        .filter(|&i| count[i] > 0)
        .map(|i| RankedCounter {
            index: i,
            avg_weight: weight[i] / e,
            selection_frequency: count[i] as f64 / e,
            mean_coefficient: signed[i] / count[i] as f64,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.avg_weight
            .total_cmp(&a.avg_weight)
            .then(b.selection_frequency.total_cmp(&a.selection_frequency))
            .then(a.index.cmp(&b.index))
    });
    ranked.truncate(kappa);
    Ok(EompOutcome { ranked, runs })
}

/// Named wrapper over [`eomp_rank`]; assigns `IA-xx` IDs in rank order.
pub fn eomp_select(
    counters: &NormalizedCounters,
    runtimes_s: &[f64],
    cfg: &EompConfig,
    mode: ExecMode,
) -> Result<Vec<CounterImportance>, CounterError> {
    let outcome = eomp_rank(&counters.matrix, runtimes_s, cfg, mode)?;
    Ok(outcome
        .ranked
        .iter()
        .enumerate()
        .map(|(k, r)| CounterImportance {
            counter_name: counters.names[r.index].clone(),
            avg_weight: r.avg_weight,
            selection_frequency: r.selection_frequency,
            mean_coefficient: r.mean_coefficient,
            description: counters.names[r.index].clone(),
            diagnostic_id: DiagnosticId::new(Source::Ia, k + 1).to_string(),
        })
        .collect())
}
