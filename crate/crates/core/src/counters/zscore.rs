use nalgebra::DMatrix;

use super::CounterError;
use crate::exec::ExecMode;
use crate::ingest::CounterMatrix;

/// Z-scored counter columns (population variance), degenerate columns removed.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedCounters {
    /// N x C' matrix, column j belongs to `names[j]`.
    pub matrix: DMatrix<f64>,
    pub names: Vec<String>,
    /// Original column index of each kept column.
    pub kept: Vec<usize>,
    /// Zero-variance counters that were dropped.
    pub dropped: Vec<String>,
}

fn column_stats(col: &[f64]) -> (f64, f64, bool) {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = col.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    (mean, std, std <= 1e-12 * scale)
}

pub fn zscore_normalize(m: &CounterMatrix, mode: ExecMode) -> Result<NormalizedCounters, CounterError> {
    let n = m.n_runs();
    if n < 2 {
        return Err(CounterError::TooFewRuns(n));
    }
    let columns: Vec<Option<Vec<f64>>> = mode.map_range(m.n_counters(), |j| {
        let col = m.column(j);
        let (mean, std, degenerate) = column_stats(&col);
        (!degenerate).then(|| col.iter().map(|x| (x - mean) / std).collect())
    });

    let mut kept = Vec::new();
    let mut names = Vec::new();
    let mut dropped = Vec::new();
    let mut data = Vec::with_capacity(n * m.n_counters());
    for (j, col) in columns.into_iter().enumerate() {
        match col {
            Some(values) => {
                kept.push(j);
                names.push(m.counter_names[j].clone());
                data.extend(values);
            }
            None => {
                log::warn!("counter `{}` has zero variance across runs; dropped", m.counter_names[j]);
                dropped.push(m.counter_names[j].clone());
            }
        }
    }
    if kept.is_empty() {
        return Err(CounterError::AllColumnsDegenerate);
    }
    Ok(NormalizedCounters { matrix: DMatrix::from_vec(n, kept.len(), data), names, kept, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn matrix(cols: &[Vec<f64>]) -> CounterMatrix {
        let n = cols[0].len();
        CounterMatrix {
            run_ids: (0..n).map(|i| format!("r{i}")).collect(),
            counter_names: (0..cols.len()).map(|j| format!("c{j}")).collect(),
            values: (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect(),
            runtime_ns: vec![1.0; n],
        }
    }

    #[test]
    fn analytic_column() {
        let z = zscore_normalize(&matrix(&[vec![1.0, 2.0, 3.0]]), ExecMode::Sequential).unwrap();
        let expect = [-1.224744871391589, 0.0, 1.224744871391589];
        for (got, want) in z.matrix.column(0).iter().zip(expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_column_dropped() {
        let z = zscore_normalize(&matrix(&[vec![5.0, 5.0, 5.0], vec![0.1, 0.1, 0.1], vec![1.0, 2.0, 4.0]]), ExecMode::Sequential)
            .unwrap();
        assert_eq!(z.names, vec!["c2"]);
        assert_eq!(z.kept, vec![2]);
        assert_eq!(z.dropped, vec!["c0", "c1"]);
    }

    #[test]
    fn all_degenerate() {
        assert_eq!(
            zscore_normalize(&matrix(&[vec![5.0, 5.0]]), ExecMode::Sequential),
            Err(CounterError::AllColumnsDegenerate)
        );
    }

    #[test]
    fn random_moments() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let cols: Vec<Vec<f64>> =
            (0..50).map(|_| (0..40).map(|_| rng.random_range(-1e3..1e3) * rng.random::<f64>()).collect()).collect();
        for mode in [ExecMode::Sequential, ExecMode::Parallel] {
            let z = zscore_normalize(&matrix(&cols), mode).unwrap();
            for col in z.matrix.column_iter() {
                let mean = col.sum() / 40.0;
                let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 40.0;
                assert!(mean.abs() < 1e-12, "mean {mean}");
                assert!((var - 1.0).abs() < 1e-9, "var {var}");
            }
        }
    }
}
