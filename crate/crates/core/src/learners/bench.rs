//! Wall-clock comparison of one joint fit against the per-location loop.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fit, LearnerKind};
use crate::error::{DteError, Result};
use crate::model::indicator_labels_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub locations: usize,
    /// One fit of `kind` on all locations.
    pub joint_seconds: f64,
    /// `locations` fits of the single-target counterpart, one per column.
    pub loop_seconds: f64,
    /// `joint_seconds / loop_seconds`; exactly 1 when `locations == 1`.
    pub ratio: f64,
}

/// Median wall time of `repeats` fits.
pub fn time_fit(
    kind: &LearnerKind,
    x: ArrayView2<'_, f64>,
    labels: ArrayView2<'_, f64>,
    seed: u64,
    repeats: usize,
) -> Result<f64> {
    median_seconds(repeats, || fit(kind, x, labels, seed).map(|_| ()))
}

/// Times the `M`-iteration single-target loop: each column gets its own fit.
fn time_loop(
    kind: &LearnerKind,
    x: ArrayView2<'_, f64>,
    labels: ArrayView2<'_, f64>,
    seed: u64,
    repeats: usize,
) -> Result<f64> {
    let single = kind.single_target_counterpart();
    median_seconds(repeats, || {
        for j in 0..labels.ncols() {
            let column = labels.slice(ndarray::s![.., j..j + 1]);
            fit(&single, x, column, seed.wrapping_add(j as u64))?;
        }
        Ok(())
    })
}

fn median_seconds(repeats: usize, mut body: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut times = Vec::with_capacity(repeats.max(1));
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        body()?;
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(|a, b| a.total_cmp(b));
    Ok(times[times.len() / 2])
}

/// Synthetic covariates in `(0,1)^{d_x}` with an outcome that depends on all
/// of them; labels are indicators at `M` evenly spaced outcome quantiles.
pub fn synthetic_problem(
    m: usize,
    d_x: usize,
    locations: usize,
    seed: u64,
) -> (Array2<f64>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((m, d_x), |_| rng.random::<f64>());
    let y: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|r| r.sum().powi(2) + rng.random::<f64>() - 0.5)
        .collect();
    let mut sorted = y.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let grid: Vec<f64> = (1..=locations)
        .map(|j| sorted[(j * m / (locations + 1)).min(m - 1)])
        .collect();
    (x, indicator_labels_for(&y, &grid))
}

/// For each requested location count, times the joint fit of `kind` against
/// the loop of single-target fits on identical synthetic data.
pub fn benchmark_training_cost(
    kind: &LearnerKind,
    m: usize,
    d_x: usize,
    location_counts: &[usize],
    seed: u64,
    repeats: usize,
) -> Result<Vec<BenchmarkRow>> {
    if location_counts.is_empty() {
        return Err(DteError::InvalidConfig("no location counts to benchmark".into()));
    }
    location_counts
        .iter()
        .map(|&locations| {
            if locations == 0 {
                return Err(DteError::InvalidConfig("location count must be >= 1".into()));
            }
            let (x, labels) = synthetic_problem(m, d_x, locations, seed);
            let joint_seconds = time_fit(kind, x.view(), labels.view(), seed, repeats)?;
            // With one location the joint fit is the loop.
            let loop_seconds = if locations == 1 {
                joint_seconds
            } else {
                time_loop(kind, x.view(), labels.view(), seed, repeats)?
            };
            Ok(BenchmarkRow {
                locations,
                joint_seconds,
                loop_seconds,
                ratio: if locations == 1 {
                    1.0
                } else {
                    joint_seconds / loop_seconds
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_location_ratio_is_one() {
        let rows = benchmark_training_cost(&LearnerKind::linear(), 200, 5, &[1, 4], 1, 1).unwrap();
        assert_eq!(rows[0].ratio, 1.0);
        assert_eq!(rows[1].locations, 4);
        assert!(rows[1].joint_seconds > 0.0 && rows[1].loop_seconds > 0.0);
    }

    #[test]
    fn empty_list_rejected() {
        assert!(benchmark_training_cost(&LearnerKind::linear(), 10, 2, &[], 0, 1).is_err());
    }

    #[test]
    fn synthetic_labels_are_balanced_per_column() {
        let (_, labels) = synthetic_problem(400, 4, 3, 2);
        for (j, col) in labels.columns().into_iter().enumerate() {
            let share = col.sum() / 400.0;
            let target = (j + 1) as f64 / 4.0;
            assert!((share - target).abs() < 0.02, "col {j}: {share}");
        }
    }
}
