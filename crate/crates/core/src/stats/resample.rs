//! Percentile bootstrap and permutation nulls on deterministic substreams.
//!
//! Iteration `i` of a loop labelled `task` draws only from
//! `rng.substream(task, i)`, and results are collected in iteration order,
//! so outputs do not depend on the rayon pool size.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Axis, Group};
use crate::error::{Error, Result};
use crate::index::DatasetIndex;
use crate::rng::RngSpec;

use super::Ci;

pub const DEFAULT_RESAMPLES: usize = 1000;

/// Attempts per iteration before an undefined statistic is given up on.
const MAX_REDRAWS: usize = 10;

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// 95% percentile bootstrap interval. `statistic` receives the resampled
/// unit indices and returns `None` when undefined on that resample, which
/// triggers a redraw.
pub fn bootstrap_ci<F>(n_units: usize, b: usize, rng: &RngSpec, task: &str, statistic: F) -> Result<Ci>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    if n_units < 3 {
        return Err(Error::Precondition(format!(
            "bootstrap needs at least 3 resample units, got {n_units}"
        )));
    }
    let draws: Vec<(Option<f64>, usize)> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.substream(task, i as u64);
            let mut idx = vec![0usize; n_units];
            for attempt in 1..=MAX_REDRAWS {
                idx.iter_mut().for_each(|x| *x = r.random_range(0..n_units));
                if let Some(v) = statistic(&idx).filter(|v| v.is_finite()) {
                    return (Some(v), attempt);
                }
            }
            (None, MAX_REDRAWS)
        })
        .collect();
    let attempts: usize = draws.iter().map(|d| d.1).sum();
    let mut values: Vec<f64> = draws.iter().filter_map(|d| d.0).collect();
    let undefined = attempts - values.len();
    if values.is_empty() || undefined * 10 > attempts * 9 {
        return Err(Error::DegenerateBootstrap { undefined, attempts });
    }
    values.sort_by(f64::total_cmp);
    Ok(Ci {
        lo: quantile_sorted(&values, 0.025),
        hi: quantile_sorted(&values, 0.975),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationOutcome {
    pub observed: f64,
    pub null: Vec<f64>,
    /// (1 + #{null >= observed}) / (N + 1)
    pub p: f64,
}

fn permutation_p(observed: f64, null: &[f64]) -> f64 {
    let exceed = null.iter().filter(|&&v| v >= observed).count();
    (1 + exceed) as f64 / (null.len() + 1) as f64
}

/// Permutation null over shuffles of `items`.
pub fn permutation_test_with<T, F>(
    items: &[T],
    n_perm: usize,
    rng: &RngSpec,
    task: &str,
    statistic: F,
) -> Result<PermutationOutcome>
where
    T: Clone + Send + Sync,
    F: Fn(&[T]) -> Option<f64> + Sync,
{
    let observed = statistic(items)
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Precondition("statistic undefined on the observed data".into()))?;
    let null: Vec<f64> = (0..n_perm)
        .into_par_iter()
        .filter_map(|i| {
            let mut r = rng.substream(task, i as u64);
            let mut shuffled = items.to_vec();
            (0..MAX_REDRAWS).find_map(|_| {
                shuffled.shuffle(&mut r);
                statistic(&shuffled).filter(|v| v.is_finite())
            })
        })
        .collect();
    Ok(PermutationOutcome {
        observed,
        p: permutation_p(observed, &null),
        null,
    })
}

/// Shuffles annotators' categories on `axis` among the annotators that have
/// one, so each annotator keeps a single coherent identity, and recomputes
/// `statistic` on each shuffled assignment.
pub fn permutation_test<F>(
    index: &DatasetIndex,
    axis: Axis,
    statistic: F,
    n_perm: usize,
    rng: &RngSpec,
    task: &str,
) -> Result<PermutationOutcome>
where
    F: Fn(&[Option<Group>]) -> Option<f64> + Sync,
{
    let assignment = index.assignment(axis);
    if index.groups_present(axis).len() < 2 {
        return Err(Error::Precondition(format!(
            "permutation on {} needs at least two groups in {}",
            axis.as_str(),
            index.dataset
        )));
    }
    let holders: Vec<usize> = (0..assignment.len()).filter(|&a| assignment[a].is_some()).collect();
    let values: Vec<Group> = holders.iter().filter_map(|&a| assignment[a]).collect();
    permutation_test_with(&values, n_perm, rng, task, |vals: &[Group]| {
        let mut shuffled = assignment.clone();
        for (&a, &g) in holders.iter().zip(vals) {
            shuffled[a] = Some(g);
        }
        statistic(&shuffled)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_statistic_zero_width() {
        let ci = bootstrap_ci(10, 200, &RngSpec::new(1), "c", |_| Some(0.25)).unwrap();
        assert_eq!((ci.lo, ci.hi), (0.25, 0.25));
    }

    #[test]
    fn too_few_units() {
        assert!(matches!(
            bootstrap_ci(2, 10, &RngSpec::new(1), "c", |_| Some(0.0)),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn mostly_undefined_is_degenerate() {
        let r = bootstrap_ci(5, 100, &RngSpec::new(1), "u", |_| None);
        assert!(matches!(r, Err(Error::DegenerateBootstrap { .. })));
    }

    #[test]
    fn occasional_undefined_is_redrawn() {
        // undefined whenever unit 0 is drawn first
        let ci = bootstrap_ci(5, 300, &RngSpec::new(3), "r", |idx| (idx[0] != 0).then(|| idx[0] as f64));
        let ci = ci.unwrap();
        assert!(ci.lo >= 1.0 && ci.hi <= 4.0);
    }

    #[test]
    fn quantile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.0);
        assert_eq!(quantile_sorted(&v, 0.125), 0.5);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
    }

    #[test]
    fn observed_above_all_null_gives_min_p() {
        let items: Vec<u32> = (0..20).collect();
        // identity order scores 1000, any shuffle scores below
        let out = permutation_test_with(&items, 1000, &RngSpec::new(9), "p", |v| {
            Some(if v.windows(2).all(|w| w[0] < w[1]) { 1000.0 } else { v[0] as f64 })
        })
        .unwrap();
        assert_eq!(out.null.len(), 1000);
        assert!((out.p - 1.0 / 1001.0).abs() < 1e-15);
    }

    #[test]
    fn deterministic_across_pool_sizes() {
        let stat = |idx: &[usize]| Some(idx.iter().map(|&i| (i * i) as f64).sum::<f64>() / idx.len() as f64);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| bootstrap_ci(30, 500, &RngSpec::new(5), "d", stat).unwrap());
        let b = four.install(|| bootstrap_ci(30, 500, &RngSpec::new(5), "d", stat).unwrap());
        assert_eq!(a.lo.to_bits(), b.lo.to_bits());
        assert_eq!(a.hi.to_bits(), b.hi.to_bits());
    }
}
