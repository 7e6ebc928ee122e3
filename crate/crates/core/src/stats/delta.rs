//! Correlation of model labels with (group) ground truth, and the
//! difference between two groups' correlations.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::Method;
use crate::data::Group;
use crate::error::{Error, Result};
use crate::index::{paired, DatasetIndex};
use crate::rng::RngSpec;

use super::{bootstrap_ci, pearson, steiger_z, Ci, CorrelationResult};

/// Correlation of model labels with a ground truth plus a document-level
/// bootstrap interval (`boot == 0` skips the interval).
pub fn correlate(
    model: &[Option<u8>],
    truth: &[Option<u8>],
    boot: usize,
    rng: &RngSpec,
    task: &str,
) -> Result<CorrelationResult> {
    let (x, y) = paired(model, truth);
    let mut res = CorrelationResult::from_pairs(&x, &y)?;
    if boot > 0 && x.len() >= 3 {
        res.ci = Some(bootstrap_ci(x.len(), boot, rng, task, |idx| {
            let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
            let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            pearson(&xs, &ys).ok()
        })?);
    }
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaR {
    pub groups: (Group, Group),
    /// r(P, D1) and r(P, D2) on the shared documents.
    pub r1: f64,
    pub r2: f64,
    /// r(D1, D2) on the shared documents.
    pub r12: f64,
    pub delta: f64,
    pub z: f64,
    pub p: f64,
    /// Holm-adjusted within its family; filled in by the caller.
    pub p_adjusted: Option<f64>,
    pub ci: Option<Ci>,
    /// Documents carrying a model label and both groups' ground truths.
    pub n: usize,
}

struct Shared {
    p: Vec<f64>,
    g1: Vec<f64>,
    g2: Vec<f64>,
}

fn shared(model: &[Option<u8>], t1: &[Option<u8>], t2: &[Option<u8>]) -> Shared {
    let mut s = Shared { p: vec![], g1: vec![], g2: vec![] };
    for ((m, a), b) in model.iter().zip(t1).zip(t2) {
        if let (Some(m), Some(a), Some(b)) = (m, a, b) {
            s.p.push(f64::from(*m));
            s.g1.push(f64::from(*a));
            s.g2.push(f64::from(*b));
        }
    }
    s
}

/// Δr = r(P, D1) − r(P, D2) with Steiger's test and an annotation-level
/// bootstrap interval.
#[allow(clippy::too_many_arguments)]
pub fn delta_r(
    index: &DatasetIndex,
    model: &[Option<u8>],
    g1: Group,
    g2: Group,
    method: Method,
    boot: usize,
    rng: &RngSpec,
    task: &str,
) -> Result<DeltaR> {
    if g1.axis() != g2.axis() || g1 == g2 {
        return Err(Error::Precondition(format!("cannot compare {g1} with {g2}")));
    }
    let assignment = index.assignment(g1.axis());
    let t1 = index.group_truths(method, &assignment, Some(g1));
    let t2 = index.group_truths(method, &assignment, Some(g2));
    let s = shared(model, &t1, &t2);
    let n = s.p.len();
    let r1 = pearson(&s.p, &s.g1)?;
    let r2 = pearson(&s.p, &s.g2)?;
    let r12 = pearson(&s.g1, &s.g2)?;
    let delta = r1 - r2;
    let (z, p) = if delta == 0.0 {
        (0.0, 1.0)
    } else {
        let st = steiger_z(r1, r2, r12, n)?;
        (st.z, st.p)
    };

    let ci = if boot > 0 {
        let units: Vec<usize> = (0..index.n_annotations())
            .filter(|&i| {
                let g = assignment[index.annotator[i] as usize];
                g == Some(g1) || g == Some(g2)
            })
            .collect();
        Some(bootstrap_delta(index, model, &assignment, g1, &units, method, boot, rng, task)?)
    } else {
        None
    };

    Ok(DeltaR {
        groups: (g1, g2),
        r1,
        r2,
        r12,
        delta,
        z,
        p,
        p_adjusted: None,
        ci,
        n,
    })
}

#[allow(clippy::too_many_arguments)]
fn bootstrap_delta(
    index: &DatasetIndex,
    model: &[Option<u8>],
    assignment: &[Option<crate::data::Group>],
    g1: Group,
    units: &[usize],
    method: Method,
    boot: usize,
    rng: &RngSpec,
    task: &str,
) -> Result<Ci> {
    if units.len() < 3 {
        return Err(Error::Precondition("fewer than 3 annotations to resample".into()));
    }
    let k = usize::from(index.k);
    let n_docs = index.n_docs();
    let in_g1: Vec<bool> = units
        .iter()
        .map(|&i| assignment[index.annotator[i] as usize] == Some(g1))
        .collect();
    let stat = |r: &mut rand_chacha::ChaCha8Rng| -> Option<f64> {
        let mut counts = vec![0u32; n_docs * k * 2];
        for _ in 0..units.len() {
            let u = r.random_range(0..units.len());
            let i = units[u];
            let side = if in_g1[u] { 0 } else { 1 };
            let d = index.doc_of[i] as usize;
            counts[(d * 2 + side) * k + usize::from(index.label[i] - 1)] += 1;
        }
        let mut s = Shared { p: vec![], g1: vec![], g2: vec![] };
        for (d, m) in model.iter().enumerate() {
            let Some(m) = m else { continue };
            let a = method.from_counts(&counts[(d * 2) * k..(d * 2 + 1) * k]);
            let b = method.from_counts(&counts[(d * 2 + 1) * k..(d * 2 + 2) * k]);
            if let (Some(a), Some(b)) = (a, b) {
                s.p.push(f64::from(*m));
                s.g1.push(f64::from(a));
                s.g2.push(f64::from(b));
            }
        }
        Some(pearson(&s.p, &s.g1).ok()? - pearson(&s.p, &s.g2).ok()?)
    };
    // Resamples are drawn directly from the substream rather than through
    // `bootstrap_ci` so that per-document histograms need no index buffer.
    let draws: Vec<(Option<f64>, usize)> = (0..boot)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.substream(task, i as u64);
            for attempt in 1..=10 {
                if let Some(v) = stat(&mut r) {
                    return (Some(v), attempt);
                }
            }
            (None, 10)
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
        lo: super::quantile_sorted(&values, 0.025),
        hi: super::quantile_sorted(&values, 0.975),
    })
}
