//! Per-document ground truth: rounded average or majority vote, over all
//! annotators or one demographic group, and leave-one-out human agreement.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{AnnotationRecord, AnnotationStore, DatasetId, Group};
use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    RoundedAverage,
    Majority,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::RoundedAverage => "rounded_average",
            Method::Majority => "majority",
        }
    }

    pub fn aggregate(self, labels: &[u8]) -> Result<u8> {
        match self {
            Method::RoundedAverage => rounded_average(labels),
            Method::Majority => majority(labels),
        }
    }

    /// Aggregates from a histogram where `counts[j]` is the number of
    /// annotations carrying label `j + 1`.
    pub fn from_counts(self, counts: &[u32]) -> Option<u8> {
        let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        if total == 0 {
            return None;
        }
        match self {
            Method::RoundedAverage => {
                let sum: u64 = counts
                    .iter()
                    .enumerate()
                    .map(|(j, &c)| (j as u64 + 1) * u64::from(c))
                    .sum();
                Some(round_half_up(sum, total))
            }
            Method::Majority => {
                let mut best = 0usize;
                for (j, &c) in counts.iter().enumerate() {
                    // >= so later (more offensive) labels win ties
                    if c > 0 && c >= counts[best] {
                        best = j;
                    }
                }
                Some(best as u8 + 1)
            }
        }
    }
}

// floor(sum/n + 1/2) on positive integers: half away from zero.
fn round_half_up(sum: u64, n: u64) -> u8 {
    ((2 * sum + n) / (2 * n)) as u8
}

/// Mean label rounded half away from zero.
pub fn rounded_average(labels: &[u8]) -> Result<u8> {
    if labels.is_empty() {
        return Err(Error::NoSupport);
    }
    let sum: u64 = labels.iter().map(|&l| u64::from(l)).sum();
    Ok(round_half_up(sum, labels.len() as u64))
}

/// Modal label; ties go to the larger (more offensive) label.
pub fn majority(labels: &[u8]) -> Result<u8> {
    if labels.is_empty() {
        return Err(Error::NoSupport);
    }
    let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    Ok(counts
        .iter()
        .rev()
        .find(|(_, &c)| c == top)
        .map(|(&l, _)| l)
        .expect("non-empty"))
}

/// Which annotators contribute to a ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum GroupFilter {
    #[default]
    All,
    Only(Group),
}

impl GroupFilter {
    pub fn admits(self, r: &AnnotationRecord) -> bool {
        match self {
            GroupFilter::All => true,
            GroupFilter::Only(g) => g.matches(&r.demographics),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub dataset: DatasetId,
    pub doc_id: String,
    pub method: Method,
    pub filter: GroupFilter,
    pub value: u8,
    pub support: usize,
}

pub fn group_ground_truth(
    store: &AnnotationStore,
    dataset: &DatasetId,
    doc_id: &str,
    method: Method,
    filter: GroupFilter,
) -> Result<GroundTruth> {
    let doc = store.document(dataset, doc_id);
    if doc.is_empty() {
        return Err(Error::Precondition(format!(
            "document {doc_id} not in dataset {dataset}"
        )));
    }
    let labels: Vec<u8> = doc.iter().filter(|r| filter.admits(r)).map(|r| r.label).collect();
    let value = method.aggregate(&labels)?;
    Ok(GroundTruth {
        dataset: dataset.clone(),
        doc_id: doc_id.to_string(),
        method,
        filter,
        value,
        support: labels.len(),
    })
}

/// Ground truth of every document in a dataset that has support under `filter`.
pub fn ground_truths(
    store: &AnnotationStore,
    dataset: &DatasetId,
    method: Method,
    filter: GroupFilter,
) -> BTreeMap<String, u8> {
    let mut out = BTreeMap::new();
    for doc in store.dataset_records(dataset).chunk_by(|a, b| a.doc_id == b.doc_id) {
        let labels: Vec<u8> = doc.iter().filter(|r| filter.admits(r)).map(|r| r.label).collect();
        if let Ok(v) = method.aggregate(&labels) {
            out.insert(doc[0].doc_id.clone(), v);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorAgreement {
    pub annotator_id: String,
    pub r: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LooExclusion {
    TooFewDocuments,
    ZeroVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaveOneOut {
    pub included: Vec<AnnotatorAgreement>,
    pub excluded: Vec<(String, LooExclusion)>,
    /// Unweighted mean over included annotators.
    pub mean: Option<f64>,
}

pub const LOO_MIN_DOCUMENTS: usize = 5;

/// Correlates each annotator with the consensus of the remaining annotators,
/// over documents that keep at least one other annotation.
pub fn leave_one_out_agreement(
    store: &AnnotationStore,
    dataset: &DatasetId,
    method: Method,
    min_documents: usize,
) -> LeaveOneOut {
    let mut pairs: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut others = Vec::new();
    for doc in store.dataset_records(dataset).chunk_by(|a, b| a.doc_id == b.doc_id) {
        for (i, rec) in doc.iter().enumerate() {
            let entry = pairs.entry(rec.annotator_id.as_str()).or_default();
            others.clear();
            others.extend(doc.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, r)| r.label));
            if let Ok(gt) = method.aggregate(&others) {
                entry.0.push(f64::from(rec.label));
                entry.1.push(f64::from(gt));
            }
        }
    }
    let mut included = Vec::new();
    let mut excluded = Vec::new();
    for (annotator, (own, rest)) in pairs {
        if own.len() < min_documents {
            excluded.push((annotator.to_string(), LooExclusion::TooFewDocuments));
            continue;
        }
        match stats::pearson(&own, &rest) {
            Ok(r) => included.push(AnnotatorAgreement {
                annotator_id: annotator.to_string(),
                r,
                n: own.len(),
            }),
            Err(_) => excluded.push((annotator.to_string(), LooExclusion::ZeroVariance)),
        }
    }
    let mean = if included.is_empty() {
        None
    } else {
        Some(included.iter().map(|a| a.r).sum::<f64>() / included.len() as f64)
    };
    LeaveOneOut { included, excluded, mean }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Demographics, Ethnicity, Gender};
    use proptest::prelude::*;

    fn rec(doc: &str, ann: &str, label: u8, d: Demographics) -> AnnotationRecord {
        AnnotationRecord {
            dataset: DatasetId::new("toy").unwrap(),
            doc_id: doc.into(),
            annotator_id: ann.into(),
            raw_label: i64::from(label),
            label,
            demographics: d,
        }
    }

    fn toy_store(recs: Vec<AnnotationRecord>) -> AnnotationStore {
        let mut k = BTreeMap::new();
        k.insert(DatasetId::new("toy").unwrap(), 5);
        AnnotationStore::new(recs, k).unwrap()
    }

    // Exhaustive reference: nearest integer to the exact rational mean, with
    // exact halves going up.
    fn rounded_average_oracle(labels: &[u8]) -> u8 {
        let n = labels.len() as i64;
        let sum: i64 = labels.iter().map(|&l| i64::from(l)).sum();
        (1..=5i64)
            .min_by_key(|&c| ((2 * (c * n - sum)).abs(), -c))
            .unwrap() as u8
    }

    #[test]
    fn rounded_average_examples() {
        assert_eq!(rounded_average(&[3, 3, 3]).unwrap(), 3);
        assert_eq!(rounded_average(&[1, 2, 2, 5]).unwrap(), 3);
        assert_eq!(rounded_average(&[1]).unwrap(), 1);
        assert!(matches!(rounded_average(&[]), Err(Error::NoSupport)));
    }

    #[test]
    fn rounded_average_matches_exhaustive_oracle() {
        // every multiset of size 1..=4 over 1..=5
        fn rec_gen(prefix: &mut Vec<u8>, depth: usize, out: &mut Vec<Vec<u8>>) {
            if !prefix.is_empty() {
                out.push(prefix.clone());
            }
            if depth == 0 {
                return;
            }
            let start = prefix.last().copied().unwrap_or(1);
            for l in start..=5 {
                prefix.push(l);
                rec_gen(prefix, depth - 1, out);
                prefix.pop();
            }
        }
        let mut all = Vec::new();
        rec_gen(&mut Vec::new(), 4, &mut all);
        assert!(all.len() > 100);
        for m in &all {
            assert_eq!(rounded_average(m).unwrap(), rounded_average_oracle(m), "{m:?}");
        }
    }

    #[test]
    fn majority_examples() {
        assert_eq!(majority(&[1, 1, 3]).unwrap(), 1);
        assert_eq!(majority(&[1, 3]).unwrap(), 3);
        assert_eq!(majority(&[2, 2, 4, 4, 5]).unwrap(), 4);
        assert!(matches!(majority(&[]), Err(Error::NoSupport)));
    }

    #[test]
    fn group_filter_examples() {
        let man = Demographics { gender: Some(Gender::Man), ethnicity: None };
        let woman = Demographics { gender: Some(Gender::Woman), ethnicity: Some(Ethnicity::White) };
        let store = toy_store(vec![
            rec("d", "a", 5, man),
            rec("d", "b", 1, woman),
            rec("d", "c", 2, woman),
        ]);
        let ds = DatasetId::new("toy").unwrap();
        let gt = group_ground_truth(&store, &ds, "d", Method::RoundedAverage, GroupFilter::Only(Group::Gender(Gender::Woman))).unwrap();
        assert_eq!((gt.value, gt.support), (2, 2));
        let all = group_ground_truth(&store, &ds, "d", Method::RoundedAverage, GroupFilter::All).unwrap();
        assert_eq!(all.value, rounded_average(&[5, 1, 2]).unwrap());
        let none = group_ground_truth(&store, &ds, "d", Method::RoundedAverage, GroupFilter::Only(Group::Ethnicity(Ethnicity::Hispanic)));
        assert!(matches!(none, Err(Error::NoSupport)));
    }

    #[test]
    fn loo_perfect_and_anti_agreement() {
        let d = Demographics::default();
        let mut recs = Vec::new();
        let labels = [1u8, 2, 3, 4, 5, 2];
        for (i, &l) in labels.iter().enumerate() {
            let doc = format!("d{i}");
            recs.push(rec(&doc, "a", l, d));
            recs.push(rec(&doc, "b", l, d));
            recs.push(rec(&doc, "c", 6 - l, d));
        }
        let store = toy_store(recs);
        let ds = DatasetId::new("toy").unwrap();
        // a vs consensus of {b, c}: mean (l + 6 - l)/2 = 3 always -> zero variance
        let loo = leave_one_out_agreement(&store, &ds, Method::RoundedAverage, 5);
        assert_eq!(loo.included.len(), 1);
        assert_eq!(loo.included[0].annotator_id, "c");
        // c vs consensus of {a, b} = l; c's own label = 6 - l
        assert!((loo.included[0].r + 1.0).abs() < 1e-12);

        let two: Vec<_> = store
            .records()
            .iter()
            .filter(|r| r.annotator_id != "c")
            .cloned()
            .collect();
        let store2 = toy_store(two);
        let loo2 = leave_one_out_agreement(&store2, &ds, Method::RoundedAverage, 5);
        assert_eq!(loo2.included.len(), 2);
        for a in &loo2.included {
            assert!((a.r - 1.0).abs() < 1e-12);
        }
        assert!((loo2.mean.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loo_toy_matches_enumeration() {
        // 3 annotators x 4 documents, all labeled by everyone.
        let table = [[1u8, 2, 4], [3, 3, 5], [2, 1, 1], [5, 4, 3]];
        let d = Demographics::default();
        let mut recs = Vec::new();
        for (di, row) in table.iter().enumerate() {
            for (ai, &l) in row.iter().enumerate() {
                recs.push(rec(&format!("d{di}"), &format!("a{ai}"), l, d));
            }
        }
        let store = toy_store(recs);
        let ds = DatasetId::new("toy").unwrap();
        let loo = leave_one_out_agreement(&store, &ds, Method::RoundedAverage, 4);
        // Hand enumeration of the leave-one-out consensus:
        // a0 own [1,3,2,5], rest mean of (a1,a2) = [3,4,1,3.5->4]
        // a1 own [2,3,1,4], rest (a0,a2)          = [2.5->3,4,1.5->2,4]
        // a2 own [4,5,1,3], rest (a0,a1)          = [1.5->2,3,1.5->2,4.5->5]
        let expect = |x: [f64; 4], y: [f64; 4]| {
            let mx = x.iter().sum::<f64>() / 4.0;
            let my = y.iter().sum::<f64>() / 4.0;
            let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
            let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
            let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
            sxy / (sxx * syy).sqrt()
        };
        let want = [
            expect([1., 3., 2., 5.], [3., 4., 1., 4.]),
            expect([2., 3., 1., 4.], [3., 4., 2., 4.]),
            expect([4., 5., 1., 3.], [2., 3., 2., 5.]),
        ];
        assert_eq!(loo.included.len(), 3);
        for (a, w) in loo.included.iter().zip(want) {
            assert!((a.r - w).abs() < 1e-12, "{} {} vs {}", a.annotator_id, a.r, w);
        }
    }

    proptest! {
        #[test]
        fn aggregation_is_permutation_invariant(mut v in proptest::collection::vec(1u8..=5, 1..12), seed: u64) {
            let a = rounded_average(&v).unwrap();
            let m = majority(&v).unwrap();
            let n = v.len();
            // deterministic rotation + reversal
            v.rotate_left((seed as usize) % n);
            v.reverse();
            prop_assert_eq!(a, rounded_average(&v).unwrap());
            prop_assert_eq!(m, majority(&v).unwrap());
        }

        #[test]
        fn binary_scale_methods_agree_off_ties(v in proptest::collection::vec(1u8..=2, 1..15)) {
            let ones = v.iter().filter(|&&l| l == 1).count();
            let twos = v.len() - ones;
            if ones != twos {
                prop_assert_eq!(rounded_average(&v).unwrap(), majority(&v).unwrap());
            }
        }

        #[test]
        fn counts_path_matches_slice_path(v in proptest::collection::vec(1u8..=5, 1..12)) {
            let mut counts = [0u32; 5];
            for &l in &v { counts[usize::from(l - 1)] += 1; }
            prop_assert_eq!(Method::RoundedAverage.from_counts(&counts), Some(rounded_average(&v).unwrap()));
            prop_assert_eq!(Method::Majority.from_counts(&counts), Some(majority(&v).unwrap()));
        }
    }
}
