//! Compact per-dataset layout used by the resampling loops: documents in
//! store order, annotations stored contiguously per document, annotators
//! numbered densely.

use std::collections::BTreeMap;

use crate::aggregate::Method;
use crate::data::{AnnotationStore, Axis, DatasetId, Demographics, Group};

#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub dataset: DatasetId,
    pub k: u8,
    pub doc_ids: Vec<String>,
    pub annotator_ids: Vec<String>,
    /// Demographics of each annotator, taken from their first record.
    pub demographics: Vec<Demographics>,
    /// Annotations of doc `d` live at `doc_start[d]..doc_start[d + 1]`.
    pub doc_start: Vec<usize>,
    pub annotator: Vec<u32>,
    pub label: Vec<u8>,
    pub doc_of: Vec<u32>,
}

impl DatasetIndex {
    pub fn build(store: &AnnotationStore, dataset: &DatasetId) -> Self {
        let k = store.cardinality(dataset).unwrap_or(2);
        let records = store.dataset_records(dataset);
        let mut ann_index: BTreeMap<&str, u32> = BTreeMap::new();
        let mut annotator_ids = Vec::new();
        let mut demographics = Vec::new();
        let mut doc_ids = Vec::new();
        let mut doc_start = vec![0];
        let mut annotator = Vec::with_capacity(records.len());
        let mut label = Vec::with_capacity(records.len());
        let mut doc_of = Vec::with_capacity(records.len());
        for doc in records.chunk_by(|a, b| a.doc_id == b.doc_id) {
            let d = doc_ids.len() as u32;
            doc_ids.push(doc[0].doc_id.clone());
            for r in doc {
                let a = *ann_index.entry(r.annotator_id.as_str()).or_insert_with(|| {
                    annotator_ids.push(r.annotator_id.clone());
                    demographics.push(r.demographics);
                    (annotator_ids.len() - 1) as u32
                });
                annotator.push(a);
                label.push(r.label);
                doc_of.push(d);
            }
            doc_start.push(annotator.len());
        }
        Self {
            dataset: dataset.clone(),
            k,
            doc_ids,
            annotator_ids,
            demographics,
            doc_start,
            annotator,
            label,
            doc_of,
        }
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn n_annotations(&self) -> usize {
        self.label.len()
    }

    pub fn doc_range(&self, d: usize) -> std::ops::Range<usize> {
        self.doc_start[d]..self.doc_start[d + 1]
    }

    /// Each annotator's category on `axis`.
    pub fn assignment(&self, axis: Axis) -> Vec<Option<Group>> {
        self.demographics.iter().map(|d| d.get(axis)).collect()
    }

    /// Groups present among annotators on `axis`, in canonical order.
    pub fn groups_present(&self, axis: Axis) -> Vec<Group> {
        axis.groups()
            .into_iter()
            .filter(|g| self.demographics.iter().any(|d| g.matches(d)))
            .collect()
    }

    /// Model label aligned to `doc_ids`.
    pub fn align_model(&self, labels: &BTreeMap<String, u8>) -> Vec<Option<u8>> {
        self.doc_ids.iter().map(|d| labels.get(d).copied()).collect()
    }

    /// Ground truth per document from annotations accepted by `admit`
    /// (called with the annotation's position).
    pub fn truths_by<F: Fn(usize) -> bool>(&self, method: Method, admit: F) -> Vec<Option<u8>> {
        let mut counts = vec![0u32; usize::from(self.k)];
        (0..self.n_docs())
            .map(|d| {
                counts.iter_mut().for_each(|c| *c = 0);
                for i in self.doc_range(d) {
                    if admit(i) {
                        counts[usize::from(self.label[i] - 1)] += 1;
                    }
                }
                method.from_counts(&counts)
            })
            .collect()
    }

    /// Ground truth per document for `group` under an annotator assignment.
    pub fn group_truths(
        &self,
        method: Method,
        assignment: &[Option<Group>],
        group: Option<Group>,
    ) -> Vec<Option<u8>> {
        match group {
            None => self.truths_by(method, |_| true),
            Some(g) => self.truths_by(method, |i| assignment[self.annotator[i] as usize] == Some(g)),
        }
    }
}

/// Pairs (model, truth) on documents where both exist.
pub fn paired(model: &[Option<u8>], truth: &[Option<u8>]) -> (Vec<f64>, Vec<f64>) {
    model
        .iter()
        .zip(truth)
        .filter_map(|(m, t)| Some((f64::from((*m)?), f64::from((*t)?))))
        .unzip()
}
