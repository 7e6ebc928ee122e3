//! Alignment indicator, the three confounder scores, and the per-dataset
//! standardized design matrix for the alignment regressions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::{AnnotationStore, DatasetId, Ethnicity, Gender, ModelLabels};
use crate::error::{Error, Result};

/// A harmonized label together with the cardinality of its scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaledLabel {
    pub value: u8,
    pub k: u8,
}

/// 1 iff the two labels coincide.
pub fn alignment(human: ScaledLabel, model: ScaledLabel) -> Result<u8> {
    if human.k != model.k {
        return Err(Error::ScaleMismatch(format!(
            "human scale has {} categories, model scale {}",
            human.k, model.k
        )));
    }
    for l in [human, model] {
        if l.value == 0 || l.value > l.k {
            return Err(Error::ScaleMismatch(format!("label {} outside 1..={}", l.value, l.k)));
        }
    }
    Ok(u8::from(human.value == model.value))
}

/// Negative KL divergence (nats) of the empirical label distribution from
/// uniform over `k` categories: H(p) − ln k, in [−ln k, 0].
pub fn difficulty(labels: &[u8], k: u8) -> f64 {
    let n = labels.len() as f64;
    let mut counts = vec![0usize; usize::from(k)];
    for &l in labels {
        counts[usize::from(l - 1)] += 1;
    }
    let entropy: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    entropy - f64::from(k).ln()
}

/// Mid-rank of `own` among the document's labels (which include `own`),
/// mapped to [0, 1]; a lone annotator sits at 0.5.
pub fn sensitivity(own: u8, labels: &[u8]) -> f64 {
    let m = labels.len();
    if m <= 1 {
        return 0.5;
    }
    let below = labels.iter().filter(|&&l| l < own).count() as f64;
    let tied = labels.iter().filter(|&&l| l == own).count() as f64;
    let rank = below + (tied + 1.0) / 2.0;
    (rank - 1.0) / (m as f64 - 1.0)
}

/// −|own − mean(group)|, where `group` holds the labels on the document from
/// annotators sharing the attribute, self included.
pub fn agreement(own: u8, group: &[u8]) -> f64 {
    if group.len() <= 1 {
        return 0.0;
    }
    let mean = group.iter().map(|&l| f64::from(l)).sum::<f64>() / group.len() as f64;
    -(f64::from(own) - mean).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfounderRow {
    pub dataset: DatasetId,
    pub doc_id: String,
    pub annotator_id: String,
    pub model: String,
    pub alignment: u8,
    pub gender: Gender,
    pub ethnicity: Ethnicity,
    pub difficulty: f64,
    pub sensitivity: f64,
    pub agreement_gender: f64,
    pub agreement_ethnicity: f64,
    pub label: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RowReport {
    pub rows: usize,
    pub missing_model_label: usize,
    pub missing_gender: usize,
    pub missing_ethnicity: usize,
}

/// One row per (annotation, `model`) pair with complete demographics.
pub fn confounder_rows(
    store: &AnnotationStore,
    labels: &ModelLabels,
    model: &str,
) -> Result<(Vec<ConfounderRow>, RowReport)> {
    let mut rows = Vec::new();
    let mut report = RowReport::default();
    for dataset in store.datasets() {
        let k = store.cardinality(&dataset).expect("declared");
        let lookup = labels.lookup(&dataset, model);
        for doc in store.dataset_records(&dataset).chunk_by(|a, b| a.doc_id == b.doc_id) {
            let doc_labels: Vec<u8> = doc.iter().map(|r| r.label).collect();
            let Some(&model_label) = lookup.get(&doc[0].doc_id) else {
                report.missing_model_label += doc.len();
                continue;
            };
            let diff = difficulty(&doc_labels, k);
            for r in doc {
                let (Some(gender), Some(ethnicity)) = (r.demographics.gender, r.demographics.ethnicity) else {
                    if r.demographics.gender.is_none() {
                        report.missing_gender += 1;
                    }
                    if r.demographics.ethnicity.is_none() {
                        report.missing_ethnicity += 1;
                    }
                    continue;
                };
                let same_gender: Vec<u8> = doc
                    .iter()
                    .filter(|o| o.demographics.gender == Some(gender))
                    .map(|o| o.label)
                    .collect();
                let same_eth: Vec<u8> = doc
                    .iter()
                    .filter(|o| o.demographics.ethnicity == Some(ethnicity))
                    .map(|o| o.label)
                    .collect();
                rows.push(ConfounderRow {
                    dataset: dataset.clone(),
                    doc_id: r.doc_id.clone(),
                    annotator_id: r.annotator_id.clone(),
                    model: model.to_string(),
                    alignment: alignment(
                        ScaledLabel { value: r.label, k },
                        ScaledLabel { value: model_label, k },
                    )?,
                    gender,
                    ethnicity,
                    difficulty: diff,
                    sensitivity: sensitivity(r.label, &doc_labels),
                    agreement_gender: agreement(r.label, &same_gender),
                    agreement_ethnicity: agreement(r.label, &same_eth),
                    label: r.label,
                });
            }
        }
    }
    report.rows = rows.len();
    Ok((rows, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    /// Per-dataset intercept shift; left as raw 0/1.
    DatasetIndicator,
    /// Centered within dataset.
    Binary,
    /// Centered and divided by two standard deviations within dataset.
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub dataset: Vec<DatasetId>,
    pub doc_id: Vec<String>,
    pub annotator_id: Vec<String>,
    pub model: Vec<String>,
    pub response: Vec<f64>,
    pub columns: Vec<Column>,
}

pub const DEMOGRAPHIC_PREFIXES: [&str; 2] = ["gender=", "ethnicity="];
pub const CONFOUNDER_COLUMNS: [&str; 5] = [
    "difficulty",
    "sensitivity",
    "agreement_ethnicity",
    "agreement_gender",
    "label",
];

const DATASET_ORDER: [&str; 4] = ["popq", "nlpos", "sbic", "mhsc"];
const REFERENCE_DATASET: &str = "awa";

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Demographic indicator columns, in design order.
    pub fn demographic_columns(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| DEMOGRAPHIC_PREFIXES.iter().any(|p| c.name.starts_with(p)))
            .map(|c| c.name.clone())
            .collect()
    }

    pub fn dataset_columns(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| c.kind == ColumnKind::DatasetIndicator)
            .map(|c| c.name.clone())
            .collect()
    }

    /// Builds the raw (unstandardized) design: dataset indicators against
    /// awa (or the first dataset present), gender against man, ethnicity
    /// against white, then the confounders and the annotator's label.
    /// Indicators for categories absent from every row are omitted.
    pub fn from_rows(rows: &[ConfounderRow]) -> Self {
        let present: BTreeSet<&DatasetId> = rows.iter().map(|r| &r.dataset).collect();
        let mut ordered: Vec<&DatasetId> = DATASET_ORDER
            .iter()
            .filter_map(|n| present.iter().copied().find(|d| d.as_str() == *n))
            .collect();
        ordered.extend(
            present
                .iter()
                .copied()
                .filter(|d| !DATASET_ORDER.contains(&d.as_str()) && d.as_str() != REFERENCE_DATASET),
        );
        let has_reference = present.iter().any(|d| d.as_str() == REFERENCE_DATASET);
        if !has_reference && !ordered.is_empty() {
            // first dataset in canonical order becomes the reference
            ordered.remove(0);
        }

        let mut columns = Vec::new();
        for d in ordered {
            columns.push(Column {
                name: format!("dataset={d}"),
                kind: ColumnKind::DatasetIndicator,
                values: rows.iter().map(|r| f64::from(u8::from(&r.dataset == d))).collect(),
            });
        }
        if rows.iter().any(|r| r.gender == Gender::Woman) {
            columns.push(Column {
                name: "gender=woman".into(),
                kind: ColumnKind::Binary,
                values: rows.iter().map(|r| f64::from(u8::from(r.gender == Gender::Woman))).collect(),
            });
        }
        for e in [Ethnicity::Asian, Ethnicity::Black, Ethnicity::Hispanic] {
            if rows.iter().any(|r| r.ethnicity == e) {
                columns.push(Column {
                    name: format!("ethnicity={}", e.as_str()),
                    kind: ColumnKind::Binary,
                    values: rows.iter().map(|r| f64::from(u8::from(r.ethnicity == e))).collect(),
                });
            }
        }
        let continuous: [(&str, fn(&ConfounderRow) -> f64); 5] = [
            ("difficulty", |r| r.difficulty),
            ("sensitivity", |r| r.sensitivity),
            ("agreement_ethnicity", |r| r.agreement_ethnicity),
            ("agreement_gender", |r| r.agreement_gender),
            ("label", |r| f64::from(r.label)),
        ];
        for (name, f) in continuous {
            columns.push(Column {
                name: name.into(),
                kind: ColumnKind::Continuous,
                values: rows.iter().map(f).collect(),
            });
        }
        DesignMatrix {
            dataset: rows.iter().map(|r| r.dataset.clone()).collect(),
            doc_id: rows.iter().map(|r| r.doc_id.clone()).collect(),
            annotator_id: rows.iter().map(|r| r.annotator_id.clone()).collect(),
            model: rows.iter().map(|r| r.model.clone()).collect(),
            response: rows.iter().map(|r| f64::from(r.alignment)).collect(),
            columns,
        }
    }

    /// Writes the design as CSV: key columns, `alignment`, then regressors.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["dataset", "doc_id", "annotator_id", "model", "alignment"];
        header.extend(self.columns.iter().map(|c| c.name.as_str()));
        wtr.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec = vec![
                self.dataset[i].to_string(),
                self.doc_id[i].clone(),
                self.annotator_id[i].clone(),
                self.model[i].clone(),
                format!("{}", self.response[i]),
            ];
            rec.extend(self.columns.iter().map(|c| format!("{}", c.values[i])));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("<design>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub dataset: DatasetId,
    pub column: String,
    pub mean: f64,
    /// Sample SD (n − 1); absent for binary columns.
    pub sd: Option<f64>,
}

/// Within each dataset: binary columns are centered, continuous columns are
/// centered and divided by twice their sample standard deviation. Dataset
/// indicators pass through unchanged.
pub fn standardize(design: &DesignMatrix) -> Result<(DesignMatrix, Vec<ColumnScaling>)> {
    let mut groups: BTreeMap<&DatasetId, Vec<usize>> = BTreeMap::new();
    for (i, d) in design.dataset.iter().enumerate() {
        groups.entry(d).or_default().push(i);
    }
    let mut out = design.clone();
    let mut report = Vec::new();
    for (dataset, rows) in &groups {
        for (col, src) in out.columns.iter_mut().zip(&design.columns) {
            if col.kind == ColumnKind::DatasetIndicator {
                continue;
            }
            let n = rows.len() as f64;
            let mean = rows.iter().map(|&i| src.values[i]).sum::<f64>() / n;
            let sd = match col.kind {
                ColumnKind::Binary => None,
                _ => {
                    let ss: f64 = rows.iter().map(|&i| (src.values[i] - mean).powi(2)).sum();
                    let sd = (ss / (n - 1.0)).sqrt();
                    if !(sd > 1e-12 * mean.abs().max(1.0)) {
                        return Err(Error::DegenerateColumn {
                            dataset: dataset.to_string(),
                            column: col.name.clone(),
                        });
                    }
                    Some(sd)
                }
            };
            for &i in rows {
                let c = src.values[i] - mean;
                col.values[i] = match sd {
                    Some(sd) => c / (2.0 * sd),
                    None => c,
                };
            }
            report.push(ColumnScaling {
                dataset: (*dataset).clone(),
                column: col.name.clone(),
                mean,
                sd,
            });
        }
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sl(value: u8, k: u8) -> ScaledLabel {
        ScaledLabel { value, k }
    }

    #[test]
    fn alignment_examples() {
        assert_eq!(alignment(sl(3, 5), sl(3, 5)).unwrap(), 1);
        assert_eq!(alignment(sl(3, 5), sl(2, 5)).unwrap(), 0);
        assert!(matches!(alignment(sl(3, 5), sl(3, 3)), Err(Error::ScaleMismatch(_))));
        assert!(alignment(sl(6, 5), sl(3, 5)).is_err());
    }

    #[test]
    fn difficulty_examples() {
        assert_abs_diff_eq!(difficulty(&[4, 4, 4], 5), -(5f64.ln()), epsilon = 1e-12);
        assert_abs_diff_eq!(difficulty(&[4, 4, 4], 5), -1.6094, epsilon = 1e-4);
        assert_abs_diff_eq!(difficulty(&[1, 2, 3], 3), 0.0, epsilon = 1e-12);
        // H = -(2/3 ln 2/3 + 1/3 ln 1/3)
        let h = -(2.0 / 3.0 * (2.0f64 / 3.0).ln() + 1.0 / 3.0 * (1.0f64 / 3.0).ln());
        assert_abs_diff_eq!(h, 0.6365, epsilon = 1e-4);
        assert_abs_diff_eq!(difficulty(&[1, 1, 2], 3), h - 3f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(difficulty(&[1, 1, 2], 3), -0.4621, epsilon = 1e-4);
    }

    #[test]
    fn sensitivity_examples() {
        let doc = [1, 3, 5];
        assert_eq!(sensitivity(5, &doc), 1.0);
        assert_eq!(sensitivity(1, &doc), 0.0);
        assert_eq!(sensitivity(2, &[2, 2]), 0.5);
        assert_eq!(sensitivity(4, &[4]), 0.5);
    }

    #[test]
    fn agreement_examples() {
        assert_eq!(agreement(4, &[4, 2]), -1.0);
        assert_eq!(agreement(4, &[4]), 0.0);
        assert_eq!(agreement(3, &[3, 3, 3]), 0.0);
    }

    #[test]
    fn standardize_single_column() {
        let d = DatasetId::new("x").unwrap();
        let design = DesignMatrix {
            dataset: vec![d.clone(); 3],
            doc_id: vec!["a".into(), "b".into(), "c".into()],
            annotator_id: vec!["1".into(); 3],
            model: vec!["m".into(); 3],
            response: vec![0.0, 1.0, 1.0],
            columns: vec![
                Column { name: "label".into(), kind: ColumnKind::Continuous, values: vec![1.0, 2.0, 3.0] },
                Column { name: "gender=woman".into(), kind: ColumnKind::Binary, values: vec![1.0, 1.0, 1.0] },
            ],
        };
        let (s, rep) = standardize(&design).unwrap();
        assert_eq!(s.columns[0].values, vec![-0.5, 0.0, 0.5]);
        assert_eq!(s.columns[1].values, vec![0.0, 0.0, 0.0]);
        assert_eq!(rep.len(), 2);

        let mut flat = design.clone();
        flat.columns[0].values = vec![2.0; 3];
        match standardize(&flat) {
            Err(Error::DegenerateColumn { dataset, column }) => {
                assert_eq!((dataset.as_str(), column.as_str()), ("x", "label"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn per_dataset_differs_from_global() {
        let a = DatasetId::new("a").unwrap();
        let b = DatasetId::new("b").unwrap();
        let values = vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0];
        let design = DesignMatrix {
            dataset: vec![a.clone(), a.clone(), a, b.clone(), b.clone(), b],
            doc_id: (0..6).map(|i| i.to_string()).collect(),
            annotator_id: vec!["x".into(); 6],
            model: vec!["m".into(); 6],
            response: vec![0.0; 6],
            columns: vec![Column { name: "difficulty".into(), kind: ColumnKind::Continuous, values: values.clone() }],
        };
        let (s, _) = standardize(&design).unwrap();
        assert_eq!(s.columns[0].values, vec![-0.5, 0.0, 0.5, -0.5, 0.0, 0.5]);
        let mean = values.iter().sum::<f64>() / 6.0;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0).sqrt();
        let global: Vec<f64> = values.iter().map(|v| (v - mean) / (2.0 * sd)).collect();
        assert!(s.columns[0].values.iter().zip(&global).any(|(x, y)| (x - y).abs() > 0.1));
    }

    proptest! {
        #[test]
        fn difficulty_is_bounded_and_symmetric(mut v in proptest::collection::vec(1u8..=4, 1..20)) {
            let d = difficulty(&v, 4);
            prop_assert!(d <= 1e-12 && d >= -(4f64.ln()) - 1e-12);
            v.reverse();
            prop_assert!((difficulty(&v, 4) - d).abs() < 1e-12);
        }

        #[test]
        fn sensitivity_centres_on_half(v in proptest::collection::vec(1u8..=5, 2..15)) {
            let total: f64 = v.iter().map(|&l| sensitivity(l, &v) - 0.5).sum();
            prop_assert!(total.abs() < 1e-9);
        }

        #[test]
        fn agreement_nonpositive(own in 1u8..=5, mut others in proptest::collection::vec(1u8..=5, 0..10)) {
            others.push(own);
            let a = agreement(own, &others);
            prop_assert!(a <= 0.0);
            let mean = others.iter().map(|&l| f64::from(l)).sum::<f64>() / others.len() as f64;
            prop_assert_eq!(a == 0.0, (mean - f64::from(own)).abs() < 1e-12 || others.len() == 1);
        }

        #[test]
        fn standardized_moments(values in proptest::collection::vec(-50.0f64..50.0, 3..40)) {
            let d = DatasetId::new("p").unwrap();
            let n = values.len();
            let design = DesignMatrix {
                dataset: vec![d; n],
                doc_id: vec![String::new(); n],
                annotator_id: vec![String::new(); n],
                model: vec![String::new(); n],
                response: vec![0.0; n],
                columns: vec![Column { name: "label".into(), kind: ColumnKind::Continuous, values }],
            };
            if let Ok((s, _)) = standardize(&design) {
                let v = &s.columns[0].values;
                let mean = v.iter().sum::<f64>() / n as f64;
                let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
                prop_assert!(mean.abs() < 1e-10);
                prop_assert!((sd - 0.5).abs() < 1e-10);
            }
        }
    }
}
