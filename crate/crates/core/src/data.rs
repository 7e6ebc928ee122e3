//! Harmonized data model shared across the pipeline and its on-disk form.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dataset identifier, stored lowercase.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DatasetId(String);

impl DatasetId {
    pub const KNOWN: [&'static str; 5] = ["awa", "mhsc", "nlpos", "popq", "sbic"];

    pub fn new(name: &str) -> Result<Self> {
        let lower = name.trim().to_ascii_lowercase();
        let ok = !lower.is_empty()
            && lower
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
        if ok {
            Ok(DatasetId(lower))
        } else {
            Err(Error::InvalidDatasetId(name.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_known(&self) -> bool {
        Self::KNOWN.contains(&self.0.as_str())
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for DatasetId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DatasetId::new(s)
    }
}

impl TryFrom<String> for DatasetId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        DatasetId::new(&s)
    }
}

impl From<DatasetId> for String {
    fn from(d: DatasetId) -> String {
        d.0
    }
}

/// Ordinal label scale of one dataset.
///
/// Raw values `raw_min ..= raw_min + k - 1` map onto `1..=k`; descending raw
/// scales (lower raw value = more offensive) are reflected so that the
/// harmonized scale always ascends in offensiveness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelScale {
    pub k: u8,
    #[serde(default = "one")]
    pub raw_min: i64,
    #[serde(default)]
    pub descending: bool,
    #[serde(default)]
    pub excluded: BTreeSet<i64>,
}

fn one() -> i64 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Harmonized {
    Label(u8),
    Excluded,
}

impl LabelScale {
    pub fn new(k: u8, raw_min: i64, descending: bool, excluded: &[i64]) -> Result<Self> {
        let scale = LabelScale {
            k,
            raw_min,
            descending,
            excluded: excluded.iter().copied().collect(),
        };
        scale.validate()?;
        Ok(scale)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Schema(format!("label scale needs k >= 2, got {}", self.k)));
        }
        if let Some(x) = self.excluded.iter().find(|x| self.in_domain(**x)) {
            return Err(Error::Schema(format!(
                "excluded raw value {x} overlaps the scale's domain"
            )));
        }
        Ok(())
    }

    fn in_domain(&self, raw: i64) -> bool {
        raw >= self.raw_min && raw < self.raw_min + i64::from(self.k)
    }

    /// Raw values accepted as answers, in ascending raw order.
    pub fn raw_options(&self) -> Vec<i64> {
        let mut v: Vec<i64> = (self.raw_min..self.raw_min + i64::from(self.k)).collect();
        v.extend(self.excluded.iter().copied());
        v.sort_unstable();
        v
    }

    pub fn harmonize(&self, raw: i64) -> Result<Harmonized> {
        if self.excluded.contains(&raw) {
            return Ok(Harmonized::Excluded);
        }
        if !self.in_domain(raw) {
            return Err(Error::MalformedRecord(format!(
                "raw label {raw} outside scale {}..={}",
                self.raw_min,
                self.raw_min + i64::from(self.k) - 1
            )));
        }
        let shifted = (raw - self.raw_min + 1) as u8;
        Ok(Harmonized::Label(if self.descending {
            self.k + 1 - shifted
        } else {
            shifted
        }))
    }

    /// The scale each of the five source datasets uses in its annotation prompt.
    pub fn preset(dataset: &DatasetId) -> Option<LabelScale> {
        let scale = match dataset.as_str() {
            "awa" | "popq" => LabelScale::new(5, 1, false, &[]),
            // 1 = Yes, 2 = Unclear / Not sure, 3 = No
            "mhsc" | "nlpos" => LabelScale::new(3, 1, true, &[]),
            // 4 = "I don't understand the post"
            "sbic" => LabelScale::new(3, 1, true, &[4]),
            _ => return None,
        };
        scale.ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Man,
    Woman,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ethnicity {
    Asian,
    Black,
    Hispanic,
    White,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Man, Gender::Woman];

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Man => "man",
            Gender::Woman => "woman",
        }
    }

    /// Closed-set parse; anything else is absent.
    pub fn parse(s: &str) -> Option<Gender> {
        match s.trim().to_ascii_lowercase().as_str() {
            "man" => Some(Gender::Man),
            "woman" => Some(Gender::Woman),
            _ => None,
        }
    }
}

impl Ethnicity {
    pub const ALL: [Ethnicity; 4] = [
        Ethnicity::Asian,
        Ethnicity::Black,
        Ethnicity::Hispanic,
        Ethnicity::White,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ethnicity::Asian => "asian",
            Ethnicity::Black => "black",
            Ethnicity::Hispanic => "hispanic",
            Ethnicity::White => "white",
        }
    }

    pub fn parse(s: &str) -> Option<Ethnicity> {
        match s.trim().to_ascii_lowercase().as_str() {
            "asian" => Some(Ethnicity::Asian),
            "black" => Some(Ethnicity::Black),
            "hispanic" => Some(Ethnicity::Hispanic),
            "white" => Some(Ethnicity::White),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Demographics {
    pub gender: Option<Gender>,
    pub ethnicity: Option<Ethnicity>,
}

/// A demographic axis analysed for alignment gaps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Gender,
    Ethnicity,
}

impl Axis {
    pub const ALL: [Axis; 2] = [Axis::Gender, Axis::Ethnicity];

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Gender => "gender",
            Axis::Ethnicity => "ethnicity",
        }
    }

    pub fn groups(self) -> Vec<Group> {
        match self {
            Axis::Gender => Gender::ALL.iter().map(|g| Group::Gender(*g)).collect(),
            Axis::Ethnicity => Ethnicity::ALL.iter().map(|e| Group::Ethnicity(*e)).collect(),
        }
    }
}

/// One demographic category on one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Group {
    Gender(Gender),
    Ethnicity(Ethnicity),
}

impl Group {
    pub fn axis(self) -> Axis {
        match self {
            Group::Gender(_) => Axis::Gender,
            Group::Ethnicity(_) => Axis::Ethnicity,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Gender(g) => g.as_str(),
            Group::Ethnicity(e) => e.as_str(),
        }
    }

    pub fn matches(self, d: &Demographics) -> bool {
        match self {
            Group::Gender(g) => d.gender == Some(g),
            Group::Ethnicity(e) => d.ethnicity == Some(e),
        }
    }

    pub fn parse(s: &str) -> Option<Group> {
        Gender::parse(s)
            .map(Group::Gender)
            .or_else(|| Ethnicity::parse(s).map(Group::Ethnicity))
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl TryFrom<String> for Group {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Group::parse(&s).ok_or_else(|| Error::Config(format!("unknown demographic group {s:?}")))
    }
}

impl From<Group> for String {
    fn from(g: Group) -> String {
        g.as_str().to_string()
    }
}

impl Demographics {
    pub fn get(&self, axis: Axis) -> Option<Group> {
        match axis {
            Axis::Gender => self.gender.map(Group::Gender),
            Axis::Ethnicity => self.ethnicity.map(Group::Ethnicity),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRecord {
    pub dataset: DatasetId,
    pub doc_id: String,
    pub annotator_id: String,
    pub raw_label: i64,
    pub label: u8,
    pub demographics: Demographics,
}

impl AnnotationRecord {
    pub fn key(&self) -> (&DatasetId, &str, &str) {
        (&self.dataset, &self.doc_id, &self.annotator_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelLabelRecord {
    pub dataset: DatasetId,
    pub doc_id: String,
    pub model: String,
    pub label: u8,
    pub raw_response: Option<String>,
}

/// All human annotations, sorted by (dataset, doc, annotator), with the
/// harmonized scale cardinality of each dataset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationStore {
    records: Vec<AnnotationRecord>,
    cardinality: BTreeMap<DatasetId, u8>,
}

impl AnnotationStore {
    /// Builds a store, checking key uniqueness and label ranges.
    pub fn new(mut records: Vec<AnnotationRecord>, cardinality: BTreeMap<DatasetId, u8>) -> Result<Self> {
        records.sort_by(|a, b| a.key().cmp(&b.key()));
        for w in records.windows(2) {
            if w[0].key() == w[1].key() {
                return Err(Error::DuplicateRecord {
                    dataset: w[0].dataset.to_string(),
                    doc_id: w[0].doc_id.clone(),
                    annotator_id: w[0].annotator_id.clone(),
                });
            }
        }
        for r in &records {
            let k = *cardinality.get(&r.dataset).ok_or_else(|| {
                Error::Schema(format!("no label scale declared for dataset {}", r.dataset))
            })?;
            if r.label == 0 || r.label > k {
                return Err(Error::MalformedRecord(format!(
                    "label {} outside 1..={k} for ({}, {}, {})",
                    r.label, r.dataset, r.doc_id, r.annotator_id
                )));
            }
        }
        Ok(Self { records, cardinality })
    }

    /// Builds a store taking each dataset's cardinality from its preset, the
    /// given overrides, or the largest label present.
    pub fn with_inferred_scales(
        records: Vec<AnnotationRecord>,
        overrides: &BTreeMap<DatasetId, u8>,
    ) -> Result<Self> {
        let mut card: BTreeMap<DatasetId, u8> = BTreeMap::new();
        for r in &records {
            let e = card.entry(r.dataset.clone()).or_insert(2);
            *e = (*e).max(r.label);
        }
        for (d, k) in card.iter_mut() {
            if let Some(o) = overrides.get(d) {
                *k = *o;
            } else if let Some(p) = LabelScale::preset(d) {
                *k = p.k;
            }
        }
        Self::new(records, card)
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn cardinality(&self, dataset: &DatasetId) -> Option<u8> {
        self.cardinality.get(dataset).copied()
    }

    pub fn cardinalities(&self) -> &BTreeMap<DatasetId, u8> {
        &self.cardinality
    }

    pub fn datasets(&self) -> Vec<DatasetId> {
        self.cardinality.keys().cloned().collect()
    }

    /// Records of one dataset (contiguous because the store is sorted).
    pub fn dataset_records(&self, dataset: &DatasetId) -> &[AnnotationRecord] {
        let start = self.records.partition_point(|r| &r.dataset < dataset);
        let end = self.records.partition_point(|r| &r.dataset <= dataset);
        &self.records[start..end]
    }

    /// Records of one document.
    pub fn document(&self, dataset: &DatasetId, doc_id: &str) -> &[AnnotationRecord] {
        let recs = self.dataset_records(dataset);
        let start = recs.partition_point(|r| r.doc_id.as_str() < doc_id);
        let end = recs.partition_point(|r| r.doc_id.as_str() <= doc_id);
        &recs[start..end]
    }

    pub fn into_parts(self) -> (Vec<AnnotationRecord>, BTreeMap<DatasetId, u8>) {
        (self.records, self.cardinality)
    }
}

/// Model labels keyed by (dataset, doc, model).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelLabels {
    records: Vec<ModelLabelRecord>,
}

impl ModelLabels {
    pub fn new(mut records: Vec<ModelLabelRecord>) -> Result<Self> {
        records.sort_by(|a, b| {
            (&a.dataset, &a.model, &a.doc_id).cmp(&(&b.dataset, &b.model, &b.doc_id))
        });
        for w in records.windows(2) {
            if (&w[0].dataset, &w[0].model, &w[0].doc_id) == (&w[1].dataset, &w[1].model, &w[1].doc_id) {
                return Err(Error::DuplicateRecord {
                    dataset: w[0].dataset.to_string(),
                    doc_id: w[0].doc_id.clone(),
                    annotator_id: format!("model:{}", w[0].model),
                });
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[ModelLabelRecord] {
        &self.records
    }

    pub fn models(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.model.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    /// doc id -> label for one dataset and model.
    pub fn lookup(&self, dataset: &DatasetId, model: &str) -> BTreeMap<String, u8> {
        self.records
            .iter()
            .filter(|r| &r.dataset == dataset && r.model == model)
            .map(|r| (r.doc_id.clone(), r.label))
            .collect()
    }

    /// Checks every label against the store's scales.
    pub fn check_against(&self, store: &AnnotationStore) -> Result<()> {
        for r in &self.records {
            if let Some(k) = store.cardinality(&r.dataset) {
                if r.label == 0 || r.label > k {
                    return Err(Error::ScaleMismatch(format!(
                        "model {} label {} on ({}, {}) outside 1..={k}",
                        r.model, r.label, r.dataset, r.doc_id
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreRow {
    dataset: String,
    doc_id: String,
    annotator_id: String,
    raw_label: i64,
    label: u8,
    gender: String,
    ethnicity: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelRow {
    dataset: String,
    doc_id: String,
    model: String,
    label: u8,
}

pub fn write_store<W: std::io::Write>(store: &AnnotationStore, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in store.records() {
        wtr.serialize(StoreRow {
            dataset: r.dataset.to_string(),
            doc_id: r.doc_id.clone(),
            annotator_id: r.annotator_id.clone(),
            raw_label: r.raw_label,
            label: r.label,
            gender: r.demographics.gender.map(|g| g.as_str()).unwrap_or("").to_string(),
            ethnicity: r.demographics.ethnicity.map(|e| e.as_str()).unwrap_or("").to_string(),
        })?;
    }
    if store.is_empty() {
        wtr.write_record(["dataset", "doc_id", "annotator_id", "raw_label", "label", "gender", "ethnicity"])?;
    }
    wtr.flush().map_err(|e| Error::io("<store>", e))?;
    Ok(())
}

pub fn read_store_records<R: std::io::Read>(r: R) -> Result<Vec<AnnotationRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: StoreRow = row?;
        out.push(AnnotationRecord {
            dataset: DatasetId::new(&row.dataset)?,
            doc_id: row.doc_id,
            annotator_id: row.annotator_id,
            raw_label: row.raw_label,
            label: row.label,
            demographics: Demographics {
                gender: Gender::parse(&row.gender),
                ethnicity: Ethnicity::parse(&row.ethnicity),
            },
        });
    }
    Ok(out)
}

pub fn write_model_labels<W: std::io::Write>(labels: &ModelLabels, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in labels.records() {
        wtr.serialize(ModelRow {
            dataset: r.dataset.to_string(),
            doc_id: r.doc_id.clone(),
            model: r.model.clone(),
            label: r.label,
        })?;
    }
    if labels.records().is_empty() {
        wtr.write_record(["dataset", "doc_id", "model", "label"])?;
    }
    wtr.flush().map_err(|e| Error::io("<model labels>", e))?;
    Ok(())
}

pub fn read_model_labels<R: std::io::Read>(r: R) -> Result<ModelLabels> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: ModelRow = row?;
        out.push(ModelLabelRecord {
            dataset: DatasetId::new(&row.dataset)?,
            doc_id: row.doc_id,
            model: row.model,
            label: row.label,
            raw_response: None,
        });
    }
    ModelLabels::new(out)
}

pub fn load_store(path: &Path, overrides: &BTreeMap<DatasetId, u8>) -> Result<AnnotationStore> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    AnnotationStore::with_inferred_scales(read_store_records(f)?, overrides)
}

pub fn save_store(store: &AnnotationStore, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_store(store, std::io::BufWriter::new(f))
}

pub fn load_model_labels(path: &Path) -> Result<ModelLabels> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_model_labels(f)
}

pub fn save_model_labels(labels: &ModelLabels, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_model_labels(labels, std::io::BufWriter::new(f))
}
