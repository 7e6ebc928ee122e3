//! Config-driven adapters from each source dataset's native delimited file
//! to harmonized annotation records.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{
    AnnotationRecord, AnnotationStore, DatasetId, Demographics, Ethnicity, Gender, Harmonized,
    LabelScale,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub doc_id: String,
    pub annotator_id: String,
    pub label: String,
    #[serde(default)]
    pub gender: Option<String>,
    #[serde(default)]
    pub ethnicity: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum RowFilter {
    Equals { column: String, value: String },
    NotEquals { column: String, value: String },
    In { column: String, values: Vec<String> },
    NotIn { column: String, values: Vec<String> },
    NonEmpty { column: String },
}

impl RowFilter {
    fn column(&self) -> &str {
        match self {
            RowFilter::Equals { column, .. }
            | RowFilter::NotEquals { column, .. }
            | RowFilter::In { column, .. }
            | RowFilter::NotIn { column, .. }
            | RowFilter::NonEmpty { column } => column,
        }
    }

    fn keeps(&self, v: &str) -> bool {
        let v = v.trim();
        match self {
            RowFilter::Equals { value, .. } => v == value,
            RowFilter::NotEquals { value, .. } => v != value,
            RowFilter::In { values, .. } => values.iter().any(|x| x == v),
            RowFilter::NotIn { values, .. } => !values.iter().any(|x| x == v),
            RowFilter::NonEmpty { .. } => !v.is_empty(),
        }
    }
}

/// Per-dataset harmonization contract, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub dataset: DatasetId,
    #[serde(default = "comma")]
    pub delimiter: char,
    pub columns: ColumnMap,
    pub scale: LabelScale,
    /// Source label text -> raw value on `scale`. Unlisted values are parsed
    /// as integers.
    #[serde(default)]
    pub label_values: BTreeMap<String, i64>,
    /// Source text -> canonical category; an empty target maps to absent.
    #[serde(default)]
    pub gender_values: BTreeMap<String, String>,
    #[serde(default)]
    pub ethnicity_values: BTreeMap<String, String>,
    /// One boolean column per category, for sources that store ethnicity as
    /// indicators. Exactly one true indicator yields that category.
    #[serde(default)]
    pub ethnicity_indicators: BTreeMap<String, String>,
    #[serde(default)]
    pub filters: Vec<RowFilter>,
}

fn comma() -> char {
    ','
}

impl DatasetSchema {
    pub fn from_toml(text: &str) -> Result<Self> {
        let schema: DatasetSchema = toml::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.scale.validate()?;
        if !self.delimiter.is_ascii() {
            return Err(Error::Schema("delimiter must be a single ASCII character".into()));
        }
        for target in self.gender_values.values() {
            if !target.is_empty() && Gender::parse(target).is_none() {
                return Err(Error::Schema(format!("unknown gender category {target:?}")));
            }
        }
        for target in self.ethnicity_values.values().chain(self.ethnicity_indicators.keys()) {
            if !target.is_empty() && Ethnicity::parse(target).is_none() {
                return Err(Error::Schema(format!("unknown ethnicity category {target:?}")));
            }
        }
        if self.columns.ethnicity.is_some() && !self.ethnicity_indicators.is_empty() {
            return Err(Error::Schema(
                "use either an ethnicity column or ethnicity indicators, not both".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub dataset: String,
    pub rows_read: usize,
    pub rows_emitted: usize,
    pub excluded: BTreeMap<String, usize>,
    pub documents: usize,
    pub annotators: usize,
    /// Percent of emitted annotations per category, among those with the
    /// attribute present.
    pub gender_pct: BTreeMap<String, f64>,
    pub ethnicity_pct: BTreeMap<String, f64>,
    /// Source demographic values with no mapping, mapped to absent.
    pub unmapped_demographics: BTreeMap<String, usize>,
}

impl IngestReport {
    pub fn excluded_total(&self) -> usize {
        self.excluded.values().sum()
    }
}

fn exclude(report: &mut IngestReport, reason: &str) {
    *report.excluded.entry(reason.to_string()).or_default() += 1;
}

fn lookup_ci<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Option<&'a String> {
    map.get(key)
        .or_else(|| map.iter().find(|(k, _)| k.eq_ignore_ascii_case(key)).map(|(_, v)| v))
}

fn map_gender(schema: &DatasetSchema, raw: &str, report: &mut IngestReport) -> Option<Gender> {
    let raw = raw.trim();
    if raw.is_empty() {
        return None;
    }
    if let Some(t) = lookup_ci(&schema.gender_values, raw) {
        return Gender::parse(t);
    }
    Gender::parse(raw).or_else(|| {
        *report.unmapped_demographics.entry(format!("gender={raw}")).or_default() += 1;
        None
    })
}

fn map_ethnicity(schema: &DatasetSchema, raw: &str, report: &mut IngestReport) -> Option<Ethnicity> {
    let raw = raw.trim();
    if raw.is_empty() {
        return None;
    }
    if let Some(t) = lookup_ci(&schema.ethnicity_values, raw) {
        return Ethnicity::parse(t);
    }
    Ethnicity::parse(raw).or_else(|| {
        *report.unmapped_demographics.entry(format!("ethnicity={raw}")).or_default() += 1;
        None
    })
}

fn truthy(v: &str) -> bool {
    matches!(v.trim().to_ascii_lowercase().as_str(), "1" | "1.0" | "true" | "t" | "yes" | "y")
}

fn parse_raw_label(schema: &DatasetSchema, v: &str) -> Option<i64> {
    let v = v.trim();
    if let Some(x) = schema.label_values.get(v) {
        return Some(*x);
    }
    if let Ok(x) = v.parse::<i64>() {
        return Some(x);
    }
    let f = v.parse::<f64>().ok()?;
    (f.fract() == 0.0 && f.abs() < 1e12).then_some(f as i64)
}

/// Reads one source file into a harmonized fragment.
pub fn ingest_reader<R: std::io::Read>(source: R, schema: &DatasetSchema) -> Result<(AnnotationStore, IngestReport)> {
    schema.validate()?;
    let mut report = IngestReport {
        dataset: schema.dataset.to_string(),
        ..Default::default()
    };
    let mut card = BTreeMap::new();
    card.insert(schema.dataset.clone(), schema.scale.k);

    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .flexible(false)
        .from_reader(source);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok((AnnotationStore::new(vec![], card)?, report));
    }
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("source lacks mapped column {name:?}")))
    };
    let doc_col = col(&schema.columns.doc_id)?;
    let ann_col = col(&schema.columns.annotator_id)?;
    let label_col = col(&schema.columns.label)?;
    let gender_col = schema.columns.gender.as_deref().map(col).transpose()?;
    let eth_col = schema.columns.ethnicity.as_deref().map(col).transpose()?;
    let indicator_cols: Vec<(Ethnicity, usize)> = schema
        .ethnicity_indicators
        .iter()
        .map(|(cat, c)| Ok((Ethnicity::parse(cat).expect("validated"), col(c)?)))
        .collect::<Result<_>>()?;
    let filter_cols: Vec<(usize, &RowFilter)> = schema
        .filters
        .iter()
        .map(|f| Ok((col(f.column())?, f)))
        .collect::<Result<_>>()?;

    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    let mut records = Vec::new();
    for row in rdr.records() {
        report.rows_read += 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                log::warn!("{}: unparseable row {}: {e}", schema.dataset, report.rows_read);
                exclude(&mut report, "unparseable_row");
                continue;
            }
        };
        if !filter_cols.iter().all(|(c, f)| f.keeps(&row[*c])) {
            exclude(&mut report, "filtered");
            continue;
        }
        let doc_id = row[doc_col].trim();
        let annotator_id = row[ann_col].trim();
        if doc_id.is_empty() || annotator_id.is_empty() {
            exclude(&mut report, "missing_id");
            continue;
        }
        let Some(raw) = parse_raw_label(schema, &row[label_col]) else {
            exclude(&mut report, "malformed_label");
            continue;
        };
        let label = match schema.scale.harmonize(raw) {
            Ok(Harmonized::Label(l)) => l,
            Ok(Harmonized::Excluded) => {
                exclude(&mut report, "excluded_label");
                continue;
            }
            Err(_) => {
                exclude(&mut report, "malformed_label");
                continue;
            }
        };
        if !seen.insert((doc_id.to_string(), annotator_id.to_string())) {
            exclude(&mut report, "duplicate_key");
            continue;
        }
        let gender = gender_col.and_then(|c| map_gender(schema, &row[c], &mut report));
        let ethnicity = match eth_col {
            Some(c) => map_ethnicity(schema, &row[c], &mut report),
            None if !indicator_cols.is_empty() => {
                let on: Vec<Ethnicity> = indicator_cols
                    .iter()
                    .filter(|(_, c)| truthy(&row[*c]))
                    .map(|(e, _)| *e)
                    .collect();
                (on.len() == 1).then(|| on[0])
            }
            None => None,
        };
        records.push(AnnotationRecord {
            dataset: schema.dataset.clone(),
            doc_id: doc_id.to_string(),
            annotator_id: annotator_id.to_string(),
            raw_label: raw,
            label,
            demographics: Demographics { gender, ethnicity },
        });
    }

    report.rows_emitted = records.len();
    report.documents = records.iter().map(|r| &r.doc_id).collect::<BTreeSet<_>>().len();
    report.annotators = records.iter().map(|r| &r.annotator_id).collect::<BTreeSet<_>>().len();
    report.gender_pct = percentages(records.iter().filter_map(|r| r.demographics.gender.map(|g| g.as_str())));
    report.ethnicity_pct =
        percentages(records.iter().filter_map(|r| r.demographics.ethnicity.map(|e| e.as_str())));
    debug_assert_eq!(report.rows_read, report.rows_emitted + report.excluded_total());
    Ok((AnnotationStore::new(records, card)?, report))
}

fn percentages<'a>(values: impl Iterator<Item = &'a str>) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut total = 0usize;
    for v in values {
        *counts.entry(v.to_string()).or_default() += 1;
        total += 1;
    }
    counts
        .into_iter()
        .map(|(k, c)| (k, 100.0 * c as f64 / total as f64))
        .collect()
}

pub fn ingest(source: &Path, schema: &DatasetSchema) -> Result<(AnnotationStore, IngestReport)> {
    let f = std::fs::File::open(source).map_err(|e| Error::io(source, e))?;
    ingest_reader(std::io::BufReader::new(f), schema)
}

/// Unions disjoint fragments into one store.
pub fn merge(fragments: Vec<AnnotationStore>) -> Result<AnnotationStore> {
    let mut records = Vec::new();
    let mut card: BTreeMap<DatasetId, u8> = BTreeMap::new();
    for f in fragments {
        let (recs, c) = f.into_parts();
        for (d, k) in c {
            match card.get(&d) {
                Some(prev) if *prev != k => {
                    return Err(Error::Schema(format!(
                        "dataset {d} declared with {prev} and {k} categories"
                    )))
                }
                _ => {
                    card.insert(d, k);
                }
            }
        }
        records.extend(recs);
    }
    AnnotationStore::new(records, card)
}
