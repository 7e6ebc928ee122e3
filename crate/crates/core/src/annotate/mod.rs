//! Model-annotation harness: prompt rendering, label extraction, retries,
//! and a response cache.

mod cache;
mod provider;
mod template;

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cache::{cache_key, ResponseCache};
pub use provider::{
    chat_request_body, parse_chat_response, HttpProvider, MockProvider, Provider, ProviderConfig,
};
pub use template::{extract_label, render_prompt, PromptTemplate, DIRECTIVE_MENTIONING, DIRECTIVE_SELECTING};

use crate::data::{DatasetId, Harmonized, LabelScale, ModelLabelRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub dataset: DatasetId,
    pub doc_id: String,
    pub text: String,
}

/// Reads `dataset,doc_id,text` CSV.
pub fn load_documents(path: &Path) -> Result<Vec<Document>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(f);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotateOptions {
    /// Extra queries after an unparseable reply or transport failure.
    pub max_retries: usize,
    pub concurrency: usize,
}

impl Default for AnnotateOptions {
    fn default() -> Self {
        Self { max_retries: 3, concurrency: 4 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarnessReport {
    pub documents: usize,
    pub labeled: usize,
    pub cache_hits: usize,
    pub provider_calls: usize,
    /// No valid option found after all retries.
    pub unparseable: Vec<String>,
    /// Answered with an option the scale excludes.
    pub excluded_answers: Vec<String>,
}

enum Outcome {
    Labeled { label: u8, response: String, calls: usize, hit: bool },
    Unparseable { calls: usize, hit: bool },
    ExcludedAnswer { calls: usize, hit: bool },
}

fn interpret(response: &str, template: &PromptTemplate, scale: &LabelScale) -> Result<Option<u8>> {
    let raw = extract_label(response, &template.options)?;
    Ok(match scale.harmonize(raw)? {
        Harmonized::Label(l) => Some(l),
        Harmonized::Excluded => None,
    })
}

fn annotate_one(
    doc: &Document,
    template: &PromptTemplate,
    scale: &LabelScale,
    provider: &dyn Provider,
    cache: &ResponseCache,
    opts: AnnotateOptions,
) -> Result<Outcome> {
    let model = provider.model_id();
    let prompt = render_prompt(&doc.text, template)?;
    let finish = |response: String, calls: usize, hit: bool| -> Result<Outcome> {
        Ok(match interpret(&response, template, scale) {
            Ok(Some(label)) => Outcome::Labeled { label, response, calls, hit },
            Ok(None) => Outcome::ExcludedAnswer { calls, hit },
            Err(Error::UnparseableResponse(_)) => Outcome::Unparseable { calls, hit },
            Err(e) => return Err(e),
        })
    };
    if let Some(cached) = cache.get(model, &prompt) {
        return finish(cached, 0, true);
    }
    let mut calls = 0;
    let mut last_reply: Option<String> = None;
    let mut last_error = String::new();
    for _ in 0..=opts.max_retries {
        calls += 1;
        match provider.complete(&prompt) {
            Ok(reply) => {
                if extract_label(&reply, &template.options).is_ok() {
                    cache.put(model, &prompt, &reply)?;
                    return finish(reply, calls, false);
                }
                last_reply = Some(reply);
            }
            Err(e) => last_error = e,
        }
    }
    match last_reply {
        Some(reply) => {
            cache.put(model, &prompt, &reply)?;
            finish(reply, calls, false)
        }
        None => Err(Error::Provider {
            doc_id: doc.doc_id.clone(),
            message: last_error,
        }),
    }
}

/// Labels every document of the template's dataset, one record per
/// document, ordered by document id.
pub fn annotate_corpus(
    documents: &[Document],
    template: &PromptTemplate,
    scale: &LabelScale,
    provider: &dyn Provider,
    cache: &ResponseCache,
    opts: AnnotateOptions,
) -> Result<(Vec<ModelLabelRecord>, HarnessReport)> {
    template.validate()?;
    let mut docs: Vec<&Document> = documents.iter().filter(|d| d.dataset == template.dataset).collect();
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    let mut seen = BTreeSet::new();
    for d in &docs {
        if !seen.insert(d.doc_id.as_str()) {
            return Err(Error::DuplicateRecord {
                dataset: d.dataset.to_string(),
                doc_id: d.doc_id.clone(),
                annotator_id: format!("model:{}", provider.model_id()),
            });
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.concurrency.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<Outcome>> = pool.install(|| {
        docs.par_iter()
            .map(|d| annotate_one(d, template, scale, provider, cache, opts))
            .collect()
    });

    let mut report = HarnessReport {
        documents: docs.len(),
        ..Default::default()
    };
    let mut records = Vec::new();
    for (doc, outcome) in docs.iter().zip(outcomes) {
        let (calls, hit) = match outcome? {
            Outcome::Labeled { label, response, calls, hit } => {
                records.push(ModelLabelRecord {
                    dataset: doc.dataset.clone(),
                    doc_id: doc.doc_id.clone(),
                    model: provider.model_id().to_string(),
                    label,
                    raw_response: Some(response),
                });
                (calls, hit)
            }
            Outcome::Unparseable { calls, hit } => {
                report.unparseable.push(doc.doc_id.clone());
                (calls, hit)
            }
            Outcome::ExcludedAnswer { calls, hit } => {
                report.excluded_answers.push(doc.doc_id.clone());
                (calls, hit)
            }
        };
        report.provider_calls += calls;
        report.cache_hits += usize::from(hit);
    }
    report.labeled = records.len();
    Ok((records, report))
}
