//! The three audit analyses over a store and a set of model labels, and the
//! deterministic table files they are written to.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::aggregate::{leave_one_out_agreement, Method, LOO_MIN_DOCUMENTS};
use crate::confounders::{confounder_rows, standardize, ColumnScaling, DesignMatrix, RowReport, CONFOUNDER_COLUMNS};
use crate::data::{AnnotationStore, Axis, DatasetId, Group, ModelLabels};
use crate::error::{Error, Result};
use crate::index::DatasetIndex;
use crate::regression::{fit_logistic, FitOptions, RegressionSpec, RegressionSummary};
use crate::rng::RngSpec;
use crate::stats::{
    bootstrap_ci, correlate, delta_r, group_correlation, holm_adjust, permutation_test, Ci,
    CorrelationResult, DeltaR,
};

/// Minimum co-labeled documents for an overall correlation.
pub const MIN_DOCUMENTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub dataset: DatasetId,
    pub model: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq0Row {
    pub dataset: DatasetId,
    pub model: String,
    pub method: Method,
    pub correlation: CorrelationResult,
    /// Mean leave-one-out annotator agreement and its bootstrap interval
    /// over annotators.
    pub loo_mean: Option<f64>,
    pub loo_ci: Option<Ci>,
    pub loo_annotators: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Rq0Table {
    pub rows: Vec<Rq0Row>,
    pub skipped: Vec<Skipped>,
}

fn task(parts: &[&str]) -> String {
    parts.join("/")
}

pub fn run_rq0(
    store: &AnnotationStore,
    labels: &ModelLabels,
    method: Method,
    boot: usize,
    rng: &RngSpec,
) -> Result<Rq0Table> {
    let mut table = Rq0Table::default();
    for dataset in store.datasets() {
        let index = DatasetIndex::build(store, &dataset);
        let truth = index.truths_by(method, |_| true);
        let loo = leave_one_out_agreement(store, &dataset, method, LOO_MIN_DOCUMENTS);
        let rs: Vec<f64> = loo.included.iter().map(|a| a.r).collect();
        let loo_ci = if boot > 0 && rs.len() >= 3 {
            let t = task(&["rq0", dataset.as_str(), method.as_str(), "loo"]);
            bootstrap_ci(rs.len(), boot, rng, &t, |idx| {
                Some(idx.iter().map(|&i| rs[i]).sum::<f64>() / idx.len() as f64)
            })
            .ok()
        } else {
            None
        };
        for model in labels.models() {
            let aligned = index.align_model(&labels.lookup(&dataset, &model));
            let n = aligned.iter().zip(&truth).filter(|(m, t)| m.is_some() && t.is_some()).count();
            let skip = |reason: String| {
                warn!("rq0: skipping {dataset}/{model}: {reason}");
                Skipped { dataset: dataset.clone(), model: model.clone(), reason }
            };
            if n < MIN_DOCUMENTS {
                if n > 0 || labels.records().iter().any(|r| r.dataset == dataset && r.model == model) {
                    table.skipped.push(skip(format!("{n} co-labeled documents")));
                }
                continue;
            }
            let t = task(&["rq0", dataset.as_str(), &model, method.as_str(), "boot"]);
            match correlate(&aligned, &truth, boot, rng, &t) {
                Ok(correlation) => table.rows.push(Rq0Row {
                    dataset: dataset.clone(),
                    model: model.clone(),
                    method,
                    correlation,
                    loo_mean: loo.mean,
                    loo_ci,
                    loo_annotators: loo.included.len(),
                }),
                Err(e @ (Error::UndefinedCorrelation(_) | Error::DegenerateBootstrap { .. })) => {
                    table.skipped.push(skip(e.to_string()))
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq1GroupRow {
    pub dataset: DatasetId,
    pub model: String,
    pub method: Method,
    pub group: Group,
    pub correlation: Option<CorrelationResult>,
    /// Upper-tail p of r(P, D_g) against random reassignments of the axis.
    pub permutation_p: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq1PairRow {
    pub dataset: DatasetId,
    pub model: String,
    pub method: Method,
    pub axis: Axis,
    pub g1: Group,
    pub g2: Group,
    pub delta: Option<DeltaR>,
    /// Why `delta` is missing, or a caveat about it.
    pub note: Option<String>,
}

impl Rq1PairRow {
    pub fn stars(&self) -> &'static str {
        self.delta
            .as_ref()
            .and_then(|d| d.p_adjusted)
            .map(rq1_stars)
            .unwrap_or("")
    }
}

/// `*` p < .1, `**` p < .05, `***` p < .001.
pub fn rq1_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Rq1Table {
    pub groups: Vec<Rq1GroupRow>,
    pub pairs: Vec<Rq1PairRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq1Options {
    pub method: Method,
    pub axes: Vec<Axis>,
    /// Bootstrap resamples for intervals; 0 skips them.
    pub boot: usize,
    /// Permutations per group; 0 skips the test.
    pub perm: usize,
}

impl Default for Rq1Options {
    fn default() -> Self {
        Self {
            method: Method::RoundedAverage,
            axes: Axis::ALL.to_vec(),
            boot: crate::stats::DEFAULT_RESAMPLES,
            perm: crate::stats::DEFAULT_RESAMPLES,
        }
    }
}

pub fn run_rq1(store: &AnnotationStore, labels: &ModelLabels, opts: &Rq1Options, rng: &RngSpec) -> Result<Rq1Table> {
    let mut table = Rq1Table::default();
    let method = opts.method;
    for dataset in store.datasets() {
        let index = DatasetIndex::build(store, &dataset);
        for model in labels.models() {
            let aligned = index.align_model(&labels.lookup(&dataset, &model));
            if aligned.iter().all(Option::is_none) {
                continue;
            }
            let family_start = table.pairs.len();
            for &axis in &opts.axes {
                let present = index.groups_present(axis);
                let assignment = index.assignment(axis);
                for g in axis.groups() {
                    let base = |correlation, permutation_p, note: Option<String>| Rq1GroupRow {
                        dataset: dataset.clone(),
                        model: model.clone(),
                        method,
                        group: g,
                        correlation,
                        permutation_p,
                        note,
                    };
                    if !present.contains(&g) {
                        table.groups.push(base(None, None, Some("no annotators".into())));
                        continue;
                    }
                    let truth = index.group_truths(method, &assignment, Some(g));
                    let t = task(&["rq1", dataset.as_str(), &model, method.as_str(), g.as_str(), "boot"]);
                    let corr = match correlate(&aligned, &truth, opts.boot, rng, &t) {
                        Ok(c) => c,
                        Err(e) => {
                            table.groups.push(base(None, None, Some(e.to_string())));
                            continue;
                        }
                    };
                    let perm_p = if opts.perm > 0 && present.len() >= 2 {
                        let t = task(&["rq1", dataset.as_str(), &model, method.as_str(), g.as_str(), "perm"]);
                        permutation_test(
                            &index,
                            axis,
                            |a| group_correlation(&index, &aligned, a, g, method),
                            opts.perm,
                            rng,
                            &t,
                        )
                        .ok()
                        .map(|o| o.p)
                    } else {
                        None
                    };
                    table.groups.push(base(Some(corr), perm_p, None));
                }

                let groups = axis.groups();
                for i in 0..groups.len() {
                    for j in i + 1..groups.len() {
                        let (g1, g2) = (groups[i], groups[j]);
                        let mut row = Rq1PairRow {
                            dataset: dataset.clone(),
                            model: model.clone(),
                            method,
                            axis,
                            g1,
                            g2,
                            delta: None,
                            note: None,
                        };
                        if let Some(missing) = [g1, g2].into_iter().find(|g| !present.contains(g)) {
                            row.note = Some(format!("unavailable: no {missing} annotators"));
                            table.pairs.push(row);
                            continue;
                        }
                        let t = task(&["rq1", dataset.as_str(), &model, method.as_str(), g1.as_str(), g2.as_str()]);
                        match delta_r(&index, &aligned, g1, g2, method, opts.boot, rng, &t) {
                            Ok(d) => row.delta = Some(d),
                            Err(Error::DegenerateBootstrap { undefined, attempts }) => {
                                row.delta = Some(delta_r(&index, &aligned, g1, g2, method, 0, rng, &t)?);
                                row.note = Some(format!("bootstrap degenerate ({undefined}/{attempts} undefined)"));
                            }
                            Err(e) => row.note = Some(format!("unavailable: {e}")),
                        }
                        table.pairs.push(row);
                    }
                }
            }
            adjust_family(&mut table.pairs[family_start..])?;
        }
    }
    Ok(table)
}

/// Holm adjustment over the available pairs of one dataset×model family.
fn adjust_family(rows: &mut [Rq1PairRow]) -> Result<()> {
    let ps: Vec<f64> = rows.iter().filter_map(|r| r.delta.as_ref().map(|d| d.p)).collect();
    if ps.is_empty() {
        return Ok(());
    }
    let adjusted = holm_adjust(&ps)?;
    for (d, p) in rows.iter_mut().filter_map(|r| r.delta.as_mut()).zip(adjusted) {
        d.p_adjusted = Some(p);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq2Result {
    pub model: String,
    pub rows: RowReport,
    pub scaling: Vec<ColumnScaling>,
    /// Dataset indicators and demographics.
    pub model1: RegressionSummary,
    /// Model 1 plus the confounders and the annotator's label.
    pub model2: RegressionSummary,
}

pub fn rq2_specs(design: &DesignMatrix) -> (RegressionSpec, RegressionSpec) {
    let mut base = design.dataset_columns();
    base.extend(design.demographic_columns());
    let mut full = base.clone();
    full.extend(
        CONFOUNDER_COLUMNS
            .iter()
            .filter(|c| design.column(c).is_some())
            .map(|c| c.to_string()),
    );
    let spec = |regressors| RegressionSpec {
        response: "alignment".into(),
        regressors,
        intercept: true,
    };
    (spec(base), spec(full))
}

/// Both alignment regressions for one model's labels.
pub fn run_rq2_model(store: &AnnotationStore, labels: &ModelLabels, model: &str, opts: FitOptions) -> Result<Rq2Result> {
    let (rows, report) = confounder_rows(store, labels, model)?;
    if rows.is_empty() {
        return Err(Error::Precondition(format!("no complete rows for model {model}")));
    }
    let raw = DesignMatrix::from_rows(&rows);
    let (design, scaling) = standardize(&raw)?;
    let (s1, s2) = rq2_specs(&design);
    Ok(Rq2Result {
        model: model.to_string(),
        rows: report,
        scaling,
        model1: fit_logistic(&design, &s1, opts)?,
        model2: fit_logistic(&design, &s2, opts)?,
    })
}

pub fn run_rq2(store: &AnnotationStore, labels: &ModelLabels) -> Result<Vec<Rq2Result>> {
    labels
        .models()
        .iter()
        .map(|m| run_rq2_model(store, labels, m, FitOptions::default()))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rq0: Option<Vec<Rq0Table>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rq1: Option<Rq1Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rq2: Option<Vec<Rq2Result>>,
}

/// Shortest round-trip text; scientific outside [1e-4, 1e16).
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e16).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn line(out: &mut String, fields: &[String]) {
    let joined: Vec<String> = fields.iter().map(|f| csv_field(f)).collect();
    let _ = writeln!(out, "{}", joined.join(","));
}

pub fn rq0_csv(tables: &[Rq0Table]) -> String {
    let mut out = String::new();
    out.push_str("dataset,model,method,n,r,t,p,ci_lo,ci_hi,loo_mean,loo_ci_lo,loo_ci_hi,loo_annotators\n");
    for row in tables.iter().flat_map(|t| &t.rows) {
        let c = &row.correlation;
        line(&mut out, &[
            row.dataset.to_string(),
            row.model.clone(),
            row.method.as_str().into(),
            c.n.to_string(),
            num(c.r),
            opt(c.t),
            opt(c.p),
            opt(c.ci.map(|c| c.lo)),
            opt(c.ci.map(|c| c.hi)),
            opt(row.loo_mean),
            opt(row.loo_ci.map(|c| c.lo)),
            opt(row.loo_ci.map(|c| c.hi)),
            row.loo_annotators.to_string(),
        ]);
    }
    out
}

pub fn rq1_groups_csv(table: &Rq1Table) -> String {
    let mut out = String::new();
    out.push_str("dataset,model,method,axis,group,n,r,t,p,ci_lo,ci_hi,permutation_p,note\n");
    for row in &table.groups {
        let c = row.correlation.as_ref();
        line(&mut out, &[
            row.dataset.to_string(),
            row.model.clone(),
            row.method.as_str().into(),
            row.group.axis().as_str().into(),
            row.group.to_string(),
            c.map(|c| c.n.to_string()).unwrap_or_default(),
            opt(c.map(|c| c.r)),
            opt(c.and_then(|c| c.t)),
            opt(c.and_then(|c| c.p)),
            opt(c.and_then(|c| c.ci).map(|c| c.lo)),
            opt(c.and_then(|c| c.ci).map(|c| c.hi)),
            opt(row.permutation_p),
            row.note.clone().unwrap_or_default(),
        ]);
    }
    out
}

pub fn rq1_pairs_csv(table: &Rq1Table) -> String {
    let mut out = String::new();
    out.push_str("dataset,model,method,axis,g1,g2,n,r1,r2,r12,delta,z,p,p_holm,ci_lo,ci_hi,stars,note\n");
    for row in &table.pairs {
        let d = row.delta.as_ref();
        line(&mut out, &[
            row.dataset.to_string(),
            row.model.clone(),
            row.method.as_str().into(),
            row.axis.as_str().into(),
            row.g1.to_string(),
            row.g2.to_string(),
            d.map(|d| d.n.to_string()).unwrap_or_default(),
            opt(d.map(|d| d.r1)),
            opt(d.map(|d| d.r2)),
            opt(d.map(|d| d.r12)),
            opt(d.map(|d| d.delta)),
            opt(d.map(|d| d.z)),
            opt(d.map(|d| d.p)),
            opt(d.and_then(|d| d.p_adjusted)),
            opt(d.and_then(|d| d.ci).map(|c| c.lo)),
            opt(d.and_then(|d| d.ci).map(|c| c.hi)),
            row.stars().into(),
            row.note.clone().unwrap_or_default(),
        ]);
    }
    out
}

pub fn rq2_coefficients_csv(results: &[Rq2Result]) -> String {
    let mut out = String::new();
    out.push_str("model,specification,term,estimate,std_error,z,p,stars\n");
    for r in results {
        for (spec, s) in [("model1", &r.model1), ("model2", &r.model2)] {
            for c in &s.coefficients {
                line(&mut out, &[
                    r.model.clone(),
                    spec.into(),
                    c.name.clone(),
                    num(c.estimate),
                    num(c.std_error),
                    num(c.z),
                    num(c.p),
                    c.stars().into(),
                ]);
            }
        }
    }
    out
}

pub fn rq2_fit_csv(results: &[Rq2Result]) -> String {
    let mut out = String::new();
    out.push_str("model,specification,n,log_likelihood,null_log_likelihood,pseudo_r2,converged,iterations\n");
    for r in results {
        for (spec, s) in [("model1", &r.model1), ("model2", &r.model2)] {
            line(&mut out, &[
                r.model.clone(),
                spec.into(),
                s.n.to_string(),
                num(s.log_likelihood),
                num(s.null_log_likelihood),
                num(s.pseudo_r2),
                s.converged.to_string(),
                s.trace.len().to_string(),
            ]);
        }
    }
    out
}

/// Writes one delimited file per table present plus `report.json`, and
/// returns the paths written in order.
pub fn write_report(report: &AuditReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: BTreeMap<&str, String> = BTreeMap::new();
    if let Some(rq0) = &report.rq0 {
        files.insert("rq0.csv", rq0_csv(rq0));
    }
    if let Some(rq1) = &report.rq1 {
        files.insert("rq1_groups.csv", rq1_groups_csv(rq1));
        files.insert("rq1_pairs.csv", rq1_pairs_csv(rq1));
    }
    if let Some(rq2) = &report.rq2 {
        files.insert("rq2_coefficients.csv", rq2_coefficients_csv(rq2));
        files.insert("rq2_fit.csv", rq2_fit_csv(rq2));
    }
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    files.insert("report.json", json);
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

pub fn read_report(path: &Path) -> Result<AuditReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
