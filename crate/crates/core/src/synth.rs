//! Synthetic annotator populations with planted alignment gaps.
//!
//! Each document has a latent offensiveness `θ_d` and a noise draw `ε_d`
//! shared with the simulated model. Annotator `a` labels
//!
//! ```text
//! y = clamp(round(θ_d + b_a + σ (δ_a ε_d + sqrt(1 − δ_a²) e)))
//! ```
//!
//! and the model labels `clamp(round(θ_d + β_m + σ_m ε_d))`, so a group's
//! `δ` moves its correlation with the model without shifting its mean.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::Method;
use crate::audit::Rq1PairRow;
use crate::data::{
    AnnotationRecord, AnnotationStore, Axis, DatasetId, Demographics, Ethnicity, Gender, Group,
    ModelLabelRecord, ModelLabels,
};
use crate::error::{Error, Result};
use crate::index::DatasetIndex;
use crate::rng::RngSpec;
use crate::stats::pearson;

fn default_dataset() -> DatasetId {
    DatasetId::new("synth").expect("valid id")
}

fn default_model() -> String {
    "synthetic-model".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_dataset")]
    pub dataset: DatasetId,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub seed: u64,
    pub documents: usize,
    pub annotators: usize,
    pub labels_per_document: usize,
    pub k: u8,
    pub doc_mean: f64,
    pub doc_spread: f64,
    /// SD of the per-annotator label offset.
    pub annotator_bias_spread: f64,
    /// SD of the per-annotation noise.
    pub label_noise: f64,
    pub model_bias: f64,
    pub model_noise: f64,
    pub gender_marginals: BTreeMap<Gender, f64>,
    pub ethnicity_marginals: BTreeMap<Ethnicity, f64>,
    /// Correlation of a group's annotation noise with the model's noise.
    /// An annotator's δ is the sum over their groups, clipped to [-1, 1].
    #[serde(default)]
    pub alignment_gap: BTreeMap<Group, f64>,
    /// Mean label offset of a group's annotators.
    #[serde(default)]
    pub bias_shift: BTreeMap<Group, f64>,
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: SynthConfig = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k < 2 {
            return bad(format!("scale needs at least 2 labels, got {}", self.k));
        }
        if self.annotators == 0 || self.documents == 0 {
            return bad("documents and annotators must be positive".into());
        }
        if self.labels_per_document == 0 || self.labels_per_document > self.annotators {
            return bad(format!(
                "labels_per_document must be in 1..={}, got {}",
                self.annotators, self.labels_per_document
            ));
        }
        for (name, v) in [
            ("doc_spread", self.doc_spread),
            ("annotator_bias_spread", self.annotator_bias_spread),
            ("label_noise", self.label_noise),
            ("model_noise", self.model_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        for (name, v) in [("doc_mean", self.doc_mean), ("model_bias", self.model_bias)] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        check_marginals("gender", self.gender_marginals.values())?;
        check_marginals("ethnicity", self.ethnicity_marginals.values())?;
        for (g, v) in self.alignment_gap.iter().chain(&self.bias_shift) {
            if !v.is_finite() {
                return bad(format!("effect for {g} must be finite"));
            }
        }
        Ok(())
    }

    fn delta(&self, d: &Demographics) -> f64 {
        let pick = |g: Option<Group>| g.and_then(|g| self.alignment_gap.get(&g)).copied().unwrap_or(0.0);
        (pick(d.get(Axis::Gender)) + pick(d.get(Axis::Ethnicity))).clamp(-1.0, 1.0)
    }

    fn shift(&self, d: &Demographics) -> f64 {
        let pick = |g: Option<Group>| g.and_then(|g| self.bias_shift.get(&g)).copied().unwrap_or(0.0);
        pick(d.get(Axis::Gender)) + pick(d.get(Axis::Ethnicity))
    }
}

fn check_marginals<'a>(axis: &str, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    let mut sum = 0.0;
    for &v in values {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("{axis} marginal {v} is not a probability")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{axis} marginals sum to {sum}, not 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedAnnotator {
    pub annotator_id: String,
    pub gender: Gender,
    pub ethnicity: Ethnicity,
    pub bias: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPair {
    pub g1: Group,
    pub g2: Group,
    /// δ(g1) − δ(g2); positive means g1 should track the model more closely.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectLedger {
    pub dataset: DatasetId,
    pub model: String,
    pub seed: u64,
    pub alignment_gap: BTreeMap<Group, f64>,
    pub bias_shift: BTreeMap<Group, f64>,
    pub model_bias: f64,
    pub pairs: Vec<PlantedPair>,
    pub annotators: Vec<PlantedAnnotator>,
}

impl EffectLedger {
    pub fn pair(&self, g1: Group, g2: Group) -> Option<&PlantedPair> {
        self.pairs.iter().find(|p| p.g1 == g1 && p.g2 == g2)
    }
}

pub struct Synthetic {
    pub store: AnnotationStore,
    pub labels: ModelLabels,
    pub ledger: EffectLedger,
}

fn clamp_label(x: f64, k: u8) -> u8 {
    x.round().clamp(1.0, f64::from(k)) as u8
}

/// Exactly `n` categories in the marginal proportions (largest remainder,
/// ties to the earlier key), in shuffled order.
fn quota<T: Copy + Ord>(weights: &BTreeMap<T, f64>, n: usize, rng: &mut impl Rng) -> Vec<T> {
    let mut counts: Vec<(T, usize, f64)> = weights
        .iter()
        .map(|(&k, &w)| {
            let exact = w * n as f64;
            (k, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = counts.iter().map(|c| c.1).sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].2.total_cmp(&counts[a].2).then(a.cmp(&b)));
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[i].1 += 1;
    }
    let mut out: Vec<T> = counts.iter().flat_map(|&(k, c, _)| std::iter::repeat_n(k, c)).collect();
    out.shuffle(rng);
    out
}

/// All within-axis pairs in canonical order (g1 before g2).
pub fn canonical_pairs() -> Vec<(Group, Group)> {
    let mut out = Vec::new();
    for axis in Axis::ALL {
        let gs = axis.groups();
        for i in 0..gs.len() {
            for j in i + 1..gs.len() {
                out.push((gs[i], gs[j]));
            }
        }
    }
    out
}

pub fn generate(config: &SynthConfig) -> Result<Synthetic> {
    config.validate()?;
    let rng = RngSpec::new(config.seed);
    let mut r = rng.substream("synth/demographics", 0);
    let genders = quota(&config.gender_marginals, config.annotators, &mut r);
    let ethnicities = quota(&config.ethnicity_marginals, config.annotators, &mut r);
    let annotators: Vec<PlantedAnnotator> = (0..config.annotators)
        .into_par_iter()
        .map(|a| {
            let mut r = rng.substream("synth/annotator", a as u64);
            let (gender, ethnicity) = (genders[a], ethnicities[a]);
            let demo = Demographics { gender: Some(gender), ethnicity: Some(ethnicity) };
            let e: f64 = r.sample(StandardNormal);
            PlantedAnnotator {
                annotator_id: format!("a{a:05}"),
                gender,
                ethnicity,
                bias: config.shift(&demo) + config.annotator_bias_spread * e,
                delta: config.delta(&demo),
            }
        })
        .collect();

    let per_doc: Vec<(Vec<AnnotationRecord>, ModelLabelRecord)> = (0..config.documents)
        .into_par_iter()
        .map(|d| {
            let mut r = rng.substream("synth/document", d as u64);
            let doc_id = format!("d{d:06}");
            let theta = config.doc_mean + config.doc_spread * r.sample::<f64, _>(StandardNormal);
            let shared: f64 = r.sample(StandardNormal);
            let model_label = clamp_label(theta + config.model_bias + config.model_noise * shared, config.k);
            let mut chosen = rand::seq::index::sample(&mut r, config.annotators, config.labels_per_document).into_vec();
            chosen.sort_unstable();
            let records = chosen
                .into_iter()
                .map(|a| {
                    let ann = &annotators[a];
                    let own: f64 = r.sample(StandardNormal);
                    let noise = ann.delta * shared + (1.0 - ann.delta * ann.delta).sqrt() * own;
                    let label = clamp_label(theta + ann.bias + config.label_noise * noise, config.k);
                    AnnotationRecord {
                        dataset: config.dataset.clone(),
                        doc_id: doc_id.clone(),
                        annotator_id: ann.annotator_id.clone(),
                        raw_label: i64::from(label),
                        label,
                        demographics: Demographics {
                            gender: Some(ann.gender),
                            ethnicity: Some(ann.ethnicity),
                        },
                    }
                })
                .collect();
            let model = ModelLabelRecord {
                dataset: config.dataset.clone(),
                doc_id,
                model: config.model.clone(),
                label: model_label,
                raw_response: None,
            };
            (records, model)
        })
        .collect();

    let mut records = Vec::with_capacity(config.documents * config.labels_per_document);
    let mut model_records = Vec::with_capacity(config.documents);
    for (recs, m) in per_doc {
        records.extend(recs);
        model_records.push(m);
    }
    let mut k = BTreeMap::new();
    k.insert(config.dataset.clone(), config.k);
    let store = AnnotationStore::new(records, k)?;
    let labels = ModelLabels::new(model_records)?;

    let gap = |g: Group| config.alignment_gap.get(&g).copied().unwrap_or(0.0);
    let pairs = canonical_pairs()
        .into_iter()
        .map(|(g1, g2)| PlantedPair { g1, g2, gap: gap(g1) - gap(g2) })
        .collect();
    let ledger = EffectLedger {
        dataset: config.dataset.clone(),
        model: config.model.clone(),
        seed: config.seed,
        alignment_gap: config.alignment_gap.clone(),
        bias_shift: config.bias_shift.clone(),
        model_bias: config.model_bias,
        pairs,
        annotators,
    };
    Ok(Synthetic { store, labels, ledger })
}

/// Population Δr for a pair, approximated by one very large draw of the
/// same generative process (`documents` overrides the config's count).
pub fn target_delta_r(config: &SynthConfig, g1: Group, g2: Group, method: Method, documents: usize) -> Result<f64> {
    let mut big = config.clone();
    big.documents = documents;
    big.seed = config.seed ^ 0x5eed_7a59_e7d0_0001;
    let syn = generate(&big)?;
    let index = DatasetIndex::build(&syn.store, &big.dataset);
    let model = index.align_model(&syn.labels.lookup(&big.dataset, &big.model));
    let assignment = index.assignment(g1.axis());
    let t1 = index.group_truths(method, &assignment, Some(g1));
    let t2 = index.group_truths(method, &assignment, Some(g2));
    let (mut p, mut a, mut b) = (vec![], vec![], vec![]);
    for ((m, x), y) in model.iter().zip(&t1).zip(&t2) {
        if let (Some(m), Some(x), Some(y)) = (m, x, y) {
            p.push(f64::from(*m));
            a.push(f64::from(*x));
            b.push(f64::from(*y));
        }
    }
    Ok(pearson(&p, &a)? - pearson(&p, &b)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Significant with the planted sign.
    SignMatch,
    /// Significant against the planted sign.
    SignMismatch,
    /// Nothing planted, but the test rejected.
    FalsePositive,
    NotSignificant,
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub dataset: DatasetId,
    pub model: String,
    pub g1: Group,
    pub g2: Group,
    pub planted_gap: f64,
    pub recovered_delta: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub p_adjusted: Option<f64>,
    pub verdict: Verdict,
}

/// Lines planted alignment gaps up against the audit's Δr rows; a pair
/// counts as significant when its Holm-adjusted p is below `alpha`.
pub fn planted_vs_recovered(ledger: &EffectLedger, pairs: &[Rq1PairRow], alpha: f64) -> Vec<RecoveryRow> {
    pairs
        .iter()
        .filter(|row| row.dataset == ledger.dataset && row.model == ledger.model)
        .map(|row| {
            let planted = ledger.pair(row.g1, row.g2).map(|p| p.gap).unwrap_or(0.0);
            let d = row.delta.as_ref();
            let p_adj = d.and_then(|d| d.p_adjusted.or(Some(d.p)));
            let verdict = match (d, p_adj) {
                (Some(d), Some(p)) if p < alpha => {
                    if planted == 0.0 {
                        Verdict::FalsePositive
                    } else if (d.delta > 0.0) == (planted > 0.0) {
                        Verdict::SignMatch
                    } else {
                        Verdict::SignMismatch
                    }
                }
                (Some(_), _) => Verdict::NotSignificant,
                (None, _) => Verdict::Unavailable,
            };
            RecoveryRow {
                dataset: row.dataset.clone(),
                model: row.model.clone(),
                g1: row.g1,
                g2: row.g2,
                planted_gap: planted,
                recovered_delta: d.map(|d| d.delta),
                ci_lo: d.and_then(|d| d.ci).map(|c| c.lo),
                ci_hi: d.and_then(|d| d.ci).map(|c| c.hi),
                p_adjusted: p_adj,
                verdict,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small() -> SynthConfig {
        SynthConfig::from_toml(
            r#"
            seed = 11
            documents = 200
            annotators = 60
            labels_per_document = 6
            k = 5
            doc_mean = 3.0
            doc_spread = 1.0
            annotator_bias_spread = 0.3
            label_noise = 0.7
            model_bias = 0.0
            model_noise = 0.7
            [gender_marginals]
            man = 0.5
            woman = 0.5
            [ethnicity_marginals]
            white = 0.6
            black = 0.4
            [alignment_gap]
            white = 0.4
            "#,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_and_valid() {
        let c = small();
        let a = generate(&c).unwrap();
        let b = generate(&c).unwrap();
        assert_eq!(a.store.records(), b.store.records());
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.store.len(), 200 * 6);
        assert_eq!(a.labels.records().len(), 200);
        assert!(a.store.records().iter().all(|r| (1..=5).contains(&r.label)));
        let white = Group::Ethnicity(Ethnicity::White);
        let black = Group::Ethnicity(Ethnicity::Black);
        assert_eq!(a.ledger.pair(white, black), None);
        assert!((a.ledger.pair(black, white).unwrap().gap + 0.4).abs() < 1e-12);
    }

    #[test]
    fn seed_changes_output() {
        let mut c = small();
        let a = generate(&c).unwrap();
        c.seed += 1;
        assert_ne!(a.store.records(), generate(&c).unwrap().store.records());
    }

    #[test]
    fn rejects_bad_marginals_and_spreads() {
        let mut c = small();
        c.gender_marginals.insert(Gender::Man, 0.7);
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = small();
        c.label_noise = -0.1;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = small();
        c.labels_per_document = 61;
        assert!(c.validate().is_err());
    }

    #[test]
    fn noiseless_humans_match_model() {
        let mut c = small();
        c.annotator_bias_spread = 0.0;
        c.label_noise = 0.0;
        c.model_noise = 0.0;
        let s = generate(&c).unwrap();
        let model = s.labels.lookup(&c.dataset, &c.model);
        assert!(s.store.records().iter().all(|r| model[&r.doc_id] == r.label));
    }

    #[test]
    fn marginals_are_respected() {
        let mut c = small();
        c.annotators = 61;
        let s = generate(&c).unwrap();
        let women = s.ledger.annotators.iter().filter(|a| a.gender == Gender::Woman).count();
        let white = s.ledger.annotators.iter().filter(|a| a.ethnicity == Ethnicity::White).count();
        // 30.5 ties to the earlier key (man); 36.6 rounds up
        assert_eq!(women, 30);
        assert_eq!(white, 37);
        assert!(s.ledger.annotators.iter().all(|a| a.ethnicity != Ethnicity::Asian));
    }

    #[test]
    fn quota_counts_sum_to_n() {
        let mut w = BTreeMap::new();
        w.insert(1u8, 1.0 / 3.0);
        w.insert(2u8, 1.0 / 3.0);
        w.insert(3u8, 1.0 / 3.0);
        let mut r = RngSpec::new(0).substream("q", 0);
        for n in 0..20 {
            let v = quota(&w, n, &mut r);
            assert_eq!(v.len(), n);
            for k in 1..=3u8 {
                let c = v.iter().filter(|&&x| x == k).count();
                assert!(c == n / 3 || c == n / 3 + 1);
            }
        }
    }

    #[test]
    fn parses_group_keyed_tables() {
        let c = small();
        assert_eq!(c.alignment_gap[&Group::Ethnicity(Ethnicity::White)], 0.4);
        assert!(SynthConfig::from_toml("documents = 1\nbogus = 2").is_err());
    }
}
