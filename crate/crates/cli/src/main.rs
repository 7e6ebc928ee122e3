mod manifest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use alignaudit::aggregate::Method;
use alignaudit::annotate::{
    annotate_corpus, load_documents, AnnotateOptions, HttpProvider, MockProvider, PromptTemplate,
    Provider, ProviderConfig, ResponseCache,
};
use alignaudit::audit::{self, AuditReport, Rq1Options};
use alignaudit::confounders::{confounder_rows, DesignMatrix};
use alignaudit::data::{self, Axis, DatasetId, LabelScale, ModelLabels};
use alignaudit::ingest::{self, DatasetSchema};
use alignaudit::rng::RngSpec;
use alignaudit::synth::{self, EffectLedger, SynthConfig};

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "alignaudit", version, about = "Demographic alignment audit of model offensiveness labels")]
struct Cli {
    /// Worker threads for resampling loops (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Harmonize raw annotation files into a store.
    Ingest(IngestArgs),
    /// Label documents with a chat-completion model.
    Annotate(AnnotateArgs),
    /// Overall model-vs-consensus correlations.
    #[command(name = "audit-rq0")]
    AuditRq0(AuditArgs),
    /// Per-group correlations and pairwise differences.
    #[command(name = "audit-rq1")]
    AuditRq1(AuditArgs),
    /// Alignment regressions with and without confounders.
    Regress(RegressArgs),
    /// Generate a synthetic store, model labels and effect ledger.
    Synth(SynthArgs),
    /// Run every analysis (or re-render a saved report) into one directory.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Agg {
    Avg,
    Majority,
}

impl From<Agg> for Method {
    fn from(a: Agg) -> Method {
        match a {
            Agg::Avg => Method::RoundedAverage,
            Agg::Majority => Method::Majority,
        }
    }
}

#[derive(Args)]
struct Inputs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long = "model-labels")]
    model_labels: PathBuf,
    /// Scale cardinality for datasets without a preset, as NAME=K.
    #[arg(long = "scale", value_parser = parse_scale)]
    scales: Vec<(DatasetId, u8)>,
}

fn parse_scale(s: &str) -> std::result::Result<(DatasetId, u8), String> {
    let (name, k) = s.split_once('=').ok_or("expected NAME=K")?;
    let id = DatasetId::new(name).map_err(|e| e.to_string())?;
    let k: u8 = k.trim().parse().map_err(|_| format!("bad cardinality {k:?}"))?;
    Ok((id, k))
}

impl Inputs {
    fn load(&self, m: &mut RunManifest) -> Result<(data::AnnotationStore, ModelLabels)> {
        let overrides: BTreeMap<DatasetId, u8> = self.scales.iter().cloned().collect();
        let store = data::load_store(&self.store, &overrides)
            .with_context(|| format!("loading store {}", self.store.display()))?;
        let labels = data::load_model_labels(&self.model_labels)
            .with_context(|| format!("loading model labels {}", self.model_labels.display()))?;
        labels.check_against(&store)?;
        m.store(&self.store)?.store(&self.model_labels)?;
        for (d, k) in &self.scales {
            m.arg(&format!("scale.{d}"), k);
        }
        Ok((store, labels))
    }
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "avg")]
    agg: Vec<Agg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    boot: usize,
    #[arg(long, default_value_t = 1000)]
    perm: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "gender,ethnicity")]
    axes: Vec<AxisArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AxisArg {
    Gender,
    Ethnicity,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Axis {
        match a {
            AxisArg::Gender => Axis::Gender,
            AxisArg::Ethnicity => Axis::Ethnicity,
        }
    }
}

#[derive(Args)]
struct IngestArgs {
    /// Schema file; pair each with an --input, in order.
    #[arg(long, required = true)]
    schema: Vec<PathBuf>,
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnnotateArgs {
    /// CSV with dataset,doc_id,text.
    #[arg(long)]
    documents: PathBuf,
    #[arg(long)]
    provider: Option<PathBuf>,
    /// Reply with this text instead of calling a provider.
    #[arg(long = "mock-reply", conflicts_with = "provider")]
    mock_reply: Option<String>,
    #[arg(long = "mock-model", default_value = "mock")]
    mock_model: String,
    /// Prompt template for datasets without a built-in one.
    #[arg(long)]
    template: Vec<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RegressArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Also write the raw (unstandardized) design matrix.
    #[arg(long = "write-design")]
    write_design: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, conflicts_with_all = ["store", "model_labels"])]
    from: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long = "model-labels")]
    model_labels: Option<PathBuf>,
    #[arg(long = "scale", value_parser = parse_scale)]
    scales: Vec<(DatasetId, u8)>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "avg")]
    agg: Vec<Agg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    boot: usize,
    #[arg(long, default_value_t = 1000)]
    perm: usize,
    /// Effect ledger from `synth`; adds a planted-vs-recovered table.
    #[arg(long)]
    ledger: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Annotate(a) => cmd_annotate(a),
        Command::AuditRq0(a) => cmd_rq0(a),
        Command::AuditRq1(a) => cmd_rq1(a),
        Command::Regress(a) => cmd_regress(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<PathBuf> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    if a.schema.len() != a.input.len() {
        bail!("{} schemas but {} inputs; pass them in pairs", a.schema.len(), a.input.len());
    }
    let mut m = RunManifest::new("ingest");
    let mut fragments = Vec::new();
    let mut reports = Vec::new();
    for (schema_path, input) in a.schema.iter().zip(&a.input) {
        let schema = DatasetSchema::load(schema_path)?;
        let (store, report) = ingest::ingest(input, &schema)?;
        info!(
            "{}: {} of {} rows kept, {} documents, {} annotators",
            report.dataset, report.rows_emitted, report.rows_read, report.documents, report.annotators
        );
        m.config(schema_path)?.store(input)?;
        fragments.push(store);
        reports.push(report);
    }
    let store = ingest::merge(fragments)?;
    create_dir(&a.out)?;
    let store_path = a.out.join("store.csv");
    data::save_store(&store, &store_path)?;
    let report_path = write_json(&a.out.join("ingest_report.json"), &reports)?;
    m.finish(&a.out, &[store_path, report_path])
}

fn template_for(dataset: &DatasetId, custom: &[PromptTemplate]) -> Result<(PromptTemplate, LabelScale)> {
    if let Some(t) = custom.iter().find(|t| &t.dataset == dataset) {
        let scale = match LabelScale::preset(dataset) {
            Some(s) => s,
            None => {
                let lo = *t.options.iter().min().expect("validated template");
                LabelScale::new(t.options.len() as u8, lo, false, &[])?
            }
        };
        return Ok((t.clone(), scale));
    }
    match (PromptTemplate::builtin(dataset), LabelScale::preset(dataset)) {
        (Some(t), Some(s)) => Ok((t, s)),
        _ => bail!("no prompt template for dataset {dataset}; pass --template"),
    }
}

fn cmd_annotate(a: AnnotateArgs) -> Result<()> {
    let mut m = RunManifest::new("annotate");
    let docs = load_documents(&a.documents)?;
    m.store(&a.documents)?;
    let mut custom = Vec::new();
    for p in &a.template {
        custom.push(PromptTemplate::load(p)?);
        m.config(p)?;
    }
    let (provider, opts): (Box<dyn Provider>, AnnotateOptions) = match (&a.provider, &a.mock_reply) {
        (Some(p), _) => {
            let cfg = ProviderConfig::load(p)?;
            m.config(p)?;
            let opts = AnnotateOptions { max_retries: cfg.max_retries, concurrency: cfg.concurrency };
            (Box::new(HttpProvider::new(cfg)?), opts)
        }
        (None, Some(reply)) => {
            m.arg("mock_reply", reply);
            (Box::new(MockProvider::echo(&a.mock_model, reply)), AnnotateOptions::default())
        }
        (None, None) => bail!("pass --provider or --mock-reply"),
    };
    let cache = match &a.cache {
        Some(p) => ResponseCache::open(p)?,
        None => ResponseCache::in_memory(),
    };
    let mut datasets: Vec<DatasetId> = docs.iter().map(|d| d.dataset.clone()).collect();
    datasets.sort();
    datasets.dedup();
    let mut records = Vec::new();
    let mut reports = BTreeMap::new();
    for d in &datasets {
        let (template, scale) = template_for(d, &custom)?;
        let (recs, report) = annotate_corpus(&docs, &template, &scale, provider.as_ref(), &cache, opts)?;
        info!(
            "{d}: {} labeled of {}, {} provider calls, {} cache hits",
            report.labeled, report.documents, report.provider_calls, report.cache_hits
        );
        records.extend(recs);
        reports.insert(d.to_string(), report);
    }
    let labels = ModelLabels::new(records)?;
    create_dir(&a.out)?;
    let labels_path = a.out.join("model_labels.csv");
    data::save_model_labels(&labels, &labels_path)?;
    let report_path = write_json(&a.out.join("annotate_report.json"), &reports)?;
    m.arg("model", provider.model_id());
    m.finish(&a.out, &[labels_path, report_path])
}

fn rq0_for(store: &data::AnnotationStore, labels: &ModelLabels, aggs: &[Agg], boot: usize, rng: &RngSpec) -> Result<Vec<audit::Rq0Table>> {
    aggs.iter()
        .map(|&g| Ok(audit::run_rq0(store, labels, g.into(), boot, rng)?))
        .collect()
}

fn rq1_for(
    store: &data::AnnotationStore,
    labels: &ModelLabels,
    aggs: &[Agg],
    axes: Vec<Axis>,
    boot: usize,
    perm: usize,
    rng: &RngSpec,
) -> Result<audit::Rq1Table> {
    let mut out = audit::Rq1Table::default();
    for &g in aggs {
        let opts = Rq1Options { method: g.into(), axes: axes.clone(), boot, perm };
        let t = audit::run_rq1(store, labels, &opts, rng)?;
        out.groups.extend(t.groups);
        out.pairs.extend(t.pairs);
    }
    Ok(out)
}

fn record_audit_args(m: &mut RunManifest, aggs: &[Agg], seed: u64, boot: usize, perm: Option<usize>) {
    let aggs: Vec<String> = aggs.iter().map(|a| format!("{a:?}").to_lowercase()).collect();
    m.arg("agg", aggs.join(",")).arg("boot", boot);
    if let Some(p) = perm {
        m.arg("perm", p);
    }
    m.master_seed = Some(seed);
}

fn cmd_rq0(a: AuditArgs) -> Result<()> {
    let mut m = RunManifest::new("audit-rq0");
    let (store, labels) = a.inputs.load(&mut m)?;
    record_audit_args(&mut m, &a.agg, a.seed, a.boot, None);
    let rq0 = rq0_for(&store, &labels, &a.agg, a.boot, &RngSpec::new(a.seed))?;
    let report = AuditReport { rq0: Some(rq0), ..Default::default() };
    let written = audit::write_report(&report, &a.out)?;
    m.finish(&a.out, &written)
}

fn cmd_rq1(a: AuditArgs) -> Result<()> {
    let mut m = RunManifest::new("audit-rq1");
    let (store, labels) = a.inputs.load(&mut m)?;
    record_audit_args(&mut m, &a.agg, a.seed, a.boot, Some(a.perm));
    let axes: Vec<Axis> = a.axes.iter().map(|&x| x.into()).collect();
    m.arg("axes", axes.iter().map(|x| x.as_str()).collect::<Vec<_>>().join(","));
    let rq1 = rq1_for(&store, &labels, &a.agg, axes, a.boot, a.perm, &RngSpec::new(a.seed))?;
    let report = AuditReport { rq1: Some(rq1), ..Default::default() };
    let written = audit::write_report(&report, &a.out)?;
    m.finish(&a.out, &written)
}

fn cmd_regress(a: RegressArgs) -> Result<()> {
    let mut m = RunManifest::new("regress");
    let (store, labels) = a.inputs.load(&mut m)?;
    let rq2 = audit::run_rq2(&store, &labels)?;
    for r in &rq2 {
        info!(
            "{}: {} rows, pseudo-R2 {:.3} -> {:.3}",
            r.model, r.rows.rows, r.model1.pseudo_r2, r.model2.pseudo_r2
        );
    }
    let report = AuditReport { rq2: Some(rq2), ..Default::default() };
    let mut written = audit::write_report(&report, &a.out)?;
    if a.write_design {
        for model in labels.models() {
            let (rows, _) = confounder_rows(&store, &labels, &model)?;
            let path = a.out.join(format!("design_{}.csv", sanitize(&model)));
            let f = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            DesignMatrix::from_rows(&rows).write_csv(std::io::BufWriter::new(f))?;
            written.push(path);
        }
    }
    m.finish(&a.out, &written)
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut m = RunManifest::new("synth");
    let mut config = SynthConfig::load(&a.config)?;
    m.config(&a.config)?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    m.master_seed = Some(config.seed);
    let syn = synth::generate(&config)?;
    create_dir(&a.out)?;
    let store_path = a.out.join("store.csv");
    let labels_path = a.out.join("model_labels.csv");
    data::save_store(&syn.store, &store_path)?;
    data::save_model_labels(&syn.labels, &labels_path)?;
    let ledger_path = write_json(&a.out.join("ledger.json"), &syn.ledger)?;
    info!("{} annotations on {} documents", syn.store.len(), syn.labels.records().len());
    m.finish(&a.out, &[store_path, labels_path, ledger_path])
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let mut m = RunManifest::new("report");
    let report = match (&a.from, &a.store, &a.model_labels) {
        (Some(from), _, _) => {
            m.config(from)?;
            audit::read_report(from)?
        }
        (None, Some(store), Some(model_labels)) => {
            let inputs = Inputs {
                store: store.clone(),
                model_labels: model_labels.clone(),
                scales: a.scales.clone(),
            };
            let (store, labels) = inputs.load(&mut m)?;
            record_audit_args(&mut m, &a.agg, a.seed, a.boot, Some(a.perm));
            let rng = RngSpec::new(a.seed);
            AuditReport {
                rq0: Some(rq0_for(&store, &labels, &a.agg, a.boot, &rng)?),
                rq1: Some(rq1_for(&store, &labels, &a.agg, Axis::ALL.to_vec(), a.boot, a.perm, &rng)?),
                rq2: Some(audit::run_rq2(&store, &labels)?),
            }
        }
        _ => bail!("pass --from REPORT.json, or both --store and --model-labels"),
    };
    let mut written = audit::write_report(&report, &a.out)?;
    if let Some(ledger_path) = &a.ledger {
        let text = std::fs::read_to_string(ledger_path)
            .with_context(|| format!("reading {}", ledger_path.display()))?;
        let ledger: EffectLedger = serde_json::from_str(&text)?;
        m.config(ledger_path)?;
        let pairs = report.rq1.as_ref().map(|t| t.pairs.as_slice()).unwrap_or(&[]);
        let rows = synth::planted_vs_recovered(&ledger, pairs, 0.05);
        written.push(write_json(&a.out.join("recovery.json"), &rows)?);
    }
    m.finish(&a.out, &written)
}
