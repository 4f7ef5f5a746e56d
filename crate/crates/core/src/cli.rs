//! The `fedrank` command-line interface.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::broker::{self, BackendMode, BrokerError, RetrievalBackend, DEFAULT_PER_RESOURCE_LIMIT};
use crate::corpus::{CorpusError, Dataset};
use crate::embedding::{read_store, synth_embed, write_store, EmbeddingError, EmbeddingStore, StoreKind};
use crate::graph::{self, AlphaMode, GraphError, GraphStats, NodeType, QrWeightTable, Relation};
use crate::metrics::{Gain, Metric, MetricError};
use crate::rgcn::{
    load_checkpoint, save_checkpoint, Activation, Aggregator, Checkpoint, CheckpointMeta, RgcnError, RgcnModel,
};
use crate::synth::{self, SynthConfig};
use crate::tensor::{Reduction, TensorError};
use crate::training::{
    self, cross_validate, derive_seed, lambda_grid, sweep_lambda, sweep_tsv, CorpusEmbeddings,
    Ranker, TrainConfig, TrainError, STREAM_INIT,
};

pub const QUERY_STORE_FILE: &str = "queries.emb";
pub const DOCUMENT_STORE_FILE: &str = "documents.emb";
pub const SEED_ENV: &str = "FEDRANK_SEED";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_error!(CorpusError, EmbeddingError, GraphError, BrokerError, MetricError);

fn tensor_is_numeric(e: &TensorError) -> bool {
    matches!(e, TensorError::NonFinite(_) | TensorError::NonFiniteGradient)
}

impl From<RgcnError> for CliError {
    fn from(e: RgcnError) -> Self {
        match &e {
            RgcnError::Tensor(t) if tensor_is_numeric(t) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "fedrank", version, about = "Resource selection with relational graph convolutions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate raw inputs and write a dataset directory.
    Ingest(IngestArgs),
    /// Generate a synthetic topic corpus as a dataset directory.
    Synth(SynthArgs),
    /// Write query and document embedding stores.
    Embed(EmbedArgs),
    /// Build the training graph over all judged queries.
    BuildGraph(BuildGraphArgs),
    /// Cross-validate and checkpoint FedGNN, or fit one model to a graph file.
    Train(TrainCmdArgs),
    /// Cross-validated resource-level metrics for one or more rankers.
    Evaluate(EvaluateArgs),
    /// Rank stored resources for one query with a checkpoint.
    Rank(RankArgs),
    /// Cross-validated metrics over a grid of lambda values.
    SweepLambda(SweepArgs),
    /// Document-level broker simulation.
    BrokerSim(BrokerArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long)]
    doc_map: PathBuf,
    /// Optional `doc_id<TAB>title<TAB>body` file.
    #[arg(long)]
    documents: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 40)]
    queries: usize,
    #[arg(long, default_value_t = 4)]
    topics: usize,
    #[arg(long, default_value_t = 5)]
    resources_per_topic: usize,
    #[arg(long, default_value_t = 12)]
    docs_per_resource: usize,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// `synth` hashes text; `import` validates existing stores.
    #[arg(long, default_value = "synth")]
    mode: String,
    #[arg(long, default_value_t = crate::embedding::DEFAULT_DIM)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    embed_seed: u64,
    #[arg(long)]
    query_store: Option<PathBuf>,
    #[arg(long)]
    doc_store: Option<PathBuf>,
    /// Defaults to the dataset directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Directory with queries.emb and documents.emb; defaults to the dataset.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BuildGraphArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 10)]
    top_n: usize,
    /// `auto` or a positive number.
    #[arg(long, default_value = "auto")]
    alpha: String,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the aggregated resource embeddings.
    #[arg(long)]
    resource_store: Option<PathBuf>,
}

/// Training settings; flags override the config file, which overrides defaults.
#[derive(Args, Debug, Clone, Default)]
struct TrainArgs {
    /// `key = value` file; `#` starts a comment.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Falls back to the FEDRANK_SEED environment variable, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    /// sum, mean or max.
    #[arg(long)]
    aggregator: Option<String>,
    /// relu or identity.
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// sum or mean.
    #[arg(long)]
    reduction: Option<String>,
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainCmdArgs {
    /// Dataset directory for cross-validation.
    #[arg(long, conflicts_with = "graph")]
    dataset: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Fit a single model to this graph's qr edges instead.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, default_value = "ndcg@10,np@10")]
    metrics: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "fedgnn,fedbert,random")]
    rankers: String,
    #[arg(long, default_value = "ndcg@10,ndcg@20,np@1,np@5,np@10")]
    metrics: String,
    /// Use linear gain for nDCG.
    #[arg(long)]
    linear_gain: bool,
    #[command(flatten)]
    train: TrainArgs,
    /// Also write per-query values here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RankArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    resource_store: PathBuf,
    /// Query store file; pick the entry with --query-id when it holds several.
    #[arg(long, conflicts_with = "query_text")]
    query_embedding: Option<PathBuf>,
    #[arg(long)]
    query_id: Option<String>,
    /// Embedded with the synthetic embedder at the checkpoint's input width.
    #[arg(long)]
    query_text: Option<String>,
    #[arg(long, default_value_t = 0)]
    embed_seed: u64,
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.0)]
    from: f64,
    #[arg(long, default_value_t = 1.0)]
    to: f64,
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BrokerArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "fedbert")]
    ranker: String,
    /// Comma-separated T values.
    #[arg(long, default_value = "4,8")]
    top_t: String,
    #[arg(long, default_value_t = DEFAULT_PER_RESOURCE_LIMIT)]
    per_resource: usize,
    /// oracle or cosine.
    #[arg(long, default_value = "oracle")]
    backend: String,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

const CONFIG_KEYS: &[&str] = &[
    "lr",
    "epochs",
    "seed",
    "dropout",
    "lambda",
    "alpha",
    "top_n",
    "folds",
    "aggregator",
    "activation",
    "layers",
    "hidden_dim",
    "reduction",
    "patience",
];

/// Parses `key = value` lines. Keys may use `-` or `_`.
pub fn parse_config(text: &str) -> std::result::Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
        let key = k.trim().replace('-', "_");
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(format!("line {}: unknown key `{}`", i + 1, k.trim()));
        }
        if out.insert(key, v.trim().to_string()).is_some() {
            return Err(format!("line {}: duplicate key `{}`", i + 1, k.trim()));
        }
    }
    Ok(out)
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| CliError::Usage(format!("invalid value `{v}` for {key}")))
}

fn parse_alpha(v: &str) -> Result<AlphaMode> {
    if v == "auto" {
        return Ok(AlphaMode::Auto);
    }
    let a: f64 = parse_value("alpha", v)?;
    if !(a > 0.0 && a.is_finite()) {
        return Err(CliError::Usage(format!("alpha must be positive, got {v}")));
    }
    Ok(AlphaMode::Fixed(a))
}

impl TrainArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let file = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                parse_config(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => BTreeMap::new(),
        };
        let get = |key: &str, flag: Option<String>| flag.or_else(|| file.get(key).cloned());
        let mut c = TrainConfig::default();
        if let Some(v) = get("lr", self.lr.map(|x| x.to_string())) {
            c.lr = parse_value("lr", &v)?;
        }
        if let Some(v) = get("epochs", self.epochs.map(|x| x.to_string())) {
            c.epochs = parse_value("epochs", &v)?;
        }
        let env_seed = std::env::var(SEED_ENV).ok();
        if let Some(v) = get("seed", self.seed.map(|x| x.to_string())).or(env_seed) {
            c.seed = parse_value("seed", &v)?;
        }
        if let Some(v) = get("dropout", self.dropout.map(|x| x.to_string())) {
            c.dropout = parse_value("dropout", &v)?;
        }
        if let Some(v) = get("lambda", self.lambda.map(|x| x.to_string())) {
            c.lambda = parse_value("lambda", &v)?;
        }
        if let Some(v) = get("alpha", self.alpha.clone()) {
            c.alpha = parse_alpha(&v)?;
        }
        if let Some(v) = get("top_n", self.top_n.map(|x| x.to_string())) {
            c.top_n = parse_value("top_n", &v)?;
        }
        if let Some(v) = get("folds", self.folds.map(|x| x.to_string())) {
            c.folds = parse_value("folds", &v)?;
        }
        if let Some(v) = get("aggregator", self.aggregator.clone()) {
            c.aggregator =
                Aggregator::parse(&v).ok_or_else(|| CliError::Usage(format!("unknown aggregator `{v}`")))?;
        }
        if let Some(v) = get("activation", self.activation.clone()) {
            c.activation =
                Activation::parse(&v).ok_or_else(|| CliError::Usage(format!("unknown activation `{v}`")))?;
        }
        if let Some(v) = get("layers", self.layers.map(|x| x.to_string())) {
            c.layers = parse_value("layers", &v)?;
        }
        if let Some(v) = get("hidden_dim", self.hidden_dim.map(|x| x.to_string())) {
            c.hidden_dim = Some(parse_value("hidden_dim", &v)?);
        }
        if let Some(v) = get("reduction", self.reduction.clone()) {
            c.reduction = match v.as_str() {
                "sum" => Reduction::Sum,
                "mean" => Reduction::Mean,
                _ => return Err(CliError::Usage(format!("unknown reduction `{v}`"))),
            };
        }
        if let Some(v) = get("patience", self.patience.map(|x| x.to_string())) {
            c.patience = Some(parse_value("patience", &v)?);
        }
        if c.epochs == 0 {
            return Err(CliError::Usage("epochs must be at least 1".into()));
        }
        if !(c.lr > 0.0) {
            return Err(CliError::Usage("lr must be positive".into()));
        }
        if !(0.0..=1.0).contains(&c.lambda) {
            return Err(CliError::Usage(format!("lambda must lie in [0, 1], got {}", c.lambda)));
        }
        if !(0.0..1.0).contains(&c.dropout) {
            return Err(CliError::Usage(format!("dropout must lie in [0, 1), got {}", c.dropout)));
        }
        if c.top_n == 0 {
            return Err(CliError::Usage("top_n must be at least 1".into()));
        }
        Ok(c)
    }
}

fn parse_metrics(spec: &str, gain: Gain) -> Result<Vec<Metric>> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.parse::<Metric>()
                .map(|m| m.with_gain(gain))
                .map_err(|e| CliError::Usage(e.to_string()))
        })
        .collect()
}

fn parse_rankers(spec: &str) -> Result<Vec<Ranker>> {
    spec.split(',')
        .map(|s| Ranker::parse(s.trim()).ok_or_else(|| CliError::Usage(format!("unknown ranker `{s}`"))))
        .collect()
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Binary store, or TSV when the name ends in `.tsv`.
fn load_store(path: &Path, kind: StoreKind) -> Result<EmbeddingStore> {
    let wrap = |e: EmbeddingError| CliError::Data(format!("{}: {e}", path.display()));
    if path.extension().is_some_and(|e| e == "tsv") {
        let f = fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        EmbeddingStore::from_tsv(io::BufReader::new(f), kind).map_err(wrap)
    } else {
        read_store(path, kind).map_err(wrap)
    }
}

fn save_store(store: &EmbeddingStore, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_store(store, path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_data(args: &DataArgs) -> Result<(Dataset, CorpusEmbeddings)> {
    let ds = Dataset::load_dir(&args.dataset)?;
    let dir = args.embeddings.as_deref().unwrap_or(&args.dataset);
    let emb = CorpusEmbeddings {
        queries: load_store(&dir.join(QUERY_STORE_FILE), StoreKind::Query)?,
        documents: load_store(&dir.join(DOCUMENT_STORE_FILE), StoreKind::Document)?,
    };
    check_coverage(&ds, &emb)?;
    Ok((ds, emb))
}

fn check_coverage(ds: &Dataset, emb: &CorpusEmbeddings) -> Result<()> {
    if emb.queries.dim() != emb.documents.dim() {
        return Err(CliError::Data(format!(
            "query store dim {} differs from document store dim {}",
            emb.queries.dim(),
            emb.documents.dim()
        )));
    }
    let judged = ds.judged_query_ids();
    let missing_q: Vec<&String> = judged.iter().filter(|q| emb.queries.get(q).is_none()).collect();
    if let Some(first) = missing_q.first() {
        return Err(CliError::Data(format!(
            "{} judged queries lack embeddings (first: `{first}`)",
            missing_q.len()
        )));
    }
    let missing_d: Vec<&str> = ds.doc_map.iter().map(|(d, _)| d).filter(|d| emb.documents.get(d).is_none()).collect();
    if let Some(first) = missing_d.first() {
        return Err(CliError::Data(format!(
            "{} documents lack embeddings (first: `{first}`)",
            missing_d.len()
        )));
    }
    Ok(())
}

fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let ds = Dataset::from_files(&a.queries, &a.qrels, &a.doc_map, a.documents.as_deref())?;
    let manifest = ds.save_dir(&a.out)?;
    print!("{}", manifest.to_text());
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let seed = match a.seed {
        Some(s) => s,
        None => match std::env::var(SEED_ENV) {
            Ok(v) => parse_value("seed", &v)?,
            Err(_) => 0,
        },
    };
    if a.queries == 0 || a.topics == 0 || a.resources_per_topic == 0 || a.docs_per_resource == 0 {
        return Err(CliError::Usage("synth sizes must be positive".into()));
    }
    let config = SynthConfig {
        queries: a.queries,
        topics: a.topics,
        resources_per_topic: a.resources_per_topic,
        docs_per_resource: a.docs_per_resource,
        seed,
        ..SynthConfig::default()
    };
    let ds = synth::generate(&config)?;
    let manifest = ds.save_dir(&a.out)?;
    print!("{}", manifest.to_text());
    Ok(())
}

fn cmd_embed(a: &EmbedArgs) -> Result<()> {
    let ds = Dataset::load_dir(&a.dataset)?;
    let out = a.out.as_deref().unwrap_or(&a.dataset);
    let emb = match a.mode.as_str() {
        "synth" => {
            if a.dim == 0 {
                return Err(CliError::Usage("dim must be positive".into()));
            }
            if ds.documents.is_empty() {
                return Err(CliError::Data(
                    "synth embedding needs document text; ingest with --documents".into(),
                ));
            }
            synth::embed_dataset(&ds, a.dim, a.embed_seed)?
        }
        "import" => {
            let (Some(q), Some(d)) = (&a.query_store, &a.doc_store) else {
                return Err(CliError::Usage("import mode needs --query-store and --doc-store".into()));
            };
            let emb = CorpusEmbeddings {
                queries: load_store(q, StoreKind::Query)?,
                documents: load_store(d, StoreKind::Document)?,
            };
            check_coverage(&ds, &emb)?;
            emb
        }
        m => return Err(CliError::Usage(format!("unknown embed mode `{m}` (synth or import)"))),
    };
    save_store(&emb.queries, &out.join(QUERY_STORE_FILE))?;
    save_store(&emb.documents, &out.join(DOCUMENT_STORE_FILE))?;
    println!(
        "dim\t{}\nqueries\t{}\ndocuments\t{}",
        emb.queries.dim(),
        emb.queries.len(),
        emb.documents.len()
    );
    Ok(())
}

fn cmd_build_graph(a: &BuildGraphArgs) -> Result<()> {
    let (ds, emb) = load_data(&a.data)?;
    if !(0.0..=1.0).contains(&a.lambda) {
        return Err(CliError::Usage(format!("lambda must lie in [0, 1], got {}", a.lambda)));
    }
    if a.top_n == 0 {
        return Err(CliError::Usage("top_n must be at least 1".into()));
    }
    let config = TrainConfig {
        lambda: a.lambda,
        top_n: a.top_n,
        alpha: parse_alpha(&a.alpha)?,
        ..TrainConfig::default()
    };
    let prep = training::prepare_training(&ds, &emb, &ds.judged_query_ids(), &config)?;
    graph::write_graph(&prep.graph, &a.out).map_err(|e| CliError::Data(format!("{}: {e}", a.out.display())))?;
    if let Some(p) = &a.resource_store {
        save_store(&prep.resources, p)?;
    }
    println!("{}\n{}", GraphStats::HEADER, graph::graph_stats(&prep.graph));
    Ok(())
}

fn manifest_text(config: &TrainConfig, extra: &[(&str, String)]) -> String {
    let mut s = config.manifest();
    for (k, v) in extra {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

fn cmd_train(a: &TrainCmdArgs) -> Result<()> {
    let config = a.train.resolve()?;
    create_dir(&a.out)?;
    if let Some(gpath) = &a.graph {
        let g = graph::read_graph(gpath).map_err(|e| CliError::Data(format!("{}: {e}", gpath.display())))?;
        let targets = QrWeightTable::from_entries(g.edges().iter().filter(|e| e.relation == Relation::Qr).map(|e| {
            let (q, r) = if g.nodes()[e.src].kind == NodeType::Query {
                (e.src, e.dst)
            } else {
                (e.dst, e.src)
            };
            ((g.nodes()[q].id.clone(), g.nodes()[r].id.clone()), e.weight)
        }));
        let config = TrainConfig {
            lambda: g.info().lambda,
            ..config
        };
        let init = RgcnModel::init(config.model_config(g.dim()), derive_seed(config.seed, STREAM_INIT, 0))?;
        let (model, report) = training::train(&g, &targets, init, &config)?;
        let ckpt = Checkpoint {
            model,
            meta: CheckpointMeta {
                seed: config.seed,
                epoch: report.losses.len() as u64,
                loss: report.final_loss(),
                lambda: config.lambda,
            },
        };
        save_checkpoint(&ckpt, &a.out.join("model.ckpt"))?;
        write_file(&a.out.join("loss.tsv"), report.loss_tsv())?;
        write_file(
            &a.out.join("manifest.txt"),
            manifest_text(&config, &[("graph", gpath.display().to_string()), ("dim", g.dim().to_string())]),
        )?;
        println!("epochs\t{}\nfinal_loss\t{:.12e}", report.losses.len(), report.final_loss());
        return Ok(());
    }
    let Some(dataset) = &a.dataset else {
        return Err(CliError::Usage("train needs --dataset or --graph".into()));
    };
    let data = DataArgs {
        dataset: dataset.clone(),
        embeddings: a.embeddings.clone(),
    };
    let (ds, emb) = load_data(&data)?;
    let metrics = parse_metrics(&a.metrics, Gain::Exponential)?;
    let cv = cross_validate(&ds, &emb, Ranker::FedGnn, &config, &metrics)?;
    let mut folds_tsv = String::from("fold\tquery_id\n");
    for f in &cv.folds {
        let n = f.fold + 1;
        let model = f.model.clone().expect("fedgnn fold has a model");
        let report = f.report.as_ref().expect("fedgnn fold has a report");
        let ckpt = Checkpoint {
            model,
            meta: CheckpointMeta {
                seed: config.seed,
                epoch: report.losses.len() as u64,
                loss: report.final_loss(),
                lambda: config.lambda,
            },
        };
        save_checkpoint(&ckpt, &a.out.join(format!("fold{n}.ckpt")))?;
        write_file(&a.out.join(format!("fold{n}.loss.tsv")), report.loss_tsv())?;
        let prep = training::prepare_training(&ds, &emb, &f.train_queries, &config)?;
        save_store(&prep.resources, &a.out.join(format!("fold{n}.resources.emb")))?;
        for q in &f.test_queries {
            let _ = writeln!(folds_tsv, "{n}\t{q}");
        }
    }
    write_file(&a.out.join("folds.tsv"), folds_tsv)?;
    write_file(&a.out.join("per_query.tsv"), cv.per_query_tsv())?;
    write_file(&a.out.join("metrics.tsv"), cv.summary_tsv())?;
    write_file(
        &a.out.join("manifest.txt"),
        manifest_text(
            &config,
            &[
                ("dataset", dataset.display().to_string()),
                ("dim", emb.queries.dim().to_string()),
                ("metrics", a.metrics.clone()),
            ],
        ),
    )?;
    print!("{}", cv.summary_tsv());
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let config = a.train.resolve()?;
    let gain = if a.linear_gain { Gain::Linear } else { Gain::Exponential };
    let metrics = parse_metrics(&a.metrics, gain)?;
    let rankers = parse_rankers(&a.rankers)?;
    let (ds, emb) = load_data(&a.data)?;
    let mut summary = String::new();
    let mut per_query = String::new();
    for (i, r) in rankers.iter().enumerate() {
        let cv = cross_validate(&ds, &emb, *r, &config, &metrics)?;
        let s = cv.summary_tsv();
        let body = if i == 0 { s.as_str() } else { s.split_once('\n').map_or("", |x| x.1) };
        summary.push_str(body);
        for line in cv.per_query_tsv().lines().skip(usize::from(i > 0)) {
            if i == 0 && per_query.is_empty() {
                let _ = writeln!(per_query, "ranker\t{line}");
            } else {
                let _ = writeln!(per_query, "{}\t{line}", r.name());
            }
        }
    }
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_file(&out.join("metrics.tsv"), &summary)?;
        write_file(&out.join("per_query.tsv"), &per_query)?;
        write_file(&out.join("manifest.txt"), manifest_text(&config, &[("rankers", a.rankers.clone()), ("metrics", a.metrics.clone())]))?;
    }
    print!("{summary}");
    Ok(())
}

fn cmd_rank(a: &RankArgs) -> Result<()> {
    if a.top == 0 {
        return Err(CliError::Usage("top must be at least 1".into()));
    }
    let ckpt = load_checkpoint(&a.checkpoint).map_err(|e| CliError::Data(format!("{}: {e}", a.checkpoint.display())))?;
    let resources = load_store(&a.resource_store, StoreKind::Resource)?;
    let (qid, qvec) = match (&a.query_embedding, &a.query_text) {
        (Some(p), _) => {
            let store = load_store(p, StoreKind::Query)?;
            let id = match &a.query_id {
                Some(id) => id.clone(),
                None if store.len() == 1 => store.ids().next().expect("one entry").to_string(),
                None => {
                    return Err(CliError::Usage(format!(
                        "{} holds {} queries; choose one with --query-id",
                        p.display(),
                        store.len()
                    )))
                }
            };
            let v = store
                .get(&id)
                .ok_or_else(|| CliError::Data(format!("query `{id}` not in {}", p.display())))?
                .clone();
            (id, v)
        }
        (None, Some(text)) => (
            a.query_id.clone().unwrap_or_else(|| "query".to_string()),
            synth_embed(text, ckpt.model.config.input_dim, a.embed_seed),
        ),
        (None, None) => return Err(CliError::Usage("rank needs --query-embedding or --query-text".into())),
    };
    let ranking = training::rank_query(&ckpt.model, &qid, &qvec, &resources, ckpt.meta.lambda)?;
    let mut s = String::from("rank\tresource_id\tscore\n");
    for (i, (r, score)) in ranking.top(a.top).iter().enumerate() {
        let _ = writeln!(s, "{}\t{r}\t{score:.6}", i + 1);
    }
    print!("{s}");
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let config = a.train.resolve()?;
    if !(a.step > 0.0) || a.from < 0.0 || a.to > 1.0 || a.from > a.to {
        return Err(CliError::Usage("need 0 <= from <= to <= 1 and step > 0".into()));
    }
    let (ds, emb) = load_data(&a.data)?;
    let rows = sweep_lambda(&ds, &emb, &config, &lambda_grid(a.from, a.to, a.step))?;
    let tsv = sweep_tsv(&rows);
    if let Some(out) = &a.out {
        write_file(out, &tsv)?;
    }
    print!("{tsv}");
    Ok(())
}

fn cmd_broker(a: &BrokerArgs) -> Result<()> {
    let config = a.train.resolve()?;
    let ranker = Ranker::parse(&a.ranker).ok_or_else(|| CliError::Usage(format!("unknown ranker `{}`", a.ranker)))?;
    let mode = BackendMode::parse(&a.backend)
        .ok_or_else(|| CliError::Usage(format!("unknown backend `{}` (oracle or cosine)", a.backend)))?;
    let ts: Vec<usize> = a
        .top_t
        .split(',')
        .map(|t| parse_value::<usize>("top-t", t.trim()))
        .collect::<Result<_>>()?;
    if ts.contains(&0) || a.per_resource == 0 || a.k == 0 {
        return Err(CliError::Usage("T, per-resource limit and k must be positive".into()));
    }
    let (ds, emb) = load_data(&a.data)?;
    let cv = cross_validate(&ds, &emb, ranker, &config, &[Metric::ndcg(10)])?;
    let rankings: BTreeMap<String, _> = cv.folds.iter().flat_map(|f| f.rankings.clone()).collect();
    let backend = match mode {
        BackendMode::Oracle => RetrievalBackend::oracle(&ds.doc_map, &ds.judgments),
        BackendMode::Cosine => RetrievalBackend::cosine(&ds.doc_map, &ds.judgments, &emb.documents),
    };
    let mut report = format!("T\tbackend\tranker\tP@{}\n", a.k);
    for &t in &ts {
        let runs = rankings
            .iter()
            .map(|(q, r)| broker::run_query(&backend, q, emb.queries.get(q), r, t, a.per_resource))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let p = broker::evaluate_document_level(&runs, &ds.judgments, a.k);
        let _ = writeln!(report, "{t}\t{}\t{}\t{:.6}", mode.name(), ranker.name(), p.mean());
        if let Some(out) = &a.out {
            write_file(&out.join(format!("runs-T{t}.tsv")), broker::run_log_tsv(&runs, &ds.doc_map))?;
            write_file(&out.join(format!("p-T{t}.tsv")), p.to_tsv())?;
        }
    }
    if let Some(out) = &a.out {
        write_file(&out.join("broker.tsv"), &report)?;
    }
    print!("{report}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Embed(a) => cmd_embed(a),
        Command::BuildGraph(a) => cmd_build_graph(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Rank(a) => cmd_rank(a),
        Command::SweepLambda(a) => cmd_sweep(a),
        Command::BrokerSim(a) => cmd_broker(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
