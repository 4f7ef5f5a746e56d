//! Pointwise training, k-fold cross-validation and the cosine baseline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{select_top_documents, CorpusError, Dataset, DocMap, JudgmentSet};
use crate::embedding::{build_resource_store, cosine_slices, EmbeddingError, EmbeddingStore, EmbeddingVector};
use crate::graph::{
    build_inference_graph, build_training_graph, graph_stats, qr_weights, resolve_alpha, AlphaMode,
    BuildInfo, GraphError, HeteroGraph, NodeType, QrWeightTable,
};
use crate::metrics::{resource_relevance, Metric, MetricError, RankedList};
use crate::rgcn::{
    model_forward, model_forward_on_tape, predict, Activation, Aggregator, MessageOperators,
    RgcnConfig, RgcnError, RgcnModel,
};
use crate::tensor::{Adam, AdamConfig, Reduction, Tape, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("epochs must be at least 1")]
    ZeroEpochs,
    #[error("cross-validation needs k >= 2, got {0}")]
    TooFewFolds(usize),
    #[error("cannot split {queries} queries into {k} folds")]
    FoldsExceedQueries { k: usize, queries: usize },
    #[error("fold {0} has no judged test queries")]
    EmptyFold(usize),
    #[error("no training targets")]
    NoTargets,
    #[error("target ({query}, {resource}) has no node in the training graph")]
    MissingTargetNode { query: String, resource: String },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("test query `{0}` leaked into the training graph")]
    Leakage(String),
    #[error("query `{0}` has no embedding")]
    MissingQueryEmbedding(String),
    #[error(transparent)]
    Rgcn(#[from] RgcnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

impl TrainError {
    /// Failures caused by the numbers rather than the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            TrainError::NonFiniteLoss { .. }
                | TrainError::Tensor(TensorError::NonFinite(_) | TensorError::NonFiniteGradient)
                | TrainError::Rgcn(RgcnError::Tensor(
                    TensorError::NonFinite(_) | TensorError::NonFiniteGradient
                ))
        )
    }
}

type Result<T> = std::result::Result<T, TrainError>;

/// Independent seed for one purpose (init, dropout, folds, ...) and index.
pub fn derive_seed(seed: u64, purpose: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng.set_word_pos(u128::from(index) * 2);
    rng.gen()
}

const STREAM_FOLDS: u64 = 1;
pub(crate) const STREAM_INIT: u64 = 2;
const STREAM_DROPOUT: u64 = 3;
const STREAM_RANDOM: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub dropout: f64,
    pub lambda: f64,
    pub alpha: AlphaMode,
    pub top_n: usize,
    pub folds: usize,
    pub aggregator: Aggregator,
    pub activation: Activation,
    pub layers: usize,
    /// Hidden and output width; `None` keeps the input width.
    pub hidden_dim: Option<usize>,
    pub reduction: Reduction,
    /// Stop after this many epochs without a lower loss.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 200,
            seed: 0,
            dropout: 0.0,
            lambda: 0.0,
            alpha: AlphaMode::Auto,
            top_n: 10,
            folds: 5,
            aggregator: Aggregator::Sum,
            activation: Activation::Relu,
            layers: 2,
            hidden_dim: None,
            reduction: Reduction::Sum,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self, input_dim: usize) -> RgcnConfig {
        let h = self.hidden_dim.unwrap_or(input_dim);
        RgcnConfig {
            input_dim,
            hidden_dim: h,
            output_dim: if self.layers == 0 { input_dim } else { h },
            num_layers: self.layers,
            activation: self.activation,
            aggregator: self.aggregator,
            dropout: self.dropout,
        }
    }

    /// `key = value` lines for every field.
    pub fn manifest(&self) -> String {
        let alpha = match self.alpha {
            AlphaMode::Auto => "auto".to_string(),
            AlphaMode::Fixed(a) => a.to_string(),
        };
        let reduction = match self.reduction {
            Reduction::Sum => "sum",
            Reduction::Mean => "mean",
        };
        let hidden = self.hidden_dim.map_or("input".to_string(), |h| h.to_string());
        let patience = self.patience.map_or("none".to_string(), |p| p.to_string());
        format!(
            "lr = {}\nepochs = {}\nseed = {}\ndropout = {}\nlambda = {}\nalpha = {alpha}\ntop_n = {}\nfolds = {}\naggregator = {}\nactivation = {}\nlayers = {}\nhidden_dim = {hidden}\nreduction = {reduction}\npatience = {patience}\n",
            self.lr,
            self.epochs,
            self.seed,
            self.dropout,
            self.lambda,
            self.top_n,
            self.folds,
            self.aggregator.name(),
            self.activation.name(),
            self.layers,
        )
    }
}

/// Disjoint query subsets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub folds: Vec<Vec<String>>,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn test(&self, fold: usize) -> &[String] {
        &self.folds[fold]
    }

    /// Every query outside `fold`, sorted.
    pub fn train(&self, fold: usize) -> Vec<String> {
        let mut out: Vec<String> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect();
        out.sort();
        out
    }
}

/// Sorts and dedups the ids, shuffles them with `seed`, then deals them
/// round-robin into `k` folds. Each fold is sorted.
pub fn kfold_split(query_ids: &[String], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(TrainError::TooFewFolds(k));
    }
    let mut ids: Vec<String> = query_ids.to_vec();
    ids.sort();
    ids.dedup();
    if k > ids.len() {
        return Err(TrainError::FoldsExceedQueries {
            k,
            queries: ids.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_FOLDS, 0));
    ids.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (i, id) in ids.into_iter().enumerate() {
        folds[i % k].push(id);
    }
    for f in &mut folds {
        f.sort();
    }
    Ok(FoldSplit { folds })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub config: TrainConfig,
    /// Loss of the forward pass preceding each update.
    pub losses: Vec<f64>,
    pub wall_clock: Duration,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }

    pub fn loss_tsv(&self) -> String {
        let mut s = String::from("epoch\tloss\n");
        for (e, l) in self.losses.iter().enumerate() {
            let _ = writeln!(s, "{}\t{l:.12e}", e + 1);
        }
        s
    }
}

/// Target pairs resolved to graph node indices.
struct Targets {
    queries: Vec<usize>,
    resources: Vec<usize>,
    values: Tensor,
}

fn resolve_targets(g: &HeteroGraph, targets: &QrWeightTable) -> Result<Targets> {
    if targets.is_empty() {
        return Err(TrainError::NoTargets);
    }
    let mut t = Targets {
        queries: Vec::with_capacity(targets.len()),
        resources: Vec::with_capacity(targets.len()),
        values: Tensor::zeros(1, 1),
    };
    let mut values = Vec::with_capacity(targets.len());
    for (q, r, w) in targets.iter() {
        let missing = || TrainError::MissingTargetNode {
            query: q.to_string(),
            resource: r.to_string(),
        };
        t.queries.push(g.node_index(NodeType::Query, q).ok_or_else(missing)?);
        t.resources.push(g.node_index(NodeType::Resource, r).ok_or_else(missing)?);
        values.push(w);
    }
    t.values = Tensor::column(values)?;
    Ok(t)
}

/// Loss of `model` on the targets, evaluation mode.
pub fn evaluate_loss(
    g: &HeteroGraph,
    targets: &QrWeightTable,
    model: &RgcnModel,
    reduction: Reduction,
) -> Result<f64> {
    let t = resolve_targets(g, targets)?;
    let ops = MessageOperators::new(g, model.config.aggregator);
    let mut tape = Tape::new();
    let fwd = model_forward_on_tape(&mut tape, g, &ops, model, false, 0)?;
    let loss = pair_loss(&mut tape, fwd.output, &t, reduction)?;
    Ok(tape.value(loss).item())
}

fn pair_loss(tape: &mut Tape, h: crate::tensor::Var, t: &Targets, reduction: Reduction) -> Result<crate::tensor::Var> {
    let hq = tape.select_rows(h, &t.queries)?;
    let hr = tape.select_rows(h, &t.resources)?;
    let cos = tape.cosine_rows(hq, hr)?;
    Ok(tape.mse(cos, &t.values, reduction)?)
}

/// Full-batch Adam on `Σ (ẑ − cos(h_q, h_r))²` over the target pairs.
pub fn train(
    g: &HeteroGraph,
    targets: &QrWeightTable,
    mut model: RgcnModel,
    config: &TrainConfig,
) -> Result<(RgcnModel, TrainReport)> {
    if config.epochs == 0 {
        return Err(TrainError::ZeroEpochs);
    }
    let start = Instant::now();
    let t = resolve_targets(g, targets)?;
    let ops = MessageOperators::new(g, model.config.aggregator);
    let params: Vec<Tensor> = model.params().into_iter().cloned().collect();
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &params,
    )?;
    let mut losses = Vec::with_capacity(config.epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    for epoch in 0..config.epochs {
        let mut tape = Tape::new();
        let dseed = derive_seed(config.seed, STREAM_DROPOUT, epoch as u64);
        let fwd = model_forward_on_tape(&mut tape, g, &ops, &model, true, dseed).map_err(|e| match e {
            RgcnError::Tensor(TensorError::NonFinite(_)) => TrainError::NonFiniteLoss { epoch: epoch + 1 },
            e => e.into(),
        })?;
        let loss = pair_loss(&mut tape, fwd.output, &t, config.reduction).map_err(|e| match e {
            TrainError::Tensor(TensorError::NonFinite(_)) => TrainError::NonFiniteLoss { epoch: epoch + 1 },
            e => e,
        })?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch: epoch + 1 });
        }
        losses.push(value);
        if model.layers.is_empty() {
            continue;
        }
        let grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = fwd.params.iter().map(|&v| grads.get(v)).collect();
        let mut current: Vec<Tensor> = model.params().into_iter().cloned().collect();
        adam.step(&mut current, &grads)?;
        for (p, new) in model.params_mut().into_iter().zip(current) {
            *p = new;
        }
        if let Some(patience) = config.patience {
            if value < best {
                best = value;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    break;
                }
            }
        }
    }
    Ok((
        model,
        TrainReport {
            config: *config,
            losses,
            wall_clock: start.elapsed(),
        },
    ))
}

/// Resources ranked by raw cosine to the query vector.
pub fn fedbert_baseline(query: &EmbeddingVector, resources: &EmbeddingStore) -> Result<RankedList> {
    if query.dim() != resources.dim() {
        return Err(EmbeddingError::DimMismatch {
            expected: resources.dim(),
            found: query.dim(),
        }
        .into());
    }
    Ok(RankedList::from_scores(resources.iter().map(|(id, v)| {
        (id.to_string(), cosine_slices(query.as_slice(), v.as_slice()))
    }))?)
}

/// A uniformly random ranking, deterministic in `seed` and the query id.
pub fn random_baseline(query_id: &str, resources: &EmbeddingStore, seed: u64) -> RankedList {
    let h = query_id
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_RANDOM, h));
    let mut ids: Vec<&str> = resources.ids().collect();
    ids.shuffle(&mut rng);
    let n = ids.len();
    RankedList::from_scores(ids.into_iter().enumerate().map(|(i, id)| (id.to_string(), (n - i) as f64)))
        .expect("distinct ids")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Ranker {
    FedGnn,
    FedBert,
    Random,
}

impl Ranker {
    pub fn name(self) -> &'static str {
        match self {
            Ranker::FedGnn => "fedgnn",
            Ranker::FedBert => "fedbert",
            Ranker::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fedgnn" => Some(Ranker::FedGnn),
            "fedbert" => Some(Ranker::FedBert),
            "random" => Some(Ranker::Random),
            _ => None,
        }
    }
}

/// Query and document vectors of a dataset.
#[derive(Clone, Debug)]
pub struct CorpusEmbeddings {
    pub queries: EmbeddingStore,
    pub documents: EmbeddingStore,
}

/// Everything learned from one set of training queries, before any model.
#[derive(Clone, Debug)]
pub struct PreparedTraining {
    pub train_queries: Vec<String>,
    pub resources: EmbeddingStore,
    pub targets: QrWeightTable,
    pub alpha: f64,
    pub graph: HeteroGraph,
}

/// Resource vectors, qr targets and the training graph, using only the
/// judgments of `train_queries`.
pub fn prepare_training(
    dataset: &Dataset,
    emb: &CorpusEmbeddings,
    train_queries: &[String],
    config: &TrainConfig,
) -> Result<PreparedTraining> {
    let keep: BTreeSet<String> = train_queries.iter().cloned().collect();
    let judgments = dataset.judgments.restrict_to(&keep);
    let top = select_top_documents(&judgments, &dataset.doc_map, config.top_n)?;
    let (resources, _) = build_resource_store(&top, &emb.documents)?;
    let alpha = resolve_alpha(&judgments, config.alpha)?;
    let targets = qr_weights(&judgments, alpha)?;
    let queries: Vec<String> = judgments.query_ids().into_iter().collect();
    let graph = build_training_graph(
        &queries,
        &emb.queries,
        &resources,
        &targets,
        BuildInfo {
            lambda: config.lambda,
            alpha: Some(alpha),
            top_n: config.top_n,
        },
    )?;
    Ok(PreparedTraining {
        train_queries: queries,
        resources,
        targets,
        alpha,
        graph,
    })
}

/// Fails when any of `test_queries` is a query node of `g`.
pub fn check_no_leakage(g: &HeteroGraph, test_queries: &[String]) -> Result<()> {
    for q in test_queries {
        if g.node_index(NodeType::Query, q).is_some() {
            return Err(TrainError::Leakage(q.clone()));
        }
    }
    Ok(())
}

/// Ranking of all resources for an unseen query.
pub fn rank_query(
    model: &RgcnModel,
    query_id: &str,
    query: &EmbeddingVector,
    resources: &EmbeddingStore,
    lambda: f64,
) -> Result<RankedList> {
    let g = build_inference_graph(query_id, query, resources, lambda)?;
    let h = model_forward(&g, model, false, 0)?;
    Ok(predict(&g, &h, query_id)?)
}

/// Ranking for a query node already present in `g`, e.g. a training query.
pub fn rank_in_graph(model: &RgcnModel, g: &HeteroGraph, query_id: &str) -> Result<RankedList> {
    let h = model_forward(g, model, false, 0)?;
    Ok(predict(g, &h, query_id)?)
}

/// Metric values per query.
pub fn score_rankings(
    rankings: &BTreeMap<String, RankedList>,
    judgments: &JudgmentSet,
    doc_map: &DocMap,
    metrics: &[Metric],
) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for (q, r) in rankings {
        let rel = resource_relevance(judgments, q, doc_map)?;
        out.insert(q.clone(), metrics.iter().map(|m| m.evaluate(r, &rel)).collect());
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub train_queries: Vec<String>,
    pub test_queries: Vec<String>,
    /// Present for [`Ranker::FedGnn`].
    pub model: Option<RgcnModel>,
    pub report: Option<TrainReport>,
    pub graph_rr_edges: usize,
    pub rankings: BTreeMap<String, RankedList>,
    /// Per test query, one value per metric.
    pub values: BTreeMap<String, Vec<f64>>,
}

impl FoldResult {
    pub fn mean(&self, metric: usize) -> f64 {
        let n = self.values.len() as f64;
        self.values.values().map(|v| v[metric]).sum::<f64>() / n
    }
}

#[derive(Clone, Debug)]
pub struct CvReport {
    pub ranker: Ranker,
    pub config: TrainConfig,
    pub metrics: Vec<Metric>,
    pub folds: Vec<FoldResult>,
}

impl CvReport {
    /// Arithmetic mean of the per-fold means.
    pub fn average(&self, metric: usize) -> f64 {
        self.folds.iter().map(|f| f.mean(metric)).sum::<f64>() / self.folds.len() as f64
    }

    pub fn average_of(&self, metric: Metric) -> Option<f64> {
        self.metrics.iter().position(|m| *m == metric).map(|i| self.average(i))
    }

    /// `fold<TAB>query_id<TAB>metric<TAB>k<TAB>value` rows.
    pub fn per_query_tsv(&self) -> String {
        let mut s = String::from("fold\tquery_id\tmetric\tk\tvalue\n");
        for f in &self.folds {
            for (q, vals) in &f.values {
                for (m, v) in self.metrics.iter().zip(vals) {
                    let _ = writeln!(s, "{}\t{q}\t{}\t{}\t{v:.6}", f.fold + 1, metric_name(m), m.k);
                }
            }
        }
        s
    }

    /// Per-fold means plus a `mean` row per metric.
    pub fn summary_tsv(&self) -> String {
        let mut s = String::from("ranker\tfold\tmetric\tk\tvalue\n");
        for (i, m) in self.metrics.iter().enumerate() {
            for f in &self.folds {
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}\t{}\t{:.6}",
                    self.ranker.name(),
                    f.fold + 1,
                    metric_name(m),
                    m.k,
                    f.mean(i)
                );
            }
            let _ = writeln!(
                s,
                "{}\tmean\t{}\t{}\t{:.6}",
                self.ranker.name(),
                metric_name(m),
                m.k,
                self.average(i)
            );
        }
        s
    }
}

fn metric_name(m: &Metric) -> String {
    let s = m.to_string();
    s.split('@').next().unwrap_or_default().to_string()
}

/// Trains and evaluates one fold. `test_queries` must be disjoint from
/// `train_queries`.
pub fn run_fold(
    dataset: &Dataset,
    emb: &CorpusEmbeddings,
    fold: usize,
    train_queries: &[String],
    test_queries: &[String],
    ranker: Ranker,
    config: &TrainConfig,
    metrics: &[Metric],
) -> Result<FoldResult> {
    if test_queries.is_empty() {
        return Err(TrainError::EmptyFold(fold));
    }
    let prep = prepare_training(dataset, emb, train_queries, config)?;
    check_no_leakage(&prep.graph, test_queries)?;
    let (model, report) = match ranker {
        Ranker::FedGnn => {
            let init = RgcnModel::init(
                config.model_config(prep.graph.dim()),
                derive_seed(config.seed, STREAM_INIT, fold as u64),
            )?;
            let (m, r) = train(&prep.graph, &prep.targets, init, config)?;
            (Some(m), Some(r))
        }
        _ => (None, None),
    };
    let mut rankings = BTreeMap::new();
    for q in test_queries {
        let qv = emb
            .queries
            .get(q)
            .ok_or_else(|| TrainError::MissingQueryEmbedding(q.clone()))?;
        let ranking = match ranker {
            Ranker::FedGnn => rank_query(model.as_ref().expect("trained"), q, qv, &prep.resources, config.lambda)?,
            Ranker::FedBert => fedbert_baseline(qv, &prep.resources)?,
            Ranker::Random => random_baseline(q, &prep.resources, config.seed),
        };
        rankings.insert(q.clone(), ranking);
    }
    let values = score_rankings(&rankings, &dataset.judgments, &dataset.doc_map, metrics)?;
    Ok(FoldResult {
        fold,
        train_queries: prep.train_queries,
        test_queries: test_queries.to_vec(),
        model,
        report,
        graph_rr_edges: graph_stats(&prep.graph).rr_edges,
        rankings,
        values,
    })
}

/// k-fold cross-validation over the judged queries. Every fold is trained
/// from scratch on its training queries only.
pub fn cross_validate(
    dataset: &Dataset,
    emb: &CorpusEmbeddings,
    ranker: Ranker,
    config: &TrainConfig,
    metrics: &[Metric],
) -> Result<CvReport> {
    let split = kfold_split(&dataset.judged_query_ids(), config.folds, config.seed)?;
    cross_validate_split(dataset, emb, &split, ranker, config, metrics)
}

pub fn cross_validate_split(
    dataset: &Dataset,
    emb: &CorpusEmbeddings,
    split: &FoldSplit,
    ranker: Ranker,
    config: &TrainConfig,
    metrics: &[Metric],
) -> Result<CvReport> {
    let folds = (0..split.k())
        .map(|i| run_fold(dataset, emb, i, &split.train(i), split.test(i), ranker, config, metrics))
        .collect::<Result<Vec<_>>>()?;
    Ok(CvReport {
        ranker,
        config: *config,
        metrics: metrics.to_vec(),
        folds,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    /// rr edges of the graph built from all judged queries.
    pub rr_edges: usize,
    pub ndcg10: f64,
    pub np10: f64,
}

pub const SWEEP_HEADER: &str = "lambda\trr_edges\tnDCG@10\tnP@10";

pub fn sweep_tsv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{:.1}\t{}\t{:.6}\t{:.6}", r.lambda, r.rr_edges, r.ndcg10, r.np10);
    }
    s
}

/// `from, from + step, ...` up to `to`, computed by index to avoid drift.
pub fn lambda_grid(from: f64, to: f64, step: f64) -> Vec<f64> {
    assert!(step > 0.0, "step must be positive");
    let n = ((to - from) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| ((from + i as f64 * step) * 1e9).round() / 1e9).collect()
}

/// Cross-validated FedGNN metrics for each λ.
pub fn sweep_lambda(
    dataset: &Dataset,
    emb: &CorpusEmbeddings,
    config: &TrainConfig,
    lambdas: &[f64],
) -> Result<Vec<SweepRow>> {
    let metrics = [Metric::ndcg(10), Metric::np(10)];
    let all = dataset.judged_query_ids();
    let split = kfold_split(&all, config.folds, config.seed)?;
    lambdas
        .iter()
        .map(|&lambda| {
            let c = TrainConfig { lambda, ..*config };
            let full = prepare_training(dataset, emb, &all, &c)?;
            let cv = cross_validate_split(dataset, emb, &split, Ranker::FedGnn, &c, &metrics)?;
            Ok(SweepRow {
                lambda,
                rr_edges: graph_stats(&full.graph).rr_edges,
                ndcg10: cv.average(0),
                np10: cv.average(1),
            })
        })
        .collect()
}
