use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

use fedrank::corpus;
use fedrank::embedding::{self, EmbeddingVector, StoreKind};
use fedrank::graph::{self, AlphaMode};
use fedrank::metrics::{self, Metric, RankedList, ResourceRelevance};
use fedrank::rgcn::{self, Activation, Aggregator};
use fedrank::synth::{self as fsynth, SynthConfig};
use fedrank::training::{self, CorpusEmbeddings, Ranker, TrainConfig, TrainError};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn train_err(e: TrainError) -> PyErr {
    if e.is_numeric() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        value_err(e)
    }
}

fn store_kind(kind: &str) -> PyResult<StoreKind> {
    match kind {
        "query" => Ok(StoreKind::Query),
        "document" => Ok(StoreKind::Document),
        "resource" => Ok(StoreKind::Resource),
        k => Err(PyValueError::new_err(format!("unknown store kind `{k}`"))),
    }
}

/// Queries, documents, the document-to-resource map and graded judgments.
#[pyclass(module = "fedrank_py", skip_from_py_object)]
#[derive(Clone)]
struct Dataset {
    inner: corpus::Dataset,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: corpus::Dataset::load_dir(&dir).map_err(value_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (seed=0, queries=40, topics=4, resources_per_topic=5, docs_per_resource=12))]
    fn synth(seed: u64, queries: usize, topics: usize, resources_per_topic: usize, docs_per_resource: usize) -> PyResult<Self> {
        let config = SynthConfig {
            seed,
            queries,
            topics,
            resources_per_topic,
            docs_per_resource,
            ..SynthConfig::default()
        };
        Ok(Self {
            inner: fsynth::generate(&config).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn overfit_fixture() -> Self {
        Self {
            inner: fsynth::overfit_fixture(),
        }
    }

    fn save(&self, dir: PathBuf) -> PyResult<String> {
        Ok(self.inner.save_dir(&dir).map_err(value_err)?.to_text())
    }

    fn query_ids(&self) -> Vec<String> {
        self.inner.judged_query_ids()
    }

    fn resource_ids(&self) -> Vec<String> {
        self.inner.doc_map.resource_ids()
    }

    /// Summed grade per resource for one query.
    fn relevance(&self, query_id: &str) -> PyResult<BTreeMap<String, f64>> {
        let rel = metrics::resource_relevance(&self.inner.judgments, query_id, &self.inner.doc_map).map_err(value_err)?;
        Ok(rel.iter().map(|(k, v)| (k.to_string(), v)).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.queries.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(queries={}, documents={}, resources={}, judgments={})",
            self.inner.queries.len(),
            self.inner.doc_map.num_documents(),
            self.inner.doc_map.num_resources(),
            self.inner.judgments.len()
        )
    }
}

/// Fixed-dimension vectors keyed by id.
#[pyclass(module = "fedrank_py", from_py_object)]
#[derive(Clone)]
struct EmbeddingStore {
    inner: embedding::EmbeddingStore,
}

#[pymethods]
impl EmbeddingStore {
    #[new]
    #[pyo3(signature = (dim, kind="document"))]
    fn new(dim: usize, kind: &str) -> PyResult<Self> {
        Ok(Self {
            inner: embedding::EmbeddingStore::new(dim, store_kind(kind)?).map_err(value_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (path, kind="document"))]
    fn read(path: PathBuf, kind: &str) -> PyResult<Self> {
        Ok(Self {
            inner: embedding::read_store(&path, store_kind(kind)?).map_err(value_err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        embedding::write_store(&self.inner, &path).map_err(value_err)
    }

    fn insert(&mut self, id: String, values: Vec<f64>) -> PyResult<()> {
        let v = EmbeddingVector::new(values).map_err(value_err)?;
        self.inner.insert(id, &v).map_err(value_err)
    }

    fn get(&self, id: &str) -> Option<Vec<f64>> {
        self.inner.get(id).map(|v| v.as_slice().to_vec())
    }

    fn ids(&self) -> Vec<String> {
        self.inner.ids().map(str::to_string).collect()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, id: &str) -> bool {
        self.inner.get(id).is_some()
    }
}

/// Query and document embeddings of one dataset.
#[pyclass(module = "fedrank_py", skip_from_py_object)]
#[derive(Clone)]
struct Embeddings {
    inner: CorpusEmbeddings,
}

#[pymethods]
impl Embeddings {
    #[new]
    fn new(queries: EmbeddingStore, documents: EmbeddingStore) -> Self {
        Self {
            inner: CorpusEmbeddings {
                queries: queries.inner,
                documents: documents.inner,
            },
        }
    }

    /// Hashed bag-of-words vectors for every query and document.
    #[staticmethod]
    #[pyo3(signature = (dataset, dim=768, seed=0))]
    fn synthetic(dataset: &Dataset, dim: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: fsynth::embed_dataset(&dataset.inner, dim, seed).map_err(value_err)?,
        })
    }

    #[getter]
    fn queries(&self) -> EmbeddingStore {
        EmbeddingStore {
            inner: self.inner.queries.clone(),
        }
    }

    #[getter]
    fn documents(&self) -> EmbeddingStore {
        EmbeddingStore {
            inner: self.inner.documents.clone(),
        }
    }
}

/// Training and protocol settings; unspecified fields keep their defaults.
#[pyclass(module = "fedrank_py", skip_from_py_object)]
#[derive(Clone)]
struct Config {
    inner: TrainConfig,
}

#[pymethods]
impl Config {
    #[new]
    #[pyo3(signature = (*, lr=None, epochs=None, seed=None, dropout=None, lam=None, alpha=None, top_n=None, folds=None, aggregator=None, activation=None, layers=None, hidden_dim=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        lr: Option<f64>,
        epochs: Option<usize>,
        seed: Option<u64>,
        dropout: Option<f64>,
        lam: Option<f64>,
        alpha: Option<f64>,
        top_n: Option<usize>,
        folds: Option<usize>,
        aggregator: Option<&str>,
        activation: Option<&str>,
        layers: Option<usize>,
        hidden_dim: Option<usize>,
    ) -> PyResult<Self> {
        let d = TrainConfig::default();
        let aggregator = match aggregator {
            Some(a) => Aggregator::parse(a).ok_or_else(|| PyValueError::new_err(format!("unknown aggregator `{a}`")))?,
            None => d.aggregator,
        };
        let activation = match activation {
            Some(a) => Activation::parse(a).ok_or_else(|| PyValueError::new_err(format!("unknown activation `{a}`")))?,
            None => d.activation,
        };
        let lambda = lam.unwrap_or(d.lambda);
        if !(0.0..=1.0).contains(&lambda) {
            return Err(PyValueError::new_err(format!("lambda must lie in [0, 1], got {lambda}")));
        }
        Ok(Self {
            inner: TrainConfig {
                lr: lr.unwrap_or(d.lr),
                epochs: epochs.unwrap_or(d.epochs),
                seed: seed.unwrap_or(d.seed),
                dropout: dropout.unwrap_or(d.dropout),
                lambda,
                alpha: alpha.map_or(AlphaMode::Auto, AlphaMode::Fixed),
                top_n: top_n.unwrap_or(d.top_n),
                folds: folds.unwrap_or(d.folds),
                aggregator,
                activation,
                layers: layers.unwrap_or(d.layers),
                hidden_dim: hidden_dim.or(d.hidden_dim),
                ..d
            },
        })
    }

    fn manifest(&self) -> String {
        self.inner.manifest()
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "Config(lr={}, epochs={}, seed={}, lambda={}, folds={}, aggregator={})",
            c.lr,
            c.epochs,
            c.seed,
            c.lambda,
            c.folds,
            c.aggregator.name()
        )
    }
}

/// Heterogeneous query/resource graph.
#[pyclass(module = "fedrank_py", skip_from_py_object)]
#[derive(Clone)]
struct Graph {
    inner: graph::HeteroGraph,
}

#[pymethods]
impl Graph {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: graph::read_graph(&path).map_err(value_err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        graph::write_graph(&self.inner, &path).map_err(value_err)
    }

    /// `(resource_nodes, query_nodes, qr_edges, rr_edges)`.
    fn stats(&self) -> (usize, usize, usize, usize) {
        let s = graph::graph_stats(&self.inner);
        (s.resource_nodes, s.query_nodes, s.qr_edges, s.rr_edges)
    }
}

/// A trained model with the lambda its graphs were built with.
#[pyclass(module = "fedrank_py", skip_from_py_object)]
#[derive(Clone)]
struct Model {
    inner: rgcn::Checkpoint,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: rgcn::load_checkpoint(&path).map_err(value_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        rgcn::save_checkpoint(&self.inner, &path).map_err(value_err)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.model.num_parameters()
    }

    /// Resources ranked for a query vector through the inference graph.
    fn rank(&self, query: Vec<f64>, resources: &EmbeddingStore) -> PyResult<Vec<(String, f64)>> {
        let qv = EmbeddingVector::new(query).map_err(value_err)?;
        let r = training::rank_query(&self.inner.model, "query", &qv, &resources.inner, self.inner.meta.lambda)
            .map_err(train_err)?;
        Ok(r.items().to_vec())
    }

    /// Resources ranked for a query node already in `graph`.
    fn rank_in_graph(&self, graph: &Graph, query_id: &str) -> PyResult<Vec<(String, f64)>> {
        let r = training::rank_in_graph(&self.inner.model, &graph.inner, query_id).map_err(train_err)?;
        Ok(r.items().to_vec())
    }
}

/// Builds the training graph over `queries` (default: all judged queries).
#[pyfunction]
#[pyo3(signature = (dataset, embeddings, config, queries=None))]
fn build_graph(
    dataset: &Dataset,
    embeddings: &Embeddings,
    config: &Config,
    queries: Option<Vec<String>>,
) -> PyResult<(Graph, EmbeddingStore)> {
    let qs = queries.unwrap_or_else(|| dataset.inner.judged_query_ids());
    let prep = training::prepare_training(&dataset.inner, &embeddings.inner, &qs, &config.inner).map_err(train_err)?;
    Ok((
        Graph { inner: prep.graph },
        EmbeddingStore {
            inner: prep.resources,
        },
    ))
}

/// Trains on the given queries and returns the model with its loss curve.
#[pyfunction]
#[pyo3(signature = (dataset, embeddings, config, queries=None))]
fn train(
    dataset: &Dataset,
    embeddings: &Embeddings,
    config: &Config,
    queries: Option<Vec<String>>,
) -> PyResult<(Model, Vec<f64>)> {
    let c = &config.inner;
    let qs = queries.unwrap_or_else(|| dataset.inner.judged_query_ids());
    let prep = training::prepare_training(&dataset.inner, &embeddings.inner, &qs, c).map_err(train_err)?;
    let init = rgcn::RgcnModel::init(c.model_config(prep.graph.dim()), c.seed).map_err(value_err)?;
    let (model, report) = training::train(&prep.graph, &prep.targets, init, c).map_err(train_err)?;
    let meta = rgcn::CheckpointMeta {
        seed: c.seed,
        epoch: report.losses.len() as u64,
        loss: report.final_loss(),
        lambda: c.lambda,
    };
    Ok((
        Model {
            inner: rgcn::Checkpoint { model, meta },
        },
        report.losses,
    ))
}

fn parse_metrics(names: &[String]) -> PyResult<Vec<Metric>> {
    names.iter().map(|m| m.parse::<Metric>().map_err(value_err)).collect()
}

/// k-fold averages, keyed by metric name such as `nDCG@10`.
#[pyfunction]
#[pyo3(signature = (dataset, embeddings, ranker, config, metrics=vec!["ndcg@10".to_string()]))]
fn cross_validate(
    dataset: &Dataset,
    embeddings: &Embeddings,
    ranker: &str,
    config: &Config,
    metrics: Vec<String>,
) -> PyResult<BTreeMap<String, f64>> {
    let ranker = Ranker::parse(ranker).ok_or_else(|| PyValueError::new_err(format!("unknown ranker `{ranker}`")))?;
    let ms = parse_metrics(&metrics)?;
    let cv = training::cross_validate(&dataset.inner, &embeddings.inner, ranker, &config.inner, &ms).map_err(train_err)?;
    Ok(ms.iter().enumerate().map(|(i, m)| (m.to_string(), cv.average(i))).collect())
}

/// `(lambda, rr_edges, nDCG@10, nP@10)` rows.
#[pyfunction]
#[pyo3(signature = (dataset, embeddings, config, lambdas=None))]
fn sweep_lambda(
    dataset: &Dataset,
    embeddings: &Embeddings,
    config: &Config,
    lambdas: Option<Vec<f64>>,
) -> PyResult<Vec<(f64, usize, f64, f64)>> {
    let grid = lambdas.unwrap_or_else(|| training::lambda_grid(0.0, 1.0, 0.1));
    let rows = training::sweep_lambda(&dataset.inner, &embeddings.inner, &config.inner, &grid).map_err(train_err)?;
    Ok(rows.iter().map(|r| (r.lambda, r.rr_edges, r.ndcg10, r.np10)).collect())
}

/// Resources ranked by raw cosine to the query vector.
#[pyfunction]
fn fedbert_rank(query: Vec<f64>, resources: &EmbeddingStore) -> PyResult<Vec<(String, f64)>> {
    let qv = EmbeddingVector::new(query).map_err(value_err)?;
    Ok(training::fedbert_baseline(&qv, &resources.inner).map_err(train_err)?.items().to_vec())
}

/// A metric such as `ndcg@10`, `np@5` or `p@10` of a ranked id list.
#[pyfunction]
fn evaluate(metric: &str, ranking: Vec<String>, relevance: BTreeMap<String, f64>) -> PyResult<f64> {
    let m: Metric = metric.parse().map_err(value_err)?;
    let n = ranking.len();
    let list = RankedList::from_scores(ranking.into_iter().enumerate().map(|(i, id)| (id, (n - i) as f64)))
        .map_err(value_err)?;
    Ok(m.evaluate(&list, &ResourceRelevance::new(relevance)))
}

#[pymodule]
pub fn fedrank_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<EmbeddingStore>()?;
    m.add_class::<Embeddings>()?;
    m.add_class::<Config>()?;
    m.add_class::<Graph>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(build_graph, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_lambda, m)?)?;
    m.add_function(wrap_pyfunction!(fedbert_rank, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
