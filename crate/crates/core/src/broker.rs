//! Document-level simulation: select resources, retrieve from each, merge.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::corpus::{DocMap, JudgmentSet};
use crate::embedding::{cosine_slices, EmbeddingStore, EmbeddingVector};
use crate::metrics::{precision_at_k, Metric, MetricError, MetricReport, RankedList};

pub const DEFAULT_PER_RESOURCE_LIMIT: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum BrokerError {
    #[error("unknown resource `{0}`")]
    UnknownResource(String),
    #[error("T must be at least 1")]
    ZeroT,
    #[error("per-resource limit must be at least 1")]
    ZeroLimit,
    #[error("cosine retrieval needs a query vector for `{0}`")]
    MissingQueryVector(String),
    #[error("document `{0}` has no embedding")]
    MissingDocument(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

type Result<T> = std::result::Result<T, BrokerError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackendMode {
    /// Judged documents ranked by grade.
    Oracle,
    /// Every document ranked by cosine to the query vector.
    Cosine,
}

impl BackendMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "oracle" => Some(BackendMode::Oracle),
            "cosine" => Some(BackendMode::Cosine),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BackendMode::Oracle => "oracle",
            BackendMode::Cosine => "cosine",
        }
    }
}

/// Per-resource search engines.
pub struct RetrievalBackend<'a> {
    pub mode: BackendMode,
    doc_map: &'a DocMap,
    judgments: &'a JudgmentSet,
    documents: Option<&'a EmbeddingStore>,
}

impl<'a> RetrievalBackend<'a> {
    pub fn oracle(doc_map: &'a DocMap, judgments: &'a JudgmentSet) -> Self {
        Self {
            mode: BackendMode::Oracle,
            doc_map,
            judgments,
            documents: None,
        }
    }

    pub fn cosine(doc_map: &'a DocMap, judgments: &'a JudgmentSet, documents: &'a EmbeddingStore) -> Self {
        Self {
            mode: BackendMode::Cosine,
            doc_map,
            judgments,
            documents: Some(documents),
        }
    }

    /// The resource's documents for `query_id`, best first, at most `limit`.
    pub fn retrieve(
        &self,
        resource_id: &str,
        query_id: &str,
        query: Option<&EmbeddingVector>,
        limit: usize,
    ) -> Result<RankedList> {
        if limit == 0 {
            return Err(BrokerError::ZeroLimit);
        }
        let record = self
            .doc_map
            .resource(resource_id)
            .ok_or_else(|| BrokerError::UnknownResource(resource_id.to_string()))?;
        let scores: Vec<(String, f64)> = match self.mode {
            BackendMode::Oracle => self
                .judgments
                .for_query(query_id)
                .filter(|j| self.doc_map.resource_of(&j.doc_id) == Some(resource_id))
                .map(|j| (j.doc_id.clone(), f64::from(j.grade)))
                .collect(),
            BackendMode::Cosine => {
                let q = query.ok_or_else(|| BrokerError::MissingQueryVector(query_id.to_string()))?;
                let docs = self.documents.expect("cosine backend has documents");
                record
                    .doc_ids
                    .iter()
                    .map(|d| {
                        let v = docs.get(d).ok_or_else(|| BrokerError::MissingDocument(d.clone()))?;
                        Ok((d.clone(), cosine_slices(q.as_slice(), v.as_slice())))
                    })
                    .collect::<Result<_>>()?
            }
        };
        let mut list = RankedList::from_scores(scores)?.items().to_vec();
        list.truncate(limit);
        Ok(RankedList::from_scores(list)?)
    }
}

/// Top-T prefix of the resource ranking.
pub fn select_resources(ranking: &RankedList, t: usize) -> Result<Vec<String>> {
    if t == 0 {
        return Err(BrokerError::ZeroT);
    }
    Ok(ranking.top(t).iter().map(|(id, _)| id.clone()).collect())
}

/// Raw-score interleaving: descending score, ties by doc id.
pub fn merge(lists: &[RankedList]) -> Result<RankedList> {
    Ok(RankedList::from_scores(
        lists.iter().flat_map(|l| l.items().iter().cloned()),
    )?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BrokerRun {
    pub query_id: String,
    pub selected: Vec<String>,
    pub per_resource: Vec<(String, RankedList)>,
    pub merged: RankedList,
}

/// Selects `t` resources from `ranking`, retrieves up to `limit` documents
/// from each and merges them.
pub fn run_query(
    backend: &RetrievalBackend<'_>,
    query_id: &str,
    query: Option<&EmbeddingVector>,
    ranking: &RankedList,
    t: usize,
    limit: usize,
) -> Result<BrokerRun> {
    let selected = select_resources(ranking, t)?;
    let per_resource = selected
        .iter()
        .map(|r| Ok((r.clone(), backend.retrieve(r, query_id, query, limit)?)))
        .collect::<Result<Vec<_>>>()?;
    let lists: Vec<RankedList> = per_resource.iter().map(|(_, l)| l.clone()).collect();
    Ok(BrokerRun {
        query_id: query_id.to_string(),
        selected,
        merged: merge(&lists)?,
        per_resource,
    })
}

/// Documents with grade ≥ 1 for the query.
pub fn relevant_documents(judgments: &JudgmentSet, query_id: &str) -> BTreeSet<String> {
    judgments
        .for_query(query_id)
        .filter(|j| j.grade >= 1)
        .map(|j| j.doc_id.clone())
        .collect()
}

/// P@k of each run's merged list.
pub fn evaluate_document_level(runs: &[BrokerRun], judgments: &JudgmentSet, k: usize) -> MetricReport {
    let mut report = MetricReport::new(Metric::p(k));
    for run in runs {
        let rel = relevant_documents(judgments, &run.query_id);
        report.push(run.query_id.clone(), precision_at_k(&run.merged, &rel, k));
    }
    report
}

pub const RUN_LOG_HEADER: &str = "query_id\trank\tdoc_id\tresource_id\tscore";

/// One row per merged document.
pub fn run_log_tsv(runs: &[BrokerRun], doc_map: &DocMap) -> String {
    let mut s = format!("{RUN_LOG_HEADER}\n");
    for run in runs {
        for (i, (d, score)) in run.merged.items().iter().enumerate() {
            let r = doc_map.resource_of(d).unwrap_or("-");
            let _ = writeln!(s, "{}\t{}\t{d}\t{r}\t{score:.6}", run.query_id, i + 1);
        }
    }
    s
}

/// P@k means for every T, one row per T: `T<TAB>backend<TAB>P@k`.
pub fn sweep_t(
    backend: &RetrievalBackend<'_>,
    rankings: &BTreeMap<String, RankedList>,
    query_vectors: Option<&EmbeddingStore>,
    ts: &[usize],
    limit: usize,
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    ts.iter()
        .map(|&t| {
            let runs = rankings
                .iter()
                .map(|(q, r)| run_query(backend, q, query_vectors.and_then(|s| s.get(q)), r, t, limit))
                .collect::<Result<Vec<_>>>()?;
            Ok((t, evaluate_document_level(&runs, backend.judgments, k).mean()))
        })
        .collect()
}
