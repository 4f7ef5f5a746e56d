//! Ranking metrics: P@k, nP@k and nDCG@k.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::corpus::{DocMap, JudgmentSet};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricError {
    #[error("duplicate id `{0}` in ranking")]
    DuplicateId(String),
    #[error("non-finite score for `{0}`")]
    NonFiniteScore(String),
    #[error("query `{0}` has no judgments")]
    UnknownQuery(String),
    #[error("document `{0}` is not assigned to any resource")]
    UnknownDocument(String),
    #[error("cannot parse metric `{0}` (expected e.g. ndcg@10, np@5, p@10)")]
    Parse(String),
}

/// Items ordered by descending score, ties by ascending id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RankedList {
    items: Vec<(String, f64)>,
}

impl RankedList {
    pub fn from_scores(scores: impl IntoIterator<Item = (String, f64)>) -> Result<Self, MetricError> {
        let mut items: Vec<(String, f64)> = scores.into_iter().collect();
        if let Some((id, _)) = items.iter().find(|(_, s)| !s.is_finite()) {
            return Err(MetricError::NonFiniteScore(id.clone()));
        }
        items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if let Some(w) = items.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(MetricError::DuplicateId(w[0].0.clone()));
        }
        // ids sorted by score: duplicates may not be adjacent
        let mut seen = BTreeSet::new();
        for (id, _) in &items {
            if !seen.insert(id.as_str()) {
                return Err(MetricError::DuplicateId(id.clone()));
            }
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[(String, f64)] {
        &self.items
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|(id, _)| id.as_str())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn top(&self, k: usize) -> &[(String, f64)] {
        &self.items[..k.min(self.items.len())]
    }
}

/// Ground-truth relevance of each resource for one query. Missing entries are 0.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResourceRelevance(BTreeMap<String, f64>);

impl ResourceRelevance {
    pub fn new(map: BTreeMap<String, f64>) -> Self {
        Self(map)
    }

    pub fn get(&self, id: &str) -> f64 {
        self.0.get(id).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Values sorted descending: the ideal ordering's relevances.
    fn ideal(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.0.values().copied().collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }
}

/// Summed document grades per resource for `query_id`. Every resource of
/// `doc_map` appears, uncovered ones with 0.
pub fn resource_relevance(
    judgments: &JudgmentSet,
    query_id: &str,
    doc_map: &DocMap,
) -> Result<ResourceRelevance, MetricError> {
    let mut rel: BTreeMap<String, f64> = doc_map.resource_ids().into_iter().map(|r| (r, 0.0)).collect();
    let mut any = false;
    for j in judgments.for_query(query_id) {
        any = true;
        let r = doc_map
            .resource_of(&j.doc_id)
            .ok_or_else(|| MetricError::UnknownDocument(j.doc_id.clone()))?;
        *rel.entry(r.to_string()).or_insert(0.0) += f64::from(j.grade);
    }
    if !any {
        return Err(MetricError::UnknownQuery(query_id.to_string()));
    }
    Ok(ResourceRelevance(rel))
}

/// `|top-k ∩ relevant| / k`; the denominator stays `k` for short rankings.
pub fn precision_at_k(ranking: &RankedList, relevant: &BTreeSet<String>, k: usize) -> f64 {
    assert!(k >= 1, "k must be positive");
    let hits = ranking
        .top(k)
        .iter()
        .filter(|(id, _)| relevant.contains(id))
        .count();
    hits as f64 / k as f64
}

/// Relevance mass of the predicted top-k over that of the ideal top-k; 1 when
/// the ideal mass is 0.
pub fn normalized_precision_at_k(ranking: &RankedList, rel: &ResourceRelevance, k: usize) -> f64 {
    assert!(k >= 1, "k must be positive");
    let ideal: f64 = rel.ideal().iter().take(k).sum();
    if ideal <= 0.0 {
        return 1.0;
    }
    let got: f64 = ranking.top(k).iter().map(|(id, _)| rel.get(id)).sum();
    got / ideal
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Gain {
    /// `2^rel - 1`
    #[default]
    Exponential,
    Linear,
}

impl Gain {
    fn apply(self, rel: f64) -> f64 {
        match self {
            Gain::Exponential => rel.exp2() - 1.0,
            Gain::Linear => rel,
        }
    }
}

pub fn dcg(relevances: impl IntoIterator<Item = f64>, k: usize, gain: Gain) -> f64 {
    relevances
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, r)| gain.apply(r) / ((i + 2) as f64).log2())
        .sum()
}

pub fn ndcg_at_k_with(ranking: &RankedList, rel: &ResourceRelevance, k: usize, gain: Gain) -> f64 {
    assert!(k >= 1, "k must be positive");
    let ideal = dcg(rel.ideal(), k, gain);
    if ideal <= 0.0 {
        return 1.0;
    }
    dcg(ranking.ids().map(|id| rel.get(id)), k, gain) / ideal
}

/// nDCG@k with exponential gain and `log2(i + 1)` discount.
pub fn ndcg_at_k(ranking: &RankedList, rel: &ResourceRelevance, k: usize) -> f64 {
    ndcg_at_k_with(ranking, rel, k, Gain::Exponential)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MetricKind {
    Precision,
    NormalizedPrecision,
    Ndcg,
    /// nDCG with linear gain.
    NdcgLinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Metric {
    pub kind: MetricKind,
    pub k: usize,
}

impl Metric {
    pub const fn ndcg(k: usize) -> Self {
        Self {
            kind: MetricKind::Ndcg,
            k,
        }
    }

    pub const fn np(k: usize) -> Self {
        Self {
            kind: MetricKind::NormalizedPrecision,
            k,
        }
    }

    pub const fn p(k: usize) -> Self {
        Self {
            kind: MetricKind::Precision,
            k,
        }
    }

    /// The same metric with linear gain when it is an nDCG.
    pub fn with_gain(self, gain: Gain) -> Self {
        let kind = match (self.kind, gain) {
            (MetricKind::Ndcg | MetricKind::NdcgLinear, Gain::Linear) => MetricKind::NdcgLinear,
            (MetricKind::Ndcg | MetricKind::NdcgLinear, Gain::Exponential) => MetricKind::Ndcg,
            (k, _) => k,
        };
        Self { kind, k: self.k }
    }

    /// Resource-level score. For P@k a resource counts as relevant when its
    /// relevance is positive.
    pub fn evaluate(&self, ranking: &RankedList, rel: &ResourceRelevance) -> f64 {
        match self.kind {
            MetricKind::Ndcg => ndcg_at_k(ranking, rel, self.k),
            MetricKind::NdcgLinear => ndcg_at_k_with(ranking, rel, self.k, Gain::Linear),
            MetricKind::NormalizedPrecision => normalized_precision_at_k(ranking, rel, self.k),
            MetricKind::Precision => {
                let relevant = rel
                    .iter()
                    .filter(|(_, v)| *v > 0.0)
                    .map(|(id, _)| id.to_string())
                    .collect();
                precision_at_k(ranking, &relevant, self.k)
            }
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            MetricKind::Precision => "P",
            MetricKind::NormalizedPrecision => "nP",
            MetricKind::Ndcg => "nDCG",
            MetricKind::NdcgLinear => "nDCGlin",
        };
        write!(f, "{name}@{}", self.k)
    }
}

impl FromStr for Metric {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || MetricError::Parse(s.to_string());
        let (name, k) = s.trim().split_once('@').ok_or_else(err)?;
        let k: usize = k.parse().map_err(|_| err())?;
        if k == 0 {
            return Err(err());
        }
        let kind = match name.to_ascii_lowercase().as_str() {
            "p" => MetricKind::Precision,
            "np" => MetricKind::NormalizedPrecision,
            "ndcg" => MetricKind::Ndcg,
            "ndcglin" => MetricKind::NdcgLinear,
            _ => return Err(err()),
        };
        Ok(Self { kind, k })
    }
}

/// Per-query values of one metric.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub metric: Metric,
    pub per_query: Vec<(String, f64)>,
}

impl MetricReport {
    pub fn new(metric: Metric) -> Self {
        Self {
            metric,
            per_query: Vec::new(),
        }
    }

    pub fn push(&mut self, query_id: impl Into<String>, value: f64) {
        self.per_query.push((query_id.into(), value));
    }

    /// Arithmetic mean; 0 for an empty report.
    pub fn mean(&self) -> f64 {
        if self.per_query.is_empty() {
            return 0.0;
        }
        self.per_query.iter().map(|(_, v)| v).sum::<f64>() / self.per_query.len() as f64
    }

    /// `query_id<TAB>metric<TAB>k<TAB>value` rows plus a `mean` summary row.
    pub fn to_tsv(&self) -> String {
        let name = self.metric.to_string();
        let name = name.split('@').next().unwrap_or_default();
        let mut s = String::new();
        for (q, v) in &self.per_query {
            s.push_str(&format!("{q}\t{name}\t{}\t{v:.6}\n", self.metric.k));
        }
        s.push_str(&format!("mean\t{name}\t{}\t{:.6}\n", self.metric.k, self.mean()));
        s
    }
}
