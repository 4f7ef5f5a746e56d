//! Heterogeneous query/resource graph construction.
//!
//! Two relations exist: `qr` joins a query to a resource and carries the
//! normalized summed judgment grade; `rr` joins two resources and carries the
//! cosine similarity of their embeddings, kept only when it reaches the
//! threshold λ. Edges are undirected; the network expands them into both
//! message directions.
//!
//! Node order is canonical: queries by id, then resources by id. Edges are
//! sorted by `(relation, src, dst)` with `src < dst` for `rr` and `src` the
//! query for `qr`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use crate::codec::{verify_sealed, ByteReader, ByteWriter, Truncated, DIGEST_LEN};
use crate::corpus::JudgmentSet;
use crate::embedding::{cosine_slices, EmbeddingStore, EmbeddingVector};

pub const GRAPH_MAGIC: &[u8; 8] = b"FEDGPH1\n";
pub const GRAPH_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("λ must lie in [0, 1], got {0}")]
    InvalidLambda(f64),
    #[error("α must be positive and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("every judgment has grade 0; α is undefined, configure a fixed α")]
    AllZeroGrades,
    #[error("judgments are not resolved against a document map")]
    Unresolved,
    #[error("no feature vector for {kind} node `{id}`")]
    MissingFeature { kind: NodeType, id: String },
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("duplicate {kind} node `{id}`")]
    DuplicateNode { kind: NodeType, id: String },
    #[error("invalid edge: {0}")]
    InvalidEdge(String),
    #[error("resource store is empty")]
    NoResources,
    #[error("not a graph file (bad magic)")]
    BadMagic,
    #[error("unsupported graph file version {0}")]
    Version(u32),
    #[error("graph file checksum mismatch")]
    Checksum,
    #[error("graph file truncated: {0}")]
    Truncated(#[from] Truncated),
    #[error("graph file is malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

type Result<T> = std::result::Result<T, GraphError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeType {
    Query,
    Resource,
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeType::Query => "query",
            NodeType::Resource => "resource",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    Qr,
    Rr,
}

impl Relation {
    pub const ALL: [Relation; 2] = [Relation::Qr, Relation::Rr];
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub id: String,
    pub kind: NodeType,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub relation: Relation,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlphaMode {
    /// α = 1 / max summed grade over (query, resource) pairs.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphConfig {
    pub lambda: f64,
    pub alpha: AlphaMode,
    pub top_n: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            alpha: AlphaMode::Auto,
            top_n: 10,
        }
    }
}

/// Parameters a graph was built with; persisted in the graph file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BuildInfo {
    pub lambda: f64,
    /// `None` for inference graphs.
    pub alpha: Option<f64>,
    /// 0 when unknown.
    pub top_n: usize,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(GraphError::InvalidLambda(lambda))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeteroGraph {
    dim: usize,
    nodes: Vec<Node>,
    features: Vec<f64>,
    edges: Vec<Edge>,
    info: BuildInfo,
    index: HashMap<(NodeType, String), usize>,
}

impl HeteroGraph {
    /// Validates and canonicalizes edge orientation and order. Node order is
    /// kept as given.
    pub fn new(
        dim: usize,
        nodes: Vec<Node>,
        features: Vec<f64>,
        edges: Vec<Edge>,
        info: BuildInfo,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(GraphError::DimMismatch {
                expected: 1,
                found: 0,
            });
        }
        if features.len() != nodes.len() * dim {
            return Err(GraphError::DimMismatch {
                expected: nodes.len() * dim,
                found: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(GraphError::InvalidEdge("non-finite node feature".into()));
        }
        check_lambda(info.lambda)?;
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert((n.kind, n.id.clone()), i).is_some() {
                return Err(GraphError::DuplicateNode {
                    kind: n.kind,
                    id: n.id.clone(),
                });
            }
        }
        let mut canon = Vec::with_capacity(edges.len());
        for e in edges {
            if e.src >= nodes.len() || e.dst >= nodes.len() {
                return Err(GraphError::InvalidEdge(format!(
                    "endpoint out of range ({}, {})",
                    e.src, e.dst
                )));
            }
            if !e.weight.is_finite() {
                return Err(GraphError::InvalidEdge("non-finite weight".into()));
            }
            let (ks, kd) = (nodes[e.src].kind, nodes[e.dst].kind);
            let (src, dst) = match e.relation {
                Relation::Qr => match (ks, kd) {
                    (NodeType::Query, NodeType::Resource) => (e.src, e.dst),
                    (NodeType::Resource, NodeType::Query) => (e.dst, e.src),
                    _ => {
                        return Err(GraphError::InvalidEdge(
                            "qr edge must join a query and a resource".into(),
                        ))
                    }
                },
                Relation::Rr => {
                    if ks != NodeType::Resource || kd != NodeType::Resource {
                        return Err(GraphError::InvalidEdge(
                            "rr edge must join two resources".into(),
                        ));
                    }
                    if e.src == e.dst {
                        return Err(GraphError::InvalidEdge("self loop".into()));
                    }
                    if e.weight < info.lambda {
                        return Err(GraphError::InvalidEdge(format!(
                            "rr weight {} below λ = {}",
                            e.weight, info.lambda
                        )));
                    }
                    (e.src.min(e.dst), e.src.max(e.dst))
                }
            };
            canon.push(Edge {
                src,
                dst,
                relation: e.relation,
                weight: e.weight,
            });
        }
        canon.sort_by(|a, b| (a.relation, a.src, a.dst).cmp(&(b.relation, b.src, b.dst)));
        if let Some(w) = canon
            .windows(2)
            .find(|w| (w[0].relation, w[0].src, w[0].dst) == (w[1].relation, w[1].src, w[1].dst))
        {
            return Err(GraphError::InvalidEdge(format!(
                "duplicate edge ({}, {})",
                w[0].src, w[0].dst
            )));
        }
        Ok(Self {
            dim,
            nodes,
            features,
            edges: canon,
            info,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn info(&self) -> BuildInfo {
        self.info
    }

    /// Row-major `num_nodes x dim` initial features.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature(&self, node: usize) -> &[f64] {
        &self.features[node * self.dim..(node + 1) * self.dim]
    }

    pub fn node_index(&self, kind: NodeType, id: &str) -> Option<usize> {
        self.index.get(&(kind, id.to_string())).copied()
    }

    pub fn nodes_of(&self, kind: NodeType) -> impl Iterator<Item = (usize, &Node)> {
        self.nodes
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.kind == kind)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(GRAPH_MAGIC);
        w.u32(GRAPH_VERSION);
        w.u32(self.dim as u32);
        w.u32(self.nodes.len() as u32);
        w.u32(self.edges.len() as u32);
        w.f64(self.info.lambda);
        w.u8(self.info.alpha.is_some() as u8);
        w.f64(self.info.alpha.unwrap_or(0.0));
        w.u32(self.info.top_n as u32);
        for n in &self.nodes {
            w.u8(match n.kind {
                NodeType::Query => 0,
                NodeType::Resource => 1,
            });
            w.u16(n.id.len() as u16);
            w.bytes(n.id.as_bytes());
        }
        for &x in &self.features {
            w.f64(x);
        }
        for e in &self.edges {
            w.u8(match e.relation {
                Relation::Qr => 0,
                Relation::Rr => 1,
            });
            w.u32(e.src as u32);
            w.u32(e.dst as u32);
            w.f64(e.weight);
        }
        w.seal()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < GRAPH_MAGIC.len() || &bytes[..GRAPH_MAGIC.len()] != GRAPH_MAGIC {
            return Err(GraphError::BadMagic);
        }
        if bytes.len() < GRAPH_MAGIC.len() + DIGEST_LEN {
            return Err(Truncated {
                offset: bytes.len(),
                wanted: DIGEST_LEN,
            }
            .into());
        }
        let payload = verify_sealed(bytes).ok_or(GraphError::Checksum)?;
        let mut r = ByteReader::new(payload);
        r.bytes(GRAPH_MAGIC.len())?;
        let version = r.u32()?;
        if version != GRAPH_VERSION {
            return Err(GraphError::Version(version));
        }
        let dim = r.u32()? as usize;
        let n_nodes = r.u32()? as usize;
        let n_edges = r.u32()? as usize;
        let lambda = r.f64()?;
        let has_alpha = r.u8()? != 0;
        let alpha = r.f64()?;
        let top_n = r.u32()? as usize;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let kind = match r.u8()? {
                0 => NodeType::Query,
                1 => NodeType::Resource,
                k => return Err(GraphError::Malformed(format!("node kind {k}"))),
            };
            let len = r.u16()? as usize;
            let id = std::str::from_utf8(r.bytes(len)?)
                .map_err(|e| GraphError::Malformed(e.to_string()))?
                .to_string();
            nodes.push(Node { id, kind });
        }
        let mut features = Vec::with_capacity(n_nodes * dim);
        for _ in 0..n_nodes * dim {
            features.push(r.f64()?);
        }
        let mut edges = Vec::with_capacity(n_edges);
        for _ in 0..n_edges {
            let relation = match r.u8()? {
                0 => Relation::Qr,
                1 => Relation::Rr,
                k => return Err(GraphError::Malformed(format!("relation {k}"))),
            };
            edges.push(Edge {
                relation,
                src: r.u32()? as usize,
                dst: r.u32()? as usize,
                weight: r.f64()?,
            });
        }
        if r.remaining() != 0 {
            return Err(GraphError::Malformed(format!(
                "{} trailing bytes",
                r.remaining()
            )));
        }
        Self::new(
            dim,
            nodes,
            features,
            edges,
            BuildInfo {
                lambda,
                alpha: has_alpha.then_some(alpha),
                top_n,
            },
        )
    }
}

pub fn write_graph(g: &HeteroGraph, path: &Path) -> Result<()> {
    fs::write(path, g.encode())?;
    Ok(())
}

pub fn read_graph(path: &Path) -> Result<HeteroGraph> {
    HeteroGraph::decode(&fs::read(path)?)
}

/// Summed grade per `(query, resource)` pair; pairs with no judgments are absent.
pub fn pair_sums(judgments: &JudgmentSet) -> Result<BTreeMap<(String, String), u64>> {
    if !judgments.is_resolved() {
        return Err(GraphError::Unresolved);
    }
    Ok(judgments
        .coverage()
        .map(|(k, js)| (k.clone(), js.iter().map(|j| u64::from(j.grade)).sum()))
        .collect())
}

pub fn compute_alpha(judgments: &JudgmentSet) -> Result<f64> {
    let max = pair_sums(judgments)?.into_values().max().unwrap_or(0);
    if max == 0 {
        return Err(GraphError::AllZeroGrades);
    }
    Ok(1.0 / max as f64)
}

pub fn resolve_alpha(judgments: &JudgmentSet, mode: AlphaMode) -> Result<f64> {
    match mode {
        AlphaMode::Auto => compute_alpha(judgments),
        AlphaMode::Fixed(a) if a > 0.0 && a.is_finite() => Ok(a),
        AlphaMode::Fixed(a) => Err(GraphError::InvalidAlpha(a)),
    }
}

/// Ground-truth `(query, resource)` relevance, which doubles as the qr edge weight.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QrWeightTable {
    entries: BTreeMap<(String, String), f64>,
}

impl QrWeightTable {
    pub fn from_entries(entries: impl IntoIterator<Item = ((String, String), f64)>) -> Self {
        Self {
            entries: entries.into_iter().collect(),
        }
    }

    pub fn get(&self, query: &str, resource: &str) -> Option<f64> {
        self.entries
            .get(&(query.to_string(), resource.to_string()))
            .copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.entries
            .iter()
            .map(|((q, r), w)| (q.as_str(), r.as_str(), *w))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// α times the summed grade of every covered pair; zero sums are omitted.
pub fn qr_weights(judgments: &JudgmentSet, alpha: f64) -> Result<QrWeightTable> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(GraphError::InvalidAlpha(alpha));
    }
    Ok(QrWeightTable::from_entries(
        pair_sums(judgments)?
            .into_iter()
            .filter(|(_, s)| *s > 0)
            .map(|(k, s)| (k, alpha * s as f64)),
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RrEdge {
    pub a: String,
    pub b: String,
    pub weight: f64,
}

/// Cosine similarity for every unordered pair of stored resources, kept when
/// it is at least `lambda`. Pairs come out in ascending id order.
pub fn rr_edges(resources: &EmbeddingStore, lambda: f64) -> Result<Vec<RrEdge>> {
    check_lambda(lambda)?;
    let items: Vec<(&str, &EmbeddingVector)> = resources.iter().collect();
    let mut out = Vec::new();
    for (i, (a, va)) in items.iter().enumerate() {
        for (b, vb) in &items[i + 1..] {
            let w = cosine_slices(va.as_slice(), vb.as_slice());
            if w >= lambda {
                out.push(RrEdge {
                    a: a.to_string(),
                    b: b.to_string(),
                    weight: w,
                });
            }
        }
    }
    Ok(out)
}

fn push_feature(features: &mut Vec<f64>, v: &EmbeddingVector, dim: usize) -> Result<()> {
    if v.dim() != dim {
        return Err(GraphError::DimMismatch {
            expected: dim,
            found: v.dim(),
        });
    }
    features.extend_from_slice(v.as_slice());
    Ok(())
}

fn resource_nodes(
    resources: &EmbeddingStore,
    nodes: &mut Vec<Node>,
    features: &mut Vec<f64>,
) -> Result<()> {
    for (id, v) in resources.iter() {
        nodes.push(Node {
            id: id.to_string(),
            kind: NodeType::Resource,
        });
        push_feature(features, v, resources.dim())?;
    }
    Ok(())
}

fn rr_edge_list(g_nodes: &[Node], first_resource: usize, rr: Vec<RrEdge>) -> Vec<Edge> {
    let pos: HashMap<&str, usize> = g_nodes[first_resource..]
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), first_resource + i))
        .collect();
    rr.into_iter()
        .map(|e| Edge {
            src: pos[e.a.as_str()],
            dst: pos[e.b.as_str()],
            relation: Relation::Rr,
            weight: e.weight,
        })
        .collect()
}

/// One node per listed query and per stored resource, qr edges from `qr_table`
/// and rr edges from [`rr_edges`].
pub fn build_training_graph(
    queries: &[String],
    query_store: &EmbeddingStore,
    resource_store: &EmbeddingStore,
    qr_table: &QrWeightTable,
    info: BuildInfo,
) -> Result<HeteroGraph> {
    check_lambda(info.lambda)?;
    let dim = resource_store.dim();
    if query_store.dim() != dim {
        return Err(GraphError::DimMismatch {
            expected: dim,
            found: query_store.dim(),
        });
    }
    let mut qs: Vec<&String> = queries.iter().collect();
    qs.sort();
    qs.dedup();
    let mut nodes = Vec::with_capacity(qs.len() + resource_store.len());
    let mut features = Vec::with_capacity((qs.len() + resource_store.len()) * dim);
    for q in &qs {
        let v = query_store.get(q).ok_or_else(|| GraphError::MissingFeature {
            kind: NodeType::Query,
            id: q.to_string(),
        })?;
        nodes.push(Node {
            id: q.to_string(),
            kind: NodeType::Query,
        });
        push_feature(&mut features, v, dim)?;
    }
    let first_resource = nodes.len();
    resource_nodes(resource_store, &mut nodes, &mut features)?;

    let q_pos: HashMap<&str, usize> = qs.iter().enumerate().map(|(i, q)| (q.as_str(), i)).collect();
    let r_pos: HashMap<&str, usize> = nodes[first_resource..]
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), first_resource + i))
        .collect();
    let mut edges = Vec::with_capacity(qr_table.len());
    for (q, r, w) in qr_table.iter() {
        let src = *q_pos.get(q).ok_or_else(|| GraphError::MissingFeature {
            kind: NodeType::Query,
            id: q.to_string(),
        })?;
        let dst = *r_pos.get(r).ok_or_else(|| GraphError::MissingFeature {
            kind: NodeType::Resource,
            id: r.to_string(),
        })?;
        edges.push(Edge {
            src,
            dst,
            relation: Relation::Qr,
            weight: w,
        });
    }
    edges.extend(rr_edge_list(
        &nodes,
        first_resource,
        rr_edges(resource_store, info.lambda)?,
    ));
    HeteroGraph::new(dim, nodes, features, edges, info)
}

/// Weight carried by every qr edge of an inference graph.
pub const INFERENCE_QR_WEIGHT: f64 = 1.0;

/// A single query node joined to every stored resource, plus the rr edges the
/// store yields at `lambda`.
pub fn build_inference_graph(
    query_id: &str,
    query_vector: &EmbeddingVector,
    resource_store: &EmbeddingStore,
    lambda: f64,
) -> Result<HeteroGraph> {
    check_lambda(lambda)?;
    if resource_store.is_empty() {
        return Err(GraphError::NoResources);
    }
    let dim = resource_store.dim();
    let mut nodes = vec![Node {
        id: query_id.to_string(),
        kind: NodeType::Query,
    }];
    let mut features = Vec::with_capacity((1 + resource_store.len()) * dim);
    push_feature(&mut features, query_vector, dim)?;
    resource_nodes(resource_store, &mut nodes, &mut features)?;
    let mut edges: Vec<Edge> = (1..nodes.len())
        .map(|r| Edge {
            src: 0,
            dst: r,
            relation: Relation::Qr,
            weight: INFERENCE_QR_WEIGHT,
        })
        .collect();
    edges.extend(rr_edge_list(&nodes, 1, rr_edges(resource_store, lambda)?));
    HeteroGraph::new(
        dim,
        nodes,
        features,
        edges,
        BuildInfo {
            lambda,
            alpha: None,
            top_n: 0,
        },
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GraphStats {
    pub query_nodes: usize,
    pub resource_nodes: usize,
    pub qr_edges: usize,
    pub rr_edges: usize,
}

impl GraphStats {
    pub const HEADER: &'static str = "resource_nodes\tquery_nodes\tqr_edges\trr_edges";

    pub fn total_edges(&self) -> usize {
        self.qr_edges + self.rr_edges
    }
}

/// Tab-separated in the column order of [`GraphStats::HEADER`].
impl fmt::Display for GraphStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}",
            self.resource_nodes, self.query_nodes, self.qr_edges, self.rr_edges
        )
    }
}

pub fn graph_stats(g: &HeteroGraph) -> GraphStats {
    let mut s = GraphStats::default();
    for n in &g.nodes {
        match n.kind {
            NodeType::Query => s.query_nodes += 1,
            NodeType::Resource => s.resource_nodes += 1,
        }
    }
    for e in &g.edges {
        match e.relation {
            Relation::Qr => s.qr_edges += 1,
            Relation::Rr => s.rr_edges += 1,
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_doc_map, parse_qrels};
    use crate::embedding::StoreKind;
    use proptest::prelude::*;

    fn resolved(qrels: &str, map: &str) -> JudgmentSet {
        let m = parse_doc_map(map.as_bytes()).unwrap();
        parse_qrels(qrels.as_bytes()).unwrap().resolve(&m).unwrap()
    }

    fn store(kind: StoreKind, rows: &[(&str, &[f64])]) -> EmbeddingStore {
        let mut s = EmbeddingStore::new(rows[0].1.len(), kind).unwrap();
        for (id, v) in rows {
            s.insert(*id, &EmbeddingVector::new(v.to_vec()).unwrap()).unwrap();
        }
        s
    }

    #[test]
    fn alpha_is_inverse_max_pair_sum() {
        let j = resolved(
            "q1 0 a 3\nq1 0 b 2\nq2 0 c 2\nq3 0 a 1\n",
            "a\tR1\nb\tR1\nc\tR2\n",
        );
        // pair sums: (q1,R1)=5, (q2,R2)=2, (q3,R1)=1
        assert!((compute_alpha(&j).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(compute_alpha(&resolved("q 0 a 1", "a\tR")).unwrap(), 1.0);
        assert!(matches!(
            compute_alpha(&resolved("q 0 a 0\nq 0 b -1", "a\tR\nb\tS")),
            Err(GraphError::AllZeroGrades)
        ));
        assert!(matches!(
            compute_alpha(&parse_qrels("q 0 a 1".as_bytes()).unwrap()),
            Err(GraphError::Unresolved)
        ));
    }

    #[test]
    fn qr_weight_examples() {
        let j = resolved("q1 0 a 2\nq1 0 b 3\nq1 0 c 0\n", "a\tR1\nb\tR1\nc\tR2\n");
        let t = qr_weights(&j, 0.2).unwrap();
        assert!((t.get("q1", "R1").unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(t.get("q1", "R2"), None);
        assert_eq!(t.len(), 1);

        let doubled = resolved("q1 0 a 4\nq1 0 b 6\nq1 0 c 0\n", "a\tR1\nb\tR1\nc\tR2\n");
        assert_eq!(qr_weights(&doubled, 0.1).unwrap(), t);
    }

    #[test]
    fn rr_edge_examples() {
        let s = store(
            StoreKind::Resource,
            &[("A", &[1.0, 0.0]), ("B", &[1.0, 1.0]), ("C", &[0.0, 1.0])],
        );
        assert_eq!(rr_edges(&s, 0.0).unwrap().len(), 3);
        assert!(rr_edges(&s, 1.0).unwrap().is_empty());

        // cos = 0.6 between (1,0) and (0.6,0.8)
        let s = store(StoreKind::Resource, &[("A", &[1.0, 0.0]), ("B", &[0.6, 0.8])]);
        let e = rr_edges(&s, 0.5).unwrap();
        assert_eq!(e.len(), 1);
        assert!((e[0].weight - 0.6).abs() < 1e-7);

        let neg = store(StoreKind::Resource, &[("A", &[1.0, 0.0]), ("B", &[-1.0, 0.2])]);
        assert!(rr_edges(&neg, 0.0).unwrap().is_empty());
        assert!(matches!(rr_edges(&s, 1.5), Err(GraphError::InvalidLambda(_))));
    }

    fn small_setup() -> (EmbeddingStore, EmbeddingStore) {
        let q = store(StoreKind::Query, &[("q1", &[1.0, -1.0]), ("q2", &[0.5, 0.5])]);
        let r = store(
            StoreKind::Resource,
            &[("R1", &[2.0, 0.0]), ("R2", &[1.0, 1.0]), ("R3", &[0.0, 1.0])],
        );
        (q, r)
    }

    fn info(lambda: f64) -> BuildInfo {
        BuildInfo {
            lambda,
            alpha: Some(1.0),
            top_n: 10,
        }
    }

    #[test]
    fn minimal_training_graph() {
        let (q, r) = small_setup();
        let r1 = store(StoreKind::Resource, &[("R1", &[2.0, 0.0])]);
        let t = QrWeightTable::from_entries([(("q1".into(), "R1".into()), 1.0)]);
        let g = build_training_graph(&["q1".into()], &q, &r1, &t, info(1.0)).unwrap();
        assert_eq!(
            graph_stats(&g),
            GraphStats {
                query_nodes: 1,
                resource_nodes: 1,
                qr_edges: 1,
                rr_edges: 0
            }
        );
        let _ = r;
    }

    #[test]
    fn training_graph_counts_and_errors() {
        let (q, r) = small_setup();
        let t = QrWeightTable::from_entries([
            (("q1".into(), "R1".into()), 0.5),
            (("q1".into(), "R2".into()), 1.0),
            (("q2".into(), "R3".into()), 0.25),
        ]);
        let qs = vec!["q2".to_string(), "q1".to_string()];
        let g = build_training_graph(&qs, &q, &r, &t, info(0.0)).unwrap();
        let rr = rr_edges(&r, 0.0).unwrap();
        assert_eq!(g.edges().len(), t.len() + rr.len());
        assert_eq!(g.nodes()[0].id, "q1");
        // canonical order: qr first, then rr, each by (src, dst)
        let keys: Vec<_> = g.edges().iter().map(|e| (e.relation, e.src, e.dst)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);

        let missing = build_training_graph(&["q1".into(), "zz".into()], &q, &r, &t, info(0.0));
        assert!(matches!(missing, Err(GraphError::MissingFeature { .. })));
        let orphan = build_training_graph(&["q1".into()], &q, &r, &t, info(0.0));
        assert!(matches!(orphan, Err(GraphError::MissingFeature { .. })));
    }

    #[test]
    fn inference_graph_shape() {
        let (_, r) = small_setup();
        let qv = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let g = build_inference_graph("q", &qv, &r, 0.0).unwrap();
        let s = graph_stats(&g);
        assert_eq!((s.query_nodes, s.resource_nodes, s.qr_edges), (1, 3, 3));
        assert!(g
            .edges()
            .iter()
            .filter(|e| e.relation == Relation::Qr)
            .all(|e| e.weight == 1.0));
        let rr: Vec<_> = g
            .edges()
            .iter()
            .filter(|e| e.relation == Relation::Rr)
            .map(|e| (g.nodes()[e.src].id.clone(), g.nodes()[e.dst].id.clone(), e.weight))
            .collect();
        let oracle: Vec<_> = rr_edges(&r, 0.0)
            .unwrap()
            .into_iter()
            .map(|e| (e.a, e.b, e.weight))
            .collect();
        assert_eq!(rr, oracle);

        let one = store(StoreKind::Resource, &[("R", &[1.0, 0.0])]);
        let g = build_inference_graph("q", &qv, &one, 0.0).unwrap();
        assert_eq!(graph_stats(&g).qr_edges, 1);
        assert_eq!(graph_stats(&g).rr_edges, 0);
        let bad = EmbeddingVector::new(vec![1.0]).unwrap();
        assert!(matches!(
            build_inference_graph("q", &bad, &one, 0.0),
            Err(GraphError::DimMismatch { .. })
        ));
    }

    #[test]
    fn invariants_rejected() {
        let nodes = vec![
            Node { id: "q".into(), kind: NodeType::Query },
            Node { id: "p".into(), kind: NodeType::Query },
            Node { id: "r".into(), kind: NodeType::Resource },
        ];
        let f = vec![0.0; 3];
        let e = |src, dst, relation, weight| Edge { src, dst, relation, weight };
        let i = info(0.5);
        assert!(HeteroGraph::new(1, nodes.clone(), f.clone(), vec![e(0, 1, Relation::Qr, 1.0)], i).is_err());
        assert!(HeteroGraph::new(1, nodes.clone(), f.clone(), vec![e(2, 2, Relation::Rr, 1.0)], i).is_err());
        assert!(HeteroGraph::new(1, nodes.clone(), f.clone(), vec![e(0, 2, Relation::Rr, 1.0)], i).is_err());
        assert!(HeteroGraph::new(1, nodes.clone(), f.clone(), vec![e(0, 2, Relation::Qr, f64::NAN)], i).is_err());
        let g = HeteroGraph::new(1, nodes, f, vec![e(2, 0, Relation::Qr, 0.3)], i).unwrap();
        assert_eq!((g.edges()[0].src, g.edges()[0].dst), (0, 2));
    }

    #[test]
    fn graph_file_round_trip_and_tamper() {
        let (q, r) = small_setup();
        let t = QrWeightTable::from_entries([
            (("q1".into(), "R1".into()), 0.5),
            (("q2".into(), "R3".into()), 1.0),
        ]);
        let g = build_training_graph(&["q1".into(), "q2".into()], &q, &r, &t, info(0.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.bin");
        write_graph(&g, &path).unwrap();
        let back = read_graph(&path).unwrap();
        assert_eq!(back, g);
        assert_eq!(graph_stats(&back), graph_stats(&g));

        let mut bytes = g.encode();
        // last edge weight sits just before the digest
        let at = bytes.len() - DIGEST_LEN - 3;
        bytes[at] ^= 0x01;
        assert!(matches!(HeteroGraph::decode(&bytes), Err(GraphError::Checksum)));
        let bytes = g.encode();
        assert!(HeteroGraph::decode(&bytes[..bytes.len() - 40]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'x';
        assert!(matches!(HeteroGraph::decode(&wrong), Err(GraphError::BadMagic)));
    }

    #[test]
    fn empty_graph_stats() {
        let g = HeteroGraph::new(
            4,
            vec![],
            vec![],
            vec![],
            BuildInfo { lambda: 0.0, alpha: None, top_n: 0 },
        )
        .unwrap();
        assert_eq!(graph_stats(&g), GraphStats::default());
    }

    proptest! {
        #[test]
        fn rr_edges_monotone_in_lambda(
            rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 2..9),
            l1 in 0.0f64..1.0,
            l2 in 0.0f64..1.0,
        ) {
            let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
            let mut s = EmbeddingStore::new(3, StoreKind::Resource).unwrap();
            for (i, r) in rows.iter().enumerate() {
                s.insert(format!("R{i}"), &EmbeddingVector::new(r.clone()).unwrap()).unwrap();
            }
            let a = rr_edges(&s, lo).unwrap();
            let b = rr_edges(&s, hi).unwrap();
            prop_assert!(b.iter().all(|e| a.contains(e)));
            prop_assert!(b.iter().all(|e| e.weight >= hi && e.weight <= 1.0));
        }

        #[test]
        fn stats_invariant_under_node_reordering(
            n_q in 1usize..4,
            n_r in 2usize..5,
            seed in 0u64..500,
        ) {
            use rand::{seq::SliceRandom, Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut nodes: Vec<Node> = (0..n_q)
                .map(|i| Node { id: format!("q{i}"), kind: NodeType::Query })
                .chain((0..n_r).map(|i| Node { id: format!("r{i}"), kind: NodeType::Resource }))
                .collect();
            let mut edges = Vec::new();
            for q in 0..n_q {
                for r in 0..n_r {
                    if rng.gen_bool(0.5) {
                        edges.push((nodes[q].id.clone(), nodes[n_q + r].id.clone(), Relation::Qr));
                    }
                }
            }
            for a in 0..n_r {
                for b in a + 1..n_r {
                    if rng.gen_bool(0.5) {
                        edges.push((nodes[n_q + a].id.clone(), nodes[n_q + b].id.clone(), Relation::Rr));
                    }
                }
            }
            let build = |nodes: &Vec<Node>| {
                let pos = |id: &str| nodes.iter().position(|n| n.id == id).unwrap();
                let es = edges
                    .iter()
                    .map(|(a, b, rel)| Edge { src: pos(a), dst: pos(b), relation: *rel, weight: 0.5 })
                    .collect();
                HeteroGraph::new(1, nodes.clone(), vec![0.0; nodes.len()], es, info(0.0)).unwrap()
            };
            let before = graph_stats(&build(&nodes));
            nodes.shuffle(&mut rng);
            prop_assert_eq!(graph_stats(&build(&nodes)), before);
        }
    }
}
