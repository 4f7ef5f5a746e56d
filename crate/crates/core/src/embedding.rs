//! Dense vectors, the on-disk embedding store, pooling and cosine similarity.
//!
//! Binary store layout (all integers little-endian):
//!
//! ```text
//! b"FEDEMB1\n" | dim: u32 | count: u32 | count x ( id_len: u16 | id: utf8 | dim x f32 )
//! ```
//!
//! Vectors are kept at f32 precision inside a store so that writing and
//! reading a store is the identity. Arithmetic happens in f64.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead};
use std::path::Path;

use crate::codec::{ByteReader, ByteWriter, Truncated};
use crate::corpus::TopDocuments;

pub const STORE_MAGIC: &[u8; 8] = b"FEDEMB1\n";
pub const DEFAULT_DIM: usize = 768;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("cannot pool an empty list of vectors")]
    Empty,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("vector dimension must be positive")]
    ZeroDim,
    #[error("non-finite vector entry")]
    NonFinite,
    #[error("not an embedding store (bad magic)")]
    BadMagic,
    #[error("store truncated: {0}")]
    Truncated(#[from] Truncated),
    #[error("store declares {declared} records but {trailing} trailing bytes remain")]
    CountMismatch { declared: u32, trailing: usize },
    #[error("invalid id: {0}")]
    InvalidId(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("no vector for id `{0}`")]
    MissingId(String),
    #[error("line {line}: {message}")]
    Tsv { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

type Result<T> = std::result::Result<T, EmbeddingError>;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(EmbeddingError::ZeroDim);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.iter().map(|v| v * s).collect())
    }

    fn quantized(&self) -> Self {
        Self(self.0.iter().map(|&v| v as f32 as f64).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StoreKind {
    Query,
    Document,
    Resource,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    kind: StoreKind,
    entries: BTreeMap<String, EmbeddingVector>,
}

impl EmbeddingStore {
    pub fn new(dim: usize, kind: StoreKind) -> Result<Self> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        Ok(Self {
            dim,
            kind,
            entries: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> StoreKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stores `vector` rounded to f32 precision.
    pub fn insert(&mut self, id: impl Into<String>, vector: &EmbeddingVector) -> Result<()> {
        let id = id.into();
        if vector.dim() != self.dim {
            return Err(EmbeddingError::DimMismatch {
                expected: self.dim,
                found: vector.dim(),
            });
        }
        if id.len() > u16::MAX as usize {
            return Err(EmbeddingError::InvalidId(format!("{} bytes is too long", id.len())));
        }
        if self.entries.contains_key(&id) {
            return Err(EmbeddingError::DuplicateId(id));
        }
        self.entries.insert(id, vector.quantized());
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.entries.get(id)
    }

    pub fn require(&self, id: &str) -> Result<&EmbeddingVector> {
        self.get(id)
            .ok_or_else(|| EmbeddingError::MissingId(id.to_string()))
    }

    /// Entries in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(STORE_MAGIC);
        w.u32(self.dim as u32);
        w.u32(self.entries.len() as u32);
        for (id, v) in &self.entries {
            w.u16(id.len() as u16);
            w.bytes(id.as_bytes());
            for &x in v.as_slice() {
                w.f32(x as f32);
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8], kind: StoreKind) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.bytes(STORE_MAGIC.len()).ok() != Some(&STORE_MAGIC[..]) {
            return Err(EmbeddingError::BadMagic);
        }
        let dim = r.u32()? as usize;
        let count = r.u32()?;
        let mut store = Self::new(dim, kind)?;
        for _ in 0..count {
            let len = r.u16()? as usize;
            let id = std::str::from_utf8(r.bytes(len)?)
                .map_err(|e| EmbeddingError::InvalidId(e.to_string()))?
                .to_string();
            let mut values = Vec::with_capacity(dim);
            for _ in 0..dim {
                values.push(r.f32()? as f64);
            }
            store.insert(id, &EmbeddingVector::new(values)?)?;
        }
        if r.remaining() != 0 {
            return Err(EmbeddingError::CountMismatch {
                declared: count,
                trailing: r.remaining(),
            });
        }
        Ok(store)
    }

    /// `id<TAB>comma-separated floats`, one entry per line.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (id, v) in &self.entries {
            let _ = write!(s, "{id}\t");
            for (i, x) in v.as_slice().iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{}", *x as f32);
            }
            s.push('\n');
        }
        s
    }

    pub fn from_tsv<R: BufRead>(input: R, kind: StoreKind) -> Result<Self> {
        let mut store: Option<Self> = None;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let tsv_err = |message: String| EmbeddingError::Tsv {
                line: i + 1,
                message,
            };
            let (id, rest) = line
                .split_once('\t')
                .ok_or_else(|| tsv_err("expected `id<TAB>values`".into()))?;
            let values = rest
                .split(',')
                .map(|t| t.trim().parse::<f32>().map(f64::from))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| tsv_err(e.to_string()))?;
            let v = EmbeddingVector::new(values).map_err(|e| tsv_err(e.to_string()))?;
            let s = match &mut store {
                Some(s) => s,
                None => store.insert(Self::new(v.dim(), kind)?),
            };
            s.insert(id, &v).map_err(|e| tsv_err(e.to_string()))?;
        }
        store.ok_or_else(|| EmbeddingError::Tsv {
            line: 0,
            message: "no entries; dimension unknown".into(),
        })
    }
}

pub fn write_store(store: &EmbeddingStore, path: &Path) -> Result<()> {
    fs::write(path, store.encode())?;
    Ok(())
}

pub fn read_store(path: &Path, kind: StoreKind) -> Result<EmbeddingStore> {
    EmbeddingStore::decode(&fs::read(path)?, kind)
}

/// Componentwise arithmetic mean.
pub fn mean_pool(vectors: &[EmbeddingVector]) -> Result<EmbeddingVector> {
    let first = vectors.first().ok_or(EmbeddingError::Empty)?;
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for v in vectors {
        if v.dim() != dim {
            return Err(EmbeddingError::DimMismatch {
                expected: dim,
                found: v.dim(),
            });
        }
        for (a, x) in acc.iter_mut().zip(v.as_slice()) {
            *a += x;
        }
    }
    let n = vectors.len() as f64;
    EmbeddingVector::new(acc.into_iter().map(|a| a / n).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResourceEmbedding {
    pub resource_id: String,
    pub vector: EmbeddingVector,
    pub contributing_doc_ids: Vec<String>,
    /// Set when no document contributed and `vector` is all zeros.
    pub empty: bool,
}

/// Mean of the listed documents' vectors; the zero vector when `doc_ids` is empty.
pub fn aggregate_resource(
    resource_id: &str,
    doc_ids: &[String],
    docs: &EmbeddingStore,
) -> Result<ResourceEmbedding> {
    let vector = if doc_ids.is_empty() {
        EmbeddingVector::zeros(docs.dim())
    } else {
        let vs = doc_ids
            .iter()
            .map(|d| docs.require(d).cloned())
            .collect::<Result<Vec<_>>>()?;
        mean_pool(&vs)?
    };
    Ok(ResourceEmbedding {
        resource_id: resource_id.to_string(),
        vector,
        contributing_doc_ids: doc_ids.to_vec(),
        empty: doc_ids.is_empty(),
    })
}

/// Aggregates every resource of `top` into a resource store.
pub fn build_resource_store(
    top: &TopDocuments,
    docs: &EmbeddingStore,
) -> Result<(EmbeddingStore, Vec<ResourceEmbedding>)> {
    let mut store = EmbeddingStore::new(docs.dim(), StoreKind::Resource)?;
    let mut out = Vec::with_capacity(top.per_resource.len());
    for (rid, doc_ids) in &top.per_resource {
        let re = aggregate_resource(rid, doc_ids, docs)?;
        store.insert(rid.clone(), &re.vector)?;
        out.push(re);
    }
    Ok((store, out))
}

/// Cosine on raw slices. Zero-norm inputs give 0; the result is clamped to [-1, 1].
pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    if a.0.iter().chain(&b.0).any(|v| !v.is_finite()) {
        return Err(EmbeddingError::NonFinite);
    }
    Ok(cosine_slices(a.as_slice(), b.as_slice()))
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

// 64-bit FNV-1a; stable across platforms and toolchains.
fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic signed feature hashing of the tokens, L2-normalized. The top
/// hash bit picks the sign so that bucket collisions cancel on average. Text
/// without tokens maps to the zero vector.
pub fn synth_embed(text: &str, dim: usize, seed: u64) -> EmbeddingVector {
    assert!(dim >= 1, "embedding dimension must be positive");
    let mut counts = vec![0.0; dim];
    for tok in tokenize(text) {
        let h = fnv1a(seed, tok.as_bytes());
        counts[(h % dim as u64) as usize] += if h >> 63 == 1 { -1.0 } else { 1.0 };
    }
    let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm > 0.0 {
        counts.iter_mut().for_each(|c| *c /= norm);
    }
    EmbeddingVector(counts)
}
