//! Queries, documents, resource membership and graded relevance judgments.
//!
//! Input formats:
//!
//! * queries: `query_id<TAB>text`
//! * documents: `doc_id<TAB>title<TAB>body` (title and body may be empty)
//! * doc map: `doc_id<TAB>resource_id`
//! * qrels: `query_id iteration doc_id grade`, whitespace separated
//!
//! Blank lines are skipped everywhere. Line numbers in errors are 1-based.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use crate::codec::hex_digest;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate query id `{id}` (first defined on line {first})")]
    DuplicateQuery { line: usize, first: usize, id: String },
    #[error("line {line}: duplicate document id `{id}`")]
    DuplicateDocument { line: usize, id: String },
    #[error("line {line}: document `{doc}` mapped to `{second}` but already belongs to `{first}`")]
    ConflictingResource {
        line: usize,
        doc: String,
        first: String,
        second: String,
    },
    #[error("document `{0}` is not assigned to any resource")]
    UnknownDocument(String),
    #[error("query `{0}` is judged but has no query record")]
    UnknownQuery(String),
    #[error("top-N selection needs N >= 1")]
    InvalidTopN,
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<CorpusError>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CorpusError {
    fn in_file(self, path: &Path) -> Self {
        CorpusError::File {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }
}

type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryRecord {
    pub query_id: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    pub resource_id: String,
}

impl DocumentRecord {
    /// Title followed by body, the text a document is embedded from.
    pub fn text(&self) -> String {
        match (self.title.is_empty(), self.body.is_empty()) {
            (_, true) => self.title.clone(),
            (true, false) => self.body.clone(),
            (false, false) => format!("{} {}", self.title, self.body),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResourceRecord {
    pub resource_id: String,
    /// Sorted, unique.
    pub doc_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Judgment {
    pub query_id: String,
    pub doc_id: String,
    pub grade: u32,
}

fn lines<R: BufRead>(input: R) -> impl Iterator<Item = Result<(usize, String)>> {
    input
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)).map_err(CorpusError::from))
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty()))
}

fn strip_cr(line: &str) -> &str {
    line.strip_suffix('\r').unwrap_or(line)
}

pub fn parse_queries<R: BufRead>(input: R) -> Result<Vec<QueryRecord>> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::new();
    for item in lines(input) {
        let (line_no, line) = item?;
        let line = strip_cr(&line);
        let Some((id, text)) = line.split_once('\t') else {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: "expected `query_id<TAB>text`".into(),
            });
        };
        if id.is_empty() {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: "empty query id".into(),
            });
        }
        if let Some(&first) = seen.get(id) {
            return Err(CorpusError::DuplicateQuery {
                line: line_no,
                first,
                id: id.to_string(),
            });
        }
        seen.insert(id.to_string(), line_no);
        out.push(QueryRecord {
            query_id: id.to_string(),
            text: text.to_string(),
        });
    }
    Ok(out)
}

pub fn write_queries<W: Write>(queries: &[QueryRecord], mut out: W) -> io::Result<()> {
    for q in queries {
        writeln!(out, "{}\t{}", q.query_id, q.text)?;
    }
    Ok(())
}

/// Query-document judgments, deduplicated and sorted by `(query_id, doc_id)`.
///
/// A set is *resolved* once every document has been mapped to its resource;
/// the `(query, resource)` coverage index is only available after that.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct JudgmentSet {
    judgments: Vec<Judgment>,
    resources: Option<Vec<String>>,
    coverage: BTreeMap<(String, String), Vec<usize>>,
}

impl JudgmentSet {
    /// Collapses duplicate `(query, doc)` pairs by keeping the maximum grade.
    pub fn from_judgments(items: impl IntoIterator<Item = Judgment>) -> Self {
        let mut best: BTreeMap<(String, String), u32> = BTreeMap::new();
        for j in items {
            let slot = best.entry((j.query_id, j.doc_id)).or_insert(0);
            *slot = (*slot).max(j.grade);
        }
        let judgments = best
            .into_iter()
            .map(|((query_id, doc_id), grade)| Judgment {
                query_id,
                doc_id,
                grade,
            })
            .collect();
        Self {
            judgments,
            resources: None,
            coverage: BTreeMap::new(),
        }
    }

    pub fn judgments(&self) -> &[Judgment] {
        &self.judgments
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    pub fn query_ids(&self) -> BTreeSet<String> {
        self.judgments.iter().map(|j| j.query_id.clone()).collect()
    }

    pub fn is_resolved(&self) -> bool {
        self.resources.is_some()
    }

    /// Attaches resource membership to every judgment. Fails on the first
    /// document missing from the map.
    pub fn resolve(mut self, doc_map: &DocMap) -> Result<Self> {
        let mut resources = Vec::with_capacity(self.judgments.len());
        for j in &self.judgments {
            let r = doc_map
                .resource_of(&j.doc_id)
                .ok_or_else(|| CorpusError::UnknownDocument(j.doc_id.clone()))?;
            resources.push(r.to_string());
        }
        self.resources = Some(resources);
        self.rebuild_coverage();
        Ok(self)
    }

    /// Like [`resolve`](Self::resolve) but drops judgments on unmapped
    /// documents, returning them alongside.
    pub fn resolve_lenient(self, doc_map: &DocMap) -> (Self, Vec<Judgment>) {
        let (kept, dropped): (Vec<_>, Vec<_>) = self
            .judgments
            .into_iter()
            .partition(|j| doc_map.resource_of(&j.doc_id).is_some());
        let set = JudgmentSet {
            judgments: kept,
            resources: None,
            coverage: BTreeMap::new(),
        };
        (set.resolve(doc_map).expect("all documents mapped"), dropped)
    }

    fn rebuild_coverage(&mut self) {
        self.coverage.clear();
        if let Some(resources) = &self.resources {
            for (i, (j, r)) in self.judgments.iter().zip(resources).enumerate() {
                self.coverage
                    .entry((j.query_id.clone(), r.clone()))
                    .or_default()
                    .push(i);
            }
        }
    }

    pub fn resource_of(&self, index: usize) -> Option<&str> {
        self.resources.as_ref().map(|r| r[index].as_str())
    }

    /// `(query_id, resource_id)` pairs with the judgments that join them.
    /// Empty for unresolved sets.
    pub fn coverage(&self) -> impl Iterator<Item = (&(String, String), Vec<&Judgment>)> {
        self.coverage
            .iter()
            .map(|(k, idx)| (k, idx.iter().map(|&i| &self.judgments[i]).collect()))
    }

    /// Keeps only judgments for the given queries. Resolution is preserved.
    pub fn restrict_to(&self, queries: &BTreeSet<String>) -> Self {
        let keep: Vec<usize> = (0..self.judgments.len())
            .filter(|&i| queries.contains(&self.judgments[i].query_id))
            .collect();
        let mut out = Self {
            judgments: keep.iter().map(|&i| self.judgments[i].clone()).collect(),
            resources: self
                .resources
                .as_ref()
                .map(|r| keep.iter().map(|&i| r[i].clone()).collect()),
            coverage: BTreeMap::new(),
        };
        out.rebuild_coverage();
        out
    }

    pub fn for_query<'a>(&'a self, query_id: &'a str) -> impl Iterator<Item = &'a Judgment> + 'a {
        let start = self
            .judgments
            .partition_point(|j| j.query_id.as_str() < query_id);
        self.judgments[start..]
            .iter()
            .take_while(move |j| j.query_id == query_id)
    }

    pub fn write_qrels<W: Write>(&self, mut out: W) -> io::Result<()> {
        for j in &self.judgments {
            writeln!(out, "{} 0 {} {}", j.query_id, j.doc_id, j.grade)?;
        }
        Ok(())
    }
}

/// Parses TREC-style qrels. Negative grades are clamped to zero and duplicate
/// pairs keep their maximum grade.
pub fn parse_qrels<R: BufRead>(input: R) -> Result<JudgmentSet> {
    let mut items = Vec::new();
    for item in lines(input) {
        let (line_no, line) = item?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: format!("expected 4 columns, found {}", cols.len()),
            });
        }
        let grade: i64 = cols[3].parse().map_err(|_| CorpusError::Malformed {
            line: line_no,
            message: format!("grade `{}` is not an integer", cols[3]),
        })?;
        let grade = u32::try_from(grade.max(0)).map_err(|_| CorpusError::Malformed {
            line: line_no,
            message: format!("grade `{grade}` out of range"),
        })?;
        items.push(Judgment {
            query_id: cols[0].to_string(),
            doc_id: cols[2].to_string(),
            grade,
        });
    }
    Ok(JudgmentSet::from_judgments(items))
}

/// Document to resource assignment.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DocMap {
    doc_to_resource: BTreeMap<String, String>,
    resources: BTreeMap<String, ResourceRecord>,
}

impl DocMap {
    pub fn from_pairs<I, S>(pairs: I) -> std::result::Result<Self, (String, String, String)>
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        let mut map = DocMap::default();
        for (d, r) in pairs {
            map.insert(d.into(), r.into())?;
        }
        Ok(map)
    }

    /// Returns `(doc, existing, new)` on a conflicting assignment.
    fn insert(&mut self, doc: String, resource: String) -> std::result::Result<(), (String, String, String)> {
        if let Some(existing) = self.doc_to_resource.get(&doc) {
            if *existing != resource {
                return Err((doc, existing.clone(), resource));
            }
            return Ok(());
        }
        let record = self
            .resources
            .entry(resource.clone())
            .or_insert_with(|| ResourceRecord {
                resource_id: resource.clone(),
                doc_ids: Vec::new(),
            });
        let pos = record.doc_ids.partition_point(|d| *d < doc);
        record.doc_ids.insert(pos, doc.clone());
        self.doc_to_resource.insert(doc, resource);
        Ok(())
    }

    pub fn resource_of(&self, doc_id: &str) -> Option<&str> {
        self.doc_to_resource.get(doc_id).map(String::as_str)
    }

    pub fn resources(&self) -> impl Iterator<Item = &ResourceRecord> {
        self.resources.values()
    }

    pub fn resource(&self, resource_id: &str) -> Option<&ResourceRecord> {
        self.resources.get(resource_id)
    }

    pub fn resource_ids(&self) -> Vec<String> {
        self.resources.keys().cloned().collect()
    }

    pub fn num_documents(&self) -> usize {
        self.doc_to_resource.len()
    }

    pub fn num_resources(&self) -> usize {
        self.resources.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.doc_to_resource
            .iter()
            .map(|(d, r)| (d.as_str(), r.as_str()))
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (d, r) in self.iter() {
            writeln!(out, "{d}\t{r}")?;
        }
        Ok(())
    }
}

pub fn parse_doc_map<R: BufRead>(input: R) -> Result<DocMap> {
    let mut map = DocMap::default();
    for item in lines(input) {
        let (line_no, line) = item?;
        let line = strip_cr(&line);
        let Some((doc, resource)) = line.split_once('\t') else {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: "expected `doc_id<TAB>resource_id`".into(),
            });
        };
        if doc.is_empty() || resource.is_empty() || resource.contains('\t') {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: "expected `doc_id<TAB>resource_id`".into(),
            });
        }
        map.insert(doc.to_string(), resource.to_string())
            .map_err(|(doc, first, second)| CorpusError::ConflictingResource {
                line: line_no,
                doc,
                first,
                second,
            })?;
    }
    Ok(map)
}

/// Parses `doc_id<TAB>title<TAB>body`; every document must be in `doc_map`.
pub fn parse_documents<R: BufRead>(input: R, doc_map: &DocMap) -> Result<Vec<DocumentRecord>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for item in lines(input) {
        let (line_no, line) = item?;
        let line = strip_cr(&line);
        let mut cols = line.splitn(3, '\t');
        let doc_id = cols.next().unwrap_or_default();
        let (Some(title), body) = (cols.next(), cols.next()) else {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: "expected `doc_id<TAB>title<TAB>body`".into(),
            });
        };
        if doc_id.is_empty() {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: "empty document id".into(),
            });
        }
        if !seen.insert(doc_id.to_string()) {
            return Err(CorpusError::DuplicateDocument {
                line: line_no,
                id: doc_id.to_string(),
            });
        }
        let resource_id = doc_map
            .resource_of(doc_id)
            .ok_or_else(|| CorpusError::UnknownDocument(doc_id.to_string()))?;
        out.push(DocumentRecord {
            doc_id: doc_id.to_string(),
            title: title.to_string(),
            body: body.unwrap_or_default().to_string(),
            resource_id: resource_id.to_string(),
        });
    }
    Ok(out)
}

pub fn write_documents<W: Write>(docs: &[DocumentRecord], mut out: W) -> io::Result<()> {
    for d in docs {
        writeln!(out, "{}\t{}\t{}", d.doc_id, d.title, d.body)?;
    }
    Ok(())
}

/// Representative documents chosen per resource.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TopDocuments {
    /// Every resource of the doc map, in id order. Lists may be empty.
    pub per_resource: BTreeMap<String, Vec<String>>,
    /// Resources without a single judged document.
    pub unjudged_resources: Vec<String>,
}

/// Picks up to `n` documents per resource by their grade summed over all
/// queries in `judgments`, highest first, ties by ascending doc id.
pub fn select_top_documents(
    judgments: &JudgmentSet,
    doc_map: &DocMap,
    n: usize,
) -> Result<TopDocuments> {
    if n == 0 {
        return Err(CorpusError::InvalidTopN);
    }
    let mut scores: BTreeMap<&str, BTreeMap<&str, u64>> = BTreeMap::new();
    for j in judgments.judgments() {
        let r = doc_map
            .resource_of(&j.doc_id)
            .ok_or_else(|| CorpusError::UnknownDocument(j.doc_id.clone()))?;
        *scores.entry(r).or_default().entry(&j.doc_id).or_insert(0) += u64::from(j.grade);
    }
    let mut out = TopDocuments::default();
    for record in doc_map.resources() {
        let mut docs: Vec<(&str, u64)> = scores
            .get(record.resource_id.as_str())
            .map(|m| m.iter().map(|(d, s)| (*d, *s)).collect())
            .unwrap_or_default();
        docs.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        docs.truncate(n);
        if docs.is_empty() {
            out.unjudged_resources.push(record.resource_id.clone());
        }
        out.per_resource.insert(
            record.resource_id.clone(),
            docs.into_iter().map(|(d, _)| d.to_string()).collect(),
        );
    }
    Ok(out)
}

/// A fully ingested collection.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub queries: Vec<QueryRecord>,
    pub documents: Vec<DocumentRecord>,
    pub doc_map: DocMap,
    /// Resolved against `doc_map`.
    pub judgments: JudgmentSet,
    pub provenance: Vec<(String, String)>,
}

pub const QUERIES_FILE: &str = "queries.tsv";
pub const QRELS_FILE: &str = "qrels.txt";
pub const DOC_MAP_FILE: &str = "doc_map.tsv";
pub const DOCUMENTS_FILE: &str = "documents.tsv";
pub const MANIFEST_FILE: &str = "manifest.txt";

impl Dataset {
    /// Resolves judgments and checks that every judged query has a record.
    pub fn new(
        queries: Vec<QueryRecord>,
        documents: Vec<DocumentRecord>,
        doc_map: DocMap,
        judgments: JudgmentSet,
    ) -> Result<Self> {
        let judgments = judgments.resolve(&doc_map)?;
        let known: BTreeSet<&str> = queries.iter().map(|q| q.query_id.as_str()).collect();
        if let Some(missing) = judgments
            .judgments()
            .iter()
            .find(|j| !known.contains(j.query_id.as_str()))
        {
            return Err(CorpusError::UnknownQuery(missing.query_id.clone()));
        }
        Ok(Self {
            queries,
            documents,
            doc_map,
            judgments,
            provenance: Vec::new(),
        })
    }

    /// Queries with at least one judgment, sorted.
    pub fn judged_query_ids(&self) -> Vec<String> {
        self.judgments.query_ids().into_iter().collect()
    }

    pub fn query(&self, query_id: &str) -> Option<&QueryRecord> {
        self.queries.iter().find(|q| q.query_id == query_id)
    }

    /// Reads the raw input files; `documents` is optional.
    pub fn from_files(
        queries: &Path,
        qrels: &Path,
        doc_map: &Path,
        documents: Option<&Path>,
    ) -> Result<Self> {
        let open = |p: &Path| -> Result<io::BufReader<fs::File>> {
            fs::File::open(p)
                .map(io::BufReader::new)
                .map_err(|e| CorpusError::Io(e).in_file(p))
        };
        let q = parse_queries(open(queries)?).map_err(|e| e.in_file(queries))?;
        let j = parse_qrels(open(qrels)?).map_err(|e| e.in_file(qrels))?;
        let m = parse_doc_map(open(doc_map)?).map_err(|e| e.in_file(doc_map))?;
        let d = match documents {
            Some(p) => parse_documents(open(p)?, &m).map_err(|e| e.in_file(p))?,
            None => Vec::new(),
        };
        let mut ds = Self::new(q, d, m, j)?;
        ds.provenance = [("queries", Some(queries)), ("qrels", Some(qrels)), ("doc_map", Some(doc_map)), ("documents", documents)]
            .into_iter()
            .filter_map(|(k, p)| p.map(|p| (k.to_string(), p.display().to_string())))
            .collect();
        Ok(ds)
    }

    /// Writes canonical copies of every input plus the manifest.
    pub fn save_dir(&self, dir: &Path) -> Result<DatasetManifest> {
        fs::create_dir_all(dir)?;
        write_queries(&self.queries, io::BufWriter::new(fs::File::create(dir.join(QUERIES_FILE))?))?;
        self.judgments
            .write_qrels(io::BufWriter::new(fs::File::create(dir.join(QRELS_FILE))?))?;
        self.doc_map
            .write_tsv(io::BufWriter::new(fs::File::create(dir.join(DOC_MAP_FILE))?))?;
        if !self.documents.is_empty() {
            write_documents(
                &self.documents,
                io::BufWriter::new(fs::File::create(dir.join(DOCUMENTS_FILE))?),
            )?;
        }
        let manifest = dataset_stats(self);
        fs::write(dir.join(MANIFEST_FILE), manifest.to_text())?;
        Ok(manifest)
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let docs = dir.join(DOCUMENTS_FILE);
        let mut ds = Self::from_files(
            &dir.join(QUERIES_FILE),
            &dir.join(QRELS_FILE),
            &dir.join(DOC_MAP_FILE),
            docs.exists().then_some(docs.as_path()),
        )?;
        ds.provenance = vec![("dataset".to_string(), dir.display().to_string())];
        Ok(ds)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub queries: usize,
    pub documents: usize,
    pub resources: usize,
    pub judgments: usize,
    pub judged_queries: usize,
    pub provenance: Vec<(String, String)>,
    /// SHA-256 over the canonical serialization of all collections.
    pub digest: String,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "queries = {}", self.queries);
        let _ = writeln!(s, "judged_queries = {}", self.judged_queries);
        let _ = writeln!(s, "documents = {}", self.documents);
        let _ = writeln!(s, "resources = {}", self.resources);
        let _ = writeln!(s, "judgments = {}", self.judgments);
        for (k, v) in &self.provenance {
            let _ = writeln!(s, "source.{k} = {v}");
        }
        let _ = writeln!(s, "digest = {}", self.digest);
        s
    }
}

pub fn dataset_stats(ds: &Dataset) -> DatasetManifest {
    let mut canon = Vec::new();
    write_queries(&ds.queries, &mut canon).expect("in-memory write");
    canon.push(0);
    ds.doc_map.write_tsv(&mut canon).expect("in-memory write");
    canon.push(0);
    ds.judgments.write_qrels(&mut canon).expect("in-memory write");
    canon.push(0);
    write_documents(&ds.documents, &mut canon).expect("in-memory write");
    DatasetManifest {
        queries: ds.queries.len(),
        documents: ds.doc_map.num_documents(),
        resources: ds.doc_map.num_resources(),
        judgments: ds.judgments.len(),
        judged_queries: ds.judgments.query_ids().len(),
        provenance: ds.provenance.clone(),
        digest: hex_digest(&canon),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn qrels(s: &str) -> JudgmentSet {
        parse_qrels(s.as_bytes()).unwrap()
    }

    #[test]
    fn parses_single_query() {
        let q = parse_queries("q1\tobama family tree\n".as_bytes()).unwrap();
        assert_eq!(
            q,
            vec![QueryRecord {
                query_id: "q1".into(),
                text: "obama family tree".into()
            }]
        );
    }

    #[test]
    fn empty_query_stream() {
        assert!(parse_queries("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn duplicate_query_names_second_line() {
        let err = parse_queries("q1\ta\nq1\tb\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateQuery { line: 2, first: 1, .. }));
    }

    #[test]
    fn malformed_query_line() {
        let err = parse_queries("q1 no tab\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 1, .. }));
    }

    #[test]
    fn qrels_single_record() {
        let set = qrels("201 0 d7 2\n");
        assert_eq!(
            set.judgments(),
            &[Judgment {
                query_id: "201".into(),
                doc_id: "d7".into(),
                grade: 2
            }]
        );
    }

    #[test]
    fn qrels_clamp_negative() {
        assert_eq!(qrels("201 0 d7 -2").judgments()[0].grade, 0);
    }

    #[test]
    fn qrels_duplicates_keep_max() {
        let set = qrels("201 0 d7 1\n201 0 d7 3\n");
        assert_eq!(set.len(), 1);
        assert_eq!(set.judgments()[0].grade, 3);
        let set = qrels("201 0 d7 3\n201 0 d7 1\n");
        assert_eq!(set.judgments()[0].grade, 3);
    }

    #[test]
    fn qrels_errors() {
        assert!(matches!(
            parse_qrels("201 0 d7 x".as_bytes()),
            Err(CorpusError::Malformed { line: 1, .. })
        ));
        assert!(matches!(
            parse_qrels("201 0 d7\n".as_bytes()),
            Err(CorpusError::Malformed { line: 1, .. })
        ));
        assert!(parse_qrels("201 0 d7 1 extra".as_bytes()).is_err());
    }

    #[test]
    fn doc_map_basics() {
        let m = parse_doc_map("d1\tR1\n".as_bytes()).unwrap();
        assert_eq!(m.resource_of("d1"), Some("R1"));
        let err = parse_doc_map("d1\tR1\nd1\tR2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::ConflictingResource { line: 2, .. }));
    }

    #[test]
    fn doc_map_materializes_resources() {
        let m = parse_doc_map("d3\tR2\nd1\tR1\nd2\tR1\n".as_bytes()).unwrap();
        let rs: Vec<_> = m.resources().cloned().collect();
        assert_eq!(
            rs,
            vec![
                ResourceRecord {
                    resource_id: "R1".into(),
                    doc_ids: vec!["d1".into(), "d2".into()]
                },
                ResourceRecord {
                    resource_id: "R2".into(),
                    doc_ids: vec!["d3".into()]
                },
            ]
        );
    }

    #[test]
    fn top_documents_by_summed_grade() {
        let m = parse_doc_map("d1\tR\nd2\tR\nd3\tR\n".as_bytes()).unwrap();
        let j = qrels("q1 0 d1 3\nq2 0 d1 2\nq1 0 d2 4\nq2 0 d3 1\n");
        let top = select_top_documents(&j, &m, 2).unwrap();
        assert_eq!(top.per_resource["R"], vec!["d1", "d2"]);
    }

    #[test]
    fn top_documents_tie_break_and_short_resources() {
        let m = parse_doc_map("b\tR\na\tR\nc\tR\nz\tEmpty\n".as_bytes()).unwrap();
        let j = qrels("q 0 c 1\nq 0 a 1\nq 0 b 1\n");
        let top = select_top_documents(&j, &m, 10).unwrap();
        assert_eq!(top.per_resource["R"], vec!["a", "b", "c"]);
        assert!(top.per_resource["Empty"].is_empty());
        assert_eq!(top.unjudged_resources, vec!["Empty".to_string()]);
        assert!(matches!(select_top_documents(&j, &m, 0), Err(CorpusError::InvalidTopN)));
    }

    #[test]
    fn resolve_builds_coverage() {
        let m = parse_doc_map("d1\tR1\nd2\tR1\nd3\tR2\n".as_bytes()).unwrap();
        let j = qrels("q1 0 d1 2\nq1 0 d2 3\nq1 0 d3 1\n").resolve(&m).unwrap();
        let cov: Vec<_> = j
            .coverage()
            .map(|(k, js)| (k.clone(), js.iter().map(|j| j.grade).sum::<u32>()))
            .collect();
        assert_eq!(
            cov,
            vec![(("q1".into(), "R1".into()), 5), (("q1".into(), "R2".into()), 1)]
        );
        let unresolved = qrels("q1 0 dx 1").resolve(&m);
        assert!(matches!(unresolved, Err(CorpusError::UnknownDocument(_))));
        let (lenient, dropped) = qrels("q1 0 dx 1\nq1 0 d1 1").resolve_lenient(&m);
        assert_eq!((lenient.len(), dropped.len()), (1, 1));
    }

    #[test]
    fn stats_counts() {
        let empty = dataset_stats(&Dataset::default());
        assert_eq!(
            (empty.queries, empty.documents, empty.resources, empty.judgments),
            (0, 0, 0, 0)
        );
        let m = parse_doc_map("d1\tR1\nd2\tR1\nd3\tR2\n".as_bytes()).unwrap();
        let ds = Dataset::new(
            parse_queries("q1\tx\n".as_bytes()).unwrap(),
            vec![],
            m,
            qrels("q1 0 d1 1"),
        )
        .unwrap();
        let s = dataset_stats(&ds);
        assert_eq!((s.documents, s.resources, s.judgments), (3, 2, 1));
        assert_eq!(s.digest, dataset_stats(&ds).digest);
    }

    #[test]
    fn unknown_judged_query_rejected() {
        let m = parse_doc_map("d1\tR1\n".as_bytes()).unwrap();
        let err = Dataset::new(vec![], vec![], m, qrels("q9 0 d1 1")).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownQuery(q) if q == "q9"));
    }

    fn judgment_strategy() -> impl Strategy<Value = Vec<(u8, u8, i32)>> {
        prop::collection::vec((0u8..5, 0u8..20, -3i32..5), 0..40)
    }

    proptest! {
        #[test]
        fn qrels_round_trip(raw in judgment_strategy()) {
            let text: String = raw
                .iter()
                .map(|(q, d, g)| format!("q{q} 0 d{d} {g}\n"))
                .collect();
            let set = qrels(&text);
            prop_assert!(set.judgments().iter().all(|j| j.grade <= 4));
            let mut out = Vec::new();
            set.write_qrels(&mut out).unwrap();
            prop_assert_eq!(parse_qrels(out.as_slice()).unwrap(), set);
        }

        #[test]
        fn top_documents_match_exhaustive_sort(
            raw in judgment_strategy(),
            assign in prop::collection::vec(0u8..3, 20),
            n in 1usize..8,
        ) {
            let m = DocMap::from_pairs(
                (0..20).map(|d| (format!("d{d}"), format!("R{}", assign[d]))),
            ).unwrap();
            let text: String = raw.iter().map(|(q, d, g)| format!("q{q} 0 d{d} {g}\n")).collect();
            let set = qrels(&text);
            let top = select_top_documents(&set, &m, n).unwrap();
            let mut seen = BTreeSet::new();
            for (r, docs) in &top.per_resource {
                // oracle: score every judged doc of r, sort the full list
                let mut all: Vec<(String, u64)> = m.resource(r).unwrap().doc_ids.iter()
                    .filter_map(|d| {
                        let js: Vec<_> = set.judgments().iter().filter(|j| &j.doc_id == d).collect();
                        (!js.is_empty()).then(|| (d.clone(), js.iter().map(|j| j.grade as u64).sum()))
                    })
                    .collect();
                all.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                let expect: Vec<String> = all.into_iter().take(n).map(|(d, _)| d).collect();
                prop_assert_eq!(docs, &expect);
                for d in docs {
                    prop_assert_eq!(m.resource_of(d), Some(r.as_str()));
                    prop_assert!(seen.insert(d.clone()));
                }
            }
        }
    }
}
