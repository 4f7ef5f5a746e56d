//! Generated corpora for tests and experiments.
//!
//! Documents and queries of a topic draw from different word lists, so raw
//! bag-of-words similarity between a query and its relevant resources is
//! weak. Each resource also has facet words shared by its documents and by
//! the queries that target it.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CorpusError, Dataset, DocMap, DocumentRecord, Judgment, JudgmentSet, QueryRecord};
use crate::embedding::{synth_embed, EmbeddingError, EmbeddingStore, StoreKind};
use crate::training::CorpusEmbeddings;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub topics: usize,
    pub resources_per_topic: usize,
    pub docs_per_resource: usize,
    pub queries: usize,
    pub topic_doc_words: usize,
    pub topic_query_words: usize,
    pub facet_words: usize,
    pub common_words: usize,
    pub doc_length: usize,
    pub query_length: usize,
    /// Share of query tokens taken from the target resource's facet words.
    pub query_facet_share: f64,
    /// Share of query tokens taken from the topic's document words.
    pub query_doc_share: f64,
    /// Share of document tokens taken from the resource's facet words.
    pub doc_facet_share: f64,
    /// Share of document tokens taken from the common words.
    pub doc_noise: f64,
    /// Judged documents of the target resource, graded 2 or 3.
    pub target_judged: usize,
    /// Judged documents per other resource of the same topic, graded 0 or 1.
    pub sibling_judged: usize,
    /// Off-topic resources judged with one document each. At or above the
    /// number of off-topic resources every one is judged, graded
    /// `min(1, off_topic_max_grade)` up to `off_topic_max_grade`; below it the
    /// resources are drawn at random and graded 0 up to `off_topic_max_grade`.
    pub off_topic_judged: usize,
    pub off_topic_max_grade: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            topics: 4,
            resources_per_topic: 5,
            docs_per_resource: 12,
            queries: 40,
            topic_doc_words: 40,
            topic_query_words: 12,
            facet_words: 8,
            common_words: 60,
            doc_length: 30,
            query_length: 6,
            query_facet_share: 0.3,
            query_doc_share: 0.0,
            doc_facet_share: 0.2,
            doc_noise: 0.3,
            target_judged: 3,
            sibling_judged: 1,
            off_topic_judged: usize::MAX,
            off_topic_max_grade: 1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn num_resources(&self) -> usize {
        self.topics * self.resources_per_topic
    }
}

pub fn resource_id(r: usize) -> String {
    format!("R{r:03}")
}

pub fn query_id(q: usize) -> String {
    format!("Q{q:04}")
}

pub fn doc_id(r: usize, d: usize) -> String {
    format!("R{r:03}-D{d:03}")
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &'a [String]) -> &'a str {
    &words[rng.gen_range(0..words.len())]
}

fn words(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// A topic corpus with graded judgments. Query `q` belongs to topic
/// `q % topics` and targets one of that topic's resources.
pub fn generate(config: &SynthConfig) -> Result<Dataset, CorpusError> {
    let c = config;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let common = words("cw", c.common_words);
    let topic_doc: Vec<Vec<String>> = (0..c.topics).map(|t| words(&format!("t{t}d"), c.topic_doc_words)).collect();
    let topic_query: Vec<Vec<String>> = (0..c.topics).map(|t| words(&format!("t{t}q"), c.topic_query_words)).collect();
    let facet: Vec<Vec<String>> = (0..c.num_resources()).map(|r| words(&format!("f{r}w"), c.facet_words)).collect();

    let mut pairs = Vec::new();
    let mut documents = Vec::new();
    for r in 0..c.num_resources() {
        let t = r / c.resources_per_topic;
        for d in 0..c.docs_per_resource {
            let mut body = Vec::with_capacity(c.doc_length);
            for _ in 0..c.doc_length {
                let x: f64 = rng.gen();
                let w = if x < c.doc_facet_share {
                    pick(&mut rng, &facet[r])
                } else if x < c.doc_facet_share + c.doc_noise {
                    pick(&mut rng, &common)
                } else {
                    pick(&mut rng, &topic_doc[t])
                };
                body.push(w.to_string());
            }
            let id = doc_id(r, d);
            pairs.push((id.clone(), resource_id(r)));
            documents.push(DocumentRecord {
                doc_id: id,
                resource_id: resource_id(r),
                title: body[..3].join(" "),
                body: body[3..].join(" "),
            });
        }
    }

    let mut queries = Vec::with_capacity(c.queries);
    let mut judgments = Vec::new();
    for q in 0..c.queries {
        let t = q % c.topics;
        let target = t * c.resources_per_topic + rng.gen_range(0..c.resources_per_topic);
        let mut text = Vec::with_capacity(c.query_length);
        for _ in 0..c.query_length {
            let x: f64 = rng.gen();
            let w = if x < c.query_facet_share {
                pick(&mut rng, &facet[target])
            } else if x < c.query_facet_share + c.query_doc_share {
                pick(&mut rng, &topic_doc[t])
            } else {
                pick(&mut rng, &topic_query[t])
            };
            text.push(w.to_string());
        }
        let qid = query_id(q);
        queries.push(QueryRecord {
            query_id: qid.clone(),
            text: text.join(" "),
        });
        let mut judge = |rng: &mut ChaCha8Rng, r: usize, n: usize, grades: (u32, u32)| {
            let mut ds: Vec<usize> = (0..c.docs_per_resource).collect();
            ds.shuffle(rng);
            for &d in ds.iter().take(n) {
                judgments.push(Judgment {
                    query_id: qid.clone(),
                    doc_id: doc_id(r, d),
                    grade: rng.gen_range(grades.0..=grades.1),
                });
            }
        };
        judge(&mut rng, target, c.target_judged, (2, 3));
        for s in 0..c.resources_per_topic {
            let r = t * c.resources_per_topic + s;
            if r != target {
                judge(&mut rng, r, c.sibling_judged, (0, 1));
            }
        }
        if c.off_topic_judged >= c.num_resources() - c.resources_per_topic {
            for r in 0..c.num_resources() {
                if r / c.resources_per_topic != t {
                    judge(&mut rng, r, 1, (c.off_topic_max_grade.min(1), c.off_topic_max_grade));
                }
            }
        } else {
            for _ in 0..c.off_topic_judged {
                let mut r = rng.gen_range(0..c.num_resources());
                while r / c.resources_per_topic == t && c.topics > 1 {
                    r = rng.gen_range(0..c.num_resources());
                }
                judge(&mut rng, r, 1, (0, c.off_topic_max_grade));
            }
        }
    }
    let doc_map = DocMap::from_pairs(pairs).expect("generated ids are unique");
    let mut ds = Dataset::new(queries, documents, doc_map, JudgmentSet::from_judgments(judgments))?;
    ds.provenance = vec![("synth_seed".to_string(), c.seed.to_string())];
    Ok(ds)
}

/// Hashed bag-of-words vectors for every query and document.
pub fn embed_dataset(dataset: &Dataset, dim: usize, seed: u64) -> Result<CorpusEmbeddings, EmbeddingError> {
    let mut queries = EmbeddingStore::new(dim, StoreKind::Query)?;
    for q in &dataset.queries {
        queries.insert(q.query_id.clone(), &synth_embed(&q.text, dim, seed))?;
    }
    let mut documents = EmbeddingStore::new(dim, StoreKind::Document)?;
    for d in &dataset.documents {
        documents.insert(d.doc_id.clone(), &synth_embed(&d.text(), dim, seed))?;
    }
    Ok(CorpusEmbeddings { queries, documents })
}

/// Five resources of two documents each and four queries that judge every
/// resource with distinct positive summed grades. Only one pair reaches the
/// maximum sum, so a cosine of exactly 1 is asked of a single pair and the
/// targets have an exact fit.
pub fn overfit_fixture() -> Dataset {
    let texts = [
        "river bank water flow",
        "stock market trading shares",
        "football match goal score",
        "guitar chord melody song",
        "planet orbit star telescope",
    ];
    let mut pairs = Vec::new();
    let mut documents = Vec::new();
    for (r, text) in texts.iter().enumerate() {
        for d in 0..2 {
            let id = doc_id(r, d);
            pairs.push((id.clone(), resource_id(r)));
            documents.push(DocumentRecord {
                doc_id: id,
                resource_id: resource_id(r),
                title: format!("doc {d}"),
                body: format!("{text} extra{r}{d}"),
            });
        }
    }
    // summed grade of (query, resource) is order[q][r], split over two docs
    let order = [[6, 4, 3, 2, 1], [1, 2, 3, 4, 5], [3, 5, 1, 4, 2], [2, 1, 5, 3, 4]];
    let query_texts = ["water flow bank", "telescope star", "goal score match", "song melody"];
    let mut queries = Vec::new();
    let mut judgments = Vec::new();
    for (q, row) in order.iter().enumerate() {
        queries.push(QueryRecord {
            query_id: query_id(q),
            text: query_texts[q].to_string(),
        });
        for (r, &sum) in row.iter().enumerate() {
            let first = sum.min(3);
            judgments.push(Judgment {
                query_id: query_id(q),
                doc_id: doc_id(r, 0),
                grade: first,
            });
            if sum > first {
                judgments.push(Judgment {
                    query_id: query_id(q),
                    doc_id: doc_id(r, 1),
                    grade: sum - first,
                });
            }
        }
    }
    Dataset::new(
        queries,
        documents,
        DocMap::from_pairs(pairs).expect("unique"),
        JudgmentSet::from_judgments(judgments),
    )
    .expect("valid fixture")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::resource_relevance;

    #[test]
    fn default_corpus_shape() {
        let c = SynthConfig::default();
        let ds = generate(&c).unwrap();
        assert_eq!(ds.doc_map.num_resources(), 20);
        assert_eq!(ds.queries.len(), 40);
        assert_eq!(ds.documents.len(), 20 * 12);
        assert_eq!(ds.judged_query_ids().len(), 40);
        assert!(ds.judgments.is_resolved());
    }

    #[test]
    fn generation_is_seeded() {
        let c = SynthConfig::default();
        let a = generate(&c).unwrap();
        let b = generate(&c).unwrap();
        assert_eq!(a.queries, b.queries);
        assert_eq!(a.judgments.judgments(), b.judgments.judgments());
        let other = generate(&SynthConfig { seed: 1, ..c }).unwrap();
        assert_ne!(a.queries, other.queries);
    }

    #[test]
    fn target_resource_is_most_relevant() {
        let c = SynthConfig::default();
        let ds = generate(&c).unwrap();
        for q in ds.judged_query_ids() {
            let rel = resource_relevance(&ds.judgments, &q, &ds.doc_map).unwrap();
            let best: Vec<(&str, f64)> = rel.iter().filter(|(_, v)| *v >= 4.0).collect();
            assert_eq!(best.len(), 1, "{q}");
            let qn: usize = q[1..].parse().unwrap();
            let r: usize = best[0].0[1..].parse().unwrap();
            assert_eq!(r / c.resources_per_topic, qn % c.topics);
        }
    }

    #[test]
    fn overfit_fixture_relevance() {
        let ds = overfit_fixture();
        assert_eq!(ds.doc_map.num_resources(), 5);
        assert_eq!(ds.queries.len(), 4);
        let rel = resource_relevance(&ds.judgments, "Q0002", &ds.doc_map).unwrap();
        let v: Vec<f64> = rel.iter().map(|(_, v)| v).collect();
        assert_eq!(v, vec![3.0, 5.0, 1.0, 4.0, 2.0]);
    }

    #[test]
    fn embeddings_cover_dataset() {
        let ds = overfit_fixture();
        let e = embed_dataset(&ds, 16, 0).unwrap();
        assert_eq!(e.queries.len(), 4);
        assert_eq!(e.documents.len(), 10);
    }
}
