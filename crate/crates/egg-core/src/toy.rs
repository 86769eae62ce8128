//! A bundled synthetic retrieval task for offline runs and the test suite.
//!
//! Four topic clusters of 50 documents each. Every document mixes three kinds
//! of words: a few tokens unique to that document, words from its cluster's
//! vocabulary, and words from a noise vocabulary shared by all clusters.
//! Held-out queries combine unique and cluster words of their relevant
//! document with noise words the document does *not* contain. Plain token
//! overlap is dominated by the adversarial noise, while a retriever that has
//! learned which words co-occur — unique words identify one document, noise
//! words identify nothing — separates the relevant document cleanly.

use crate::corpus::{Corpus, Document, Qrels, Query, QuerySet};
use crate::error::Result;
use crate::rng::DetRng;

pub const CLUSTERS: usize = 4;
pub const DOCS_PER_CLUSTER: usize = 50;
pub const CLUSTER_VOCAB: usize = 30;
pub const NOISE_VOCAB: usize = 40;
pub const UNIQUE_WORDS_PER_DOC: usize = 4;
pub const CLUSTER_WORDS_PER_DOC: usize = 10;
pub const NOISE_WORDS_PER_DOC: usize = 10;
pub const QUERIES_PER_CLUSTER: usize = 10;
pub const QUERY_UNIQUE_WORDS: usize = 3;
pub const QUERY_CLUSTER_WORDS: usize = 1;
pub const QUERY_NOISE_WORDS: usize = 6;

/// One generated task: 200 docs, 40 queries, one relevant doc per query.
#[derive(Debug, Clone)]
pub struct ToyTask {
    pub corpus: Corpus,
    pub queries: QuerySet,
    pub qrels: Qrels,
}

fn unique_word(cluster: usize, doc: usize, index: usize) -> String {
    format!("c{cluster}d{doc:02}u{index}")
}

fn cluster_word(cluster: usize, index: usize) -> String {
    format!("c{cluster}w{index:02}")
}

fn noise_word(index: usize) -> String {
    format!("noise{index:02}")
}

/// Generate the task deterministically from a seed.
pub fn generate_toy_task(seed: u64) -> ToyTask {
    let mut doc_rng = DetRng::with_stream(seed, 0xD0C);
    let mut docs = Vec::with_capacity(CLUSTERS * DOCS_PER_CLUSTER);
    // remember each doc's word indices so queries can be built against them
    let mut doc_words: Vec<(Vec<usize>, Vec<usize>)> = Vec::with_capacity(CLUSTERS * DOCS_PER_CLUSTER);

    for cluster in 0..CLUSTERS {
        for i in 0..DOCS_PER_CLUSTER {
            let cluster_ids = doc_rng.sample_indices(CLUSTER_VOCAB, CLUSTER_WORDS_PER_DOC);
            let noise_ids = doc_rng.sample_indices(NOISE_VOCAB, NOISE_WORDS_PER_DOC);
            let mut words: Vec<String> = (0..UNIQUE_WORDS_PER_DOC)
                .map(|u| unique_word(cluster, i, u))
                .chain(cluster_ids.iter().map(|&w| cluster_word(cluster, w)))
                .chain(noise_ids.iter().map(|&w| noise_word(w)))
                .collect();
            doc_rng.shuffle(&mut words);
            docs.push(Document::new(format!("c{cluster}-d{i:02}"), "", words.join(" ")));
            doc_words.push((cluster_ids, noise_ids));
        }
    }

    let mut query_rng = DetRng::with_stream(seed, 0x9E1);
    let mut queries = Vec::with_capacity(CLUSTERS * QUERIES_PER_CLUSTER);
    let mut qrels = Qrels::new();
    for cluster in 0..CLUSTERS {
        for t in 0..QUERIES_PER_CLUSTER {
            let doc_index = cluster * DOCS_PER_CLUSTER + t;
            let (cluster_ids, noise_ids) = &doc_words[doc_index];

            let unique_picks = query_rng.sample_indices(UNIQUE_WORDS_PER_DOC, QUERY_UNIQUE_WORDS);
            let mut words: Vec<String> = unique_picks.iter().map(|&u| unique_word(cluster, t, u)).collect();

            let cluster_picks = query_rng.sample_indices(cluster_ids.len(), QUERY_CLUSTER_WORDS);
            words.extend(cluster_picks.iter().map(|&p| cluster_word(cluster, cluster_ids[p])));

            let absent: Vec<usize> = (0..NOISE_VOCAB).filter(|w| !noise_ids.contains(w)).collect();
            let noise_picks = query_rng.sample_indices(absent.len(), QUERY_NOISE_WORDS);
            words.extend(noise_picks.iter().map(|&p| noise_word(absent[p])));
            query_rng.shuffle(&mut words);

            let query_id = format!("q{:02}", cluster * QUERIES_PER_CLUSTER + t);
            queries.push(Query {
                query_id: query_id.clone(),
                text: words.join(" "),
            });
            qrels
                .insert(query_id, docs[doc_index].doc_id.clone(), 1)
                .expect("query ids are unique");
        }
    }

    ToyTask {
        corpus: Corpus {
            docs,
            source_path: format!("toy(seed={seed})"),
        },
        queries: QuerySet { queries },
        qrels,
    }
}

/// Write the task's three files into a directory.
pub fn write_toy_task(task: &ToyTask, dir: impl AsRef<std::path::Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    crate::corpus::write_corpus(&task.corpus, dir.join("corpus.jsonl"))?;
    crate::corpus::write_queries(&task.queries, dir.join("queries.jsonl"))?;
    crate::corpus::write_qrels(&task.qrels, dir.join("qrels.tsv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_task_shape() {
        let task = generate_toy_task(0);
        assert_eq!(task.corpus.len(), 200);
        assert_eq!(task.queries.len(), 40);
        assert_eq!(task.qrels.len(), 40);
        for doc in &task.corpus.docs {
            assert_eq!(
                doc.text.split_whitespace().count(),
                UNIQUE_WORDS_PER_DOC + CLUSTER_WORDS_PER_DOC + NOISE_WORDS_PER_DOC
            );
        }
    }

    #[test]
    fn toy_task_is_deterministic() {
        let a = generate_toy_task(7);
        let b = generate_toy_task(7);
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.queries, b.queries);
        assert_eq!(a.qrels, b.qrels);
    }

    #[test]
    fn query_words_split_between_doc_and_adversarial_noise() {
        let task = generate_toy_task(3);
        for query in &task.queries.queries {
            let (doc_id, _) = task.qrels.for_query(&query.query_id).next().unwrap();
            let doc = task.corpus.get(doc_id).unwrap();
            let doc_tokens: std::collections::HashSet<&str> = doc.text.split_whitespace().collect();
            for word in query.text.split_whitespace() {
                if word.starts_with("noise") {
                    assert!(!doc_tokens.contains(word), "{word} leaked into {doc_id}");
                } else {
                    assert!(doc_tokens.contains(word), "{word} missing from {doc_id}");
                }
            }
        }
    }

    #[test]
    fn relevant_doc_is_in_the_query_cluster() {
        let task = generate_toy_task(11);
        for query in &task.queries.queries {
            let (doc_id, rel) = task.qrels.for_query(&query.query_id).next().unwrap();
            assert_eq!(rel, 1);
            let cluster_prefix = query
                .text
                .split_whitespace()
                .find(|w| w.starts_with('c'))
                .map(|w| &w[..2])
                .unwrap();
            assert!(doc_id.starts_with(cluster_prefix));
        }
    }

    #[test]
    fn unique_words_appear_in_exactly_one_doc() {
        let task = generate_toy_task(5);
        let probe = unique_word(2, 17, 1);
        let holders: Vec<&str> = task
            .corpus
            .docs
            .iter()
            .filter(|d| d.text.split_whitespace().any(|w| w == probe))
            .map(|d| d.doc_id.as_str())
            .collect();
        assert_eq!(holders, vec!["c2-d17"]);
    }
}
