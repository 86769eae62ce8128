//! Brute-force dense retrieval and ranking metrics.
//!
//! Retrieval scores every document against the encoded query by dot product
//! and keeps the top k. Ranking quality is nDCG@k with the trec_eval
//! convention: gain `2^rel - 1`, discount `log2(rank + 1)`. Queries without
//! positive judgments score 0 and are excluded from the aggregate mean but
//! counted in the report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Qrels, QuerySet};
use crate::embed::{dot_score, embed_corpus, EmbedBackend, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::train::EncoderParams;

/// One query's retrieval output: `(doc_id, score)` strictly sorted by
/// descending score with ascending doc_id breaking ties.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub ranking: Vec<(String, f64)>,
}

impl RankedList {
    /// Sort raw scores into a ranked list; duplicate doc_ids are rejected.
    pub fn from_scores(query_id: impl Into<String>, mut scores: Vec<(String, f64)>) -> Result<Self> {
        scores.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for window in scores.windows(2) {
            if window[0].0 == window[1].0 {
                return Err(Error::invalid(format!("duplicate doc_id `{}` in ranking", window[0].0)));
            }
        }
        Ok(Self {
            query_id: query_id.into(),
            ranking: scores,
        })
    }
}

/// Encode every corpus document with the trained document encoder.
pub fn encode_corpus(corpus: &Corpus, encoder: &EncoderParams, embedder: &EmbedBackend) -> Result<EmbeddingMatrix> {
    let base = embed_corpus(embedder, corpus)?;
    let mut out = EmbeddingMatrix::new(encoder.dims_out());
    for i in 0..base.len() {
        out.push_row(base.doc_id(i).to_string(), encoder.encode_doc(base.row(i))?)?;
    }
    Ok(out)
}

/// Score a query against an encoded index and keep the top `k` documents.
pub fn retrieve_topk(
    query_id: &str,
    query_text: &str,
    index: &EmbeddingMatrix,
    encoder: &EncoderParams,
    embedder: &EmbedBackend,
    k: usize,
) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if index.is_empty() {
        return Err(Error::invalid("cannot retrieve from an empty index"));
    }
    let query_enc = encoder.encode_query(&embedder.embed(query_text)?)?;
    let mut scores = Vec::with_capacity(index.len());
    for i in 0..index.len() {
        scores.push((index.doc_id(i).to_string(), dot_score(&query_enc, index.row(i))?));
    }
    let mut ranked = RankedList::from_scores(query_id, scores)?;
    ranked.ranking.truncate(k);
    Ok(ranked)
}

fn dcg_term(relevance: u32, rank: usize) -> f64 {
    if relevance == 0 {
        return 0.0;
    }
    (2.0f64.powi(relevance as i32) - 1.0) / ((rank as f64) + 1.0).log2()
}

/// nDCG truncated at rank `k`; 0 when the query has no positive judgments.
pub fn ndcg_at_k(ranking: &RankedList, qrels: &Qrels, k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    let mut ideal: Vec<u32> = qrels
        .for_query(&ranking.query_id)
        .map(|(_, rel)| rel)
        .filter(|&rel| rel > 0)
        .collect();
    if ideal.is_empty() {
        return 0.0;
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));

    let dcg: f64 = ranking
        .ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, (doc_id, _))| dcg_term(qrels.relevance(&ranking.query_id, doc_id), i + 1))
        .sum();
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, &rel)| dcg_term(rel, i + 1)).sum();
    dcg / idcg
}

/// Evaluation summary. `aggregate_ndcg` averages over queries that have at
/// least one positive judgment; the bonus metrics follow the same rule.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub k: usize,
    pub num_queries: usize,
    pub queries_with_positives: usize,
    pub skipped_qrels_entries: usize,
    pub aggregate_ndcg: f64,
    pub recall_at_k: f64,
    pub mrr_at_k: f64,
    pub per_query: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned-text summary table.
    pub fn render_table(&self) -> String {
        let rows = [
            (format!("nDCG@{}", self.k), format!("{:.4}", self.aggregate_ndcg)),
            (format!("recall@{}", self.k), format!("{:.4}", self.recall_at_k)),
            (format!("MRR@{}", self.k), format!("{:.4}", self.mrr_at_k)),
            ("queries".to_string(), self.num_queries.to_string()),
            ("with positives".to_string(), self.queries_with_positives.to_string()),
            ("skipped qrels".to_string(), self.skipped_qrels_entries.to_string()),
        ];
        let width = rows.iter().map(|(name, _)| name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (name, value) in rows {
            out.push_str(&format!("{name:<width$}  {value}\n"));
        }
        out
    }

    /// Per-query TSV: `query_id<TAB>ndcg`.
    pub fn per_query_tsv(&self) -> String {
        let mut out = String::from("query-id\tndcg\n");
        for (query_id, ndcg) in &self.per_query {
            out.push_str(&format!("{query_id}\t{ndcg}\n"));
        }
        out
    }
}

/// Retrieve and score every query in the set.
pub fn evaluate_run(
    queryset: &QuerySet,
    qrels: &Qrels,
    corpus: &Corpus,
    encoder: &EncoderParams,
    embedder: &EmbedBackend,
    k: usize,
) -> Result<EvalReport> {
    if queryset.is_empty() {
        return Err(Error::invalid("query set must be non-empty"));
    }
    let known_queries: std::collections::HashSet<&str> =
        queryset.queries.iter().map(|q| q.query_id.as_str()).collect();
    let missing: Vec<&str> = qrels
        .query_ids()
        .into_iter()
        .filter(|id| !known_queries.contains(id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!(
            "qrels reference queries missing from the query set: {}",
            missing.join(", ")
        )));
    }

    // Judgments for unknown documents cannot be retrieved; keeping them would
    // also inflate the ideal ranking. Skip them, with a count in the report.
    let known_docs: std::collections::HashSet<&str> = corpus.docs.iter().map(|d| d.doc_id.as_str()).collect();
    let mut effective = Qrels::new();
    let mut skipped = 0usize;
    for (query_id, doc_id, rel) in qrels.iter() {
        if known_docs.contains(doc_id) {
            effective.insert(query_id, doc_id, rel)?;
        } else {
            log::warn!("qrels entry ({query_id}, {doc_id}) references an unknown document; skipped");
            skipped += 1;
        }
    }

    let index = encode_corpus(corpus, encoder, embedder)?;
    let mut per_query = BTreeMap::new();
    let mut ndcg_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut mrr_sum = 0.0;
    let mut with_positives = 0usize;

    for query in &queryset.queries {
        let ranked = retrieve_topk(&query.query_id, &query.text, &index, encoder, embedder, k)?;
        let ndcg = ndcg_at_k(&ranked, &effective, k);
        per_query.insert(query.query_id.clone(), ndcg);

        let relevant: std::collections::HashSet<&str> = effective
            .for_query(&query.query_id)
            .filter(|&(_, rel)| rel > 0)
            .map(|(doc_id, _)| doc_id)
            .collect();
        if relevant.is_empty() {
            continue;
        }
        with_positives += 1;
        ndcg_sum += ndcg;
        let hits = ranked
            .ranking
            .iter()
            .filter(|(doc_id, _)| relevant.contains(doc_id.as_str()))
            .count();
        recall_sum += hits as f64 / relevant.len() as f64;
        if let Some(rank) = ranked
            .ranking
            .iter()
            .position(|(doc_id, _)| relevant.contains(doc_id.as_str()))
        {
            mrr_sum += 1.0 / (rank as f64 + 1.0);
        }
    }

    let denom = with_positives.max(1) as f64;
    Ok(EvalReport {
        k,
        num_queries: queryset.len(),
        queries_with_positives: with_positives,
        skipped_qrels_entries: skipped,
        aggregate_ndcg: if with_positives > 0 { ndcg_sum / denom } else { 0.0 },
        recall_at_k: if with_positives > 0 { recall_sum / denom } else { 0.0 },
        mrr_at_k: if with_positives > 0 { mrr_sum / denom } else { 0.0 },
        per_query,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Query};

    fn ranking(query_id: &str, docs: &[&str]) -> RankedList {
        RankedList {
            query_id: query_id.to_string(),
            ranking: docs.iter().enumerate().map(|(i, d)| (d.to_string(), 10.0 - i as f64)).collect(),
        }
    }

    #[test]
    fn ndcg_perfect_ranking_is_one() {
        let mut qrels = Qrels::new();
        qrels.insert("q", "d1", 1).unwrap();
        assert_eq!(ndcg_at_k(&ranking("q", &["d1", "d2", "d3"]), &qrels, 10), 1.0);
    }

    #[test]
    fn ndcg_relevant_at_rank_two() {
        let mut qrels = Qrels::new();
        qrels.insert("q", "d1", 1).unwrap();
        let got = ndcg_at_k(&ranking("q", &["d2", "d1"]), &qrels, 10);
        assert!((got - 0.6309297535714575).abs() < 1e-12);
    }

    #[test]
    fn ndcg_graded_example() {
        let mut qrels = Qrels::new();
        qrels.insert("q", "d1", 2).unwrap();
        qrels.insert("q", "d2", 1).unwrap();
        let got = ndcg_at_k(&ranking("q", &["d2", "d1"]), &qrels, 10);
        assert!((got - 0.7967075809905066).abs() < 1e-12);
    }

    #[test]
    fn ndcg_no_positives_is_zero() {
        let qrels = Qrels::new();
        assert_eq!(ndcg_at_k(&ranking("q", &["d1"]), &qrels, 10), 0.0);
        let mut zero_only = Qrels::new();
        zero_only.insert("q", "d1", 0).unwrap();
        assert_eq!(ndcg_at_k(&ranking("q", &["d1"]), &zero_only, 10), 0.0);
    }

    #[test]
    fn ndcg_in_unit_interval_and_truncates() {
        let mut qrels = Qrels::new();
        qrels.insert("q", "d9", 3).unwrap();
        // relevant doc below rank k contributes nothing
        let list = ranking("q", &["d1", "d2", "d9"]);
        let at_two = ndcg_at_k(&list, &qrels, 2);
        assert_eq!(at_two, 0.0);
        let at_three = ndcg_at_k(&list, &qrels, 3);
        assert!(at_three > 0.0 && at_three <= 1.0);
    }

    #[test]
    fn ranked_list_sorts_and_breaks_ties_by_doc_id() {
        let list = RankedList::from_scores(
            "q",
            vec![
                ("b".to_string(), 1.0),
                ("a".to_string(), 1.0),
                ("c".to_string(), 2.0),
            ],
        )
        .unwrap();
        let ids: Vec<&str> = list.ranking.iter().map(|(d, _)| d.as_str()).collect();
        assert_eq!(ids, vec!["c", "a", "b"]);
    }

    #[test]
    fn ranked_list_rejects_duplicates() {
        assert!(RankedList::from_scores("q", vec![("a".to_string(), 1.0), ("a".to_string(), 0.5)]).is_err());
    }

    fn tiny_task() -> (Corpus, QuerySet, Qrels) {
        let corpus = Corpus {
            docs: vec![
                Document::new("d1", "", "apple banana cherry"),
                Document::new("d2", "", "xylophone trumpet violin"),
                Document::new("d3", "", "quark lepton boson"),
            ],
            source_path: String::new(),
        };
        let queries = QuerySet {
            queries: vec![
                Query {
                    query_id: "q1".to_string(),
                    text: "apple banana cherry".to_string(),
                },
                Query {
                    query_id: "q2".to_string(),
                    text: "xylophone trumpet violin".to_string(),
                },
            ],
        };
        let mut qrels = Qrels::new();
        qrels.insert("q1", "d1", 1).unwrap();
        qrels.insert("q2", "d2", 1).unwrap();
        (corpus, queries, qrels)
    }

    #[test]
    fn self_retrieval_scores_one() {
        let (corpus, queries, qrels) = tiny_task();
        let embedder = EmbedBackend::hash(64);
        let encoder = EncoderParams::identity(64);
        let report = evaluate_run(&queries, &qrels, &corpus, &encoder, &embedder, 10).unwrap();
        assert_eq!(report.aggregate_ndcg, 1.0);
        assert_eq!(report.recall_at_k, 1.0);
        assert_eq!(report.mrr_at_k, 1.0);
        assert_eq!(report.num_queries, 2);
        assert_eq!(report.queries_with_positives, 2);
    }

    #[test]
    fn aggregate_matches_hand_average() {
        let (corpus, queries, qrels) = tiny_task();
        let embedder = EmbedBackend::hash(64);
        let encoder = EncoderParams::identity(64);
        let report = evaluate_run(&queries, &qrels, &corpus, &encoder, &embedder, 10).unwrap();
        let mean = report.per_query.values().sum::<f64>() / report.per_query.len() as f64;
        assert!((report.aggregate_ndcg - mean).abs() < 1e-12);
    }

    #[test]
    fn empty_queryset_is_an_error() {
        let (corpus, _, qrels) = tiny_task();
        let empty = QuerySet::default();
        assert!(evaluate_run(&empty, &qrels, &corpus, &EncoderParams::identity(8), &EmbedBackend::hash(8), 10).is_err());
    }

    #[test]
    fn qrels_for_unknown_query_is_an_error() {
        let (corpus, queries, mut qrels) = tiny_task();
        qrels.insert("ghost", "d1", 1).unwrap();
        let err = evaluate_run(&queries, &qrels, &corpus, &EncoderParams::identity(8), &EmbedBackend::hash(8), 10)
            .unwrap_err();
        assert!(err.to_string().contains("ghost"), "{err}");
    }

    #[test]
    fn unknown_doc_qrels_are_skipped_and_counted() {
        let (corpus, queries, mut qrels) = tiny_task();
        qrels.insert("q1", "missing-doc", 3).unwrap();
        let embedder = EmbedBackend::hash(64);
        let encoder = EncoderParams::identity(64);
        let report = evaluate_run(&queries, &qrels, &corpus, &encoder, &embedder, 10).unwrap();
        assert_eq!(report.skipped_qrels_entries, 1);
        // the skipped judgment must not depress q1's ideal ranking
        assert_eq!(report.per_query["q1"], 1.0);
    }

    #[test]
    fn retrieve_topk_saturates_at_corpus_size() {
        let (corpus, _, _) = tiny_task();
        let embedder = EmbedBackend::hash(64);
        let encoder = EncoderParams::identity(64);
        let index = encode_corpus(&corpus, &encoder, &embedder).unwrap();
        let ranked = retrieve_topk("q", "apple", &index, &encoder, &embedder, 50).unwrap();
        assert_eq!(ranked.ranking.len(), 3);
    }

    #[test]
    fn retrieve_topk_matches_naive_sort_on_ten_thousand_docs() {
        use crate::rng::DetRng;
        let dims = 8;
        let mut rng = DetRng::new(0x709);
        let mut index = EmbeddingMatrix::new(dims);
        for i in 0..10_000 {
            let row: Vec<f64> = (0..dims).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
            index.push_row(format!("d{i:05}"), row).unwrap();
        }
        let embedder = EmbedBackend::hash(dims);
        let encoder = EncoderParams::identity(dims);
        let query_text = "some query words";
        let got = retrieve_topk("q", query_text, &index, &encoder, &embedder, 25).unwrap();

        // independent oracle: score all rows, full sort, take k
        let query_vec = embedder.embed(query_text).unwrap();
        let mut scored: Vec<(String, f64)> = (0..index.len())
            .map(|i| (index.doc_id(i).to_string(), dot_score(&query_vec, index.row(i)).unwrap()))
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        scored.truncate(25);
        assert_eq!(got.ranking, scored);
    }

    #[test]
    fn retrieve_topk_empty_index_is_an_error() {
        let embedder = EmbedBackend::hash(8);
        let encoder = EncoderParams::identity(8);
        let index = EmbeddingMatrix::new(8);
        assert!(retrieve_topk("q", "text", &index, &encoder, &embedder, 1).is_err());
    }

    #[test]
    fn encode_corpus_identity_matches_base() {
        let (corpus, _, _) = tiny_task();
        let embedder = EmbedBackend::hash(32);
        let encoder = EncoderParams::identity(32);
        let base = embed_corpus(&embedder, &corpus).unwrap();
        let encoded = encode_corpus(&corpus, &encoder, &embedder).unwrap();
        assert_eq!(encoded.len(), corpus.len());
        for i in 0..base.len() {
            assert_eq!(base.row(i), encoded.row(i));
        }
    }

    #[test]
    fn encode_corpus_empty_is_empty() {
        let corpus = Corpus::default();
        let encoded = encode_corpus(&corpus, &EncoderParams::identity(8), &EmbedBackend::hash(8)).unwrap();
        assert!(encoded.is_empty());
    }

    #[test]
    fn report_serializes_deterministically() {
        let (corpus, queries, qrels) = tiny_task();
        let embedder = EmbedBackend::hash(64);
        let encoder = EncoderParams::identity(64);
        let a = evaluate_run(&queries, &qrels, &corpus, &encoder, &embedder, 10).unwrap();
        let b = evaluate_run(&queries, &qrels, &corpus, &encoder, &embedder, 10).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert!(a.render_table().contains("nDCG@10"));
        assert!(a.per_query_tsv().starts_with("query-id\tndcg\n"));
    }
}
