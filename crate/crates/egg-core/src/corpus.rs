//! BeIR-format corpora, query sets, and relevance judgments.
//!
//! File formats, byte-exact:
//! - `corpus.jsonl`: one JSON object per line, `{"_id": str, "title": str, "text": str}`
//! - `queries.jsonl`: one JSON object per line, `{"_id": str, "text": str}`
//! - qrels: TSV with header row `query-id\tcorpus-id\tscore`

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::DetRng;

/// One passage of the target corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "_id")]
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            title: title.into(),
            text: text.into(),
        }
    }

    /// Text as presented to prompts and embedders: `title. text` when the
    /// title is non-empty, otherwise the text alone.
    pub fn presented_text(&self) -> String {
        if self.title.is_empty() {
            self.text.clone()
        } else {
            format!("{}. {}", self.title, self.text)
        }
    }
}

/// Ordered document collection; order is the file order of ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub docs: Vec<Document>,
    pub source_path: String,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.docs.iter().find(|d| d.doc_id == doc_id)
    }
}

/// One test query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    #[serde(rename = "_id")]
    pub query_id: String,
    pub text: String,
}

/// Ordered list of test queries with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QuerySet {
    pub queries: Vec<Query>,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Graded relevance judgments keyed by `(query_id, doc_id)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Qrels {
    entries: BTreeMap<(String, String), u32>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a judgment; duplicate keys are rejected.
    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, relevance: u32) -> Result<()> {
        let key = (query_id.into(), doc_id.into());
        if self.entries.contains_key(&key) {
            return Err(Error::invalid(format!(
                "duplicate qrels entry for query `{}` and document `{}`",
                key.0, key.1
            )));
        }
        self.entries.insert(key, relevance);
        Ok(())
    }

    pub fn relevance(&self, query_id: &str, doc_id: &str) -> u32 {
        self.entries
            .get(&(query_id.to_string(), doc_id.to_string()))
            .copied()
            .unwrap_or(0)
    }

    /// All judgments for one query, in ascending doc_id order.
    pub fn for_query<'a>(&'a self, query_id: &'a str) -> impl Iterator<Item = (&'a str, u32)> + 'a {
        self.entries
            .range((query_id.to_string(), String::new())..)
            .take_while(move |((q, _), _)| q == query_id)
            .map(|((_, d), &rel)| (d.as_str(), rel))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.entries.iter().map(|((q, d), &rel)| (q.as_str(), d.as_str(), rel))
    }

    pub fn query_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.entries.keys().map(|(q, _)| q.as_str()).collect();
        ids.dedup();
        ids
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = std::io::Result<String>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file).lines())
}

/// Load a JSON-lines corpus. One [`Document`] per line, in file order.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in open_lines(path)?.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, idx + 1, format!("malformed corpus line: {e}")))?;
        if !seen.insert(doc.doc_id.clone()) {
            return Err(Error::parse(
                path,
                idx + 1,
                format!("duplicate document id `{}`", doc.doc_id),
            ));
        }
        docs.push(doc);
    }
    Ok(Corpus {
        docs,
        source_path: path.display().to_string(),
    })
}

/// Load a JSON-lines query file.
pub fn load_queries(path: impl AsRef<Path>) -> Result<QuerySet> {
    let path = path.as_ref();
    let mut queries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in open_lines(path)?.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let query: Query = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, idx + 1, format!("malformed query line: {e}")))?;
        if !seen.insert(query.query_id.clone()) {
            return Err(Error::parse(
                path,
                idx + 1,
                format!("duplicate query id `{}`", query.query_id),
            ));
        }
        queries.push(query);
    }
    Ok(QuerySet { queries })
}

pub const QRELS_HEADER: &str = "query-id\tcorpus-id\tscore";

/// Load a TSV qrels file. The header row is skipped.
pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let mut qrels = Qrels::new();
    for (idx, line) in open_lines(path)?.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                path,
                idx + 1,
                format!("expected 3 tab-separated fields, got {}", fields.len()),
            ));
        }
        let score: u32 = fields[2].trim().parse().map_err(|_| {
            Error::parse(
                path,
                idx + 1,
                format!("invalid relevance score `{}` (non-negative integer required)", fields[2]),
            )
        })?;
        qrels
            .insert(fields[0], fields[1], score)
            .map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
    }
    Ok(qrels)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Write a corpus back to JSON-lines; `load_corpus` reads it bit-exactly.
pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    for doc in &corpus.docs {
        serde_json::to_writer(&mut out, doc).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_queries(queries: &QuerySet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    for query in &queries.queries {
        serde_json::to_writer(&mut out, query).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_qrels(qrels: &Qrels, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    writeln!(out, "{QRELS_HEADER}").map_err(|e| Error::io(path, e))?;
    for (query_id, doc_id, rel) in qrels.iter() {
        writeln!(out, "{query_id}\t{doc_id}\t{rel}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Cap a text at `max_tokens` whitespace tokens.
///
/// Under the cap the input is returned byte-identical; over it, the first
/// `max_tokens` tokens are rejoined with single spaces.
pub fn truncate_text(text: &str, max_tokens: usize) -> String {
    assert!(max_tokens >= 1, "max_tokens must be at least 1");
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() <= max_tokens {
        text.to_string()
    } else {
        tokens[..max_tokens].join(" ")
    }
}

/// Uniform without-replacement sample of at most `cap` documents.
///
/// Corpora at or under the cap pass through unchanged. Selection is a partial
/// Fisher-Yates over indices seeded by `seed`; the chosen indices are sorted
/// so the sample preserves the original relative order.
pub fn sample_corpus(corpus: &Corpus, cap: usize, seed: u64) -> Corpus {
    assert!(cap >= 1, "cap must be at least 1");
    let n = corpus.docs.len();
    if n <= cap {
        return corpus.clone();
    }
    let mut rng = DetRng::new(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..cap {
        let j = i + rng.next_below((n - i) as u64) as usize;
        indices.swap(i, j);
    }
    let mut chosen = indices[..cap].to_vec();
    chosen.sort_unstable();
    Corpus {
        docs: chosen.iter().map(|&i| corpus.docs[i].clone()).collect(),
        source_path: corpus.source_path.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_corpus_parses_lines_in_order() {
        let f = tmp_file(
            "{\"_id\":\"d1\",\"title\":\"T\",\"text\":\"alpha beta\"}\n{\"_id\":\"d2\",\"title\":\"\",\"text\":\"gamma\"}\n",
        );
        let corpus = load_corpus(f.path()).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.docs[0], Document::new("d1", "T", "alpha beta"));
        assert_eq!(corpus.docs[1].doc_id, "d2");
    }

    #[test]
    fn load_corpus_empty_file() {
        let f = tmp_file("");
        let corpus = load_corpus(f.path()).unwrap();
        assert!(corpus.is_empty());
    }

    #[test]
    fn load_corpus_rejects_duplicate_ids() {
        let f = tmp_file(
            "{\"_id\":\"d1\",\"title\":\"\",\"text\":\"a\"}\n{\"_id\":\"d1\",\"title\":\"\",\"text\":\"b\"}\n",
        );
        let err = load_corpus(f.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("duplicate document id `d1`"), "{msg}");
        assert!(msg.contains(":2:"), "error should name line 2: {msg}");
    }

    #[test]
    fn load_corpus_malformed_line_names_line_number() {
        let f = tmp_file("{\"_id\":\"d1\",\"title\":\"\",\"text\":\"a\"}\nnot json\n");
        let err = load_corpus(f.path()).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn load_corpus_missing_file() {
        let err = load_corpus("/nonexistent/corpus.jsonl").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn load_qrels_parses_entries() {
        let f = tmp_file("query-id\tcorpus-id\tscore\nq1\td5\t1\n");
        let qrels = load_qrels(f.path()).unwrap();
        assert_eq!(qrels.relevance("q1", "d5"), 1);
        assert_eq!(qrels.len(), 1);
    }

    #[test]
    fn load_qrels_header_only_is_empty() {
        let f = tmp_file("query-id\tcorpus-id\tscore\n");
        let qrels = load_qrels(f.path()).unwrap();
        assert!(qrels.is_empty());
    }

    #[test]
    fn load_qrels_rejects_negative_score() {
        let f = tmp_file("query-id\tcorpus-id\tscore\nq1\td5\t-1\n");
        let err = load_qrels(f.path()).unwrap_err();
        assert!(err.to_string().contains("invalid relevance score"), "{err}");
    }

    #[test]
    fn load_qrels_rejects_duplicate_key() {
        let f = tmp_file("query-id\tcorpus-id\tscore\nq1\td5\t1\nq1\td5\t2\n");
        let err = load_qrels(f.path()).unwrap_err();
        assert!(err.to_string().contains("duplicate qrels entry"), "{err}");
    }

    #[test]
    fn load_queries_rejects_duplicate_id() {
        let f = tmp_file("{\"_id\":\"q1\",\"text\":\"a\"}\n{\"_id\":\"q1\",\"text\":\"b\"}\n");
        assert!(load_queries(f.path()).is_err());
    }

    #[test]
    fn truncate_under_limit_is_byte_identical() {
        let text = "one  two\tthree"; // odd whitespace must survive untouched
        assert_eq!(truncate_text(text, 350), text);
    }

    #[test]
    fn truncate_at_boundary_is_unchanged() {
        let text = (0..350).map(|i| format!("t{i}")).collect::<Vec<_>>().join(" ");
        assert_eq!(truncate_text(&text, 350), text);
    }

    #[test]
    fn truncate_over_limit_keeps_first_tokens() {
        let text = (0..400).map(|i| format!("t{i}")).collect::<Vec<_>>().join(" ");
        let out = truncate_text(&text, 350);
        let tokens: Vec<&str> = out.split(' ').collect();
        assert_eq!(tokens.len(), 350);
        assert_eq!(tokens[0], "t0");
        assert_eq!(tokens[349], "t349");
    }

    #[test]
    fn truncate_is_idempotent() {
        let text = (0..40).map(|i| format!("t{i}")).collect::<Vec<_>>().join("  ");
        let once = truncate_text(&text, 10);
        assert_eq!(truncate_text(&once, 10), once);
    }

    fn numbered_corpus(n: usize) -> Corpus {
        Corpus {
            docs: (0..n).map(|i| Document::new(format!("d{i:05}"), "", format!("text {i}"))).collect(),
            source_path: String::new(),
        }
    }

    #[test]
    fn sample_under_cap_is_identity() {
        let corpus = numbered_corpus(99);
        assert_eq!(sample_corpus(&corpus, 100, 42), corpus);
    }

    #[test]
    fn sample_is_deterministic_and_order_preserving() {
        let corpus = numbered_corpus(1500);
        let a = sample_corpus(&corpus, 1000, 42);
        let b = sample_corpus(&corpus, 1000, 42);
        assert_eq!(a, b);
        assert_eq!(a.len(), 1000);
        // order preserved: ids ascend because input ids ascend
        let ids: Vec<&String> = a.docs.iter().map(|d| &d.doc_id).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn sample_cap_one() {
        let corpus = numbered_corpus(10);
        assert_eq!(sample_corpus(&corpus, 1, 7).len(), 1);
    }

    #[test]
    fn sample_different_seeds_differ() {
        let corpus = numbered_corpus(200);
        let a = sample_corpus(&corpus, 50, 1);
        let b = sample_corpus(&corpus, 50, 2);
        assert_ne!(a, b);
    }

    #[test]
    fn corpus_roundtrip_is_bit_exact() {
        let corpus = Corpus {
            docs: vec![
                Document::new("d1", "Title", "alpha beta"),
                Document::new("d2", "", "unicode ∂ text"),
            ],
            source_path: String::new(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_corpus(&corpus, &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let loaded = load_corpus(&path).unwrap();
        assert_eq!(loaded.docs, corpus.docs);
        write_corpus(&loaded, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn qrels_roundtrip() {
        let mut qrels = Qrels::new();
        qrels.insert("q1", "d1", 2).unwrap();
        qrels.insert("q1", "d2", 0).unwrap();
        qrels.insert("q2", "d9", 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qrels.tsv");
        write_qrels(&qrels, &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let loaded = load_qrels(&path).unwrap();
        assert_eq!(loaded, qrels);
        write_qrels(&loaded, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn queries_roundtrip_is_bit_exact() {
        let queries = QuerySet {
            queries: vec![
                Query {
                    query_id: "q1".to_string(),
                    text: "first query".to_string(),
                },
                Query {
                    query_id: "q2".to_string(),
                    text: "unicode ∂ query".to_string(),
                },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("queries.jsonl");
        write_queries(&queries, &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let loaded = load_queries(&path).unwrap();
        assert_eq!(loaded, queries);
        write_queries(&loaded, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn presented_text_joins_title() {
        assert_eq!(Document::new("d", "T", "x").presented_text(), "T. x");
        assert_eq!(Document::new("d", "", "x").presented_text(), "x");
    }

    #[test]
    fn qrels_for_query_is_scoped_and_sorted() {
        let mut qrels = Qrels::new();
        qrels.insert("q1", "d2", 1).unwrap();
        qrels.insert("q1", "d1", 2).unwrap();
        qrels.insert("q10", "d3", 1).unwrap();
        let entries: Vec<(&str, u32)> = qrels.for_query("q1").collect();
        assert_eq!(entries, vec![("d1", 2), ("d2", 1)]);
    }
}
