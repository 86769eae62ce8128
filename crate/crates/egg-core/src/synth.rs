//! Synthetic query generation over a corpus.
//!
//! Five modes produce `(document, query)` training pairs:
//! - flan: one instruction meta-prompt per document
//! - llama-icl: prototype queries first, then in-context prompts whose
//!   examples are the target's nearest neighbors by embedding similarity
//! - zero-shot: the flan template with `e_q` fixed to "query"
//! - few-shot: the in-context template with one fixed, user-supplied
//!   example set for every document
//! - prototype-only: prototype completions exported directly as pairs
//!
//! Long runs checkpoint finished documents every [`CHECKPOINT_INTERVAL`]
//! docs; a rerun with the same checkpoint path skips them.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Qrels, Query, QuerySet};
use crate::embed::{fnv1a64, top_m_neighbors, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::genclient::{generate, GenerationBackend, SamplingParams};
use crate::intent::{render_flan_prompt, render_icl_prompt_with, render_prototype_prompt, IclSeparator, IntentSpec};

/// Which pipeline mode produced a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    FlanMeta,
    LlamaIcl,
    ZeroShot,
    FewShotBaseline,
    PrototypeOnly,
}

/// One synthetic training example with provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticPair {
    pub doc_id: String,
    pub query: String,
    pub source: PairSource,
    #[serde(rename = "intent")]
    pub intent_name: String,
}

/// One in-context example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IclExample {
    pub document: Document,
    pub query: String,
}

/// One prototype query per covered document.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PrototypeSet {
    entries: BTreeMap<String, String>,
}

impl PrototypeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, doc_id: impl Into<String>, query: impl Into<String>) -> Result<()> {
        let doc_id = doc_id.into();
        if self.entries.contains_key(&doc_id) {
            return Err(Error::invalid(format!("duplicate prototype for document `{doc_id}`")));
        }
        self.entries.insert(doc_id, query.into());
        Ok(())
    }

    pub fn get(&self, doc_id: &str) -> Option<&str> {
        self.entries.get(doc_id).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    /// Error listing every corpus document without a prototype.
    pub fn require_coverage(&self, corpus: &Corpus) -> Result<()> {
        let missing: Vec<&str> = corpus
            .docs
            .iter()
            .filter(|d| !self.entries.contains_key(&d.doc_id))
            .map(|d| d.doc_id.as_str())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "prototypes missing for {} document(s): {}",
                missing.len(),
                missing.join(", ")
            )))
        }
    }
}

/// Knobs shared by all generation modes.
#[derive(Debug, Clone)]
pub struct SynthOptions {
    /// Progress file for resumable runs; finished docs are skipped on rerun.
    pub checkpoint: Option<PathBuf>,
    /// Concurrent per-document generation tasks.
    pub concurrency: usize,
    pub icl_separator: IclSeparator,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            checkpoint: None,
            concurrency: 8,
            icl_separator: IclSeparator::Space,
        }
    }
}

/// Documents finished between checkpoint writes.
pub const CHECKPOINT_INTERVAL: usize = 1000;

// Per-operation seed tags keep the mock's token draws distinct across modes
// that visit the same document.
const TAG_PROTOTYPE: u64 = 0x50;
const TAG_FLAN: u64 = 0x46;
const TAG_ICL: u64 = 0x49;
const TAG_FEWSHOT: u64 = 0x58;

/// Per-document sampling seed: stable under resume and corpus re-ordering.
fn doc_seed(base: u64, doc_id: &str, tag: u64) -> u64 {
    base ^ fnv1a64(doc_id.as_bytes()) ^ tag
}

/// Run `make_pairs` over every document, in corpus order, with bounded
/// concurrency and optional checkpointing.
fn run_per_doc<F>(corpus: &Corpus, opts: &SynthOptions, make_pairs: F) -> Result<Vec<SyntheticPair>>
where
    F: Fn(usize, &Document) -> Result<Vec<SyntheticPair>> + Sync,
{
    if corpus.is_empty() {
        return Err(Error::invalid("corpus must be non-empty"));
    }
    let mut done: HashMap<String, Vec<SyntheticPair>> = HashMap::new();
    if let Some(path) = &opts.checkpoint {
        if path.exists() {
            for pair in read_dataset(path)? {
                done.entry(pair.doc_id.clone()).or_default().push(pair);
            }
            log::info!("resuming: {} documents already generated", done.len());
        }
    }

    let concurrency = opts.concurrency.max(1);
    let mut results: Vec<Option<Vec<SyntheticPair>>> = vec![None; corpus.len()];
    let pending: Vec<usize> = (0..corpus.len())
        .filter(|&i| !done.contains_key(&corpus.docs[i].doc_id))
        .collect();

    for (i, doc) in corpus.docs.iter().enumerate() {
        if let Some(pairs) = done.remove(&doc.doc_id) {
            results[i] = Some(pairs);
        }
    }

    let mut completed_since_checkpoint = 0usize;
    for batch in pending.chunks(CHECKPOINT_INTERVAL) {
        let failure: Mutex<Option<Error>> = Mutex::new(None);
        let batch_results: Mutex<Vec<(usize, Vec<SyntheticPair>)>> = Mutex::new(Vec::with_capacity(batch.len()));
        let stripe = batch.len().div_ceil(concurrency);
        std::thread::scope(|scope| {
            for stripe_indices in batch.chunks(stripe.max(1)) {
                let failure = &failure;
                let batch_results = &batch_results;
                let make_pairs = &make_pairs;
                scope.spawn(move || {
                    for &i in stripe_indices {
                        if failure.lock().unwrap().is_some() {
                            return;
                        }
                        match make_pairs(i, &corpus.docs[i]) {
                            Ok(pairs) => batch_results.lock().unwrap().push((i, pairs)),
                            Err(e) => {
                                *failure.lock().unwrap() = Some(e);
                                return;
                            }
                        }
                    }
                });
            }
        });
        for (i, pairs) in batch_results.into_inner().unwrap() {
            results[i] = Some(pairs);
            completed_since_checkpoint += 1;
        }
        let failed = failure.into_inner().unwrap();
        if let Some(path) = &opts.checkpoint {
            if failed.is_some() || completed_since_checkpoint >= CHECKPOINT_INTERVAL {
                let snapshot: Vec<SyntheticPair> =
                    results.iter().flatten().flat_map(|p| p.iter().cloned()).collect();
                write_dataset(&snapshot, path)?;
                completed_since_checkpoint = 0;
            }
        }
        if let Some(e) = failed {
            return Err(e);
        }
    }

    Ok(results.into_iter().flat_map(|r| r.expect("every document processed")).collect())
}

/// Generate one prototype query per document.
pub fn generate_prototypes(
    corpus: &Corpus,
    intent: &IntentSpec,
    backend: &GenerationBackend,
    params: &SamplingParams,
    opts: &SynthOptions,
) -> Result<PrototypeSet> {
    let pairs = run_per_doc(corpus, opts, |_, doc| {
        let prompt = render_prototype_prompt(intent, doc)?;
        let params = SamplingParams {
            n: 1,
            seed: doc_seed(params.seed, &doc.doc_id, TAG_PROTOTYPE),
            ..params.clone()
        };
        let queries = generate(backend, &prompt, &params)?;
        Ok(vec![SyntheticPair {
            doc_id: doc.doc_id.clone(),
            query: queries.into_iter().next().unwrap(),
            source: PairSource::PrototypeOnly,
            intent_name: intent.task_name.clone(),
        }])
    })?;
    let mut prototypes = PrototypeSet::new();
    for pair in pairs {
        prototypes.insert(pair.doc_id, pair.query)?;
    }
    Ok(prototypes)
}

/// Generate `n` queries per document from the instruction meta-prompt.
pub fn generate_queries_flan(
    corpus: &Corpus,
    intent: &IntentSpec,
    backend: &GenerationBackend,
    params: &SamplingParams,
    n: u32,
    opts: &SynthOptions,
) -> Result<Vec<SyntheticPair>> {
    generate_with_meta_prompt(corpus, intent, backend, params, n, PairSource::FlanMeta, opts)
}

/// The conventional zero-shot baseline: the instruction template with the
/// intent fixed to the word "query".
pub fn generate_queries_zero_shot(
    corpus: &Corpus,
    backend: &GenerationBackend,
    params: &SamplingParams,
    n: u32,
    opts: &SynthOptions,
) -> Result<Vec<SyntheticPair>> {
    let zero_shot = crate::intent::builtin_intents().pop().expect("zero-shot builtin");
    generate_with_meta_prompt(corpus, &zero_shot, backend, params, n, PairSource::ZeroShot, opts)
}

fn generate_with_meta_prompt(
    corpus: &Corpus,
    intent: &IntentSpec,
    backend: &GenerationBackend,
    params: &SamplingParams,
    n: u32,
    source: PairSource,
    opts: &SynthOptions,
) -> Result<Vec<SyntheticPair>> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    run_per_doc(corpus, opts, |_, doc| {
        let prompt = render_flan_prompt(intent, doc)?;
        let params = SamplingParams {
            n,
            seed: doc_seed(params.seed, &doc.doc_id, TAG_FLAN),
            ..params.clone()
        };
        Ok(generate(backend, &prompt, &params)?
            .into_iter()
            .map(|query| SyntheticPair {
                doc_id: doc.doc_id.clone(),
                query,
                source,
                intent_name: intent.task_name.clone(),
            })
            .collect())
    })
}

/// Generate `n` queries per document with in-context prompts. Each target's
/// examples are its `m` nearest corpus neighbors paired with their prototype
/// queries.
#[allow(clippy::too_many_arguments)]
pub fn generate_queries_llama(
    corpus: &Corpus,
    intent: &IntentSpec,
    backend: &GenerationBackend,
    prototypes: &PrototypeSet,
    embeddings: &EmbeddingMatrix,
    m: usize,
    n: u32,
    params: &SamplingParams,
    opts: &SynthOptions,
) -> Result<Vec<SyntheticPair>> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    if m >= corpus.len() {
        return Err(Error::invalid(format!(
            "cannot select {m} in-context examples from a corpus of {} documents",
            corpus.len()
        )));
    }
    prototypes.require_coverage(corpus)?;
    let aligned = embeddings.len() == corpus.len()
        && corpus.docs.iter().enumerate().all(|(i, d)| embeddings.doc_id(i) == d.doc_id);
    if !aligned {
        return Err(Error::invalid("embedding matrix rows are not aligned with the corpus"));
    }

    run_per_doc(corpus, opts, |i, doc| {
        let neighbor_indices = top_m_neighbors(i, embeddings, m)?;
        let examples: Vec<(&Document, &str)> = neighbor_indices
            .iter()
            .map(|&idx| {
                let neighbor = &corpus.docs[idx];
                let prototype = prototypes.get(&neighbor.doc_id).expect("coverage checked");
                (neighbor, prototype)
            })
            .collect();
        let prompt = render_icl_prompt_with(intent, &examples, doc, opts.icl_separator)?;
        let params = SamplingParams {
            n,
            seed: doc_seed(params.seed, &doc.doc_id, TAG_ICL),
            ..params.clone()
        };
        Ok(generate(backend, &prompt, &params)?
            .into_iter()
            .map(|query| SyntheticPair {
                doc_id: doc.doc_id.clone(),
                query,
                source: PairSource::LlamaIcl,
                intent_name: intent.task_name.clone(),
            })
            .collect())
    })
}

/// Few-shot baseline: the in-context template with one fixed example set for
/// every document.
pub fn generate_queries_fewshot(
    corpus: &Corpus,
    intent: &IntentSpec,
    backend: &GenerationBackend,
    examples: &[IclExample],
    params: &SamplingParams,
    n: u32,
    opts: &SynthOptions,
) -> Result<Vec<SyntheticPair>> {
    if examples.is_empty() {
        return Err(Error::invalid("few-shot baseline requires a fixed example set"));
    }
    run_per_doc(corpus, opts, |_, doc| {
        let example_refs: Vec<(&Document, &str)> =
            examples.iter().map(|e| (&e.document, e.query.as_str())).collect();
        let prompt = render_icl_prompt_with(intent, &example_refs, doc, opts.icl_separator)?;
        let params = SamplingParams {
            n,
            seed: doc_seed(params.seed, &doc.doc_id, TAG_FEWSHOT),
            ..params.clone()
        };
        Ok(generate(backend, &prompt, &params)?
            .into_iter()
            .map(|query| SyntheticPair {
                doc_id: doc.doc_id.clone(),
                query,
                source: PairSource::FewShotBaseline,
                intent_name: intent.task_name.clone(),
            })
            .collect())
    })
}

/// Ablation mode: `n` prototype completions per document exported directly
/// as training pairs, no in-context stage.
pub fn generate_prototype_only(
    corpus: &Corpus,
    intent: &IntentSpec,
    backend: &GenerationBackend,
    params: &SamplingParams,
    n: u32,
    opts: &SynthOptions,
) -> Result<Vec<SyntheticPair>> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    run_per_doc(corpus, opts, |_, doc| {
        let prompt = render_prototype_prompt(intent, doc)?;
        let params = SamplingParams {
            n,
            seed: doc_seed(params.seed, &doc.doc_id, TAG_PROTOTYPE),
            ..params.clone()
        };
        Ok(generate(backend, &prompt, &params)?
            .into_iter()
            .map(|query| SyntheticPair {
                doc_id: doc.doc_id.clone(),
                query,
                source: PairSource::PrototypeOnly,
                intent_name: intent.task_name.clone(),
            })
            .collect())
    })
}

fn normalize(text: &str) -> String {
    text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Shortest normalized copied span that gets a pair dropped.
pub const COPY_FILTER_MIN_CHARS: usize = 40;

/// Drop duplicates, blank queries, and long verbatim copies.
///
/// A pair is removed when (a) an earlier pair had the same
/// `(doc_id, normalized query)`, (b) its query is empty or whitespace, or
/// (c) its normalized query is at least [`COPY_FILTER_MIN_CHARS`] characters
/// and appears verbatim inside the normalized source document. Order is
/// otherwise preserved.
pub fn filter_pairs(pairs: &[SyntheticPair], corpus: &Corpus) -> Vec<SyntheticPair> {
    let doc_norms: HashMap<&str, String> = corpus
        .docs
        .iter()
        .map(|d| (d.doc_id.as_str(), normalize(&d.presented_text())))
        .collect();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut kept = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let q_norm = normalize(&pair.query);
        if q_norm.is_empty() {
            continue;
        }
        if !seen.insert((pair.doc_id.clone(), q_norm.clone())) {
            continue;
        }
        if q_norm.chars().count() >= COPY_FILTER_MIN_CHARS {
            if let Some(doc_norm) = doc_norms.get(pair.doc_id.as_str()) {
                if doc_norm.contains(&q_norm) {
                    continue;
                }
            }
        }
        kept.push(pair.clone());
    }
    kept
}

/// Write pairs as JSON-lines `{"doc_id","query","source","intent"}`.
pub fn write_dataset(pairs: &[SyntheticPair], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for pair in pairs {
        serde_json::to_writer(&mut out, pair).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Read a pairs dataset; inverse of [`write_dataset`].
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<SyntheticPair>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: SyntheticPair = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, idx + 1, format!("malformed pair: {e}")))?;
        if pair.query.trim().is_empty() || pair.query.contains('\n') {
            return Err(Error::parse(path, idx + 1, "query must be non-empty and newline-free"));
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Write prototypes as JSON-lines `{"doc_id","query"}`, sorted by doc_id.
pub fn write_prototypes(prototypes: &PrototypeSet, path: impl AsRef<Path>) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        doc_id: &'a str,
        query: &'a str,
    }
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for (doc_id, query) in &prototypes.entries {
        serde_json::to_writer(&mut out, &Row { doc_id, query })
            .map_err(|e| Error::parse(path, 0, e.to_string()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_prototypes(path: impl AsRef<Path>) -> Result<PrototypeSet> {
    #[derive(Deserialize)]
    struct Row {
        doc_id: String,
        query: String,
    }
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut prototypes = PrototypeSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, idx + 1, format!("malformed prototype: {e}")))?;
        prototypes
            .insert(row.doc_id, row.query)
            .map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
    }
    Ok(prototypes)
}

/// Read a fixed example file for the few-shot baseline: JSON-lines with
/// `text` and `query` fields plus optional `_id` and `title`.
pub fn read_examples(path: impl AsRef<Path>) -> Result<Vec<IclExample>> {
    #[derive(Deserialize)]
    struct Row {
        #[serde(rename = "_id", default)]
        id: Option<String>,
        #[serde(default)]
        title: String,
        text: String,
        query: String,
    }
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut examples = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, idx + 1, format!("malformed example: {e}")))?;
        if row.text.is_empty() || row.query.is_empty() {
            return Err(Error::parse(path, idx + 1, "example text and query must be non-empty"));
        }
        examples.push(IclExample {
            document: Document::new(
                row.id.unwrap_or_else(|| format!("example-{idx}")),
                row.title,
                row.text,
            ),
            query: row.query,
        });
    }
    Ok(examples)
}

/// Export pairs as a BeIR-style dataset: a queries file plus qrels that mark
/// each generated query relevant (score 1) to its source document.
pub fn export_beir(pairs: &[SyntheticPair], queries_path: impl AsRef<Path>, qrels_path: impl AsRef<Path>) -> Result<()> {
    let mut queries = QuerySet::default();
    let mut qrels = Qrels::new();
    for (idx, pair) in pairs.iter().enumerate() {
        let query_id = format!("genq-{idx:06}");
        queries.queries.push(Query {
            query_id: query_id.clone(),
            text: pair.query.clone(),
        });
        qrels.insert(query_id, pair.doc_id.clone(), 1)?;
    }
    crate::corpus::write_queries(&queries, queries_path)?;
    crate::corpus::write_qrels(&qrels, qrels_path)
}
