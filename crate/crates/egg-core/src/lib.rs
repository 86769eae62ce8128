//! Intent-aware synthetic query generation and desk-scale retriever training.
//!
//! The pipeline: ingest a BeIR-format corpus, compile a task's search intent
//! into meta-prompts, generate synthetic queries with a pluggable backend,
//! train a small dual encoder on the (document, query) pairs, and score the
//! result with nDCG@10. Every stage runs offline and deterministically with
//! the mock generation backend and the hashing embedder.
//!
//! See the `book/` guide at the repository root for worked chapters; its code
//! snippets compile and run as this crate's doc-tests.

pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod genclient;
pub mod guide;
pub mod intent;
pub mod rng;
pub mod synth;
pub mod toy;
pub mod train;

pub use corpus::{load_corpus, load_qrels, load_queries, sample_corpus, truncate_text, Corpus, Document, Qrels, QuerySet};
pub use embed::{dot_score, embed_corpus, top_m_neighbors, EmbedBackend, EmbeddingMatrix, HashEmbedder};
pub use error::{Error, Result};
pub use genclient::{generate, mock_generate, GenerationBackend, SamplingParams};
pub use intent::{builtin_intents, render_flan_prompt, render_icl_prompt, render_prototype_prompt, IntentCategory, IntentSpec, PromptString};
pub use synth::{filter_pairs, read_dataset, write_dataset, PairSource, PrototypeSet, SyntheticPair};
pub use train::{dpr_loss, epochs_for_corpus, margin_mse_loss, train_retriever, EncoderParams, Objective, TeacherScorer, TrainConfig};
pub use eval::{evaluate_run, ndcg_at_k, retrieve_topk, EvalReport, RankedList};
