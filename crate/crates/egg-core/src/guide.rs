//! The user guide's chapters, compiled as doc-tests.
//!
//! Each module below embeds one markdown chapter from `book/src/` at the
//! repository root, so `cargo test --doc` runs every code snippet the guide
//! shows. If a chapter drifts from the library's API, the build breaks.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/corpus.md")]
pub mod corpus_formats {}

#[doc = include_str!("../../../book/src/intents.md")]
pub mod intents_and_meta_prompts {}

#[doc = include_str!("../../../book/src/generation.md")]
pub mod generation_backends {}

#[doc = include_str!("../../../book/src/embeddings.md")]
pub mod embeddings_and_example_selection {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training_the_dual_encoder {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluating_retrieval_quality {}

#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline_cli {}
