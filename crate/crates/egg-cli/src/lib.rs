//! Library half of the `egg` binary: configuration layering, run manifests,
//! and the pipeline stages. Kept as a library so integration tests can drive
//! stages directly.

pub mod config;
pub mod manifest;
pub mod pipeline;

pub use config::{Mode, Preset, ResolvedConfig};
pub use manifest::RunManifest;
pub use pipeline::RunContext;
