//! Layered run configuration.
//!
//! Resolution order: preset defaults, then the config file (TOML or JSON,
//! keys mirroring [`ResolvedConfig`]), then command-line flags. The fully
//! resolved snapshot is echoed into the run manifest so every constant a run
//! actually used is auditable.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

/// Which constants a run starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// The full-scale reference constants: 8 queries per doc, 4 in-context
    /// examples, temperature 1.0, top-k 25, top-p 0.95, 100K corpus cap,
    /// batch 75, learning rate 2e-5, warmup 1000, epochs by corpus size.
    Paper,
    /// Runnable desk defaults: smaller generation counts and a learning rate
    /// scaled to the linear model.
    Desk,
}

/// Generation mode for the synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Flan,
    LlamaIcl,
    ZeroShot,
    FewShot,
    PrototypeOnly,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mode::Flan => "flan",
            Mode::LlamaIcl => "llama-icl",
            Mode::ZeroShot => "zero-shot",
            Mode::FewShot => "few-shot",
            Mode::PrototypeOnly => "prototype-only",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    /// Whitespace-token cap applied to document text at ingest.
    pub max_tokens: usize,
    /// Documents kept when the corpus is larger (seeded uniform sample).
    pub sample_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteSection {
    pub url: String,
    pub model: String,
    pub auth_token_env: String,
    pub timeout_s: u64,
    pub max_retries: u32,
    /// Largest `n` per completion request; omitted means one request.
    pub max_n_per_request: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSection {
    /// "mock" or "remote".
    pub backend: String,
    /// Queries generated per document.
    pub n: u32,
    /// In-context examples per prompt.
    pub m: usize,
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
    pub max_new_tokens: u32,
    pub concurrency: usize,
    /// Apply the duplicate/copy filter to generated pairs.
    pub filter: bool,
    /// Separate in-context blocks with newlines instead of single spaces.
    pub icl_newline: bool,
    /// Fixed example file for the few-shot baseline.
    pub examples_file: Option<String>,
    /// Log full prompt text instead of hashes.
    pub log_prompts: bool,
    pub remote: Option<RemoteSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedSection {
    /// "hash" or "remote".
    pub backend: String,
    pub dims: usize,
    pub remote: Option<RemoteSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// "dpr" or "gpl".
    pub objective: String,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    /// Override for the corpus-size epoch rule.
    pub epochs: Option<u32>,
    pub dims_out: usize,
    pub tied: bool,
    /// "sgd" or "adam".
    pub optimizer: String,
    /// "lexical" or "remote"; required for the gpl objective.
    pub teacher: Option<String>,
    pub teacher_remote: Option<RemoteSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub k: usize,
    /// Also write a per-query TSV next to the report.
    pub per_query: bool,
}

/// The complete, concrete configuration of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedConfig {
    pub preset: Preset,
    pub seed: u64,
    pub mode: Mode,
    /// Task name or query description resolved against the intent catalog.
    pub intent: String,
    /// Optional TOML/JSON catalog replacing the built-in intents.
    pub intent_catalog: Option<String>,
    pub corpus: CorpusSection,
    pub gen: GenSection,
    pub embed: EmbedSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl ResolvedConfig {
    pub fn preset(preset: Preset) -> Self {
        let base = Self {
            preset,
            seed: 0,
            mode: Mode::Flan,
            intent: "Fact Checking".to_string(),
            intent_catalog: None,
            corpus: CorpusSection {
                max_tokens: 350,
                sample_cap: 100_000,
            },
            gen: GenSection {
                backend: "mock".to_string(),
                n: 8,
                m: 4,
                temperature: 1.0,
                top_k: 25,
                top_p: 0.95,
                max_new_tokens: 64,
                concurrency: 8,
                filter: true,
                icl_newline: false,
                examples_file: None,
                log_prompts: false,
                remote: None,
            },
            embed: EmbedSection {
                backend: "hash".to_string(),
                dims: 256,
                remote: None,
            },
            train: TrainSection {
                objective: "dpr".to_string(),
                batch_size: 75,
                learning_rate: 2e-5,
                warmup_steps: 1000,
                epochs: None,
                dims_out: 128,
                tied: false,
                optimizer: "sgd".to_string(),
                teacher: None,
                teacher_remote: None,
            },
            eval: EvalSection {
                k: 10,
                per_query: false,
            },
        };
        match preset {
            Preset::Paper => base,
            Preset::Desk => {
                let mut desk = base;
                desk.gen.n = 4;
                desk.gen.m = 2;
                desk.train.learning_rate = 1e-2;
                desk.train.warmup_steps = 10;
                desk
            }
        }
    }

    /// Overlay a config file's keys onto this configuration.
    pub fn apply_file(&self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let overlay: serde_json::Value = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))?,
            _ => {
                let value: toml::Value = toml::from_str(&raw).with_context(|| format!("parsing {}", path.display()))?;
                serde_json::to_value(value)?
            }
        };
        let mut base = serde_json::to_value(self)?;
        merge(&mut base, &overlay);
        serde_json::from_value(base).with_context(|| format!("invalid config in {}", path.display()))
    }

    /// Fail fast on combinations no stage can execute.
    pub fn validate(&self) -> Result<()> {
        match self.gen.backend.as_str() {
            "mock" => {}
            "remote" => {
                if self.gen.remote.is_none() {
                    bail!("gen.backend is \"remote\" but [gen.remote] is not configured");
                }
            }
            other => bail!("unknown generation backend `{other}` (expected \"mock\" or \"remote\")"),
        }
        match self.embed.backend.as_str() {
            "hash" => {}
            "remote" => {
                if self.embed.remote.is_none() {
                    bail!("embed.backend is \"remote\" but [embed.remote] is not configured");
                }
            }
            other => bail!("unknown embedding backend `{other}` (expected \"hash\" or \"remote\")"),
        }
        match self.train.objective.as_str() {
            "dpr" => {
                if self.train.batch_size < 2 {
                    bail!("the dpr objective needs train.batch_size >= 2");
                }
            }
            "gpl" => match self.train.teacher.as_deref() {
                None => bail!("the gpl objective needs a teacher: set train.teacher to \"lexical\" or \"remote\""),
                Some("lexical") => {}
                Some("remote") => {
                    if self.train.teacher_remote.is_none() {
                        bail!("train.teacher is \"remote\" but [train.teacher_remote] is not configured");
                    }
                }
                Some(other) => bail!("unknown teacher `{other}` (expected \"lexical\" or \"remote\")"),
            },
            other => bail!("unknown objective `{other}` (expected \"dpr\" or \"gpl\")"),
        }
        match self.train.optimizer.as_str() {
            "sgd" | "adam" => {}
            other => bail!("unknown optimizer `{other}` (expected \"sgd\" or \"adam\")"),
        }
        if self.mode == Mode::FewShot && self.gen.examples_file.is_none() {
            bail!("few-shot mode needs gen.examples_file (the fixed in-context example set)");
        }
        if self.gen.n == 0 || self.gen.m == 0 {
            bail!("gen.n and gen.m must be positive");
        }
        if self.eval.k == 0 {
            bail!("eval.k must be positive");
        }
        Ok(())
    }
}

/// Recursive JSON object merge; the overlay wins on leaves.
fn merge(base: &mut serde_json::Value, overlay: &serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(base_map), serde_json::Value::Object(overlay_map)) => {
            for (key, value) in overlay_map {
                match base_map.get_mut(key) {
                    Some(slot) => merge(slot, value),
                    None => {
                        base_map.insert(key.clone(), value.clone());
                    }
                }
            }
        }
        (slot, value) => *slot = value.clone(),
    }
}
