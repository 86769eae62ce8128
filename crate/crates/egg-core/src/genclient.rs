//! Text-generation backends.
//!
//! [`generate`] turns one prompt into `n` single-line queries. Two backends
//! exist: an OpenAI-compatible HTTP endpoint (`POST /v1/completions`) for
//! real language models, and a fully deterministic mock whose output is
//! computable by hand, used for offline runs and every test in this crate.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::embed::fnv1a64;
use crate::error::{Error, Result};
use crate::intent::{PromptKind, PromptString};
use crate::rng::DetRng;

/// Decoding parameters passed to the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
    /// Completions per prompt.
    pub n: u32,
    pub max_new_tokens: u32,
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_k: 25,
            top_p: 0.95,
            n: 1,
            max_new_tokens: 64,
            seed: 0,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<()> {
        if self.temperature < 0.0 || !self.temperature.is_finite() {
            return Err(Error::invalid("temperature must be finite and >= 0"));
        }
        if self.top_k == 0 {
            return Err(Error::invalid("top_k must be positive"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::invalid("top_p must be in (0, 1]"));
        }
        if self.n == 0 {
            return Err(Error::invalid("n must be positive"));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::invalid("max_new_tokens must be positive"));
        }
        Ok(())
    }

    pub fn with_n(mut self, n: u32) -> Self {
        self.n = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Deterministic offline generator. `seed` offsets the per-call seed in
/// [`SamplingParams`], so the default of 0 leaves `params.seed` authoritative.
#[derive(Debug, Clone, Default)]
pub struct MockGenerator {
    pub seed: u64,
}

/// OpenAI-compatible completion endpoint.
#[derive(Debug, Clone)]
pub struct RemoteEndpoint {
    pub url: String,
    pub model: String,
    /// Env var holding the bearer token, if any.
    pub auth_token_env: Option<String>,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    /// Largest `n` the server accepts per request; requests are split when
    /// the caller asks for more.
    pub max_n_per_request: Option<u32>,
    /// Log full prompt text instead of prompt hashes.
    pub log_prompts: bool,
    client: reqwest::blocking::Client,
}

impl RemoteEndpoint {
    pub fn new(url: impl Into<String>, model: impl Into<String>, timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Backend(e.to_string()))?;
        Ok(Self {
            url: url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            auth_token_env: Some("EGG_AUTH_TOKEN".to_string()),
            max_retries: 3,
            backoff_base_ms: 200,
            max_n_per_request: None,
            log_prompts: false,
            client,
        })
    }
}

/// A text-generation backend.
#[derive(Debug, Clone)]
pub enum GenerationBackend {
    Mock(MockGenerator),
    Remote(RemoteEndpoint),
}

impl GenerationBackend {
    pub fn mock(seed: u64) -> Self {
        GenerationBackend::Mock(MockGenerator { seed })
    }

    pub fn is_mock(&self) -> bool {
        matches!(self, GenerationBackend::Mock(_))
    }
}

/// Strip a raw completion down to one line: leading whitespace removed, cut
/// at the first newline, trailing whitespace removed.
fn normalize_completion(raw: &str) -> String {
    let s = raw.trim_start();
    let s = match s.find('\n') {
        Some(i) => &s[..i],
        None => s,
    };
    s.trim_end().to_string()
}

/// Generate exactly `params.n` non-empty single-line completions.
pub fn generate(backend: &GenerationBackend, prompt: &PromptString, params: &SamplingParams) -> Result<Vec<String>> {
    params.validate()?;
    if prompt.text.is_empty() {
        return Err(Error::invalid("prompt must be non-empty"));
    }
    match backend {
        GenerationBackend::Mock(mock) => {
            let shifted = SamplingParams {
                seed: params.seed.wrapping_add(mock.seed),
                ..params.clone()
            };
            mock_generate(prompt, &shifted)
        }
        GenerationBackend::Remote(remote) => remote_generate(remote, prompt, params),
    }
}

/// Number of document tokens in each mock completion.
pub const MOCK_TOKENS_PER_QUERY: usize = 5;

/// Deterministic mock generation, fully specified:
///
/// The intent word and the (target) document are recovered from the prompt by
/// template markers. Completion `j` (0-based) is the intent word followed by
/// [`MOCK_TOKENS_PER_QUERY`] document tokens joined by single spaces. Token
/// positions are drawn without replacement by a splitmix64 generator seeded
/// with `params.seed + j`, each draw taken from the ordered list of remaining
/// positions (`DetRng::sample_indices`). Documents with fewer tokens than
/// [`MOCK_TOKENS_PER_QUERY`] contribute all their tokens in original order.
///
/// Intent words are assumed to contain no whitespace; every built-in intent
/// satisfies this.
pub fn mock_generate(prompt: &PromptString, params: &SamplingParams) -> Result<Vec<String>> {
    let (e_q, doc_text) = extract_intent_and_doc(prompt)?;
    let tokens: Vec<&str> = doc_text.split_whitespace().collect();
    let mut completions = Vec::with_capacity(params.n as usize);
    for j in 0..params.n as u64 {
        let mut parts = vec![e_q.as_str()];
        if tokens.len() <= MOCK_TOKENS_PER_QUERY {
            parts.extend(tokens.iter().copied());
        } else {
            let mut rng = DetRng::new(params.seed.wrapping_add(j));
            let picked = rng.sample_indices(tokens.len(), MOCK_TOKENS_PER_QUERY);
            parts.extend(picked.into_iter().map(|i| tokens[i]));
        }
        completions.push(normalize_completion(&parts.join(" ")));
    }
    Ok(completions)
}

/// Recover `(e_q, document)` from a rendered prompt via its template markers.
fn extract_intent_and_doc(prompt: &PromptString) -> Result<(String, String)> {
    let text = prompt.text.as_str();
    let malformed = |what: &str| Error::invalid(format!("mock backend: prompt does not embed {what}"));
    match prompt.kind {
        PromptKind::FlanMeta => {
            let rest = text.strip_prefix("Write a ").ok_or_else(|| malformed("the instruction prefix"))?;
            let mid = " related to topic of the passage. Do not directly use wordings from the passage. ";
            let at = rest.find(mid).ok_or_else(|| malformed("the instruction body"))?;
            Ok((rest[..at].to_string(), rest[at + mid.len()..].to_string()))
        }
        PromptKind::LlamaPrototype => {
            let open = "[INST] Read the passage and generate a ";
            let rest = text.strip_prefix(open).ok_or_else(|| malformed("the instruction prefix"))?;
            let close = ". [/INST] ";
            let at = rest.find(close).ok_or_else(|| malformed("the instruction close"))?;
            let e_q = rest[..at].to_string();
            let tail = &rest[at + close.len()..];
            let doc = tail
                .strip_suffix(&format!(" {e_q}:"))
                .ok_or_else(|| malformed("the trailing intent slot"))?;
            Ok((e_q, doc.to_string()))
        }
        PromptKind::LlamaIcl => {
            let at = text.rfind("Passage: ").ok_or_else(|| malformed("a passage block"))?;
            let tail = &text[at + "Passage: ".len()..];
            let stripped = tail.strip_suffix(':').ok_or_else(|| malformed("the trailing intent slot"))?;
            let e_q = stripped
                .split_whitespace()
                .last()
                .ok_or_else(|| malformed("an intent word"))?
                .to_string();
            let doc = stripped
                .strip_suffix(&format!(" {e_q}"))
                .ok_or_else(|| malformed("the target document"))?;
            Ok((e_q, doc.to_string()))
        }
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    top_k: u32,
    top_p: f64,
    n: u32,
    max_tokens: u32,
    seed: u64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    #[serde(default)]
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    #[serde(default)]
    text: String,
}

fn remote_generate(remote: &RemoteEndpoint, prompt: &PromptString, params: &SamplingParams) -> Result<Vec<String>> {
    let prompt_id = fnv1a64(prompt.text.as_bytes());
    if remote.log_prompts {
        log::debug!("prompt {prompt_id:016x}: {}", prompt.text);
    }

    let mut completions: Vec<String> = Vec::with_capacity(params.n as usize);
    let chunk = remote.max_n_per_request.unwrap_or(params.n).max(1);
    let mut requested = 0u32;
    let mut chunk_index = 0u64;
    while requested < params.n {
        let this_n = chunk.min(params.n - requested);
        let texts = remote_request(remote, prompt, params, this_n, params.seed.wrapping_add(chunk_index), prompt_id)?;
        completions.extend(texts.iter().map(|t| normalize_completion(t)));
        requested += this_n;
        chunk_index += 1;
    }

    // Empty completions get one resampling round before the call fails.
    completions.retain(|c| !c.is_empty());
    if (completions.len() as u32) < params.n {
        let missing = params.n - completions.len() as u32;
        log::warn!("prompt {prompt_id:016x}: {missing} empty completion(s), resampling once");
        let texts = remote_request(remote, prompt, params, missing, params.seed.wrapping_add(0xEC0), prompt_id)?;
        completions.extend(texts.iter().map(|t| normalize_completion(t)).filter(|c| !c.is_empty()));
    }
    if (completions.len() as u32) < params.n {
        return Err(Error::Backend(format!(
            "prompt {prompt_id:016x}: backend returned {} non-empty completions, needed {}",
            completions.len(),
            params.n
        )));
    }
    completions.truncate(params.n as usize);
    Ok(completions)
}

fn remote_request(
    remote: &RemoteEndpoint,
    prompt: &PromptString,
    params: &SamplingParams,
    n: u32,
    seed: u64,
    prompt_id: u64,
) -> Result<Vec<String>> {
    let body = CompletionRequest {
        model: &remote.model,
        prompt: &prompt.text,
        temperature: params.temperature,
        top_k: params.top_k,
        top_p: params.top_p,
        n,
        max_tokens: params.max_new_tokens,
        seed,
    };
    let url = format!("{}/v1/completions", remote.url);
    let token = remote
        .auth_token_env
        .as_ref()
        .and_then(|var| std::env::var(var).ok());

    let mut last_error = String::new();
    let attempts = remote.max_retries + 1;
    for attempt in 0..attempts {
        if attempt > 0 {
            let backoff = remote.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(5)).min(5_000);
            std::thread::sleep(Duration::from_millis(backoff));
        }
        log::debug!("completion request prompt={prompt_id:016x} n={n} attempt={attempt}");
        let mut request = remote.client.post(&url).json(&body);
        if let Some(token) = &token {
            request = request.bearer_auth(token);
        }
        match request.send() {
            Ok(response) => {
                let status = response.status();
                if status.is_success() {
                    let parsed: CompletionResponse = response
                        .json()
                        .map_err(|e| Error::Backend(format!("prompt {prompt_id:016x}: invalid response: {e}")))?;
                    return Ok(parsed.choices.into_iter().map(|c| c.text).collect());
                }
                if status.as_u16() == 429 || status.is_server_error() {
                    last_error = format!("HTTP {status}");
                    continue;
                }
                return Err(Error::Backend(format!("prompt {prompt_id:016x}: HTTP {status}")));
            }
            Err(e) => {
                last_error = e.to_string();
            }
        }
    }
    Err(Error::Backend(format!(
        "prompt {prompt_id:016x}: request failed after {attempts} attempts: {last_error}"
    )))
}
