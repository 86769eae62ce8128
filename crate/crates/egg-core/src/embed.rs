//! Text embeddings and the similarity function used for example selection.
//!
//! The offline backend is a signed feature-hashing embedder: lowercase,
//! whitespace-tokenize, hash each token with FNV-1a 64, add ±1 at
//! `hash % dims` (sign from the top hash bit), then L2-normalize. It is
//! deterministic and dependency-free while preserving the bag-of-words
//! similarity structure that neighbor selection needs. A remote backend
//! (`POST /v1/embeddings`, OpenAI-compatible) stands in for real sentence
//! encoders.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// FNV-1a 64-bit over raw bytes.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

pub const DEFAULT_DIMS: usize = 256;

/// Deterministic signed bag-of-words hashing embedder.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dims: usize,
}

impl HashEmbedder {
    pub fn new(dims: usize) -> Self {
        assert!(dims >= 1, "dims must be positive");
        Self { dims }
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        let mut values = vec![0.0f64; self.dims];
        for token in text.to_lowercase().split_whitespace() {
            let hash = fnv1a64(token.as_bytes());
            let coord = (hash % self.dims as u64) as usize;
            let sign = if hash >> 63 == 0 { 1.0 } else { -1.0 };
            values[coord] += sign;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        }
        values
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMS)
    }
}

/// OpenAI-compatible embedding endpoint.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    pub url: String,
    pub model: String,
    pub dims: usize,
    pub auth_token_env: Option<String>,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(url: impl Into<String>, model: impl Into<String>, dims: usize, timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Backend(e.to_string()))?;
        Ok(Self {
            url: url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            dims,
            auth_token_env: Some("EGG_AUTH_TOKEN".to_string()),
            max_retries: 3,
            backoff_base_ms: 200,
            client,
        })
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        #[derive(Serialize)]
        struct EmbeddingRequest<'a> {
            model: &'a str,
            input: &'a [&'a str],
        }
        #[derive(Deserialize)]
        struct EmbeddingResponse {
            data: Vec<EmbeddingRow>,
        }
        #[derive(Deserialize)]
        struct EmbeddingRow {
            embedding: Vec<f64>,
        }

        let url = format!("{}/v1/embeddings", self.url);
        let token = self.auth_token_env.as_ref().and_then(|var| std::env::var(var).ok());
        let body = EmbeddingRequest { model: &self.model, input: texts };

        let attempts = self.max_retries + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = self.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(5)).min(5_000);
                std::thread::sleep(Duration::from_millis(backoff));
            }
            let mut request = self.client.post(&url).json(&body);
            if let Some(token) = &token {
                request = request.bearer_auth(token);
            }
            match request.send() {
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        let parsed: EmbeddingResponse = response
                            .json()
                            .map_err(|e| Error::Backend(format!("invalid embedding response: {e}")))?;
                        if parsed.data.len() != texts.len() {
                            return Err(Error::Backend(format!(
                                "embedding response has {} rows for {} inputs",
                                parsed.data.len(),
                                texts.len()
                            )));
                        }
                        let mut rows = Vec::with_capacity(parsed.data.len());
                        for row in parsed.data {
                            if row.embedding.len() != self.dims {
                                return Err(Error::DimsMismatch {
                                    expected: self.dims,
                                    actual: row.embedding.len(),
                                });
                            }
                            rows.push(row.embedding);
                        }
                        return Ok(rows);
                    }
                    if status.as_u16() == 429 || status.is_server_error() {
                        last_error = format!("HTTP {status}");
                        continue;
                    }
                    return Err(Error::Backend(format!("embedding request: HTTP {status}")));
                }
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(Error::Backend(format!(
            "embedding request failed after {attempts} attempts: {last_error}"
        )))
    }
}

/// An embedding backend.
#[derive(Debug, Clone)]
pub enum EmbedBackend {
    Hash(HashEmbedder),
    Remote(RemoteEmbedder),
}

impl EmbedBackend {
    pub fn hash(dims: usize) -> Self {
        EmbedBackend::Hash(HashEmbedder::new(dims))
    }

    pub fn dims(&self) -> usize {
        match self {
            EmbedBackend::Hash(h) => h.dims,
            EmbedBackend::Remote(r) => r.dims,
        }
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>> {
        embed_text(self, text)
    }
}

/// Embed one text with the given backend. Remote backends reject empty text;
/// the hash backend maps it to the zero vector.
pub fn embed_text(backend: &EmbedBackend, text: &str) -> Result<Vec<f64>> {
    match backend {
        EmbedBackend::Hash(h) => Ok(h.embed(text)),
        EmbedBackend::Remote(r) => {
            if text.is_empty() {
                return Err(Error::invalid("remote embedding backends require non-empty text"));
            }
            Ok(r.embed_batch(&[text])?.into_iter().next().unwrap())
        }
    }
}

/// Dot product with exact left-to-right accumulation in double precision.
pub fn dot_score(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimsMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    let mut sum = 0.0f64;
    for k in 0..u.len() {
        sum += u[k] * v[k];
    }
    Ok(sum)
}

/// Row-major matrix of embeddings, one row per document, in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dims: usize,
    doc_ids: Vec<String>,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(dims: usize) -> Self {
        assert!(dims >= 1, "dims must be positive");
        Self {
            dims,
            doc_ids: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn push_row(&mut self, doc_id: impl Into<String>, values: Vec<f64>) -> Result<()> {
        if values.len() != self.dims {
            return Err(Error::DimsMismatch {
                expected: self.dims,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding contains non-finite values"));
        }
        self.doc_ids.push(doc_id.into());
        self.data.extend(values);
        Ok(())
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.data[index * self.dims..(index + 1) * self.dims]
    }

    pub fn doc_id(&self, index: usize) -> &str {
        &self.doc_ids[index]
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn index_of(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids.iter().position(|d| d == doc_id)
    }
}

/// Embed every document of a corpus (its presented text), in corpus order.
pub fn embed_corpus(backend: &EmbedBackend, corpus: &Corpus) -> Result<EmbeddingMatrix> {
    let mut matrix = EmbeddingMatrix::new(backend.dims());
    match backend {
        EmbedBackend::Hash(h) => {
            for doc in &corpus.docs {
                matrix.push_row(doc.doc_id.clone(), h.embed(&doc.presented_text()))?;
            }
        }
        EmbedBackend::Remote(r) => {
            // Chunked so one request never carries the whole corpus.
            const CHUNK: usize = 64;
            for docs in corpus.docs.chunks(CHUNK) {
                let texts: Vec<String> = docs.iter().map(|d| d.presented_text()).collect();
                let refs: Vec<&str> = texts.iter().map(|s| s.as_str()).collect();
                for (doc, row) in docs.iter().zip(r.embed_batch(&refs)?) {
                    matrix.push_row(doc.doc_id.clone(), row)?;
                }
            }
        }
    }
    Ok(matrix)
}

/// Indices of the `m` rows most similar to `target_index` by dot product,
/// excluding the target itself. Descending score, ties by ascending doc_id.
pub fn top_m_neighbors(target_index: usize, matrix: &EmbeddingMatrix, m: usize) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::invalid("m must be at least 1"));
    }
    if target_index >= matrix.len() {
        return Err(Error::invalid(format!(
            "target index {target_index} out of range for {} rows",
            matrix.len()
        )));
    }
    if m >= matrix.len() {
        return Err(Error::invalid(format!(
            "cannot select {m} neighbors from {} rows excluding the target",
            matrix.len()
        )));
    }
    let target = matrix.row(target_index);
    let mut scored: Vec<(usize, f64)> = (0..matrix.len())
        .filter(|&i| i != target_index)
        .map(|i| Ok((i, dot_score(target, matrix.row(i))?)))
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| matrix.doc_id(a.0).cmp(matrix.doc_id(b.0)))
    });
    Ok(scored.into_iter().take(m).map(|(i, _)| i).collect())
}

#[derive(Serialize, Deserialize)]
struct MatrixSidecar {
    dims: usize,
    doc_ids: Vec<String>,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    std::path::PathBuf::from(s)
}

/// Persist a matrix as flat little-endian float32 plus a `<path>.json`
/// sidecar recording `{dims, doc_ids}`.
pub fn write_matrix(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(matrix.data.len() * 4);
    for &v in &matrix.data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let sidecar = MatrixSidecar {
        dims: matrix.dims,
        doc_ids: matrix.doc_ids.clone(),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(sidecar_path(path), json).map_err(|e| Error::io(sidecar_path(path), e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let sidecar_file = sidecar_path(path);
    let raw = std::fs::read_to_string(&sidecar_file).map_err(|e| Error::io(&sidecar_file, e))?;
    let sidecar: MatrixSidecar =
        serde_json::from_str(&raw).map_err(|e| Error::parse(&sidecar_file, 0, e.to_string()))?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = sidecar.dims * sidecar.doc_ids.len() * 4;
    if bytes.len() != expected {
        return Err(Error::parse(
            path,
            0,
            format!("expected {expected} bytes for the sidecar shape, found {}", bytes.len()),
        ));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(EmbeddingMatrix {
        dims: sidecar.dims,
        doc_ids: sidecar.doc_ids,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;

    #[test]
    fn fnv1a64_known_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn hash_embed_is_deterministic() {
        let embedder = HashEmbedder::default();
        assert_eq!(embedder.embed("alpha beta gamma"), embedder.embed("alpha beta gamma"));
    }

    #[test]
    fn hash_embed_empty_is_zero_vector() {
        let embedder = HashEmbedder::new(16);
        assert_eq!(embedder.embed(""), vec![0.0; 16]);
    }

    #[test]
    fn hash_embed_single_token_is_one_signed_coordinate() {
        let embedder = HashEmbedder::new(256);
        let v = embedder.embed("claim");
        let nonzero: Vec<f64> = v.into_iter().filter(|x| *x != 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert!(nonzero[0] == 1.0 || nonzero[0] == -1.0);
    }

    #[test]
    fn hash_embed_coordinate_follows_the_rule() {
        let embedder = HashEmbedder::new(256);
        let v = embedder.embed("Claim"); // lowercased before hashing
        let hash = fnv1a64(b"claim");
        let coord = (hash % 256) as usize;
        let sign = if hash >> 63 == 0 { 1.0 } else { -1.0 };
        assert_eq!(v[coord], sign);
    }

    #[test]
    fn hash_embed_is_case_insensitive() {
        let embedder = HashEmbedder::new(64);
        assert_eq!(embedder.embed("Alpha BETA"), embedder.embed("alpha beta"));
    }

    #[test]
    fn dot_score_examples() {
        assert_eq!(dot_score(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(dot_score(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        assert_eq!(dot_score(&[0.0, 0.0], &[5.0, -2.0]).unwrap(), 0.0);
        assert!(dot_score(&[1.0], &[1.0, 2.0]).is_err());
    }

    fn small_matrix() -> EmbeddingMatrix {
        let mut m = EmbeddingMatrix::new(2);
        m.push_row("a", vec![1.0, 0.0]).unwrap();
        m.push_row("b", vec![1.0, 0.0]).unwrap();
        m.push_row("c", vec![0.0, 1.0]).unwrap();
        m
    }

    #[test]
    fn top_m_neighbors_picks_highest_score() {
        let m = small_matrix();
        assert_eq!(top_m_neighbors(0, &m, 1).unwrap(), vec![1]);
        assert_eq!(top_m_neighbors(0, &m, 2).unwrap(), vec![1, 2]);
    }

    #[test]
    fn top_m_neighbors_never_returns_target() {
        let m = small_matrix();
        for target in 0..3 {
            for count in 1..3 {
                let picked = top_m_neighbors(target, &m, count).unwrap();
                assert_eq!(picked.len(), count);
                assert!(!picked.contains(&target));
            }
        }
    }

    #[test]
    fn top_m_neighbors_rejects_m_at_row_count() {
        let m = small_matrix();
        assert!(top_m_neighbors(0, &m, 3).is_err());
    }

    #[test]
    fn top_m_neighbors_breaks_ties_by_doc_id() {
        let mut m = EmbeddingMatrix::new(2);
        m.push_row("z", vec![1.0, 0.0]).unwrap();
        m.push_row("b", vec![1.0, 0.0]).unwrap();
        m.push_row("a", vec![1.0, 0.0]).unwrap();
        // All candidates score 1.0 against the target; doc_id decides.
        assert_eq!(top_m_neighbors(0, &m, 2).unwrap(), vec![2, 1]);
    }

    #[test]
    fn identical_rows_pick_identical_neighbors_modulo_self() {
        let embedder = HashEmbedder::new(64);
        let mut m = EmbeddingMatrix::new(64);
        m.push_row("twin-a", embedder.embed("shared duplicated body text")).unwrap();
        m.push_row("twin-b", embedder.embed("shared duplicated body text")).unwrap();
        for i in 0..4 {
            m.push_row(format!("other{i}"), embedder.embed(&format!("distinct words {i} here"))).unwrap();
        }
        let of_a: std::collections::HashSet<usize> =
            top_m_neighbors(0, &m, 3).unwrap().into_iter().filter(|&i| i != 1).collect();
        let of_b: std::collections::HashSet<usize> =
            top_m_neighbors(1, &m, 3).unwrap().into_iter().filter(|&i| i != 0).collect();
        assert_eq!(of_a, of_b);
    }

    #[test]
    fn matrix_rejects_wrong_dims_and_non_finite() {
        let mut m = EmbeddingMatrix::new(2);
        assert!(m.push_row("a", vec![1.0]).is_err());
        assert!(m.push_row("a", vec![f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn matrix_roundtrip() {
        let embedder = HashEmbedder::new(8);
        let mut m = EmbeddingMatrix::new(8);
        m.push_row("d1", embedder.embed("alpha beta")).unwrap();
        m.push_row("d2", embedder.embed("gamma")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embeddings.bin");
        write_matrix(&m, &path).unwrap();
        let back = read_matrix(&path).unwrap();
        assert_eq!(back.dims(), 8);
        assert_eq!(back.doc_ids(), m.doc_ids());
        for i in 0..m.len() {
            for (a, b) in m.row(i).iter().zip(back.row(i)) {
                assert!((a - b).abs() < 1e-6, "f32 rounding only");
            }
        }
    }

    #[test]
    fn embed_corpus_row_order_matches_corpus() {
        let corpus = Corpus {
            docs: vec![
                Document::new("d2", "", "beta"),
                Document::new("d1", "T", "alpha"),
            ],
            source_path: String::new(),
        };
        let matrix = embed_corpus(&EmbedBackend::hash(32), &corpus).unwrap();
        assert_eq!(matrix.doc_ids(), &["d2".to_string(), "d1".to_string()]);
        // Titled doc embeds its presented text.
        let expected = HashEmbedder::new(32).embed("T. alpha");
        assert_eq!(matrix.row(1), expected.as_slice());
    }
}
