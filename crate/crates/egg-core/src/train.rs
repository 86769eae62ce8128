//! Dual-encoder training on synthetic pairs.
//!
//! The student is a linear map per side over base embeddings: scoring is
//! `(W_q^T x_q) . (W_d^T x_d)`, so the learned object is a low-rank token
//! association between query space and document space. Two objectives are
//! supported: an in-batch-negatives softmax (every other positive document in
//! the batch is a negative) and margin distillation against a teacher scorer
//! (squared error between student and teacher score margins over a mined
//! negative). Training is single-threaded and bit-reproducible for a fixed
//! seed.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embed::{dot_score, embed_corpus, EmbedBackend, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::rng::DetRng;
use crate::synth::SyntheticPair;

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Dpr,
    Gpl,
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Objective::Dpr => f.write_str("dpr"),
            Objective::Gpl => f.write_str("gpl"),
        }
    }
}

/// Parameter update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

/// Which encoder side a vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Query,
    Doc,
}

/// Trainable dual-encoder parameters: one `dims_base x dims_out` matrix per
/// side, optionally tied.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    dims_base: usize,
    dims_out: usize,
    tied: bool,
    w_q: Vec<f64>,
    w_d: Vec<f64>,
}

impl EncoderParams {
    /// Square identity encoder; encoding is a no-op. The untrained baseline.
    pub fn identity(dims: usize) -> Self {
        let mut w = vec![0.0; dims * dims];
        for i in 0..dims {
            w[i * dims + i] = 1.0;
        }
        Self {
            dims_base: dims,
            dims_out: dims,
            tied: true,
            w_q: w.clone(),
            w_d: w,
        }
    }

    /// Seeded uniform init scaled by `sqrt(6 / (fan_in + fan_out))`.
    pub fn random(dims_base: usize, dims_out: usize, tied: bool, seed: u64) -> Self {
        let mut rng = DetRng::with_stream(seed, 0x1417);
        let scale = (6.0 / (dims_base + dims_out) as f64).sqrt();
        let mut sample = |len: usize| -> Vec<f64> {
            (0..len).map(|_| (rng.next_f64() * 2.0 - 1.0) * scale).collect()
        };
        let w_q = sample(dims_base * dims_out);
        let w_d = if tied { w_q.clone() } else { sample(dims_base * dims_out) };
        Self {
            dims_base,
            dims_out,
            tied,
            w_q,
            w_d,
        }
    }

    pub fn dims_base(&self) -> usize {
        self.dims_base
    }

    pub fn dims_out(&self) -> usize {
        self.dims_out
    }

    pub fn tied(&self) -> bool {
        self.tied
    }

    fn matrix(&self, side: Side) -> &[f64] {
        match side {
            Side::Query => &self.w_q,
            Side::Doc => &self.w_d,
        }
    }

    /// Apply the side's transposed matrix to a base embedding.
    pub fn encode(&self, base: &[f64], side: Side) -> Result<Vec<f64>> {
        if base.len() != self.dims_base {
            return Err(Error::DimsMismatch {
                expected: self.dims_base,
                actual: base.len(),
            });
        }
        let w = self.matrix(side);
        let mut out = vec![0.0; self.dims_out];
        for (b, &x) in base.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &w[b * self.dims_out..(b + 1) * self.dims_out];
            for (o, &w_bo) in row.iter().enumerate() {
                out[o] += w_bo * x;
            }
        }
        Ok(out)
    }

    pub fn encode_query(&self, base: &[f64]) -> Result<Vec<f64>> {
        self.encode(base, Side::Query)
    }

    pub fn encode_doc(&self, base: &[f64]) -> Result<Vec<f64>> {
        self.encode(base, Side::Doc)
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    /// Override for the corpus-size epoch rule.
    pub epochs: Option<u32>,
    pub seed: u64,
    pub objective: Objective,
    pub optimizer: Optimizer,
    pub dims_out: usize,
    pub tied: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 75,
            learning_rate: 2e-5,
            warmup_steps: 1000,
            epochs: None,
            seed: 0,
            objective: Objective::Dpr,
            optimizer: Optimizer::Sgd,
            dims_out: 128,
            tied: false,
        }
    }
}

/// Epoch rule: large corpora get one pass, everything else three.
pub fn epochs_for_corpus(corpus_size: usize) -> u32 {
    if corpus_size > 60_000 {
        1
    } else {
        3
    }
}

/// Linear warmup to a constant rate: `lr_max * min(1, step / warmup_steps)`.
/// Steps are 1-based; a warmup of 0 means full rate from the first step.
pub fn warmup_lr(step: usize, lr_max: f64, warmup_steps: usize) -> f64 {
    if warmup_steps == 0 {
        lr_max
    } else {
        lr_max * (step as f64 / warmup_steps as f64).min(1.0)
    }
}

fn check_finite(vecs: &[Vec<f64>], what: &str) -> Result<()> {
    for v in vecs {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("{what} contains non-finite values")));
        }
    }
    Ok(())
}

/// Softmax cross-entropy over a score matrix whose diagonal holds the
/// positives. Returns the loss and its gradient w.r.t. every score.
///
/// `loss = -(1/B) sum_i log( exp(s_ii) / sum_j exp(s_ij) )`, computed with
/// row-max subtraction; `dL/ds_ij = (p_ij - [i==j]) / B`.
pub fn dpr_loss_from_scores(scores: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    let b = scores.len();
    if b == 0 {
        return Err(Error::invalid("score matrix must be non-empty"));
    }
    if scores.iter().any(|row| row.len() != b) {
        return Err(Error::invalid("score matrix must be square"));
    }
    check_finite(scores, "score matrix")?;

    let mut loss = 0.0;
    let mut grads = vec![vec![0.0; b]; b];
    for i in 0..b {
        let row = &scores[i];
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &x| a.max(x));
        let mut denom = 0.0;
        for &s in row {
            denom += (s - max).exp();
        }
        // log-sum-exp minus the positive's score
        loss += max + denom.ln() - row[i];
        for j in 0..b {
            let p = (row[j] - max).exp() / denom;
            grads[i][j] = (p - if i == j { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok((loss / b as f64, grads))
}

/// Loss value plus per-vector gradients for the query and document batches.
pub type LossAndGrads = (f64, Vec<Vec<f64>>, Vec<Vec<f64>>);

/// In-batch-negatives loss over encoded query/positive-document batches.
/// Returns the loss and analytic gradients w.r.t. every input vector.
pub fn dpr_loss(query_vecs: &[Vec<f64>], pos_doc_vecs: &[Vec<f64>]) -> Result<LossAndGrads> {
    let b = query_vecs.len();
    if b == 0 || pos_doc_vecs.len() != b {
        return Err(Error::invalid("query and document batches must be non-empty and equal-length"));
    }
    let dims = query_vecs[0].len();
    if let Some(bad) = query_vecs.iter().chain(pos_doc_vecs).find(|v| v.len() != dims) {
        return Err(Error::DimsMismatch {
            expected: dims,
            actual: bad.len(),
        });
    }
    check_finite(query_vecs, "query batch")?;
    check_finite(pos_doc_vecs, "document batch")?;

    let mut scores = vec![vec![0.0; b]; b];
    for i in 0..b {
        for j in 0..b {
            scores[i][j] = dot_score(&query_vecs[i], &pos_doc_vecs[j])?;
        }
    }
    let (loss, score_grads) = dpr_loss_from_scores(&scores)?;

    let mut grad_q = vec![vec![0.0; dims]; b];
    let mut grad_d = vec![vec![0.0; dims]; b];
    for i in 0..b {
        for j in 0..b {
            let g = score_grads[i][j];
            if g == 0.0 {
                continue;
            }
            for k in 0..dims {
                grad_q[i][k] += g * pos_doc_vecs[j][k];
                grad_d[j][k] += g * query_vecs[i][k];
            }
        }
    }
    Ok((loss, grad_q, grad_d))
}

/// Mean squared error between student and teacher margins. Returns the loss
/// and its gradient w.r.t. the student margins: `2 (s_i - t_i) / B`.
pub fn margin_mse_loss(student_margins: &[f64], teacher_margins: &[f64]) -> Result<(f64, Vec<f64>)> {
    let b = student_margins.len();
    if b == 0 || teacher_margins.len() != b {
        return Err(Error::invalid("margin lists must be non-empty and equal-length"));
    }
    if student_margins.iter().chain(teacher_margins).any(|x| !x.is_finite()) {
        return Err(Error::invalid("margins contain non-finite values"));
    }
    let mut loss = 0.0;
    let mut grads = vec![0.0; b];
    for i in 0..b {
        let diff = student_margins[i] - teacher_margins[i];
        loss += diff * diff;
        grads[i] = 2.0 * diff / b as f64;
    }
    Ok((loss / b as f64, grads))
}

/// Jaccard similarity of lowercase whitespace token sets.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let set_a: std::collections::HashSet<String> = a.to_lowercase().split_whitespace().map(str::to_string).collect();
    let set_b: std::collections::HashSet<String> = b.to_lowercase().split_whitespace().map(str::to_string).collect();
    if set_a.is_empty() && set_b.is_empty() {
        return 0.0;
    }
    let intersection = set_a.intersection(&set_b).count() as f64;
    let union = set_a.union(&set_b).count() as f64;
    intersection / union
}

/// Scale applied to the lexical mock's Jaccard so teacher margins are not
/// vanishingly small for the squared-error objective.
pub const LEXICAL_TEACHER_SCALE: f64 = 10.0;

/// Cross-encoder scorer used to soft-label pairs for margin distillation.
#[derive(Debug, Clone)]
pub enum TeacherScorer {
    /// Deterministic offline stand-in: scaled Jaccard token overlap.
    LexicalMock,
    Remote(RemoteCrossEncoder),
}

impl TeacherScorer {
    pub fn score(&self, query: &str, doc_text: &str) -> Result<f64> {
        match self {
            TeacherScorer::LexicalMock => Ok(LEXICAL_TEACHER_SCALE * jaccard(query, doc_text)),
            TeacherScorer::Remote(remote) => remote.score(query, doc_text),
        }
    }
}

/// Remote pairwise scorer: `POST {url}/v1/score` with
/// `{model, query, documents}` returning `{scores: [..]}`.
#[derive(Debug, Clone)]
pub struct RemoteCrossEncoder {
    pub url: String,
    pub model: String,
    pub auth_token_env: Option<String>,
    pub max_retries: u32,
    client: reqwest::blocking::Client,
}

impl RemoteCrossEncoder {
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
            client,
        })
    }

    fn score(&self, query: &str, doc_text: &str) -> Result<f64> {
        #[derive(Serialize)]
        struct ScoreRequest<'a> {
            model: &'a str,
            query: &'a str,
            documents: [&'a str; 1],
        }
        #[derive(Deserialize)]
        struct ScoreResponse {
            scores: Vec<f64>,
        }
        let url = format!("{}/v1/score", self.url);
        let token = self.auth_token_env.as_ref().and_then(|var| std::env::var(var).ok());
        let body = ScoreRequest {
            model: &self.model,
            query,
            documents: [doc_text],
        };
        let mut last_error = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(200 * (1 << (attempt - 1).min(5))));
            }
            let mut request = self.client.post(&url).json(&body);
            if let Some(token) = &token {
                request = request.bearer_auth(token);
            }
            match request.send() {
                Ok(response) if response.status().is_success() => {
                    let parsed: ScoreResponse = response
                        .json()
                        .map_err(|e| Error::Backend(format!("invalid score response: {e}")))?;
                    return parsed
                        .scores
                        .first()
                        .copied()
                        .ok_or_else(|| Error::Backend("score response is empty".to_string()));
                }
                Ok(response) => last_error = format!("HTTP {}", response.status()),
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(Error::Backend(format!(
            "cross-encoder request failed after {} attempts: {last_error}",
            self.max_retries + 1
        )))
    }
}

/// Pick the hardest negative: the highest-scoring document other than the
/// positive under the current student encoder, ties by ascending doc_id.
pub fn mine_negative(
    query: &str,
    pos_doc_id: &str,
    corpus: &Corpus,
    base_doc_matrix: &EmbeddingMatrix,
    encoder: &EncoderParams,
    embedder: &EmbedBackend,
) -> Result<String> {
    if corpus.len() < 2 {
        return Err(Error::invalid("negative mining needs a corpus of at least 2 documents"));
    }
    let query_enc = encoder.encode_query(&embedder.embed(query)?)?;
    let mut encoded = EmbeddingMatrix::new(encoder.dims_out());
    for i in 0..base_doc_matrix.len() {
        encoded.push_row(base_doc_matrix.doc_id(i).to_string(), encoder.encode_doc(base_doc_matrix.row(i))?)?;
    }
    mine_negative_from_encoded(&query_enc, pos_doc_id, &encoded)
}

/// [`mine_negative`] against documents already encoded with the current
/// student; the per-step path the trainer uses.
pub fn mine_negative_from_encoded(
    query_enc: &[f64],
    pos_doc_id: &str,
    encoded_docs: &EmbeddingMatrix,
) -> Result<String> {
    let mut best: Option<(f64, &str)> = None;
    for i in 0..encoded_docs.len() {
        let doc_id = encoded_docs.doc_id(i);
        if doc_id == pos_doc_id {
            continue;
        }
        let score = dot_score(query_enc, encoded_docs.row(i))?;
        let better = match best {
            None => true,
            Some((best_score, best_id)) => {
                score > best_score || (score == best_score && doc_id < best_id)
            }
        };
        if better {
            best = Some((score, doc_id));
        }
    }
    best.map(|(_, id)| id.to_string())
        .ok_or_else(|| Error::invalid("negative mining needs at least one non-positive document"))
}

/// One optimizer step's record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogEntry {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Write a training log as CSV `step,lr,loss`.
pub fn write_train_log(log: &[TrainLogEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    writeln!(out, "step,lr,loss").map_err(|e| Error::io(path, e))?;
    for entry in log {
        writeln!(out, "{},{},{}", entry.step, entry.lr, entry.loss).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn apply(&mut self, w: &mut [f64], grad: &[f64], lr: f64) {
        const BETA1: f64 = 0.9;
        const BETA2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let t = self.t as i32;
        for i in 0..w.len() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grad[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / (1.0 - BETA1.powi(t));
            let v_hat = self.v[i] / (1.0 - BETA2.powi(t));
            w[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
}

/// Accumulate `x (outer) g` into a `dims_base x dims_out` gradient buffer.
fn accumulate_outer(grad_w: &mut [f64], base: &[f64], grad_out: &[f64], dims_out: usize) {
    for (b, &x) in base.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let row = &mut grad_w[b * dims_out..(b + 1) * dims_out];
        for (o, &g) in grad_out.iter().enumerate() {
            row[o] += x * g;
        }
    }
}

/// Rewrap a loss function's non-finite-input rejection as divergence at a
/// training step: weights that blew up produce infinite scores or margins
/// from perfectly finite embeddings.
fn divergence_at<T>(result: Result<T>, step: usize) -> Result<T> {
    match result {
        Err(Error::InvalidInput(msg)) if msg.contains("non-finite") => Err(Error::NonFinite { step }),
        other => other,
    }
}

/// Train the dual encoder on synthetic pairs.
///
/// Mini-batch gradient descent with linear warmup then a constant rate.
/// Batch order is a seeded shuffle per epoch; the epoch count follows
/// [`epochs_for_corpus`] unless overridden. Deterministic for a fixed seed.
pub fn train_retriever(
    pairs: &[SyntheticPair],
    corpus: &Corpus,
    config: &TrainConfig,
    teacher: Option<&TeacherScorer>,
    embedder: &EmbedBackend,
) -> Result<(EncoderParams, Vec<TrainLogEntry>)> {
    if pairs.is_empty() {
        return Err(Error::invalid("training requires at least one pair"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    match config.objective {
        Objective::Dpr => {
            if config.batch_size < 2 {
                return Err(Error::invalid("in-batch negatives need batch_size >= 2"));
            }
        }
        Objective::Gpl => {
            if teacher.is_none() {
                return Err(Error::invalid("margin distillation requires a teacher scorer"));
            }
        }
    }

    let doc_index: HashMap<&str, usize> = corpus
        .docs
        .iter()
        .enumerate()
        .map(|(i, d)| (d.doc_id.as_str(), i))
        .collect();
    let unknown: Vec<&str> = pairs
        .iter()
        .map(|p| p.doc_id.as_str())
        .filter(|id| !doc_index.contains_key(id))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::invalid(format!(
            "pairs reference documents missing from the corpus: {}",
            unknown.join(", ")
        )));
    }

    let base_docs = embed_corpus(embedder, corpus)?;
    let base_queries: Vec<Vec<f64>> = pairs
        .iter()
        .map(|p| embedder.embed(&p.query))
        .collect::<Result<_>>()?;
    let pair_doc_rows: Vec<usize> = pairs.iter().map(|p| doc_index[p.doc_id.as_str()]).collect();

    let dims_base = embedder.dims();
    let dims_out = config.dims_out;
    let mut params = EncoderParams::random(dims_base, dims_out, config.tied, config.seed);
    let mut adam_q = AdamState::new(dims_base * dims_out);
    let mut adam_d = AdamState::new(dims_base * dims_out);

    let epochs = config.epochs.unwrap_or_else(|| epochs_for_corpus(corpus.len()));
    let mut log = Vec::new();
    let mut step = 0usize;

    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        DetRng::with_stream(config.seed, 0x5155 + epoch as u64).shuffle(&mut order);

        for batch in order.chunks(config.batch_size) {
            if config.objective == Objective::Dpr && batch.len() < 2 {
                continue; // a trailing singleton has no in-batch negative
            }
            step += 1;
            let lr = warmup_lr(step, config.learning_rate, config.warmup_steps);

            let mut grad_wq = vec![0.0; dims_base * dims_out];
            let mut grad_wd = vec![0.0; dims_base * dims_out];
            // diverged weights surface as non-finite encodings before the
            // loss ever computes; report that as divergence at this step
            let diverged = |vecs: &[Vec<f64>]| vecs.iter().flatten().any(|x| !x.is_finite());
            let loss = match config.objective {
                Objective::Dpr => {
                    let query_vecs: Vec<Vec<f64>> = batch
                        .iter()
                        .map(|&i| params.encode_query(&base_queries[i]))
                        .collect::<Result<_>>()?;
                    let doc_vecs: Vec<Vec<f64>> = batch
                        .iter()
                        .map(|&i| params.encode_doc(base_docs.row(pair_doc_rows[i])))
                        .collect::<Result<_>>()?;
                    if diverged(&query_vecs) || diverged(&doc_vecs) {
                        return Err(Error::NonFinite { step });
                    }
                    let (loss, grad_q, grad_d) = divergence_at(dpr_loss(&query_vecs, &doc_vecs), step)?;
                    for (slot, &i) in batch.iter().enumerate() {
                        accumulate_outer(&mut grad_wq, &base_queries[i], &grad_q[slot], dims_out);
                        accumulate_outer(&mut grad_wd, base_docs.row(pair_doc_rows[i]), &grad_d[slot], dims_out);
                    }
                    loss
                }
                Objective::Gpl => {
                    let teacher = teacher.expect("checked above");
                    // Encode the whole corpus under the current student so
                    // mining sees up-to-date scores.
                    let mut encoded_docs = EmbeddingMatrix::new(dims_out);
                    for i in 0..base_docs.len() {
                        let row = params.encode_doc(base_docs.row(i))?;
                        if diverged(std::slice::from_ref(&row)) {
                            return Err(Error::NonFinite { step });
                        }
                        encoded_docs.push_row(base_docs.doc_id(i).to_string(), row)?;
                    }
                    let mut student = Vec::with_capacity(batch.len());
                    let mut teacher_margins = Vec::with_capacity(batch.len());
                    let mut triples = Vec::with_capacity(batch.len());
                    for &i in batch {
                        let pair = &pairs[i];
                        let q_enc = params.encode_query(&base_queries[i])?;
                        if q_enc.iter().any(|x| !x.is_finite()) {
                            return Err(Error::NonFinite { step });
                        }
                        let neg_id = mine_negative_from_encoded(&q_enc, &pair.doc_id, &encoded_docs)?;
                        let neg_row = doc_index[neg_id.as_str()];
                        let pos_row = pair_doc_rows[i];
                        let pos_enc = encoded_docs.row(pos_row);
                        let neg_enc = encoded_docs.row(neg_row);
                        student.push(dot_score(&q_enc, pos_enc)? - dot_score(&q_enc, neg_enc)?);
                        let pos_text = corpus.docs[pos_row].presented_text();
                        let neg_text = corpus.docs[neg_row].presented_text();
                        teacher_margins
                            .push(teacher.score(&pair.query, &pos_text)? - teacher.score(&pair.query, &neg_text)?);
                        triples.push((i, q_enc, pos_row, neg_row));
                    }
                    let (loss, grad_margins) = divergence_at(margin_mse_loss(&student, &teacher_margins), step)?;
                    for (slot, (i, q_enc, pos_row, neg_row)) in triples.iter().enumerate() {
                        let g = grad_margins[slot];
                        if g == 0.0 {
                            continue;
                        }
                        let pos_enc = encoded_docs.row(*pos_row);
                        let neg_enc = encoded_docs.row(*neg_row);
                        let dq: Vec<f64> = pos_enc.iter().zip(neg_enc).map(|(p, n)| g * (p - n)).collect();
                        let dpos: Vec<f64> = q_enc.iter().map(|q| g * q).collect();
                        let dneg: Vec<f64> = q_enc.iter().map(|q| -g * q).collect();
                        accumulate_outer(&mut grad_wq, &base_queries[*i], &dq, dims_out);
                        accumulate_outer(&mut grad_wd, base_docs.row(*pos_row), &dpos, dims_out);
                        accumulate_outer(&mut grad_wd, base_docs.row(*neg_row), &dneg, dims_out);
                    }
                    loss
                }
            };

            if !loss.is_finite() {
                return Err(Error::NonFinite { step });
            }

            if params.tied {
                let combined: Vec<f64> = grad_wq.iter().zip(&grad_wd).map(|(a, b)| a + b).collect();
                match config.optimizer {
                    Optimizer::Sgd => {
                        for (w, g) in params.w_q.iter_mut().zip(&combined) {
                            *w -= lr * g;
                        }
                    }
                    Optimizer::Adam => adam_q.apply(&mut params.w_q, &combined, lr),
                }
                params.w_d.copy_from_slice(&params.w_q);
            } else {
                match config.optimizer {
                    Optimizer::Sgd => {
                        for (w, g) in params.w_q.iter_mut().zip(&grad_wq) {
                            *w -= lr * g;
                        }
                        for (w, g) in params.w_d.iter_mut().zip(&grad_wd) {
                            *w -= lr * g;
                        }
                    }
                    Optimizer::Adam => {
                        adam_q.apply(&mut params.w_q, &grad_wq, lr);
                        adam_d.apply(&mut params.w_d, &grad_wd, lr);
                    }
                }
            }

            log.push(TrainLogEntry { step, lr, loss });
        }
    }

    Ok((params, log))
}

/// Metadata stored next to encoder weights.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EncoderMeta {
    pub dims_base: usize,
    pub dims_out: usize,
    pub tied: bool,
    pub objective: String,
    pub seed: u64,
}

/// Persist encoder weights as flat little-endian float32 (query matrix, then
/// the document matrix when untied) plus a `<path>.json` sidecar.
pub fn write_encoder(params: &EncoderParams, objective: &str, seed: u64, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    for &v in &params.w_q {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    if !params.tied {
        for &v in &params.w_d {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let meta = EncoderMeta {
        dims_base: params.dims_base,
        dims_out: params.dims_out,
        tied: params.tied,
        objective: objective.to_string(),
        seed,
    };
    let sidecar = format!("{}.json", path.display());
    std::fs::write(&sidecar, serde_json::to_string_pretty(&meta).expect("meta serializes"))
        .map_err(|e| Error::io(sidecar, e))
}

pub fn read_encoder(path: impl AsRef<Path>) -> Result<(EncoderParams, EncoderMeta)> {
    let path = path.as_ref();
    let sidecar = format!("{}.json", path.display());
    let meta: EncoderMeta = serde_json::from_str(
        &std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?,
    )
    .map_err(|e| Error::parse(&sidecar, 0, e.to_string()))?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let matrix_len = meta.dims_base * meta.dims_out;
    let expected = matrix_len * 4 * if meta.tied { 1 } else { 2 };
    if bytes.len() != expected {
        return Err(Error::parse(
            path,
            0,
            format!("expected {expected} bytes for the sidecar shape, found {}", bytes.len()),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let (w_q, w_d) = if meta.tied {
        (values.clone(), values)
    } else {
        let w_q = values[..matrix_len].to_vec();
        let w_d = values[matrix_len..].to_vec();
        (w_q, w_d)
    };
    Ok((
        EncoderParams {
            dims_base: meta.dims_base,
            dims_out: meta.dims_out,
            tied: meta.tied,
            w_q,
            w_d,
        },
        meta,
    ))
}
