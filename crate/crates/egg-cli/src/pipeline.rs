//! Pipeline stages over a run directory.
//!
//! Layout: `corpus/{corpus.jsonl,queries.jsonl,qrels.tsv}` from ingest, then
//! `prototypes.jsonl`, `synthetic.jsonl`, `encoder.bin` (+ sidecar and
//! `train_log.csv`), `report.json`, and `manifest.json`. Every stage records
//! its inputs and outputs (with content hashes) in the manifest, which is
//! written last.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use egg_core::corpus::{self, Corpus, Document};
use egg_core::embed::EmbedBackend;
use egg_core::eval::evaluate_run;
use egg_core::genclient::{GenerationBackend, RemoteEndpoint, SamplingParams};
use egg_core::intent::{builtin_intents, find_intent, load_intent_catalog, IclSeparator, IntentSpec};
use egg_core::synth::{self, SynthOptions};
use egg_core::toy;
use egg_core::train::{
    read_encoder, train_retriever, write_encoder, write_train_log, EncoderParams, Objective, Optimizer,
    RemoteCrossEncoder, TeacherScorer, TrainConfig,
};

use crate::config::{Mode, ResolvedConfig};
use crate::manifest::{file_record, unix_now, FileRecord, RunManifest, StageRecord};

/// A run directory plus its resolved configuration.
pub struct RunContext {
    pub run_dir: PathBuf,
    pub config: ResolvedConfig,
}

impl RunContext {
    pub fn new(run_dir: impl Into<PathBuf>, config: ResolvedConfig) -> Result<Self> {
        config.validate()?;
        let run_dir = run_dir.into();
        std::fs::create_dir_all(&run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
        Ok(Self { run_dir, config })
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.run_dir.join("corpus")
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.corpus_dir().join("corpus.jsonl")
    }

    pub fn queries_path(&self) -> PathBuf {
        self.corpus_dir().join("queries.jsonl")
    }

    pub fn qrels_path(&self) -> PathBuf {
        self.corpus_dir().join("qrels.tsv")
    }

    pub fn prototypes_path(&self) -> PathBuf {
        self.run_dir.join("prototypes.jsonl")
    }

    pub fn synthetic_path(&self) -> PathBuf {
        self.run_dir.join("synthetic.jsonl")
    }

    pub fn encoder_path(&self) -> PathBuf {
        self.run_dir.join("encoder.bin")
    }

    pub fn train_log_path(&self) -> PathBuf {
        self.run_dir.join("train_log.csv")
    }

    pub fn report_path(&self) -> PathBuf {
        self.run_dir.join("report.json")
    }

    fn record_stage(&self, stage: &str, started: u64, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<()> {
        let to_records = |paths: &[PathBuf]| -> Result<Vec<FileRecord>> {
            paths.iter().filter(|p| p.exists()).map(file_record).collect()
        };
        let record = StageRecord {
            stage: stage.to_string(),
            seed: self.config.seed,
            started_at_unix: started,
            finished_at_unix: unix_now(),
            inputs: to_records(inputs)?,
            outputs: to_records(outputs)?,
        };
        let mut manifest = RunManifest::load_or_new(&self.config, &self.run_dir);
        manifest.upsert_stage(record);
        manifest.write(&self.run_dir)
    }

    fn load_run_corpus(&self) -> Result<Corpus> {
        let path = self.corpus_path();
        if !path.exists() {
            bail!("no ingested corpus at {} — run the ingest stage first", path.display());
        }
        Ok(corpus::load_corpus(&path)?)
    }

    fn intent(&self) -> Result<IntentSpec> {
        let catalog = match &self.config.intent_catalog {
            Some(path) => load_intent_catalog(path)?,
            None => builtin_intents(),
        };
        find_intent(&catalog, &self.config.intent).cloned().ok_or_else(|| {
            let known: Vec<String> = catalog
                .iter()
                .map(|i| format!("{} (e_q: {})", i.task_name, i.e_q))
                .collect();
            anyhow!(
                "unknown intent `{}`; available: {}",
                self.config.intent,
                known.join(", ")
            )
        })
    }

    fn gen_backend(&self) -> Result<GenerationBackend> {
        match self.config.gen.backend.as_str() {
            "mock" => Ok(GenerationBackend::mock(0)),
            "remote" => {
                let remote_cfg = self.config.gen.remote.as_ref().expect("validated");
                let mut remote = RemoteEndpoint::new(
                    remote_cfg.url.clone(),
                    remote_cfg.model.clone(),
                    Duration::from_secs(remote_cfg.timeout_s),
                )?;
                remote.auth_token_env = Some(remote_cfg.auth_token_env.clone());
                remote.max_retries = remote_cfg.max_retries;
                remote.max_n_per_request = remote_cfg.max_n_per_request;
                remote.log_prompts = self.config.gen.log_prompts;
                Ok(GenerationBackend::Remote(remote))
            }
            other => bail!("unknown generation backend `{other}`"),
        }
    }

    fn embed_backend(&self) -> Result<EmbedBackend> {
        match self.config.embed.backend.as_str() {
            "hash" => Ok(EmbedBackend::hash(self.config.embed.dims)),
            "remote" => {
                let remote_cfg = self.config.embed.remote.as_ref().expect("validated");
                let mut remote = egg_core::embed::RemoteEmbedder::new(
                    remote_cfg.url.clone(),
                    remote_cfg.model.clone(),
                    self.config.embed.dims,
                    Duration::from_secs(remote_cfg.timeout_s),
                )?;
                remote.auth_token_env = Some(remote_cfg.auth_token_env.clone());
                remote.max_retries = remote_cfg.max_retries;
                Ok(EmbedBackend::Remote(remote))
            }
            other => bail!("unknown embedding backend `{other}`"),
        }
    }

    fn teacher(&self) -> Result<Option<TeacherScorer>> {
        match self.config.train.teacher.as_deref() {
            None => Ok(None),
            Some("lexical") => Ok(Some(TeacherScorer::LexicalMock)),
            Some("remote") => {
                let remote_cfg = self.config.train.teacher_remote.as_ref().expect("validated");
                let remote = RemoteCrossEncoder::new(
                    remote_cfg.url.clone(),
                    remote_cfg.model.clone(),
                    Duration::from_secs(remote_cfg.timeout_s),
                )?;
                Ok(Some(TeacherScorer::Remote(remote)))
            }
            Some(other) => bail!("unknown teacher `{other}`"),
        }
    }

    fn sampling_params(&self) -> SamplingParams {
        SamplingParams {
            temperature: self.config.gen.temperature,
            top_k: self.config.gen.top_k,
            top_p: self.config.gen.top_p,
            n: 1,
            max_new_tokens: self.config.gen.max_new_tokens,
            seed: self.config.seed,
        }
    }

    fn synth_options(&self) -> SynthOptions {
        SynthOptions {
            checkpoint: Some(self.run_dir.join(".generate.checkpoint.jsonl")),
            concurrency: self.config.gen.concurrency,
            icl_separator: if self.config.gen.icl_newline {
                IclSeparator::Newline
            } else {
                IclSeparator::Space
            },
        }
    }

    fn train_config(&self) -> Result<TrainConfig> {
        let objective = match self.config.train.objective.as_str() {
            "dpr" => Objective::Dpr,
            "gpl" => Objective::Gpl,
            other => bail!("unknown objective `{other}`"),
        };
        let optimizer = match self.config.train.optimizer.as_str() {
            "sgd" => Optimizer::Sgd,
            "adam" => Optimizer::Adam,
            other => bail!("unknown optimizer `{other}`"),
        };
        Ok(TrainConfig {
            batch_size: self.config.train.batch_size,
            learning_rate: self.config.train.learning_rate,
            warmup_steps: self.config.train.warmup_steps,
            epochs: self.config.train.epochs,
            seed: self.config.seed,
            objective,
            optimizer,
            dims_out: self.config.train.dims_out,
            tied: self.config.train.tied,
        })
    }
}

/// Ingest: truncate document text, cap the corpus size, and copy the task's
/// files into the run directory.
pub fn stage_ingest(
    ctx: &RunContext,
    corpus_src: &Path,
    queries_src: Option<&Path>,
    qrels_src: Option<&Path>,
) -> Result<()> {
    let started = unix_now();
    let raw = corpus::load_corpus(corpus_src)?;
    let truncated = Corpus {
        docs: raw
            .docs
            .into_iter()
            .map(|d| Document {
                text: corpus::truncate_text(&d.text, ctx.config.corpus.max_tokens),
                ..d
            })
            .collect(),
        source_path: raw.source_path,
    };
    let sampled = corpus::sample_corpus(&truncated, ctx.config.corpus.sample_cap, ctx.config.seed);
    log::info!(
        "ingest: {} documents ({} after sampling)",
        truncated.len(),
        sampled.len()
    );

    std::fs::create_dir_all(ctx.corpus_dir()).with_context(|| format!("creating {}", ctx.corpus_dir().display()))?;
    corpus::write_corpus(&sampled, ctx.corpus_path())?;

    let mut inputs = vec![corpus_src.to_path_buf()];
    let mut outputs = vec![ctx.corpus_path()];
    if let Some(path) = queries_src {
        let queries = corpus::load_queries(path)?;
        corpus::write_queries(&queries, ctx.queries_path())?;
        inputs.push(path.to_path_buf());
        outputs.push(ctx.queries_path());
    }
    if let Some(path) = qrels_src {
        let qrels = corpus::load_qrels(path)?;
        corpus::write_qrels(&qrels, ctx.qrels_path())?;
        inputs.push(path.to_path_buf());
        outputs.push(ctx.qrels_path());
    }
    ctx.record_stage("ingest", started, &inputs, &outputs)
}

/// Generate one prototype query per document.
pub fn stage_prototypes(ctx: &RunContext) -> Result<()> {
    let started = unix_now();
    let corpus = ctx.load_run_corpus()?;
    let intent = ctx.intent()?;
    let backend = ctx.gen_backend()?;
    let prototypes = synth::generate_prototypes(
        &corpus,
        &intent,
        &backend,
        &ctx.sampling_params(),
        &SynthOptions {
            checkpoint: Some(ctx.run_dir.join(".prototypes.checkpoint.jsonl")),
            ..ctx.synth_options()
        },
    )?;
    synth::write_prototypes(&prototypes, ctx.prototypes_path())?;
    log::info!("prototypes: {} generated", prototypes.len());
    ctx.record_stage(
        "prototypes",
        started,
        &[ctx.corpus_path()],
        &[ctx.prototypes_path()],
    )
}

/// Generate the synthetic dataset in the configured mode.
pub fn stage_generate(ctx: &RunContext) -> Result<()> {
    let started = unix_now();
    let corpus = ctx.load_run_corpus()?;
    let intent = ctx.intent()?;
    let backend = ctx.gen_backend()?;
    let params = ctx.sampling_params();
    let opts = ctx.synth_options();
    let n = ctx.config.gen.n;

    let mut inputs = vec![ctx.corpus_path()];
    let pairs = match ctx.config.mode {
        Mode::Flan => synth::generate_queries_flan(&corpus, &intent, &backend, &params, n, &opts)?,
        Mode::ZeroShot => synth::generate_queries_zero_shot(&corpus, &backend, &params, n, &opts)?,
        Mode::PrototypeOnly => synth::generate_prototype_only(&corpus, &intent, &backend, &params, n, &opts)?,
        Mode::LlamaIcl => {
            let prototypes_path = ctx.prototypes_path();
            if !prototypes_path.exists() {
                bail!(
                    "llama-icl mode needs {} — run the gen-prototypes stage first",
                    prototypes_path.display()
                );
            }
            inputs.push(prototypes_path.clone());
            let prototypes = synth::read_prototypes(&prototypes_path)?;
            let embeddings = egg_core::embed::embed_corpus(&ctx.embed_backend()?, &corpus)?;
            // keep the similarity matrix next to the pairs it selected
            egg_core::embed::write_matrix(&embeddings, ctx.run_dir.join("embeddings.bin"))?;
            synth::generate_queries_llama(
                &corpus,
                &intent,
                &backend,
                &prototypes,
                &embeddings,
                ctx.config.gen.m,
                n,
                &params,
                &opts,
            )?
        }
        Mode::FewShot => {
            let examples_file = ctx.config.gen.examples_file.as_ref().expect("validated");
            inputs.push(PathBuf::from(examples_file));
            let examples = synth::read_examples(examples_file)?;
            synth::generate_queries_fewshot(&corpus, &intent, &backend, &examples, &params, n, &opts)?
        }
    };

    let kept = if ctx.config.gen.filter {
        synth::filter_pairs(&pairs, &corpus)
    } else {
        pairs.clone()
    };
    log::info!("generate: {} pairs ({} after filtering)", pairs.len(), kept.len());
    synth::write_dataset(&kept, ctx.synthetic_path())?;
    // the checkpoint only matters while the stage is incomplete
    let _ = std::fs::remove_file(ctx.run_dir.join(".generate.checkpoint.jsonl"));
    let mut outputs = vec![ctx.synthetic_path()];
    if ctx.config.mode == Mode::LlamaIcl {
        outputs.push(ctx.run_dir.join("embeddings.bin"));
        outputs.push(ctx.run_dir.join("embeddings.bin.json"));
    }
    ctx.record_stage("generate", started, &inputs, &outputs)
}

/// Train the dual encoder on the generated pairs.
pub fn stage_train(ctx: &RunContext) -> Result<()> {
    let started = unix_now();
    let synthetic_path = ctx.synthetic_path();
    if !synthetic_path.exists() {
        bail!(
            "no synthetic dataset at {} — run the gen-queries stage first",
            synthetic_path.display()
        );
    }
    let corpus = ctx.load_run_corpus()?;
    let pairs = synth::read_dataset(&synthetic_path)?;
    let train_config = ctx.train_config()?;
    let teacher = ctx.teacher()?;
    let embedder = ctx.embed_backend()?;

    let (params, log) = train_retriever(&pairs, &corpus, &train_config, teacher.as_ref(), &embedder)?;
    write_encoder(&params, &ctx.config.train.objective, ctx.config.seed, ctx.encoder_path())?;
    write_train_log(&log, ctx.train_log_path())?;
    if let (Some(first), Some(last)) = (log.first(), log.last()) {
        log::info!(
            "train: {} steps, loss {:.4} -> {:.4}",
            log.len(),
            first.loss,
            last.loss
        );
    }
    ctx.record_stage(
        "train",
        started,
        &[synthetic_path, ctx.corpus_path()],
        &[
            ctx.encoder_path(),
            PathBuf::from(format!("{}.json", ctx.encoder_path().display())),
            ctx.train_log_path(),
        ],
    )
}

/// Evaluate the trained encoder (or the identity baseline) on the ingested
/// queries and judgments. Returns the aggregate nDCG.
pub fn stage_eval(ctx: &RunContext, baseline: bool) -> Result<f64> {
    let started = unix_now();
    let corpus = ctx.load_run_corpus()?;
    for (path, what) in [(ctx.queries_path(), "queries"), (ctx.qrels_path(), "qrels")] {
        if !path.exists() {
            bail!("no ingested {what} at {} — re-run ingest with the task's files", path.display());
        }
    }
    let queries = corpus::load_queries(ctx.queries_path())?;
    let qrels = corpus::load_qrels(ctx.qrels_path())?;
    let embedder = ctx.embed_backend()?;

    let mut inputs = vec![ctx.corpus_path(), ctx.queries_path(), ctx.qrels_path()];
    let encoder = if baseline {
        EncoderParams::identity(ctx.config.embed.dims)
    } else {
        let encoder_path = ctx.encoder_path();
        if !encoder_path.exists() {
            bail!("no encoder at {} — run the train stage first", encoder_path.display());
        }
        inputs.push(encoder_path.clone());
        let (params, meta) = read_encoder(&encoder_path)?;
        if meta.dims_base != ctx.config.embed.dims {
            bail!(
                "encoder was trained on {}-dim base embeddings but embed.dims is {}",
                meta.dims_base,
                ctx.config.embed.dims
            );
        }
        params
    };

    let report = evaluate_run(&queries, &qrels, &corpus, &encoder, &embedder, ctx.config.eval.k)?;
    std::fs::write(ctx.report_path(), report.to_json()).with_context(|| "writing report.json")?;
    let mut outputs = vec![ctx.report_path()];
    if ctx.config.eval.per_query {
        let tsv_path = ctx.run_dir.join("per_query.tsv");
        std::fs::write(&tsv_path, report.per_query_tsv()).with_context(|| "writing per_query.tsv")?;
        outputs.push(tsv_path);
    }
    print!("{}", report.render_table());
    ctx.record_stage("eval", started, &inputs, &outputs)?;
    Ok(report.aggregate_ndcg)
}

/// Run every stage in order. Prototypes only run for the mode that needs
/// them.
pub fn run_all(ctx: &RunContext, corpus_src: &Path, queries_src: &Path, qrels_src: &Path) -> Result<f64> {
    stage_ingest(ctx, corpus_src, Some(queries_src), Some(qrels_src)).context("stage ingest")?;
    if ctx.config.mode == Mode::LlamaIcl {
        stage_prototypes(ctx).context("stage prototypes")?;
    }
    stage_generate(ctx).context("stage generate")?;
    stage_train(ctx).context("stage train")?;
    stage_eval(ctx, false).context("stage eval")
}

/// Export a synthetic dataset as BeIR-style queries plus qrels.
pub fn export_dataset(dataset: &Path, out_dir: &Path) -> Result<()> {
    let pairs = synth::read_dataset(dataset)?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    synth::export_beir(&pairs, out_dir.join("queries.jsonl"), out_dir.join("qrels.tsv"))?;
    log::info!("export: {} pairs -> {}", pairs.len(), out_dir.display());
    Ok(())
}

/// Write the bundled toy task's files.
pub fn make_toy(out_dir: &Path, seed: u64) -> Result<()> {
    let task = toy::generate_toy_task(seed);
    toy::write_toy_task(&task, out_dir)?;
    log::info!(
        "toy task: {} docs, {} queries -> {}",
        task.corpus.len(),
        task.queries.len(),
        out_dir.display()
    );
    Ok(())
}
