use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use egg_cli::config::{Mode, Preset, RemoteSection, ResolvedConfig};
use egg_cli::pipeline::{self, RunContext};

/// Compile search intents into synthetic queries, train a small dual-encoder
/// retriever on them, and score it with nDCG@10.
#[derive(Parser)]
#[command(name = "egg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Increase log verbosity (-v info, -vv debug, -vvv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Load a BeIR-format task into a run directory, truncating and sampling.
    Ingest {
        /// corpus.jsonl with {"_id","title","text"} lines.
        #[arg(long)]
        corpus: PathBuf,
        /// queries.jsonl with {"_id","text"} lines.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// TSV qrels with a `query-id  corpus-id  score` header.
        #[arg(long)]
        qrels: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Generate one prototype query per document (the in-context stage 1).
    GenPrototypes {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Generate the synthetic training dataset in the configured mode.
    GenQueries {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the dual encoder on the generated pairs.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate retrieval quality against the ingested qrels.
    Eval {
        /// Also write per_query.tsv (query_id, ndcg).
        #[arg(long)]
        per_query: bool,
        /// Score the identity encoder instead of the trained one.
        #[arg(long)]
        baseline: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run ingest, generation, training, and evaluation in one go.
    RunAll {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Export a synthetic dataset as BeIR-style queries.jsonl plus qrels.tsv.
    Export {
        /// A synthetic.jsonl produced by gen-queries.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write the bundled 4-cluster toy task to a directory.
    MakeToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0xE66)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    Paper,
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Flan,
    LlamaIcl,
    ZeroShot,
    FewShot,
    PrototypeOnly,
}

impl From<ModeArg> for Mode {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::Flan => Mode::Flan,
            ModeArg::LlamaIcl => Mode::LlamaIcl,
            ModeArg::ZeroShot => Mode::ZeroShot,
            ModeArg::FewShot => Mode::FewShot,
            ModeArg::PrototypeOnly => Mode::PrototypeOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Mock,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ObjectiveArg {
    Dpr,
    Gpl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TeacherArg {
    Lexical,
    Remote,
}

/// Flags shared by every stage command. Precedence: preset, then `--config`
/// file, then these flags.
#[derive(Args)]
struct CommonArgs {
    /// Directory holding this run's artifacts and manifest.
    #[arg(long)]
    run_dir: PathBuf,

    /// TOML or JSON config file whose keys mirror the manifest's snapshot.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Constant set to start from.
    #[arg(long, value_enum, default_value = "desk")]
    preset: PresetArg,

    #[arg(long)]
    seed: Option<u64>,

    /// Generation mode for gen-queries / run-all.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,

    /// Text-generation backend.
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,

    /// Intent task name or query description (e.g. "Fact Checking" or "Claim").
    #[arg(long)]
    intent: Option<String>,

    /// TOML/JSON intent catalog replacing the built-ins.
    #[arg(long)]
    intent_catalog: Option<PathBuf>,

    /// Queries generated per document.
    #[arg(long)]
    n: Option<u32>,

    /// In-context examples per prompt.
    #[arg(long)]
    m: Option<usize>,

    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    top_k: Option<u32>,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    max_new_tokens: Option<u32>,

    /// Whitespace-token cap on document text at ingest.
    #[arg(long)]
    max_tokens: Option<usize>,

    /// Corpus size cap (seeded uniform sample above it).
    #[arg(long)]
    cap: Option<usize>,

    /// Base embedding dimensions.
    #[arg(long)]
    dims: Option<usize>,

    /// Encoder output dimensions.
    #[arg(long)]
    dims_out: Option<usize>,

    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,

    /// Tie the query and document matrices.
    #[arg(long)]
    tied: bool,

    /// Teacher scorer for the gpl objective.
    #[arg(long, value_enum)]
    teacher: Option<TeacherArg>,

    /// Ranking cutoff for evaluation.
    #[arg(long)]
    k: Option<usize>,

    /// Keep every generated pair (disable the duplicate/copy filter).
    #[arg(long)]
    no_filter: bool,

    /// Separate in-context blocks with newlines instead of single spaces.
    #[arg(long)]
    icl_newline: bool,

    /// Fixed example file for the few-shot baseline.
    #[arg(long)]
    examples_file: Option<PathBuf>,

    /// Concurrent generation requests.
    #[arg(long)]
    concurrency: Option<usize>,

    /// Log full prompt text instead of prompt hashes.
    #[arg(long)]
    log_prompts: bool,

    /// Remote endpoint base URL (OpenAI-compatible).
    #[arg(long)]
    remote_url: Option<String>,

    /// Remote model name.
    #[arg(long)]
    remote_model: Option<String>,
}

impl CommonArgs {
    fn resolve(&self) -> Result<ResolvedConfig> {
        let preset = match self.preset {
            PresetArg::Paper => Preset::Paper,
            PresetArg::Desk => Preset::Desk,
        };
        let mut config = ResolvedConfig::preset(preset);
        if let Some(path) = &self.config {
            config = config.apply_file(path)?;
        }

        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(mode) = self.mode {
            config.mode = mode.into();
        }
        if let Some(backend) = self.backend {
            config.gen.backend = match backend {
                BackendArg::Mock => "mock",
                BackendArg::Remote => "remote",
            }
            .to_string();
        }
        if let Some(intent) = &self.intent {
            config.intent = intent.clone();
        }
        if let Some(catalog) = &self.intent_catalog {
            config.intent_catalog = Some(catalog.display().to_string());
        }
        if let Some(n) = self.n {
            config.gen.n = n;
        }
        if let Some(m) = self.m {
            config.gen.m = m;
        }
        if let Some(temperature) = self.temperature {
            config.gen.temperature = temperature;
        }
        if let Some(top_k) = self.top_k {
            config.gen.top_k = top_k;
        }
        if let Some(top_p) = self.top_p {
            config.gen.top_p = top_p;
        }
        if let Some(max_new_tokens) = self.max_new_tokens {
            config.gen.max_new_tokens = max_new_tokens;
        }
        if let Some(max_tokens) = self.max_tokens {
            config.corpus.max_tokens = max_tokens;
        }
        if let Some(cap) = self.cap {
            config.corpus.sample_cap = cap;
        }
        if let Some(dims) = self.dims {
            config.embed.dims = dims;
        }
        if let Some(dims_out) = self.dims_out {
            config.train.dims_out = dims_out;
        }
        if let Some(batch_size) = self.batch_size {
            config.train.batch_size = batch_size;
        }
        if let Some(lr) = self.lr {
            config.train.learning_rate = lr;
        }
        if let Some(warmup) = self.warmup {
            config.train.warmup_steps = warmup;
        }
        if let Some(epochs) = self.epochs {
            config.train.epochs = Some(epochs);
        }
        if let Some(objective) = self.objective {
            config.train.objective = match objective {
                ObjectiveArg::Dpr => "dpr",
                ObjectiveArg::Gpl => "gpl",
            }
            .to_string();
        }
        if let Some(optimizer) = self.optimizer {
            config.train.optimizer = match optimizer {
                OptimizerArg::Sgd => "sgd",
                OptimizerArg::Adam => "adam",
            }
            .to_string();
        }
        if self.tied {
            config.train.tied = true;
        }
        if let Some(teacher) = self.teacher {
            config.train.teacher = Some(
                match teacher {
                    TeacherArg::Lexical => "lexical",
                    TeacherArg::Remote => "remote",
                }
                .to_string(),
            );
        }
        if let Some(k) = self.k {
            config.eval.k = k;
        }
        if self.no_filter {
            config.gen.filter = false;
        }
        if self.icl_newline {
            config.gen.icl_newline = true;
        }
        if let Some(examples_file) = &self.examples_file {
            config.gen.examples_file = Some(examples_file.display().to_string());
        }
        if let Some(concurrency) = self.concurrency {
            config.gen.concurrency = concurrency;
        }
        if self.log_prompts {
            config.gen.log_prompts = true;
        }
        if self.remote_url.is_some() || self.remote_model.is_some() {
            config.gen.remote = Some(RemoteSection {
                url: self.remote_url.clone().unwrap_or_default(),
                model: self.remote_model.clone().unwrap_or_default(),
                auth_token_env: "EGG_AUTH_TOKEN".to_string(),
                timeout_s: 60,
                max_retries: 3,
                max_n_per_request: None,
            });
        }

        Ok(config)
    }

    fn context(&self) -> Result<RunContext> {
        RunContext::new(&self.run_dir, self.resolve()?)
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level.to_string())).init();

    match cli.command {
        Command::Ingest {
            corpus,
            queries,
            qrels,
            common,
        } => {
            let ctx = common.context()?;
            pipeline::stage_ingest(&ctx, &corpus, queries.as_deref(), qrels.as_deref()).context("stage ingest")?;
        }
        Command::GenPrototypes { common } => {
            let ctx = common.context()?;
            pipeline::stage_prototypes(&ctx).context("stage prototypes")?;
        }
        Command::GenQueries { common } => {
            let ctx = common.context()?;
            pipeline::stage_generate(&ctx).context("stage generate")?;
        }
        Command::Train { common } => {
            let ctx = common.context()?;
            pipeline::stage_train(&ctx).context("stage train")?;
        }
        Command::Eval {
            per_query,
            baseline,
            common,
        } => {
            let mut config = common.resolve()?;
            if per_query {
                config.eval.per_query = true;
            }
            let ctx = RunContext::new(&common.run_dir, config)?;
            pipeline::stage_eval(&ctx, baseline).context("stage eval")?;
        }
        Command::RunAll {
            corpus,
            queries,
            qrels,
            common,
        } => {
            let ctx = common.context()?;
            pipeline::run_all(&ctx, &corpus, &queries, &qrels)?;
        }
        Command::Export { dataset, out_dir } => {
            pipeline::export_dataset(&dataset, &out_dir).context("export")?;
        }
        Command::MakeToy { out, seed } => {
            pipeline::make_toy(&out, seed).context("make-toy")?;
        }
    }
    Ok(())
}
