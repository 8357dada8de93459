use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use histkit_core::adapt::{
    distill_bidirectional, train, AdapterModel, ApplyTo, Objective, PairSet, Strategy, TrainConfig,
};
use histkit_core::corpus::{cluster_articles, load_articles, select_articles_with_summary, Article, SelectionConfig};
use histkit_core::embedstore::{
    self, embed_texts, EmbeddingMatrix, EmbeddingProvider, FileProvider, RemoteProvider, StubProvider,
};
use histkit_core::evalsuite::{
    bitext_accuracy_with, build_bitext_task_with, triplet_accuracy, zero_shot_classify, BitextTask, LabeledText,
    TaskOptions, Triplet, DEFAULT_TEMPLATE,
};
use histkit_core::retry::RetryPolicy;
use histkit_core::translate::pipeline::read_pairs;
use histkit_core::translate::{translate_corpus, HttpChatClient, PipelineConfig, SentencePair, TargetLang};
use histkit_core::Execution;
use histkit_server::{build_index, read_manifest, AppState, IndexSpec, Payload, ServerConfig, SideInput};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "histkit", version, about = "Parallel historical corpora, bitext mining evaluation and embedding adapters")]
struct Cli {
    /// Run every data-parallel kernel sequentially.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster articles by topic vector and pick representatives.
    Select(SelectArgs),
    /// Translate selected articles with an OpenAI-compatible chat endpoint.
    Translate(TranslateArgs),
    /// Build a bitext mining task from a sentence-pair file.
    BuildTask(BuildTaskArgs),
    /// Embed sentences into a `.hxem` matrix.
    Embed(EmbedArgs),
    /// Train a linear adapter over frozen embeddings.
    Train(TrainArgs),
    /// Run an evaluation protocol.
    #[command(subcommand)]
    Evaluate(EvaluateCommand),
    /// Build a search index directory.
    BuildIndex(BuildIndexArgs),
    /// Serve the search HTTP API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 2000)]
    k: usize,
    #[arg(long, default_value_t = 20)]
    min_cluster_size: usize,
    #[arg(long, default_value_t = 5)]
    min_sent: usize,
    #[arg(long, default_value_t = 20)]
    max_sent: usize,
    #[arg(long, default_value_t = 3)]
    extra: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TranslateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "de,fr,en")]
    langs: Vec<TargetLang>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    retries: u32,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// Base backoff between attempts.
    #[arg(long, default_value_t = 500)]
    retry_delay_ms: u64,
}

#[derive(Args)]
struct BuildTaskArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, default_value_t = 0.85)]
    threshold: f64,
    #[arg(long)]
    casefold: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderKind {
    Stub,
    Remote,
    File,
}

#[derive(Args, Clone)]
struct ProviderArgs {
    #[arg(long, value_enum, default_value = "stub")]
    provider: ProviderKind,
    #[arg(long, default_value = "stub-minilm")]
    model: String,
    /// Stub dimension.
    #[arg(long, default_value_t = 384)]
    dim: usize,
    /// Precomputed `{"text", "embedding"}` JSONL for the file provider.
    #[arg(long)]
    vectors: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PairSide {
    Lb,
    Tgt,
}

#[derive(Args)]
struct EmbedArgs {
    #[command(flatten)]
    provider: ProviderArgs,
    /// `{"id", "text"}` JSONL, or a sentence-pair file with `--side`.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum)]
    side: Option<PairSide>,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    objective: ObjectiveArg,
    #[arg(long, value_enum)]
    strategy: StrategyArg,
    /// Historical pair files; repeat to concatenate.
    #[arg(long)]
    hist: Vec<PathBuf>,
    /// Modern pair files; repeating a file duplicates its pairs.
    #[arg(long)]
    modern: Vec<PathBuf>,
    /// Base embeddings of the source side, keyed by sentence id.
    #[arg(long)]
    base_emb: PathBuf,
    /// Target-side embeddings (counterparts, or the teacher for distill).
    #[arg(long)]
    tgt_emb: PathBuf,
    /// Base embeddings of the target side; enables bidirectional distillation.
    #[arg(long)]
    base_tgt_emb: Option<PathBuf>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Contrastive: pass the target side through the adapter too.
    #[arg(long)]
    symmetric: bool,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the per-step loss history (JSON).
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Contrastive,
    Distill,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Hist,
    Modern,
    Mixed,
}

#[derive(Subcommand)]
enum EvaluateCommand {
    /// Bidirectional bitext mining accuracy.
    Bitext {
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        src_emb: PathBuf,
        #[arg(long)]
        tgt_emb: PathBuf,
        #[arg(long)]
        adapter: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paraphrase triplets: `{"anchor", "positive", "negative"}` JSONL.
    Triplet {
        #[command(flatten)]
        provider: ProviderArgs,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Zero-shot topic classification: `{"text", "label"}` JSONL.
    Zeroshot {
        #[command(flatten)]
        provider: ProviderArgs,
        #[arg(long = "in")]
        input: PathBuf,
        /// Defaults to the sorted distinct labels of the input.
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        #[arg(long, default_value = DEFAULT_TEMPLATE)]
        template: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct BuildIndexArgs {
    /// Articles providing newspaper and year metadata.
    #[arg(long)]
    articles: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    src_emb: PathBuf,
    #[arg(long)]
    tgt_emb: PathBuf,
    #[arg(long)]
    adapter: Option<PathBuf>,
    #[arg(long, default_value = "histkit")]
    name: String,
    #[arg(long, default_value = "lb")]
    source_lang: String,
    /// Model name recorded in the manifest (used by the stub provider).
    #[arg(long)]
    model: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    addr: Option<String>,
    #[arg(long, value_enum)]
    provider: Option<ProviderKind>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long)]
    cors_origin: Option<String>,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    if let Some(path) = out {
        std::fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{text}");
    Ok(())
}

fn make_provider(args: &ProviderArgs, exec: Execution) -> Result<Box<dyn EmbeddingProvider>> {
    Ok(match args.provider {
        ProviderKind::Stub => Box::new(StubProvider::new(&args.model, args.dim).with_execution(exec)),
        ProviderKind::Remote => Box::new(RemoteProvider::from_env(&args.model)?),
        ProviderKind::File => {
            let path = args.vectors.as_ref().context("--provider file needs --vectors")?;
            Box::new(FileProvider::load(&args.model, path)?)
        }
    })
}

fn cmd_select(a: SelectArgs) -> Result<()> {
    let cfg = SelectionConfig {
        k: a.k,
        min_cluster_size: a.min_cluster_size,
        min_sentences: a.min_sent,
        max_sentences: a.max_sent,
        extra_samples_per_cluster: a.extra,
        seed: a.seed,
    };
    cfg.validate().map_err(anyhow::Error::msg)?;
    let articles = load_articles(&a.input)?;
    let (_, assignments) = cluster_articles(&articles, cfg.k, cfg.seed, a.max_iters)?;
    let (selected, summary) = select_articles_with_summary(&articles, &assignments, &cfg);
    let mut w = std::io::BufWriter::new(File::create(&a.out)?);
    for art in &selected {
        writeln!(w, "{}", serde_json::to_string(art)?)?;
    }
    w.flush()?;
    log::info!("selected {} of {} articles", selected.len(), articles.len());
    write_json(&summary, None)
}

fn cmd_translate(a: TranslateArgs) -> Result<()> {
    let articles = load_articles(&a.input)?;
    let client = HttpChatClient::from_env()?;
    let mut retry = RetryPolicy::new(a.retries);
    retry.base_delay = Duration::from_millis(a.retry_delay_ms);
    let cfg = PipelineConfig {
        out_dir: a.out.clone(),
        retry,
        concurrency: a.concurrency.max(1),
    };
    let report = translate_corpus(&articles, &a.langs, &client, &cfg)?;
    write_json(&report, None)?;
    if !report.failures.is_empty() {
        log::warn!("{} groups failed; rerun to retry them", report.failures.len());
    }
    Ok(())
}

fn cmd_build_task(a: BuildTaskArgs, exec: Execution) -> Result<()> {
    let pairs = read_pairs(&a.pairs)?;
    let opts = TaskOptions {
        threshold: a.threshold,
        casefold: a.casefold,
    };
    let task = build_bitext_task_with(&pairs, opts, exec)?;
    task.save(&a.out)?;
    write_json(
        &serde_json::json!({
            "queries": task.queries.len(),
            "excluded_pairs": task.n_excluded_pairs,
            "threshold": task.threshold,
            "casefold": task.casefold,
        }),
        None,
    )
}

#[derive(Deserialize)]
struct IdText {
    id: String,
    text: String,
}

fn cmd_embed(a: EmbedArgs, exec: Execution) -> Result<()> {
    let records: Vec<(String, String)> = match a.side {
        Some(side) => read_pairs(&a.input)?
            .into_iter()
            .map(|p| {
                let text = match side {
                    PairSide::Lb => p.source_text.clone(),
                    PairSide::Tgt => p.target_text.clone(),
                };
                (p.sentence_id(), text)
            })
            .collect(),
        None => read_jsonl::<IdText>(&a.input)?
            .into_iter()
            .map(|r| (r.id, r.text))
            .collect(),
    };
    let mut seen = BTreeSet::new();
    for (id, _) in &records {
        ensure!(seen.insert(id.as_str()), "duplicate id {id:?} in {}", a.input.display());
    }
    let provider = make_provider(&a.provider, exec)?;
    let (ids, texts): (Vec<String>, Vec<String>) = records.into_iter().unzip();
    let m = embed_texts(provider.as_ref(), ids, &texts, a.batch_size)?;
    embedstore::save(&m, &a.out)?;
    write_json(
        &serde_json::json!({ "rows": m.len(), "dim": m.dim(), "model": provider.model_name() }),
        None,
    )
}

fn pair_ids(files: &[PathBuf]) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for f in files {
        ids.extend(read_pairs(f)?.iter().map(SentencePair::sentence_id));
    }
    Ok(ids)
}

fn pair_set(base: &EmbeddingMatrix, tgt: &EmbeddingMatrix, base_tgt: Option<&EmbeddingMatrix>, ids: &[String]) -> Result<PairSet> {
    Ok(match base_tgt {
        Some(bt) => PairSet::aligned_triples(base, bt, tgt, ids)?,
        None => PairSet::aligned(base, tgt, ids)?,
    })
}

fn cmd_train(a: TrainArgs, exec: Execution) -> Result<()> {
    let strategy = match a.strategy {
        StrategyArg::Hist => Strategy::Hist,
        StrategyArg::Modern => Strategy::Modern,
        StrategyArg::Mixed => Strategy::Mixed,
    };
    let mut cfg = match a.objective {
        ObjectiveArg::Contrastive => TrainConfig::contrastive(strategy),
        ObjectiveArg::Distill => TrainConfig::distill(strategy),
    };
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.learning_rate = lr;
    }
    if let Some(s) = a.scale {
        cfg.scale = s;
    }
    cfg.seed = a.seed;
    cfg.symmetric = a.symmetric;
    cfg.execution = exec;
    if a.base_tgt_emb.is_some() && cfg.objective != Objective::Distill {
        bail!("--base-tgt-emb only applies to --objective distill");
    }

    let base = embedstore::load(&a.base_emb)?;
    let tgt = embedstore::load(&a.tgt_emb)?;
    let base_tgt = a.base_tgt_emb.as_ref().map(embedstore::load).transpose()?;
    let hist = pair_set(&base, &tgt, base_tgt.as_ref(), &pair_ids(&a.hist)?)?;
    let modern = pair_set(&base, &tgt, base_tgt.as_ref(), &pair_ids(&a.modern)?)?;
    let (model, history) = if base_tgt.is_some() {
        distill_bidirectional(&hist, &modern, &cfg)?
    } else {
        train(&hist, &modern, &cfg)?
    };
    model.save(&a.out)?;
    if let Some(path) = &a.history {
        std::fs::write(path, serde_json::to_string(&history)?)?;
    }
    write_json(
        &serde_json::json!({
            "meta": model.meta,
            "final_epoch_loss": history.epoch_means.last(),
            "epoch_means": history.epoch_means,
        }),
        None,
    )
}

fn cmd_evaluate(cmd: EvaluateCommand, exec: Execution) -> Result<()> {
    match cmd {
        EvaluateCommand::Bitext {
            task,
            src_emb,
            tgt_emb,
            adapter,
            out,
        } => {
            let task = BitextTask::load(&task)?;
            let mut src = embedstore::load(&src_emb)?;
            let mut tgt = embedstore::load(&tgt_emb)?;
            if let Some(path) = adapter {
                let a = AdapterModel::load(&path)?;
                src = a.apply_matrix(&src)?;
                if a.meta.apply_to == ApplyTo::Both {
                    tgt = a.apply_matrix(&tgt)?;
                }
            }
            let report = bitext_accuracy_with(&task, &src, &tgt, exec)?;
            write_json(&report, out.as_deref())
        }
        EvaluateCommand::Triplet { provider, input, out } => {
            let triplets: Vec<Triplet> = read_jsonl(&input)?;
            let p = make_provider(&provider, exec)?;
            write_json(&triplet_accuracy(&triplets, p.as_ref())?, out.as_deref())
        }
        EvaluateCommand::Zeroshot {
            provider,
            input,
            labels,
            template,
            out,
        } => {
            let texts: Vec<LabeledText> = read_jsonl(&input)?;
            let labels = if labels.is_empty() {
                texts.iter().map(|t| t.label.clone()).collect::<BTreeSet<_>>().into_iter().collect()
            } else {
                labels
            };
            let p = make_provider(&provider, exec)?;
            write_json(&zero_shot_classify(&texts, &labels, &template, p.as_ref())?, out.as_deref())
        }
    }
}

fn cmd_build_index(a: BuildIndexArgs) -> Result<()> {
    let articles = load_articles(&a.articles)?;
    let by_id: HashMap<&str, &Article> = articles.iter().map(|x| (x.id.as_str(), x)).collect();
    let pairs = read_pairs(&a.pairs)?;
    let lang = pairs.first().context("pair file is empty")?.target_lang;
    ensure!(pairs.iter().all(|p| p.target_lang == lang), "pair file mixes target languages");

    let mut lb = Vec::new();
    let mut tg = Vec::new();
    for p in &pairs {
        let art = by_id
            .get(p.article_id.as_str())
            .with_context(|| format!("pair {} references unknown article", p.sentence_id()))?;
        let payload = |text: &str| Payload {
            id: p.sentence_id(),
            text: text.to_string(),
            article_id: p.article_id.clone(),
            newspaper: art.newspaper.clone(),
            year: art.year,
        };
        lb.push(payload(&p.source_text));
        tg.push(payload(&p.target_text));
    }
    let ids: Vec<String> = pairs.iter().map(SentencePair::sentence_id).collect();
    let src = embedstore::load(&a.src_emb)?.select(&ids)?;
    let tgt = embedstore::load(&a.tgt_emb)?.select(&ids)?;
    let adapter = a.adapter.as_ref().map(AdapterModel::load).transpose()?;
    let spec = IndexSpec {
        name: a.name,
        model: a.model,
        source_lang: a.source_lang.clone(),
    };
    let sides = [
        SideInput {
            lang: a.source_lang,
            payloads: lb,
            embeddings: src,
        },
        SideInput {
            lang: lang.code().to_string(),
            payloads: tg,
            embeddings: tgt,
        },
    ];
    let manifest = build_index(&spec, &sides, adapter.as_ref(), &a.out)?;
    write_json(&manifest, None)
}

fn cmd_serve(a: ServeArgs, exec: Execution) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => ServerConfig::from_file(path)?,
        None => ServerConfig::default(),
    }
    .apply_env();
    if a.index.is_some() {
        cfg.index = a.index.clone();
    }
    if a.addr.is_some() {
        cfg.addr = a.addr.clone();
    }
    if a.cors_origin.is_some() {
        cfg.cors_origin = a.cors_origin.clone();
    }
    // a bad manifest stops the process before the port is bound
    let manifest = cfg.index.as_deref().map(read_manifest).transpose()?;
    let kind = match (a.provider, cfg.provider.as_deref()) {
        (Some(k), _) => k,
        (None, None | Some("stub")) => ProviderKind::Stub,
        (None, Some("remote")) => ProviderKind::Remote,
        (None, Some("file")) => ProviderKind::File,
        (None, Some(other)) => bail!("unknown provider {other:?} in config"),
    };
    let model = a
        .model
        .clone()
        .or(cfg.model.clone())
        .or(manifest.as_ref().map(|m| m.model.clone()))
        .unwrap_or_else(|| "stub-minilm".into());
    let dim = a.dim.or(manifest.as_ref().map(|m| m.dim)).unwrap_or(384);
    let provider: Arc<dyn EmbeddingProvider> = Arc::from(make_provider(
        &ProviderArgs {
            provider: kind,
            model,
            dim,
            vectors: a.vectors.clone(),
        },
        exec,
    )?);
    let state = AppState::new(provider);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(histkit_server::serve(cfg.addr(), state, cfg.index.clone(), cfg.cors_origin.as_deref()))?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.command {
        Command::Select(a) => cmd_select(a),
        Command::Translate(a) => cmd_translate(a),
        Command::BuildTask(a) => cmd_build_task(a, exec),
        Command::Embed(a) => cmd_embed(a, exec),
        Command::Train(a) => cmd_train(a, exec),
        Command::Evaluate(c) => cmd_evaluate(c, exec),
        Command::BuildIndex(a) => cmd_build_index(a),
        Command::Serve(a) => cmd_serve(a, exec),
    }
}
