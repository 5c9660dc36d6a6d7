use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anchormem::config::{parse_weight_list, Config};
use anchormem::persist::{self, PersistError, WriteLock};
use anchormem::record::{self, ReadOptions, RecordError};
use anchormem_core::corpus::{audit, extend_long_range, make_synthetic, sessionize, QueryKind, SynthSpec};
use anchormem_core::eval::{evaluate, run_ablation};
use anchormem_core::ingest::CorpusQuery;
use anchormem_core::model::DEFAULT_DIM;
use anchormem_core::prompt::serialize_context;
use anchormem_core::symbolic::{COREF_PREFIX, DEP_PREFIX, DISC_PREFIX, NAME_PREFIX};
use anchormem_core::{
    retrieve, toy_annotate, toy_embed, tune_weights, AnnotatedDialogue, EmbeddingPolicy, FusionWeights, MemoryStore,
    Query, RetrievalConfig,
};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "anchormem", version, about = "Hybrid dense and symbolic memory retrieval for dialogue")]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Add annotated records to a store, creating it if needed.
    Ingest {
        #[arg(long)]
        store: PathBuf,
        input: PathBuf,
        /// Hash-embed records that carry no embedding.
        #[arg(long)]
        toy_embed: bool,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Retrieve the top entries for a text or a query record.
    Query {
        #[arg(long)]
        store: PathBuf,
        #[arg(required_unless_present = "record", conflicts_with = "record")]
        text: Option<String>,
        /// File whose first record is used as the query, features as given.
        #[arg(long)]
        record: Option<PathBuf>,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        /// Print the prompt block instead of the ranking.
        #[arg(long)]
        serialize: bool,
        /// Metadata lines per entry in the prompt block.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Grid-search the fusion weights for the best factual recall.
    Tune {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        step: Option<f64>,
        #[command(flatten)]
        retrieval: RetrievalArgs,
    },
    /// Factual recall and coreference agreement over query records.
    Eval {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        ablation: bool,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        /// Print the report as one canonical JSON line.
        #[arg(long)]
        json: bool,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split dialogues into sessions separated by time gaps.
    Sessionize {
        input: PathBuf,
        output: PathBuf,
        /// Long-range mode: gap-bounded sessions and pronoun rewrites.
        #[arg(long)]
        long_range: bool,
        /// Audit a sample of the output and print the pass fraction.
        #[arg(long)]
        audit: bool,
        /// Write audit records here, one JSON line per dialogue.
        #[arg(long)]
        audit_report: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        toy_embed: bool,
    },
    /// Generate a synthetic multi-session corpus with query turns.
    Synth {
        output: PathBuf,
        #[arg(long, default_value_t = 10)]
        dialogues: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        dim: usize,
        /// Sessions between a fact and the question about it.
        #[arg(long, default_value_t = 2)]
        distance: u32,
        /// Comma-separated query kinds.
        #[arg(long, value_delimiter = ',', default_value = "lexical,entity,pronoun,discourse", value_parser = parse_kind)]
        kinds: Vec<QueryKind>,
        /// Leave embeddings out of the records.
        #[arg(long)]
        no_embed: bool,
    },
    /// Per-stage retrieval latency over query records.
    Bench {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        warmup: usize,
        #[command(flatten)]
        retrieval: RetrievalArgs,
    },
    /// Print the manifest and posting statistics.
    Inspect {
        #[arg(long)]
        store: PathBuf,
    },
}

#[derive(Args, Clone)]
struct RetrievalArgs {
    #[arg(long)]
    k: Option<usize>,
    /// Fusion weights `semantic,entity,discourse`, summing to 1.
    #[arg(long, value_parser = parse_weights_arg)]
    weights: Option<FusionWeights>,
    /// Exhaustive dense search instead of the graph.
    #[arg(long)]
    exact: bool,
}

fn parse_weights_arg(s: &str) -> Result<FusionWeights, String> {
    parse_weight_list(s).map_err(|e| e.to_string())
}

fn parse_kind(s: &str) -> Result<QueryKind, String> {
    match s.trim() {
        "lexical" => Ok(QueryKind::Lexical),
        "entity" => Ok(QueryKind::Entity),
        "pronoun" => Ok(QueryKind::Pronoun),
        "discourse" => Ok(QueryKind::Discourse),
        "dominance" => Ok(QueryKind::Dominance),
        other => Err(format!("unknown query kind {other:?}")),
    }
}

impl RetrievalArgs {
    fn apply(&self, config: &Config) -> Result<RetrievalConfig> {
        let mut cfg = config.retrieval_config()?;
        if let Some(k) = self.k {
            cfg.k = k;
            cfg.dense_n = cfg.dense_n.max(k);
        }
        if let Some(w) = self.weights {
            cfg.weights = w;
        }
        if self.exact {
            cfg.dense_mode = anchormem_core::DenseMode::Exact;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn open_store(dir: &Path) -> Result<MemoryStore> {
    let (store, _) = persist::load(dir).with_context(|| format!("opening store {}", dir.display()))?;
    Ok(store)
}

fn load_queries(path: &Path, dim: usize) -> Result<Vec<CorpusQuery>> {
    let corpus = record::read_annotated(
        path,
        ReadOptions {
            dim: Some(dim),
            toy_embed: true,
        },
    )?;
    let queries = record::corpus_queries(&corpus, dim)?;
    if queries.is_empty() {
        bail!("{} has no query records", path.display());
    }
    Ok(queries)
}

fn plain(queries: &[CorpusQuery]) -> Vec<Query> {
    queries.iter().map(|q| q.query.clone()).collect()
}

fn fmt_weights(w: &FusionWeights) -> String {
    format!("{:.2},{:.2},{:.2}", w.semantic(), w.entity(), w.discourse())
}

fn cmd_ingest(config: &Config, store_dir: &Path, input: &Path, toy: bool, dim: Option<usize>) -> Result<()> {
    let file = File::open(input).with_context(|| format!("reading {}", input.display()))?;
    let records = record::parse_records(BufReader::new(file))?;
    let lock = WriteLock::acquire(store_dir)?;
    let existing = persist::has_store(store_dir);
    let mut store = if existing {
        open_store(store_dir)?
    } else {
        let dim = dim
            .or(config.dim)
            .or_else(|| records.iter().find_map(|(_, r)| r.embedding.as_ref().map(Vec::len)))
            .unwrap_or(DEFAULT_DIM);
        MemoryStore::new(dim, config.hnsw_params())?
    };
    if let Some(d) = dim.filter(|&d| d != store.dim()) {
        bail!("dimension mismatch: store has {}, --dim {d}", store.dim());
    }
    let corpus = record::assemble(
        records,
        ReadOptions {
            dim: Some(store.dim()),
            toy_embed: toy || config.toy_embed,
        },
    )?;
    let before = store.len();
    let policy = EmbeddingPolicy {
        dim: store.dim(),
        toy_embed: false,
    };
    // all or nothing: the store on disk changes only if every turn went in
    let queries = anchormem_core::ingest::ingest_corpus(&mut store, &corpus, policy)?;
    persist::save(&lock, &store, &config.fingerprint())?;
    println!(
        "ingested {} entries from {} dialogues ({} query turns skipped); store {} now holds {} entries (dim {})",
        store.len() - before,
        corpus.len(),
        queries.len(),
        store_dir.display(),
        store.len(),
        store.dim()
    );
    Ok(())
}

fn toy_query(text: &str, dim: usize) -> Result<Query> {
    let a = toy_annotate(text, &[]);
    Ok(Query {
        text: text.to_string(),
        embedding: toy_embed(text, dim)?,
        entities: a.entities,
        discourse: a.discourse,
        gold: None,
    })
}

fn record_query(path: &Path, dim: usize) -> Result<(Query, bool)> {
    let file = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let records = record::parse_records(BufReader::new(file))?;
    let Some((_, r)) = records.into_iter().next() else {
        bail!("{} holds no record", path.display());
    };
    let toy = r.embedding.is_none();
    let q = r.to_turn().to_query(EmbeddingPolicy { dim, toy_embed: true })?;
    Ok((q, toy))
}

fn cmd_query(
    config: &Config,
    store_dir: &Path,
    text: Option<&str>,
    record_path: Option<&Path>,
    args: &RetrievalArgs,
    serialize: bool,
    budget: Option<usize>,
) -> Result<()> {
    let store = open_store(store_dir)?;
    let cfg = args.apply(config)?;
    let (query, toy_note) = match (text, record_path) {
        (_, Some(p)) => {
            let (q, toy) = record_query(p, store.dim())?;
            (q, toy.then_some("toy mode: query record has no embedding, hashed embedding used"))
        }
        (Some(t), None) => (
            toy_query(t, store.dim())?,
            Some("toy mode: query features from the heuristic annotator and hashed embedding"),
        ),
        (None, None) => unreachable!("clap requires one"),
    };
    let results = retrieve(&store, &query, &cfg)?;
    if serialize {
        if let Some(note) = toy_note {
            eprintln!("{note}");
        }
        let budget = budget.unwrap_or(config.metadata_budget);
        print!("{}", serialize_context(&results, &store, budget)?);
        return Ok(());
    }
    let mut out = String::new();
    if let Some(note) = toy_note {
        out.push_str(&format!("# {note}\n"));
    }
    out.push_str("rank\tid\tscore\tsim\tentity\tdiscourse\tspeaker\ttext\n");
    for (i, r) in results.iter().enumerate() {
        let e = store.get(r.entry_id).expect("retrieved ids are stored");
        out.push_str(&format!(
            "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\n",
            i + 1,
            r.entry_id,
            r.score,
            r.sim_term,
            r.entity_term,
            r.discourse_term,
            e.speaker,
            e.utterance
        ));
    }
    print!("{out}");
    Ok(())
}

fn cmd_tune(config: &Config, store_dir: &Path, queries: &Path, step: Option<f64>, args: &RetrievalArgs) -> Result<()> {
    let store = open_store(store_dir)?;
    let base = args.apply(config)?;
    let queries = plain(&load_queries(queries, store.dim())?);
    let result = tune_weights(&queries, &store, &base, step.unwrap_or(config.grid_step))?;
    let mut out = String::from("semantic\tentity\tdiscourse\trecalled\tfr\n");
    for p in &result.table {
        out.push_str(&format!(
            "{:.2}\t{:.2}\t{:.2}\t{}/{}\t{:.4}\n",
            p.weights.semantic(),
            p.weights.entity(),
            p.weights.discourse(),
            p.recalled,
            p.total,
            p.fr()
        ));
    }
    out.push_str(&format!("best {} fr {:.4}\n", fmt_weights(&result.best), result.best_fr));
    print!("{out}");
    Ok(())
}

fn class_breakdown(queries: &[CorpusQuery], hits: &[Option<usize>]) -> serde_json::Map<String, serde_json::Value> {
    let mut counts: std::collections::BTreeMap<String, (usize, usize)> = Default::default();
    for (q, hit) in queries.iter().zip(hits) {
        let mut bump = |key: String| {
            let c = counts.entry(key).or_default();
            c.0 += hit.is_some() as usize;
            c.1 += 1;
        };
        bump(q.class.clone().unwrap_or_else(|| "unclassified".into()));
        if q.pronoun_only {
            bump("pronoun-only".into());
        }
    }
    counts
        .into_iter()
        .map(|(k, (r, t))| (k, json!({"fr": r as f64 / t as f64, "recalled": r, "total": t})))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    config: &Config,
    store_dir: &Path,
    queries_path: &Path,
    ablation: bool,
    runs: usize,
    args: &RetrievalArgs,
    as_json: bool,
    out_path: Option<&Path>,
) -> Result<()> {
    let store = open_store(store_dir)?;
    let cfg = args.apply(config)?;
    let queries = load_queries(queries_path, store.dim())?;
    let plain = plain(&queries);
    let report = evaluate(&plain, &store, &cfg, runs)?;
    let hits: Vec<Option<usize>> = report.per_query.iter().map(|o| o.hit_rank).collect();
    let mut doc = json!({
        "dc": report.dc,
        "dc_excluded": report.dc_excluded,
        "dc_std": report.dc_std,
        "fr": report.fr,
        "fr_std": report.fr_std,
        "k": cfg.k,
        "by_class": class_breakdown(&queries, &hits),
        "recalled": report.recalled,
        "runs": report.runs,
        "total": report.total,
        "weights": [cfg.weights.semantic(), cfg.weights.entity(), cfg.weights.discourse()],
    });
    let mut table = format!(
        "fr {:.4} ({}/{}) dc {} ({} queries without comparable entities) k {} weights {}\n",
        report.fr,
        report.recalled,
        report.total,
        report.dc.map_or("n/a".into(), |d| format!("{d:.4}")),
        report.dc_excluded,
        cfg.k,
        fmt_weights(&cfg.weights)
    );
    if runs > 1 {
        table.push_str(&format!(
            "over {} runs: fr std {:.4} dc std {}\n",
            report.runs,
            report.fr_std.unwrap_or(0.0),
            report.dc_std.map_or("n/a".into(), |d| format!("{d:.4}"))
        ));
    }
    for (class, v) in class_breakdown(&queries, &hits) {
        table.push_str(&format!("  {class:<14}{} / {}\n", v["recalled"], v["total"]));
    }
    if ablation {
        let rows = run_ablation(&store, &plain, &cfg)?;
        table.push_str(&format!("{:<14}{:>8}{:>8}{:>9}{:>9}\n", "variant", "fr", "dc", "d_fr", "d_dc"));
        let mut json_rows = Vec::new();
        for row in &rows {
            let fmt_opt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            table.push_str(&format!(
                "{:<14}{:>8.4}{:>8}{:>+9.4}{:>9}\n",
                row.variant.name(),
                row.fr,
                fmt_opt(row.dc),
                row.fr_delta,
                row.dc_delta.map_or("n/a".to_string(), |v| format!("{v:+.4}"))
            ));
            json_rows.push(json!({
                "by_class": class_breakdown(&queries, &row.per_query_hits),
                "dc": row.dc,
                "dc_delta": row.dc_delta,
                "fr": row.fr,
                "fr_delta": row.fr_delta,
                "variant": row.variant.name(),
            }));
        }
        doc["ablation"] = json!(json_rows);
    }
    let line = serde_json::to_string(&doc)?;
    if let Some(p) = out_path {
        record::write_atomic(p, format!("{line}\n").as_bytes()).with_context(|| format!("writing {}", p.display()))?;
    }
    if as_json {
        println!("{line}");
    } else {
        print!("{table}");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sessionize(
    config: &Config,
    input: &Path,
    output: &Path,
    long_range: bool,
    want_audit: bool,
    audit_report: Option<&Path>,
    toy: bool,
) -> Result<()> {
    let corpus = record::read_annotated(
        input,
        ReadOptions {
            dim: config.dim,
            toy_embed: toy || config.toy_embed,
        },
    )?;
    let mut out: Vec<AnnotatedDialogue> = Vec::with_capacity(corpus.len());
    let (mut boundaries, mut rewrites, mut warnings) = (0, 0, 0);
    if long_range {
        let lr = config.long_range_config();
        for d in &corpus {
            let o = extend_long_range(d, &lr)?;
            boundaries += o.boundaries.len();
            rewrites += o.rewrites.len();
            if let Some(w) = o.warning {
                warnings += 1;
                eprintln!("{}: {w:?}", d.dialogue_id);
            }
            out.push(o.dialogue);
        }
    } else {
        let sc = config.sessionizer_config();
        for d in &corpus {
            let o = sessionize(d, &sc)?;
            boundaries += o.boundaries.len();
            if let Some(w) = o.warning {
                warnings += 1;
                eprintln!("{}: {w:?}", d.dialogue_id);
            }
            out.push(o.dialogue);
        }
    }
    record::write_annotated(output, &out)?;
    println!(
        "{} dialogues, {boundaries} boundaries, {rewrites} pronoun rewrites, {warnings} warnings -> {}",
        out.len(),
        output.display()
    );
    if want_audit || audit_report.is_some() {
        let report = audit(&out, &config.sessionizer_config());
        if let Some(p) = audit_report {
            let mut text = String::new();
            for r in &report.records {
                let line = json!({"dialogue_id": r.dialogue_id, "pass": r.pass, "reason": r.reason});
                text.push_str(&format!("{line}\n"));
            }
            record::write_atomic(p, text.as_bytes()).with_context(|| format!("writing {}", p.display()))?;
        }
        println!(
            "audit: {}/{} passed, pass fraction {:.4}",
            report.passed(),
            report.records.len(),
            report.pass_fraction()
        );
    }
    Ok(())
}

fn cmd_synth(output: &Path, spec: SynthSpec) -> Result<()> {
    let corpus = make_synthetic(&spec)?;
    record::write_annotated(output, &corpus)?;
    let queries: usize = corpus.iter().flat_map(|d| d.turns()).filter(|t| t.is_query()).count();
    println!(
        "{} dialogues, {} memory turns, {queries} query turns -> {}",
        corpus.len(),
        corpus.iter().map(|d| d.memory_turn_count()).sum::<usize>(),
        output.display()
    );
    Ok(())
}

fn cmd_bench(config: &Config, store_dir: &Path, queries: &Path, n: usize, warmup: usize, args: &RetrievalArgs) -> Result<()> {
    let store = open_store(store_dir)?;
    let cfg = args.apply(config)?;
    let queries = plain(&load_queries(queries, store.dim())?);
    let report = anchormem::latency_bench(&store, &queries, &cfg, warmup, n)?;
    print!("{}", report.table());
    Ok(())
}

fn cmd_inspect(store_dir: &Path) -> Result<()> {
    let (store, manifest) = persist::load(store_dir).with_context(|| format!("opening store {}", store_dir.display()))?;
    let mut out = serde_json::to_string_pretty(&manifest)?;
    out.push('\n');
    let mut by_family = [(COREF_PREFIX, 0usize, 0usize), (NAME_PREFIX, 0, 0), (DEP_PREFIX, 0, 0), (DISC_PREFIX, 0, 0)];
    let mut longest: Vec<(usize, &str)> = Vec::new();
    for (key, ids) in store.symbolic().postings() {
        if let Some(f) = by_family.iter_mut().find(|f| key.starts_with(f.0)) {
            f.1 += 1;
            f.2 += ids.len();
        }
        longest.push((ids.len(), key));
    }
    out.push_str("family\tkeys\tpostings\n");
    for (prefix, keys, postings) in by_family {
        out.push_str(&format!("{}\t{keys}\t{postings}\n", prefix.trim_end_matches(':')));
    }
    out.push_str(&format!("coreference clusters: {}\n", store.symbolic().clusters().len()));
    longest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)));
    for (n, key) in longest.iter().take(5) {
        out.push_str(&format!("  {key}: {n}\n"));
    }
    print!("{out}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Ingest {
            store,
            input,
            toy_embed,
            dim,
        } => cmd_ingest(&config, &store, &input, toy_embed, dim),
        Command::Query {
            store,
            text,
            record,
            retrieval,
            serialize,
            budget,
        } => cmd_query(
            &config,
            &store,
            text.as_deref(),
            record.as_deref(),
            &retrieval,
            serialize,
            budget,
        ),
        Command::Tune {
            store,
            queries,
            step,
            retrieval,
        } => cmd_tune(&config, &store, &queries, step, &retrieval),
        Command::Eval {
            store,
            queries,
            ablation,
            runs,
            retrieval,
            json,
            out,
        } => cmd_eval(&config, &store, &queries, ablation, runs, &retrieval, json, out.as_deref()),
        Command::Sessionize {
            input,
            output,
            long_range,
            audit,
            audit_report,
            seed,
            toy_embed,
        } => {
            let config = Config {
                seed: seed.unwrap_or(config.seed),
                ..config
            };
            cmd_sessionize(&config, &input, &output, long_range, audit, audit_report.as_deref(), toy_embed)
        }
        Command::Synth {
            output,
            dialogues,
            seed,
            dim,
            distance,
            kinds,
            no_embed,
        } => cmd_synth(
            &output,
            SynthSpec {
                dialogues,
                seed,
                dim,
                session_distance: distance,
                kinds,
                embed: !no_embed,
                ..SynthSpec::default()
            },
        ),
        Command::Bench {
            store,
            queries,
            n,
            warmup,
            retrieval,
        } => cmd_bench(&config, &store, &queries, n, warmup, &retrieval),
        Command::Inspect { store } => cmd_inspect(&store),
    }
}

/// 3 for a corrupted store, 2 for every other failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    let corrupt = err
        .chain()
        .any(|e| e.downcast_ref::<PersistError>().is_some_and(PersistError::is_corruption));
    if corrupt {
        3
    } else {
        2
    }
}

/// The error chain joined by `: `, skipping causes already spelled out by
/// the message above them.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let _ = std::io::stdout().flush();
            eprintln!("error: {}", describe(&err));
            if let Some(RecordError::Invalid(lines)) = err.downcast_ref::<RecordError>() {
                const SHOWN: usize = 20;
                for v in lines.iter().take(SHOWN) {
                    eprintln!("  line {}: {}", v.line, v.message);
                }
                if lines.len() > SHOWN {
                    eprintln!("  ... {} more", lines.len() - SHOWN);
                }
            }
            ExitCode::from(exit_code(&err))
        }
    }
}
