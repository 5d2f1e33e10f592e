//! Command-line driver for the sparse retrieval toolkit: train a model,
//! encode corpora, build indexes, search, and evaluate runs.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/validation error. Every
//! output file is written atomically (temp file + rename).

use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use prosper_core::bytesio::atomic_write;
use prosper_core::corpus::{
    build_vocab, read_corpus_file, read_pairs_raw, tokenize, CorpusDoc, PairRecord, PairSet, Vocab,
};
use prosper_core::encoder::ModelParams;
use prosper_core::eval::{flops_overlap, mask_terms, MaskKeep, MetricsReport, Qrels, FLOPS_SAMPLE_CAP};
use prosper_core::head::{encode, EncodeMode, LiteralIndicator};
use prosper_core::index::{InvertedIndex, QuantizationMode, DEFAULT_BLOCK_SIZE};
use prosper_core::search::{
    search_bmm, search_exhaustive, truncate_query, Bm25Index, Bm25Params, RunFile, SearchStats,
    DEFAULT_QUERY_TERMS, DEFAULT_TOP_K,
};
use prosper_core::sparse::{read_vec_records, write_vec_records, VecRecord};
use prosper_core::synth::{generate, SynthConfig};
use prosper_core::training::{StepMetrics, TrainConfig, Trainer};
use prosper_core::SparseVec;

#[derive(Parser)]
#[command(name = "prosper", about = "Learned sparse retrieval toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a sparse encoder on query/item pairs.
    Train(TrainArgs),
    /// Encode a corpus into sparse vectors.
    Encode(EncodeArgs),
    /// Build the block-max inverted index from encoded vectors.
    Index(IndexArgs),
    /// Retrieve top-k results for encoded queries (or bm25 over text).
    Search(SearchArgs),
    /// Score a run file against relevance judgments.
    Eval(EvalArgs),
    /// Align two training logs into a sparsity-over-steps CSV.
    BenchSparsity(BenchSparsityArgs),
    /// Build a BM25 index over a tokenized corpus.
    Bm25Index(Bm25IndexArgs),
    /// BM25 retrieval over raw query texts.
    Bm25Search(Bm25SearchArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Pairs TSV: query_id \t query_text \t item_id \t item_text.
    #[arg(long, required_unless_present = "generate_synthetic")]
    pairs: Option<PathBuf>,
    /// Generate the planted-synonym dataset into this directory first and
    /// train on its pairs.
    #[arg(long)]
    generate_synthetic: Option<PathBuf>,
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long)]
    vocab_out: PathBuf,
    /// Training log, one JSON object per step.
    #[arg(long)]
    log_out: Option<PathBuf>,
    /// key=value training config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "prosper")]
    mode: String,
    #[arg(long, default_value_t = 2000)]
    vocab_size: usize,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 64)]
    max_len: usize,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Corpus JSONL with id and text fields.
    #[arg(long)]
    input: PathBuf,
    /// Binary sparse vector records.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "prosper")]
    mode: String,
    /// Which representation to store: the enhanced one or the basic one.
    #[arg(long, default_value = "final", value_parser = ["final", "basic"])]
    rep: String,
    /// Restrict stored vectors to literal or expansion dims.
    #[arg(long, value_parser = ["literal_only", "expansion_only"])]
    mask: Option<String>,
    #[arg(long, default_value_t = 64)]
    max_len: usize,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct IndexArgs {
    /// Encoded vectors from `encode`.
    #[arg(long)]
    vectors: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    block_size: usize,
    #[arg(long, default_value = "none", value_parser = ["none", "fixed16"])]
    quantize: String,
}

#[derive(Args)]
struct SearchArgs {
    /// Inverted index (bmm/exhaustive) or BM25 index (bm25).
    #[arg(long)]
    index: PathBuf,
    /// Encoded query vectors (bmm/exhaustive) or query JSONL (bm25).
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    topk: usize,
    /// Serving-side query truncation: keep the m highest-weight terms.
    #[arg(long, default_value_t = DEFAULT_QUERY_TERMS)]
    query_terms: usize,
    #[arg(long, default_value = "bmm", value_parser = ["bmm", "exhaustive", "bm25"])]
    engine: String,
    /// Vocabulary file; required by the bm25 engine.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    max_len: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Comma-separated subset of metrics to print, e.g. hit@10,mrr@10.
    #[arg(long)]
    metrics: Option<String>,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Encoded query vectors for the term-overlap cost metric.
    #[arg(long, requires = "flops_item_vecs")]
    flops_query_vecs: Option<PathBuf>,
    #[arg(long, requires = "flops_query_vecs")]
    flops_item_vecs: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct BenchSparsityArgs {
    /// Training log of the windowed run.
    #[arg(long)]
    log_on: PathBuf,
    /// Training log of the unwindowed run.
    #[arg(long)]
    log_off: PathBuf,
    /// CSV with step, nnz_q_on, nnz_d_on, nnz_q_off, nnz_d_off.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct Bm25IndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 1.2)]
    k1: f64,
    #[arg(long, default_value_t = 0.75)]
    b: f64,
    #[arg(long, default_value_t = 0.25)]
    delta: f64,
    #[arg(long, default_value_t = 64)]
    max_len: usize,
}

#[derive(Args)]
struct Bm25SearchArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    topk: usize,
    #[arg(long, default_value_t = 64)]
    max_len: usize,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successes, anything else is usage
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(2);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Encode(args) => cmd_encode(args),
        Command::Index(args) => cmd_index(args),
        Command::Search(args) => cmd_search(args),
        Command::Eval(args) => cmd_eval(args),
        Command::BenchSparsity(args) => cmd_bench_sparsity(args),
        Command::Bm25Index(args) => cmd_bm25_index(args),
        Command::Bm25Search(args) => cmd_bm25_search(args),
    }
}

fn open(path: &Path) -> anyhow::Result<BufReader<std::fs::File>> {
    Ok(BufReader::new(
        std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn load_vocab(path: &Path) -> anyhow::Result<Vocab> {
    Ok(Vocab::load(open(path)?)?)
}

fn load_model(path: &Path) -> anyhow::Result<ModelParams> {
    Ok(ModelParams::load(open(path)?)?)
}

fn parse_mode(s: &str) -> anyhow::Result<EncodeMode> {
    Ok(s.parse::<EncodeMode>()?)
}

fn init_threads(threads: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("initializing thread pool")?;
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    init_threads(args.threads)?;
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::parse(open(path)?)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let mode = parse_mode(&args.mode)?;

    let pairs_path = match (&args.generate_synthetic, &args.pairs) {
        (Some(dir), maybe_pairs) => {
            let data = generate(&SynthConfig {
                seed: cfg.seed,
                ..SynthConfig::default()
            });
            data.write_to_dir(dir)?;
            eprintln!(
                "generated synthetic dataset in {}: {} items, {} train pairs, {} test queries",
                dir.display(),
                data.items.len(),
                data.train_pairs.len(),
                data.test_queries.len()
            );
            maybe_pairs.clone().unwrap_or_else(|| dir.join("train_pairs.tsv"))
        }
        (None, Some(pairs)) => pairs.clone(),
        (None, None) => unreachable!("clap enforces one of --pairs/--generate-synthetic"),
    };

    let raw = read_pairs_raw(open(&pairs_path)?)?;
    let vocab = build_vocab(
        raw.iter().flat_map(|p| [p.query_text.as_str(), p.item_text.as_str()]),
        args.vocab_size,
    )?;
    let mut records = Vec::with_capacity(raw.len());
    for (i, p) in raw.iter().enumerate() {
        let line = i + 1;
        records.push(PairRecord {
            query_id: p.query_id.clone(),
            item_id: p.item_id.clone(),
            query: tokenize(&vocab, &p.query_text, args.max_len)
                .with_context(|| format!("pairs line {line}: query"))?,
            positive_item: tokenize(&vocab, &p.item_text, args.max_len)
                .with_context(|| format!("pairs line {line}: item"))?,
        });
    }
    let pairs = PairSet { records };

    let params = ModelParams::init(vocab.size(), args.hidden, cfg.seed)?;
    let mut trainer = Trainer::new(params, cfg, mode)?;
    let mut log = Vec::new();
    let mut last: Option<StepMetrics> = None;
    trainer.train_epochs(&pairs, |m| {
        log.push(serde_json::to_string(m).expect("metrics serialize"));
        last = Some(m.clone());
    })?;
    if let Some(m) = &last {
        eprintln!(
            "trained {} steps: loss={:.4} nnz_q={:.1} nnz_d={:.1}",
            m.step + 1,
            m.loss,
            m.nnz_q_mean,
            m.nnz_d_mean
        );
    }

    let mut model_bytes = Vec::new();
    trainer.params.save(&mut model_bytes)?;
    atomic_write(&args.model_out, &model_bytes)?;
    let mut vocab_bytes = Vec::new();
    vocab.save(&mut vocab_bytes)?;
    atomic_write(&args.vocab_out, &vocab_bytes)?;
    if let Some(path) = &args.log_out {
        let mut text = log.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        atomic_write(path, text.as_bytes())?;
    }
    Ok(())
}

fn cmd_encode(args: EncodeArgs) -> anyhow::Result<()> {
    init_threads(args.threads)?;
    let model = load_model(&args.model)?;
    let vocab = load_vocab(&args.vocab)?;
    if vocab.size() != model.vocab_size {
        bail!(
            "vocab size {} does not match model vocab size {}",
            vocab.size(),
            model.vocab_size
        );
    }
    let mode = parse_mode(&args.mode)?;
    let docs = read_corpus_file(&args.input)?;
    let keep_final = args.rep == "final";
    let mask: Option<MaskKeep> = args.mask.as_deref().map(str::parse).transpose()?;

    use rayon::prelude::*;
    let records: Vec<VecRecord> = docs
        .par_iter()
        .map(|doc: &CorpusDoc| -> anyhow::Result<VecRecord> {
            let seq = tokenize(&vocab, &doc.text, args.max_len)
                .with_context(|| format!("doc '{}'", doc.id))?;
            let out = encode(&model, &seq, mode)?;
            let mut vec = if keep_final { out.final_rep } else { out.basic };
            if let Some(keep) = mask {
                vec = mask_terms(&vec, &LiteralIndicator::from_seq(&seq), keep);
            }
            Ok(VecRecord {
                id: doc.id.clone(),
                vec,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let mut bytes = Vec::new();
    write_vec_records(&mut bytes, &records)?;
    atomic_write(&args.output, &bytes)?;
    eprintln!("encoded {} documents", records.len());
    Ok(())
}

fn cmd_index(args: IndexArgs) -> anyhow::Result<()> {
    let records = read_vec_records(open(&args.vectors)?)?;
    let mode: QuantizationMode = args.quantize.parse()?;
    let idx = InvertedIndex::build(
        records.into_iter().map(|r| (r.id, r.vec)),
        args.block_size,
        mode,
    )?;
    let mut bytes = Vec::new();
    idx.save(&mut bytes)?;
    atomic_write(&args.output, &bytes)?;
    eprintln!(
        "indexed {} docs, {} terms, {} postings",
        idx.num_docs(),
        idx.num_terms(),
        idx.postings_len_sum()
    );
    Ok(())
}

fn cmd_search(args: SearchArgs) -> anyhow::Result<()> {
    if args.engine == "bm25" {
        let vocab_path = args
            .vocab
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("--vocab is required with --engine bm25"))?;
        return bm25_search_impl(
            &args.index,
            &args.queries,
            vocab_path,
            &args.output,
            args.topk,
            args.max_len,
        );
    }

    let idx = InvertedIndex::load(open(&args.index)?)?;
    let queries = read_vec_records(open(&args.queries)?)?;
    let mut run = RunFile::default();
    let mut total_stats = SearchStats::default();
    for q in &queries {
        let qvec = truncate_query(&q.vec, args.query_terms);
        let result = match args.engine.as_str() {
            "bmm" => {
                let (r, stats) = search_bmm(&idx, &qvec, args.topk);
                total_stats.blocks_skipped += stats.blocks_skipped;
                total_stats.docs_pruned += stats.docs_pruned;
                total_stats.docs_scored += stats.docs_scored;
                r
            }
            "exhaustive" => search_exhaustive(&idx, &qvec, args.topk),
            other => bail!("unknown engine '{other}'"),
        };
        let resolved: Vec<(String, f64)> = result
            .hits
            .iter()
            .map(|&(ord, score)| (idx.doc_id(ord).to_string(), score))
            .collect();
        run.push_query(&q.id, &resolved);
    }
    let mut bytes = Vec::new();
    run.save(&mut bytes)?;
    atomic_write(&args.output, &bytes)?;
    eprintln!(
        "searched {} queries (blocks skipped: {}, docs pruned: {}, docs scored: {})",
        queries.len(),
        total_stats.blocks_skipped,
        total_stats.docs_pruned,
        total_stats.docs_scored
    );
    Ok(())
}

fn bm25_search_impl(
    index: &Path,
    queries: &Path,
    vocab: &Path,
    output: &Path,
    topk: usize,
    max_len: usize,
) -> anyhow::Result<()> {
    let idx = Bm25Index::load(open(index)?)?;
    let vocab = load_vocab(vocab)?;
    let queries = read_corpus_file(queries)?;
    let mut run = RunFile::default();
    for q in &queries {
        let seq = tokenize(&vocab, &q.text, max_len).with_context(|| format!("query '{}'", q.id))?;
        let result = idx.search(&seq, topk);
        let resolved: Vec<(String, f64)> = result
            .hits
            .iter()
            .map(|&(ord, score)| (idx.doc_id(ord).to_string(), score))
            .collect();
        run.push_query(&q.id, &resolved);
    }
    let mut bytes = Vec::new();
    run.save(&mut bytes)?;
    atomic_write(output, &bytes)?;
    eprintln!("searched {} queries with bm25", queries.len());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let run = RunFile::load(open(&args.run)?)?;
    let qrels = Qrels::load(open(&args.qrels)?)?;
    if qrels.max_relevant_per_query() > 1 {
        eprintln!("warning: multiple relevant docs per query; hit@k counts any-relevant-in-top-k");
    }
    let mut report = MetricsReport::compute(&run, &qrels)?;
    if let (Some(qv), Some(dv)) = (&args.flops_query_vecs, &args.flops_item_vecs) {
        let queries: Vec<SparseVec> = read_vec_records(open(qv)?)?.into_iter().map(|r| r.vec).collect();
        let items: Vec<SparseVec> = read_vec_records(open(dv)?)?.into_iter().map(|r| r.vec).collect();
        report.flops_overlap = Some(flops_overlap(&queries, &items, FLOPS_SAMPLE_CAP, args.seed)?);
    }
    let table = match &args.metrics {
        None => report.render_table(),
        Some(wanted) => {
            let full = report.render_table();
            let mut out = String::new();
            for name in wanted.split(',') {
                let name = name.trim();
                let row = full
                    .lines()
                    .find(|l| l.split_whitespace().next() == Some(name))
                    .ok_or_else(|| anyhow::anyhow!("unknown metric '{name}'"))?;
                out.push_str(row);
                out.push('\n');
            }
            out
        }
    };
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(table.as_bytes())?;
    if let Some(path) = &args.json {
        let json = serde_json::to_string_pretty(&report)?;
        atomic_write(path, json.as_bytes())?;
    }
    Ok(())
}

/// One training-log row as written by `train --log-out`.
#[derive(serde::Deserialize)]
struct LogRow {
    step: u64,
    nnz_q_mean: f64,
    nnz_d_mean: f64,
}

fn read_log(path: &Path) -> anyhow::Result<Vec<LogRow>> {
    use std::io::BufRead;
    let mut rows = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: LogRow = serde_json::from_str(&line)
            .with_context(|| format!("{} line {}", path.display(), i + 1))?;
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("empty training log: {}", path.display());
    }
    rows.sort_by_key(|r| r.step);
    Ok(rows)
}

/// Value at the log row whose step is nearest to `step` (earlier wins ties).
fn nearest(rows: &[LogRow], step: u64) -> &LogRow {
    let mut best = &rows[0];
    let mut best_dist = u64::MAX;
    for row in rows {
        let dist = row.step.abs_diff(step);
        if dist < best_dist {
            best = row;
            best_dist = dist;
        }
    }
    best
}

fn cmd_bench_sparsity(args: BenchSparsityArgs) -> anyhow::Result<()> {
    let on = read_log(&args.log_on)?;
    let off = read_log(&args.log_off)?;
    // common grid: union of both step sets
    let mut steps: Vec<u64> = on.iter().chain(off.iter()).map(|r| r.step).collect();
    steps.sort_unstable();
    steps.dedup();
    let mut csv = String::from("step,nnz_q_on,nnz_d_on,nnz_q_off,nnz_d_off\n");
    for &step in &steps {
        let a = nearest(&on, step);
        let b = nearest(&off, step);
        csv.push_str(&format!(
            "{step},{},{},{},{}\n",
            a.nnz_q_mean, a.nnz_d_mean, b.nnz_q_mean, b.nnz_d_mean
        ));
    }
    atomic_write(&args.output, csv.as_bytes())?;
    eprintln!("wrote {} rows", steps.len());
    Ok(())
}

fn cmd_bm25_index(args: Bm25IndexArgs) -> anyhow::Result<()> {
    let vocab = load_vocab(&args.vocab)?;
    let docs = read_corpus_file(&args.corpus)?;
    let mut tokenized = Vec::with_capacity(docs.len());
    for doc in &docs {
        let seq = tokenize(&vocab, &doc.text, args.max_len)
            .with_context(|| format!("doc '{}'", doc.id))?;
        tokenized.push((doc.id.clone(), seq));
    }
    let idx = Bm25Index::build(
        tokenized,
        Bm25Params {
            k1: args.k1,
            b: args.b,
            delta: args.delta,
        },
    )?;
    let mut bytes = Vec::new();
    idx.save(&mut bytes)?;
    atomic_write(&args.output, &bytes)?;
    eprintln!("indexed {} docs for bm25", idx.num_docs());
    Ok(())
}

fn cmd_bm25_search(args: Bm25SearchArgs) -> anyhow::Result<()> {
    bm25_search_impl(
        &args.index,
        &args.queries,
        &args.vocab,
        &args.output,
        args.topk,
        args.max_len,
    )
}
