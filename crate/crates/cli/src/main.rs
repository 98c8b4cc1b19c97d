//! `lexsparse` command line: data generation, training, indexing, search and
//! evaluation for learned sparse retrieval.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 on data
//! errors. Results go to stdout (or `--out`); progress goes to stderr.

mod settings;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use lexsparse::checkpoint::{read_checkpoint, write_checkpoint};
use lexsparse::encoder::EncoderParams;
use lexsparse::eval::{evaluate_run, reports_csv, Metric, Qrels};
use lexsparse::index::{build_index, flops_metric_index, posting_stats, read_index, write_index};
use lexsparse::inspect::inspect;
use lexsparse::objective::RegKind;
use lexsparse::repcache::{read_reps, write_reps, NamedRep};
use lexsparse::retrieval::{batch_search, format_run};
use lexsparse::sparse::SparseRep;
use lexsparse::sweep::{parse_pairs, run_sweep, EvalSet, SweepSpec};
use lexsparse::synth::{gen_synth, SynthConfig};
use lexsparse::text::{build_vocab, load_corpus, load_queries, load_triples, Vocabulary};
use lexsparse::trainer::{encode_all, history_csv, tokenize_records, train, TrainConfig, TrainData, TrainEvent};

use settings::{Keys, Usage};

#[derive(Parser, Debug)]
#[command(name = "lexsparse", version, about = "Learned sparse retrieval toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Flat `key = value` settings file
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one setting (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Random seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (stdout when omitted and the output is text)
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a vocabulary from `id<TAB>text` files
    BuildVocab {
        #[arg(long = "input", required = true, value_name = "TSV")]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic collection with planted vocabulary mismatch
    GenSynth {
        #[command(flatten)]
        common: Common,
    },
    /// Train an encoder and write its checkpoint
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Continue from this checkpoint instead of a fresh initialization
        #[arg(long, value_name = "PATH")]
        init: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Encode `id<TAB>text` records into a representation file
    Encode {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_name = "TSV")]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Build an inverted index from representations or raw documents
    Index {
        /// Encoded documents (from `encode`)
        #[arg(long, value_name = "PATH", conflicts_with = "corpus")]
        reps: Option<PathBuf>,
        #[arg(long, value_name = "TSV")]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        model: OptModelArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Retrieve the top k documents for each query and write a run file
    Search {
        #[arg(long, value_name = "PATH")]
        index: PathBuf,
        #[arg(long, value_name = "TSV", conflicts_with = "query_reps")]
        queries: Option<PathBuf>,
        /// Encoded queries (from `encode`)
        #[arg(long, value_name = "PATH")]
        query_reps: Option<PathBuf>,
        #[command(flatten)]
        model: OptModelArgs,
        #[arg(long)]
        k: Option<usize>,
        /// Run tag written in the last column
        #[arg(long)]
        tag: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a run file against qrels
    Evaluate {
        #[arg(long, value_name = "PATH")]
        run: PathBuf,
        #[arg(long, value_name = "PATH")]
        qrels: PathBuf,
        /// Comma-separated, e.g. `mrr@10,recall@1000,ndcg@10`
        #[arg(long)]
        metrics: Option<String>,
        /// Lowest grade counted as relevant by MRR and recall
        #[arg(long)]
        min_grade: Option<u32>,
        #[command(flatten)]
        common: Common,
    },
    /// Print the expected FLOPS of retrieval over an index
    Flops {
        #[arg(long, value_name = "PATH")]
        index: PathBuf,
        #[arg(long, value_name = "PATH")]
        query_reps: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train one model per (lambda_q, lambda_d) pair and tabulate cost and quality
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        /// Queries used for scoring each model
        #[arg(long, value_name = "TSV")]
        eval_queries: PathBuf,
        /// `lq:ld,lq:ld,...`; a bare value sets both
        #[arg(long)]
        pairs: Option<String>,
        #[arg(long)]
        reg_kind: Option<RegKind>,
        #[arg(long)]
        recall_k: Option<usize>,
        /// Number of trainings run concurrently
        #[arg(long)]
        parallel: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Show kept, dropped and added terms for a text
    Inspect {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, conflicts_with = "doc_id")]
        text: Option<String>,
        /// Look the text up in `--corpus`
        #[arg(long, requires = "corpus")]
        doc_id: Option<String>,
        #[arg(long, value_name = "TSV")]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    #[arg(long, value_name = "PATH")]
    vocab: PathBuf,
    #[arg(long, value_name = "TSV")]
    corpus: PathBuf,
    /// Training queries
    #[arg(long, value_name = "TSV")]
    queries: PathBuf,
    #[arg(long, value_name = "TSV")]
    triples: PathBuf,
    /// Validation queries for checkpoint selection
    #[arg(long, value_name = "TSV", requires = "qrels")]
    dev_queries: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    qrels: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "PATH")]
    vocab: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct OptModelArgs {
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    vocab: Option<PathBuf>,
}

impl OptModelArgs {
    fn require(&self, why: &str) -> Result<ModelArgs> {
        match (&self.checkpoint, &self.vocab) {
            (Some(c), Some(v)) => Ok(ModelArgs {
                checkpoint: c.clone(),
                vocab: v.clone(),
            }),
            _ => Err(Usage(format!("{why} needs --checkpoint and --vocab")).into()),
        }
    }
}

struct Model {
    params: EncoderParams<f64>,
    vocab: Vocabulary,
    max_len: usize,
}

impl ModelArgs {
    fn load(&self, max_len: usize) -> Result<Model> {
        let params = read_checkpoint::<f64>(&self.checkpoint, max_len)?;
        let vocab = Vocabulary::read(&self.vocab)?;
        if vocab.len() != params.vocab_size() {
            return Err(lexsparse::Error::VocabMismatch {
                expected: params.vocab_size(),
                found: vocab.len(),
            }
            .into());
        }
        Ok(Model { params, vocab, max_len })
    }
}

impl Model {
    fn encode_file(&self, path: &Path) -> Result<Vec<NamedRep>> {
        let records = load_queries(path)?;
        let seqs = tokenize_records(&records, &self.vocab, self.max_len)?;
        Ok(encode_all(&self.params, &seqs)?)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    match e.downcast_ref::<lexsparse::Error>() {
        Some(err) if !err.is_data_error() => 1,
        _ => 2,
    }
}

/// Writes `text` to `out`, or to stdout.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn required_out<'a>(common: &'a Common, what: &str) -> Result<&'a Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| Usage(format!("--out is required for {what}")).into())
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::BuildVocab { inputs, common } => {
            let mut keys = Keys::load(&common)?;
            let max_size = keys.take("max_size", 30_000usize)?;
            let min_freq = keys.take("min_freq", 1usize)?;
            keys.finish()?;
            let mut records = Vec::new();
            for p in &inputs {
                records.extend(load_queries(p)?);
            }
            let vocab = build_vocab(&records, max_size, min_freq)?;
            eprintln!("vocabulary: {} terms from {} records", vocab.len(), records.len());
            emit(common.out.as_deref(), &vocab.to_text())
        }
        Command::GenSynth { common } => {
            let keys = Keys::load_seeded(&common)?;
            let mut cfg = SynthConfig::default();
            for (k, v) in keys.into_pairs() {
                cfg.set(&k, &v)?;
            }
            let dir = required_out(&common, "gen-synth")?;
            let data = gen_synth(&cfg)?;
            data.write(dir)?;
            eprintln!(
                "wrote {} documents, {}/{}/{} train/dev/test queries, {} triples to {}",
                data.corpus.len(),
                data.train_queries.len(),
                data.dev_queries.len(),
                data.test_queries.len(),
                data.triples.len(),
                dir.display()
            );
            Ok(())
        }
        Command::Train { data, init, common } => {
            let cfg = train_config(Keys::load_seeded(&common)?)?;
            let out = required_out(&common, "train")?;
            let vocab = Vocabulary::read(&data.vocab)?;
            let td = load_train_data(&data, &vocab, cfg.max_len)?;
            let t0 = Instant::now();
            let mut log = |e: &TrainEvent| match e {
                TrainEvent::Step { step, loss, lr } if step % 100 == 0 => eprintln!(
                    "step {step} loss {:.4} rank {:.4} reg_q {:.4} reg_d {:.4} lr {lr:.2e} ({:.0}s)",
                    loss.total,
                    loss.rank,
                    loss.reg_query,
                    loss.reg_doc,
                    t0.elapsed().as_secs_f64()
                ),
                TrainEvent::Validation { step, mrr10 } => eprintln!("step {step} validation MRR@10 {mrr10:.4}"),
                _ => {}
            };
            let outcome = match init {
                Some(p) => {
                    let mut params = read_checkpoint::<f64>(&p, cfg.max_len)?;
                    params.set_variant(cfg.aggregation, cfg.gating);
                    lexsparse::trainer::train_from(&td, params, &cfg, &mut log)?
                }
                None => train(&td, vocab.len(), &cfg, &mut log)?,
            };
            write_checkpoint(&outcome.best, out)?;
            let cfg_path = sidecar(out, ".config");
            fs::write(&cfg_path, cfg.to_text()).with_context(|| format!("writing {}", cfg_path.display()))?;
            if !outcome.history.is_empty() {
                let hist = sidecar(out, ".history.csv");
                fs::write(&hist, history_csv(&outcome.history))
                    .with_context(|| format!("writing {}", hist.display()))?;
            }
            match outcome.best_mrr10 {
                Some(m) => eprintln!("kept step {} (validation MRR@10 {m:.4})", outcome.best_step),
                None => eprintln!("kept final step {}", outcome.best_step),
            }
            Ok(())
        }
        Command::Encode { model, input, common } => {
            let mut keys = Keys::load(&common)?;
            let max_len = keys.take("max_len", 256usize)?;
            keys.finish()?;
            let out = required_out(&common, "encode")?;
            let m = model.load(max_len)?;
            let reps = m.encode_file(&input)?;
            write_reps(out, m.params.vocab_size(), &reps)?;
            eprintln!("encoded {} records, mean nnz {:.1}", reps.len(), mean_nnz(&reps));
            Ok(())
        }
        Command::Index {
            reps,
            corpus,
            model,
            common,
        } => {
            let mut keys = Keys::load(&common)?;
            let max_len = keys.take("max_len", 256usize)?;
            keys.finish()?;
            let out = required_out(&common, "index")?;
            let (vocab_size, docs) = match (reps, corpus) {
                (Some(r), _) => read_reps(&r)?,
                (None, Some(c)) => {
                    let m = model.require("indexing raw documents")?.load(max_len)?;
                    let records = load_corpus(&c)?;
                    let seqs = tokenize_records(&records, &m.vocab, m.max_len)?;
                    (m.params.vocab_size(), encode_all(&m.params, &seqs)?)
                }
                (None, None) => return Err(Usage("index needs --reps or --corpus".into()).into()),
            };
            let index = build_index(vocab_size, docs.iter().map(|(id, r)| (id.as_str(), r)))?;
            write_index(&index, out)?;
            let stats = posting_stats(&index);
            eprintln!(
                "indexed {} documents, {} postings in {} lists, Gini {:.4}",
                index.doc_count(),
                index.total_postings(),
                stats.lengths.len(),
                stats.gini
            );
            Ok(())
        }
        Command::Search {
            index,
            queries,
            query_reps,
            model,
            k,
            tag,
            common,
        } => {
            let mut keys = Keys::load(&common)?;
            let k = match k {
                Some(k) => k,
                None => keys.take("k", 1000usize)?,
            };
            let tag = match tag {
                Some(t) => t,
                None => keys.take("tag", String::from("lexsparse"))?,
            };
            let max_len = keys.take("max_len", 256usize)?;
            keys.finish()?;
            let index = read_index(&index)?;
            let qs = match (queries, query_reps) {
                (_, Some(r)) => load_reps_for(&r, index.vocab_size())?,
                (Some(q), None) => model.require("searching raw queries")?.load(max_len)?.encode_file(&q)?,
                (None, None) => return Err(Usage("search needs --queries or --query-reps".into()).into()),
            };
            let lists = batch_search(&index, &qs, k)?;
            eprintln!("searched {} queries, k = {k}", lists.len());
            emit(common.out.as_deref(), &format_run(&lists, &tag))
        }
        Command::Evaluate {
            run,
            qrels,
            metrics,
            min_grade,
            common,
        } => {
            let mut keys = Keys::load(&common)?;
            let metrics = match metrics {
                Some(m) => m,
                None => keys.take("metrics", String::from("mrr@10,recall@1000,ndcg@10"))?,
            };
            let min_grade = match min_grade {
                Some(g) => g,
                None => keys.take("min_grade", 1u32)?,
            };
            keys.finish()?;
            let metrics = parse_metrics(&metrics)?;
            let reports = evaluate_run(&run, &qrels, &metrics, min_grade)?;
            for r in &reports {
                eprintln!(
                    "{}: {:.4} over {} queries ({} excluded, {} missing from run)",
                    r.metric,
                    r.mean,
                    r.per_query.len(),
                    r.excluded.len(),
                    r.missing.len()
                );
            }
            emit(common.out.as_deref(), &reports_csv(&reports))
        }
        Command::Flops {
            index,
            query_reps,
            common,
        } => {
            Keys::load(&common)?.finish()?;
            let index = read_index(&index)?;
            let qs: Vec<SparseRep<f32>> = load_reps_for(&query_reps, index.vocab_size())?
                .into_iter()
                .map(|(_, r)| r)
                .collect();
            let flops = flops_metric_index(&qs, &index)?;
            emit(common.out.as_deref(), &format!("{flops}\n"))
        }
        Command::Sweep {
            data,
            eval_queries,
            pairs,
            reg_kind,
            recall_k,
            parallel,
            common,
        } => {
            let mut keys = Keys::load_seeded(&common)?;
            let pairs = match pairs {
                Some(p) => p,
                None => keys.take("pairs", String::from("1e-4,1e-3,1e-2,1e-1"))?,
            };
            let recall_k = match recall_k {
                Some(k) => k,
                None => keys.take("recall_k", 1000usize)?,
            };
            let parallel = match parallel {
                Some(n) => n,
                None => keys.take("parallel", 1usize)?,
            };
            let base = train_config(keys)?;
            let spec = SweepSpec {
                pairs: parse_pairs(&pairs)?,
                reg_kind: reg_kind.unwrap_or(base.reg_kind),
                base,
            };
            spec.validate()?;
            let vocab = Vocabulary::read(&data.vocab)?;
            let td = load_train_data(&data, &vocab, spec.base.max_len)?;
            let eval_queries = tokenize_records(&load_queries(&eval_queries)?, &vocab, spec.base.max_len)?;
            let qrels = match &data.qrels {
                Some(p) => Qrels::load(p)?,
                None => return Err(Usage("sweep needs --qrels to score models".into()).into()),
            };
            let eval = EvalSet {
                docs: &td.docs,
                queries: &eval_queries,
                qrels: &qrels,
                recall_k,
            };
            eprintln!("sweeping {} pairs ({})", spec.pairs.len(), spec.reg_kind);
            match &common.out {
                Some(p) => {
                    let mut f = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
                    run_sweep(&spec, &td, vocab.len(), &eval, parallel, &mut f)?;
                }
                None => {
                    run_sweep(&spec, &td, vocab.len(), &eval, parallel, &mut io::stdout().lock())?;
                }
            }
            Ok(())
        }
        Command::Inspect {
            model,
            text,
            doc_id,
            corpus,
            common,
        } => {
            let mut keys = Keys::load(&common)?;
            let max_len = keys.take("max_len", 256usize)?;
            keys.finish()?;
            let text = match (text, doc_id, corpus) {
                (Some(t), _, _) => t,
                (None, Some(id), Some(c)) => load_corpus(&c)?
                    .into_iter()
                    .find(|r| r.id == id)
                    .map(|r| r.text)
                    .ok_or(lexsparse::Error::UnknownId(id))?,
                _ => return Err(Usage("inspect needs --text or --doc-id with --corpus".into()).into()),
            };
            let m = model.load(max_len)?;
            let report = inspect(&m.params, &m.vocab, &text)?;
            emit(common.out.as_deref(), &report.to_string())
        }
    }
}

fn train_config(keys: Keys) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (k, v) in keys.into_pairs() {
        cfg.set(&k, &v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_train_data(data: &DataArgs, vocab: &Vocabulary, max_len: usize) -> Result<TrainData> {
    let corpus = load_corpus(&data.corpus)?;
    let queries = load_queries(&data.queries)?;
    let triples = load_triples(&data.triples)?;
    let dev = match &data.dev_queries {
        Some(p) => {
            let qrels_path = data
                .qrels
                .as_ref()
                .ok_or_else(|| Usage("--dev-queries needs --qrels".into()))?;
            Some((load_queries(p)?, Qrels::load(qrels_path)?))
        }
        None => None,
    };
    let validation = dev.as_ref().map(|(q, r)| (q.as_slice(), r.clone()));
    Ok(TrainData::from_records(vocab, max_len, &corpus, &queries, triples, validation)?)
}

fn load_reps_for(path: &Path, vocab_size: usize) -> Result<Vec<NamedRep>> {
    let (dim, reps) = read_reps(path)?;
    if dim != vocab_size {
        return Err(lexsparse::Error::VocabMismatch {
            expected: vocab_size,
            found: dim,
        })
        .with_context(|| format!("{} was encoded for a different vocabulary", path.display()));
    }
    Ok(reps)
}

fn parse_metrics(list: &str) -> Result<Vec<Metric>> {
    let metrics = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<lexsparse::Result<Vec<Metric>>>()?;
    if metrics.is_empty() {
        return Err(Usage("no metrics requested".into()).into());
    }
    Ok(metrics)
}

fn mean_nnz(reps: &[NamedRep]) -> f64 {
    if reps.is_empty() {
        return 0.0;
    }
    reps.iter().map(|(_, r)| r.nnz() as f64).sum::<f64>() / reps.len() as f64
}
