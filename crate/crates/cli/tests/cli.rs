use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lexsparse"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn lexsparse")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "lexsparse {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SYNTH: [&str; 12] = [
    "--set", "n_docs=120",
    "--set", "n_topics=12",
    "--set", "vocab_terms=96",
    "--set", "n_queries=36",
    "--set", "n_heldout=12",
    "--set", "triples_per_query=4",
];

struct Synth {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Synth {
    fn new() -> Synth {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let data = root.join("data");
        let mut args = vec!["gen-synth", "--seed", "5", "--out", p(&data)];
        args.extend(SYNTH);
        ok(&args);
        let vocab = root.join("vocab.txt");
        ok(&[
            "build-vocab",
            "--input",
            p(&data.join("corpus.tsv")),
            "--input",
            p(&data.join("queries.train.tsv")),
            "--out",
            p(&vocab),
        ]);
        Synth { _dir: dir, root }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn data(&self, file: &str) -> PathBuf {
        self.root.join("data").join(file)
    }
}

#[test]
fn gen_synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let mut args = vec!["gen-synth", "--seed", "9"];
        let out = dir.path().join(name);
        args.extend(["--out", p(&out)]);
        args.extend(SYNTH);
        ok(&args);
    }
    for f in ["corpus.tsv", "queries.train.tsv", "qrels.txt", "triples.tsv", "topics.tsv"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn full_pipeline() {
    let s = Synth::new();
    let cfg = s.path("train.cfg");
    fs::write(
        &cfg,
        "embed_dim = 8\nbatch_size = 8\ntotal_steps = 60\nramp_steps = 30\nwarmup_steps = 5\n\
         learning_rate = 5e-3\nvalidation_interval = 30\nlambda_q = 1e-2\nlambda_d = 1e-2\n",
    )
    .unwrap();
    let ckpt = s.path("model.splp");
    let vocab = s.path("vocab.txt");
    ok(&[
        "train",
        "--config",
        p(&cfg),
        "--seed",
        "2",
        "--vocab",
        p(&vocab),
        "--corpus",
        p(&s.data("corpus.tsv")),
        "--queries",
        p(&s.data("queries.train.tsv")),
        "--triples",
        p(&s.data("triples.tsv")),
        "--dev-queries",
        p(&s.data("queries.dev.tsv")),
        "--qrels",
        p(&s.data("qrels.txt")),
        "--out",
        p(&ckpt),
    ]);
    let hist = fs::read_to_string(s.path("model.splp.history.csv")).unwrap();
    let rows: Vec<&str> = hist.lines().collect();
    assert_eq!(rows[0], "step,mrr10");
    assert_eq!(rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect::<Vec<_>>(), ["0", "30", "60"]);
    assert!(fs::read_to_string(s.path("model.splp.config")).unwrap().contains("seed = 2"));

    let model = ["--checkpoint", p(&ckpt), "--vocab", p(&vocab)];
    let corpus = s.data("corpus.tsv");
    let test_queries = s.data("queries.test.tsv");
    let doc_reps = s.path("docs.bin");
    let query_reps = s.path("queries.bin");
    let mut args = vec!["encode", "--input", p(&corpus), "--out", p(&doc_reps)];
    args.extend(model);
    ok(&args);
    let mut args = vec!["encode", "--input", p(&test_queries), "--out", p(&query_reps)];
    args.extend(model);
    ok(&args);

    let index = s.path("index.spl");
    ok(&["index", "--reps", p(&doc_reps), "--out", p(&index)]);
    let index2 = s.path("index2.spl");
    let mut args = vec!["index", "--corpus", p(&corpus), "--out", p(&index2)];
    args.extend(model);
    ok(&args);
    assert_eq!(fs::read(&index).unwrap(), fs::read(&index2).unwrap());

    let run_file = s.path("run.txt");
    let mut args = vec![
        "search",
        "--index",
        p(&index),
        "--queries",
        p(&test_queries),
        "--k",
        "10",
        "--out",
        p(&run_file),
    ];
    args.extend(model);
    ok(&args);
    let text = fs::read_to_string(&run_file).unwrap();
    let mut per_query = std::collections::HashMap::<&str, usize>::new();
    for line in text.lines() {
        let f: Vec<&str> = line.split(' ').collect();
        assert_eq!(f.len(), 6, "{line}");
        assert_eq!(f[1], "Q0");
        *per_query.entry(f[0]).or_default() += 1;
    }
    assert!(!per_query.is_empty());
    assert!(per_query.values().all(|&n| n <= 10));

    let from_reps = ok(&["search", "--index", p(&index), "--query-reps", p(&query_reps), "--k", "10"]);
    assert_eq!(String::from_utf8(from_reps.stdout).unwrap(), text);

    let eval = ok(&[
        "evaluate",
        "--run",
        p(&run_file),
        "--qrels",
        p(&s.data("qrels.txt")),
        "--metrics",
        "mrr@10,recall@10",
    ]);
    let csv = String::from_utf8(eval.stdout).unwrap();
    assert!(csv.starts_with("metric,query_id,value\n"));
    for m in ["mrr@10", "recall@10"] {
        let mean: f64 = csv
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{m},ALL,")))
            .unwrap()
            .parse()
            .unwrap();
        assert!((0.0..=1.0).contains(&mean));
    }

    let flops = ok(&["flops", "--index", p(&index), "--query-reps", p(&query_reps)]);
    let stdout = String::from_utf8(flops.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1);
    let v: f64 = stdout.trim().parse().unwrap();
    assert!(v.is_finite() && v >= 0.0);

    let doc_text = fs::read_to_string(s.data("corpus.tsv")).unwrap();
    let first_id = doc_text.lines().next().unwrap().split('\t').next().unwrap().to_string();
    let mut args = vec!["inspect", "--doc-id", &first_id, "--corpus", p(&corpus)];
    args.extend(model);
    let report = String::from_utf8(ok(&args).stdout).unwrap();
    assert!(report.starts_with("original terms:"));
    assert!(report.contains("expansion terms:"));
}

#[test]
fn sweep_writes_one_row_per_pair() {
    let s = Synth::new();
    let out = s.path("sweep.csv");
    ok(&[
        "sweep",
        "--vocab",
        p(&s.path("vocab.txt")),
        "--corpus",
        p(&s.data("corpus.tsv")),
        "--queries",
        p(&s.data("queries.train.tsv")),
        "--triples",
        p(&s.data("triples.tsv")),
        "--qrels",
        p(&s.data("qrels.txt")),
        "--eval-queries",
        p(&s.data("queries.test.tsv")),
        "--pairs",
        "0,1e-2:1e-1",
        "--reg-kind",
        "l1",
        "--recall-k",
        "10",
        "--parallel",
        "2",
        "--set",
        "embed_dim=8",
        "--set",
        "batch_size=8",
        "--set",
        "total_steps=10",
        "--out",
        p(&out),
    ]);
    let csv = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "lambda_q,lambda_d,reg_kind,mrr10,recall10,flops,gini");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,0,l1,"));
    assert!(lines[2].starts_with("0.01,0.1,l1,"));
}

#[test]
fn exit_codes() {
    let s = Synth::new();
    let usage = run(&["search", "--bogus"]);
    assert_eq!(usage.status.code(), Some(1));
    let usage = run(&["build-vocab", "--input", p(&s.data("corpus.tsv")), "--set", "colour=red"]);
    assert_eq!(usage.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&usage.stderr).contains("colour"));
    let usage = run(&["gen-synth", "--set", "n_topics=1", "--out", p(&s.path("x"))]);
    assert_eq!(usage.status.code(), Some(1));

    let missing = run(&["build-vocab", "--input", p(&s.path("nope.tsv"))]);
    assert_eq!(missing.status.code(), Some(2));

    let reps = s.path("r.bin");
    fs::write(&reps, b"not a rep file").unwrap();
    let bad = run(&["index", "--reps", p(&reps), "--out", p(&s.path("i.spl"))]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(bad.stdout.is_empty());

    let run_file = s.path("run.txt");
    fs::write(&run_file, "q1 Q0 d1 1 0.5\n").unwrap();
    let bad = run(&["evaluate", "--run", p(&run_file), "--qrels", p(&s.data("qrels.txt"))]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains(":1:"));

    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
