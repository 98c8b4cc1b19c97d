use lexsparse::checkpoint::{checkpoint_bytes, read_checkpoint, write_checkpoint};
use lexsparse::encoder::EncoderParams;
use lexsparse::eval::{evaluate_run, Metric, Qrels};
use lexsparse::index::{build_index, read_index, write_index};
use lexsparse::repcache::{read_reps, write_reps};
use lexsparse::retrieval::{batch_search, write_run};
use lexsparse::synth::{gen_synth, SynthConfig, SynthData};
use lexsparse::text::{build_vocab, Vocabulary};
use lexsparse::trainer::{encode_all, rank_queries, tokenize_records, train, validate, TrainConfig, TrainData};
use lexsparse::Error;

fn small() -> (SynthData, Vocabulary, TrainData) {
    let cfg = SynthConfig {
        seed: 4,
        n_docs: 150,
        n_queries: 30,
        n_heldout: 10,
        n_topics: 15,
        vocab_terms: 120,
        triples_per_query: 4,
        ..SynthConfig::default()
    };
    let data = gen_synth(&cfg).unwrap();
    let vocab = build_vocab(data.corpus.iter().chain(&data.train_queries), 10_000, 1).unwrap();
    let td = TrainData::from_records(
        &vocab,
        64,
        &data.corpus,
        &data.train_queries,
        data.triples.clone(),
        Some((&data.dev_queries, data.qrels.clone())),
    )
    .unwrap();
    (data, vocab, td)
}

fn config(steps: u64) -> TrainConfig {
    TrainConfig {
        embed_dim: 8,
        batch_size: 8,
        total_steps: steps,
        ramp_steps: 20,
        warmup_steps: 5,
        validation_interval: 20,
        learning_rate: 5e-3,
        lambda_q: 1e-2,
        lambda_d: 1e-2,
        max_len: 64,
        ..TrainConfig::default()
    }
}

#[test]
fn evaluate_run_agrees_with_validate() {
    let (data, vocab, td) = small();
    let out = train(&td, vocab.len(), &config(40), &mut |_| {}).unwrap();
    let test = tokenize_records(&data.test_queries, &vocab, 64).unwrap();
    let mrr = validate(&out.best, &test, &data.qrels, &td.docs).unwrap();

    let q = encode_all(&out.best, &test).unwrap();
    let d = encode_all(&out.best, &td.docs).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let run_path = dir.path().join("run.txt");
    let qrels_path = dir.path().join("qrels.txt");
    write_run(&run_path, &rank_queries(&q, &d, 10).unwrap(), "t").unwrap();
    let judged = data.qrels.subset(data.test_queries.iter().map(|r| r.id.as_str()));
    std::fs::write(&qrels_path, judged.to_text()).unwrap();
    let reports = evaluate_run(&run_path, &qrels_path, &[Metric::Mrr(10)], 1).unwrap();
    assert!((reports[0].mean - mrr).abs() < 1e-12, "{} vs {mrr}", reports[0].mean);
}

#[test]
fn best_checkpoint_matches_reported_validation() {
    let (_, vocab, td) = small();
    let out = train(&td, vocab.len(), &config(60), &mut |_| {}).unwrap();
    let steps: Vec<u64> = out.history.iter().map(|h| h.0).collect();
    assert_eq!(steps, [0, 20, 40, 60]);
    let best = out.history.iter().map(|h| h.1).fold(f64::MIN, f64::max);
    assert_eq!(out.best_mrr10, Some(best));
    let v = td.validation.as_ref().unwrap();
    assert_eq!(validate(&out.best, &v.queries, &v.qrels, &td.docs).unwrap(), best);
}

#[test]
fn zero_steps_returns_initialization() {
    let (_, vocab, mut td) = small();
    td.validation = None;
    let cfg = config(0);
    let out = train(&td, vocab.len(), &cfg, &mut |_| {}).unwrap();
    let init = EncoderParams::<f64>::init(cfg.encoder_config(vocab.len()), cfg.init_spec()).unwrap();
    assert_eq!(checkpoint_bytes(&out.best), checkpoint_bytes(&init));
    assert_eq!(out.best_mrr10, None);
}

#[test]
fn unknown_triple_ids_are_rejected() {
    let (_, vocab, mut td) = small();
    td.triples[3].positive_id = "no-such-doc".into();
    let err = train(&td, vocab.len(), &config(10), &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::UnknownId(ref id) if id == "no-such-doc"));
}

#[test]
fn artifacts_roundtrip_through_files() {
    let (data, vocab, mut td) = small();
    td.validation = None;
    let out = train(&td, vocab.len(), &config(20), &mut |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let ckpt = dir.path().join("m.splp");
    write_checkpoint(&out.best, &ckpt).unwrap();
    let params = read_checkpoint::<f64>(&ckpt, 64).unwrap();
    assert_eq!(checkpoint_bytes(&params), checkpoint_bytes(&out.best));

    let vocab_path = dir.path().join("vocab.txt");
    vocab.write(&vocab_path).unwrap();
    assert_eq!(Vocabulary::read(&vocab_path).unwrap(), vocab);

    let docs = encode_all(&params, &td.docs).unwrap();
    let reps = dir.path().join("d.bin");
    write_reps(&reps, vocab.len(), &docs).unwrap();
    let (dim, back) = read_reps(&reps).unwrap();
    assert_eq!((dim, &back), (vocab.len(), &docs));

    let index = build_index(dim, back.iter().map(|(id, r)| (id.as_str(), r))).unwrap();
    let index_path = dir.path().join("i.spl");
    write_index(&index, &index_path).unwrap();
    let loaded = read_index(&index_path).unwrap();
    assert_eq!(loaded, index);

    let test = tokenize_records(&data.test_queries, &vocab, 64).unwrap();
    let q = encode_all(&params, &test).unwrap();
    assert_eq!(batch_search(&loaded, &q, 20).unwrap(), batch_search(&index, &q, 20).unwrap());
}

#[test]
fn qrels_text_roundtrip() {
    let (data, _, _) = small();
    let text = data.qrels.to_text();
    let back = Qrels::parse(&text, std::path::Path::new("q")).unwrap();
    assert_eq!(back, data.qrels);
}

#[test]
fn vocabulary_size_on_synthetic_corpus() {
    let cfg = SynthConfig {
        n_docs: 1000,
        ..SynthConfig::default()
    };
    let data = gen_synth(&cfg).unwrap();
    let distinct: std::collections::HashSet<String> = data
        .corpus
        .iter()
        .flat_map(|r| lexsparse::text::normalize(&r.text).collect::<Vec<_>>())
        .collect();
    let a = build_vocab(&data.corpus, 512, 1).unwrap();
    let b = build_vocab(&gen_synth(&cfg).unwrap().corpus, 512, 1).unwrap();
    assert_eq!(a.len(), 512.min(distinct.len() + 1));
    assert_eq!(a.to_text(), b.to_text());
}

#[test]
fn postings_recount_matches_nonzeros() {
    let cfg = SynthConfig {
        n_docs: 1000,
        ..SynthConfig::default()
    };
    let data = gen_synth(&cfg).unwrap();
    let vocab = build_vocab(&data.corpus, 100_000, 1).unwrap();
    let mut ec = lexsparse::encoder::EncoderConfig::new(vocab.len(), 8);
    ec.max_len = 64;
    let spec = lexsparse::encoder::InitSpec {
        embed_std: 0.3,
        output_bias: -0.2,
        seed: 3,
    };
    let params = EncoderParams::<f64>::init(ec, spec).unwrap();
    let docs = encode_all(&params, &tokenize_records(&data.corpus, &vocab, 64).unwrap()).unwrap();
    let index = build_index(vocab.len(), docs.iter().map(|(id, r)| (id.as_str(), r))).unwrap();
    let nnz: usize = docs.iter().map(|(_, r)| r.nnz()).sum();
    assert!(nnz > 0);
    assert_eq!(index.total_postings(), nnz);
    let per_doc: usize = index.doc_nnz().iter().map(|&n| n as usize).sum();
    assert_eq!(per_doc, nnz);
}

#[test]
fn run_file_metrics_match_in_memory() {
    let (data, vocab, mut td) = small();
    td.validation = None;
    let out = train(&td, vocab.len(), &config(30), &mut |_| {}).unwrap();
    let docs = encode_all(&out.best, &td.docs).unwrap();
    let index = build_index(vocab.len(), docs.iter().map(|(id, r)| (id.as_str(), r))).unwrap();
    let q = encode_all(&out.best, &tokenize_records(&data.test_queries, &vocab, 64).unwrap()).unwrap();
    let lists = batch_search(&index, &q, 10).unwrap();
    let metrics = [Metric::Mrr(10), Metric::Recall(10), Metric::Ndcg(10)];
    let judged = data.qrels.subset(data.test_queries.iter().map(|r| r.id.as_str()));
    let in_memory = lexsparse::eval::evaluate(&lexsparse::eval::Run::from_lists(&lists), &judged, &metrics, 1);

    let dir = tempfile::tempdir().unwrap();
    let run_path = dir.path().join("run.txt");
    let qrels_path = dir.path().join("qrels.txt");
    write_run(&run_path, &lists, "t").unwrap();
    std::fs::write(&qrels_path, judged.to_text()).unwrap();
    let from_files = evaluate_run(&run_path, &qrels_path, &metrics, 1).unwrap();
    for (a, b) in in_memory.iter().zip(&from_files) {
        assert_eq!(a.metric, b.metric);
        assert_eq!(a.per_query, b.per_query);
        assert_eq!(a.mean, b.mean);
    }
}

/// Expansion terms (weights on terms absent from the input) carry topic
/// identity: same-topic documents overlap on them far more than documents
/// of different topics.
#[test]
fn trained_expansions_are_shared_within_a_topic() {
    let cfg = SynthConfig {
        seed: 1,
        n_docs: 400,
        n_queries: 80,
        n_heldout: 10,
        n_topics: 40,
        vocab_terms: 320,
        ..SynthConfig::default()
    };
    let data = gen_synth(&cfg).unwrap();
    let vocab = build_vocab(data.corpus.iter().chain(&data.train_queries), 100_000, 1).unwrap();
    let td = TrainData::from_records(&vocab, 64, &data.corpus, &data.train_queries, data.triples.clone(), None)
        .unwrap();
    let tc = TrainConfig {
        embed_dim: 16,
        batch_size: 16,
        total_steps: 600,
        ramp_steps: 300,
        learning_rate: 5e-3,
        init_output_bias: -1.0,
        lambda_q: 1e-2,
        lambda_d: 1e-2,
        max_len: 64,
        ..TrainConfig::default()
    };
    let out = train(&td, vocab.len(), &tc, &mut |_| {}).unwrap();
    let expansions: Vec<std::collections::HashMap<String, f64>> = data
        .corpus
        .iter()
        .take(120)
        .map(|rec| {
            let r = lexsparse::inspect::inspect(&out.best, &vocab, &rec.text).unwrap();
            r.expansions.into_iter().collect()
        })
        .collect();
    let cosine = |a: &std::collections::HashMap<String, f64>, b: &std::collections::HashMap<String, f64>| {
        let dot: f64 = a.iter().filter_map(|(t, w)| b.get(t).map(|v| w * v)).sum();
        let norm = |m: &std::collections::HashMap<String, f64>| m.values().map(|w| w * w).sum::<f64>().sqrt();
        let n = norm(a) * norm(b);
        if n > 0.0 { dot / n } else { 0.0 }
    };
    let (mut same, mut ns, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..expansions.len() {
        for j in i + 1..expansions.len() {
            let c = cosine(&expansions[i], &expansions[j]);
            if data.doc_topics[i] == data.doc_topics[j] {
                same += c;
                ns += 1;
            } else {
                cross += c;
                nc += 1;
            }
        }
    }
    let (same, cross) = (same / ns as f64, cross / nc as f64);
    assert!(ns > 0 && same > 0.5, "same-topic expansion cosine {same:.3}");
    assert!(same > 5.0 * cross, "same-topic {same:.3} vs cross-topic {cross:.3}");
}
