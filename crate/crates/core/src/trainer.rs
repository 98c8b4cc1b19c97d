//! ADAM training loop with validation-based checkpoint selection.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encoder::{encode_seq, Aggregation, EncoderConfig, EncoderParams, Gating, InitSpec};
use crate::error::{Error, Result};
use crate::eval::{mrr_at_k, Qrels, Run};
use crate::kernels::{Matrix, ParamSet};
use crate::objective::{total_loss, LossBreakdown, LossKind, RegKind, RegWeights, TrainBatch};
use crate::retrieval::{rank_all, RankedList};
use crate::scalar::Scalar;
use crate::sparse::SparseRep;
use crate::text::{tokenize, CorpusRecord, TokenSeq, Triple, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: u64,
    pub ramp_steps: u64,
    pub lambda_q: f64,
    pub lambda_d: f64,
    pub reg_kind: RegKind,
    pub loss: LossKind,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub validation_query_count: usize,
    pub validation_interval: u64,
    pub seed: u64,
    pub embed_dim: usize,
    pub context_depth: u8,
    pub aggregation: Aggregation,
    pub gating: Gating,
    pub max_len: usize,
    pub init_embed_std: f64,
    pub init_output_bias: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            total_steps: 5000,
            ramp_steps: 2000,
            lambda_q: 1e-3,
            lambda_d: 1e-3,
            reg_kind: RegKind::Flops,
            loss: LossKind::InBatch,
            learning_rate: 2e-3,
            warmup_steps: 100,
            validation_query_count: 500,
            validation_interval: 500,
            seed: 0,
            embed_dim: 64,
            context_depth: 0,
            aggregation: Aggregation::LogSaturate,
            gating: Gating::None,
            max_len: 256,
            init_embed_std: 0.1,
            init_output_bias: 0.0,
        }
    }
}

pub const TRAIN_KEYS: [&str; 19] = [
    "batch_size",
    "total_steps",
    "ramp_steps",
    "lambda_q",
    "lambda_d",
    "reg_kind",
    "loss",
    "learning_rate",
    "warmup_steps",
    "validation_query_count",
    "validation_interval",
    "seed",
    "embed_dim",
    "context_depth",
    "aggregation",
    "gating",
    "max_len",
    "init_embed_std",
    "init_output_bias",
];

fn parse_value<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

/// Splits `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, n + 1, "expected `key = value`"))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "total_steps" => self.total_steps = parse_value(key, value)?,
            "ramp_steps" => self.ramp_steps = parse_value(key, value)?,
            "lambda_q" => self.lambda_q = parse_value(key, value)?,
            "lambda_d" => self.lambda_d = parse_value(key, value)?,
            "reg_kind" => self.reg_kind = value.parse()?,
            "loss" => self.loss = value.parse()?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "warmup_steps" => self.warmup_steps = parse_value(key, value)?,
            "validation_query_count" => self.validation_query_count = parse_value(key, value)?,
            "validation_interval" => self.validation_interval = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "embed_dim" => self.embed_dim = parse_value(key, value)?,
            "context_depth" => self.context_depth = parse_value(key, value)?,
            "aggregation" => self.aggregation = value.parse()?,
            "gating" => self.gating = value.parse()?,
            "max_len" => self.max_len = parse_value(key, value)?,
            "init_embed_std" => self.init_embed_std = parse_value(key, value)?,
            "init_output_bias" => self.init_output_bias = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (k, v) in parse_key_values(text, path)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("batch_size", self.batch_size.to_string());
        put("total_steps", self.total_steps.to_string());
        put("ramp_steps", self.ramp_steps.to_string());
        put("lambda_q", self.lambda_q.to_string());
        put("lambda_d", self.lambda_d.to_string());
        put("reg_kind", self.reg_kind.to_string());
        put("loss", self.loss.to_string());
        put("learning_rate", self.learning_rate.to_string());
        put("warmup_steps", self.warmup_steps.to_string());
        put("validation_query_count", self.validation_query_count.to_string());
        put("validation_interval", self.validation_interval.to_string());
        put("seed", self.seed.to_string());
        put("embed_dim", self.embed_dim.to_string());
        put("context_depth", self.context_depth.to_string());
        put("aggregation", self.aggregation.to_string());
        put("gating", self.gating.to_string());
        put("max_len", self.max_len.to_string());
        put("init_embed_std", self.init_embed_std.to_string());
        put("init_output_bias", self.init_output_bias.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size as u64),
            ("ramp_steps", self.ramp_steps),
            ("validation_query_count", self.validation_query_count as u64),
            ("validation_interval", self.validation_interval),
            ("embed_dim", self.embed_dim as u64),
            ("max_len", self.max_len as u64),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if !(self.lambda_q >= 0.0 && self.lambda_d >= 0.0) {
            return Err(Error::Config("lambda_q and lambda_d must be non-negative".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.init_embed_std > 0.0 && self.init_embed_std.is_finite()) {
            return Err(Error::Config("init_embed_std must be positive".into()));
        }
        if !self.init_output_bias.is_finite() {
            return Err(Error::Config("init_output_bias must be finite".into()));
        }
        if self.context_depth > 1 {
            return Err(Error::Config("context_depth must be 0 or 1".into()));
        }
        Ok(())
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            context_depth: self.context_depth,
            aggregation: self.aggregation,
            gating: self.gating,
            max_len: self.max_len,
        }
    }

    pub fn init_spec(&self) -> InitSpec {
        InitSpec {
            embed_std: self.init_embed_std,
            output_bias: self.init_output_bias,
            seed: self.seed,
        }
    }

    pub fn reg_weights(&self) -> RegWeights {
        RegWeights {
            lambda_q: self.lambda_q,
            lambda_d: self.lambda_d,
            ramp_steps: self.ramp_steps,
            kind: self.reg_kind,
        }
    }
}

/// Linear warmup to `peak`, then linear decay reaching 0 at `total`.
pub fn learning_rate_at(step: u64, peak: f64, warmup: u64, total: u64) -> f64 {
    if step < warmup {
        return peak * (step + 1) as f64 / warmup as f64;
    }
    if step >= total {
        return 0.0;
    }
    peak * (total - step) as f64 / (total - warmup) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Matrix<T>>,
    pub v: Vec<Matrix<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<P: ParamSet<T>>(params: &P) -> Self {
        let zeros = |p: &P| -> Vec<Matrix<T>> {
            p.tensors()
                .iter()
                .map(|t| Matrix::zeros(t.value.rows(), t.value.cols()))
                .collect()
        };
        AdamState {
            m: zeros(params),
            v: zeros(params),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected update from the gradients currently held in
    /// `params`. Gradients are checked before anything is modified.
    pub fn step<P: ParamSet<T>>(&mut self, params: &mut P, lr: f64) -> Result<()> {
        for t in params.tensors() {
            if !t.grad.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", t.name)));
            }
        }
        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let one = T::one();
        let c1 = T::lit(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::lit(1.0 - self.beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(lr), T::lit(self.eps));
        for ((t, m), v) in params.tensors_mut().into_iter().zip(&mut self.m).zip(&mut self.v) {
            let g = t.grad.as_slice();
            let x = t.value.as_mut_slice();
            for (((x, &g), m), v) in x
                .iter_mut()
                .zip(g)
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Held-out queries and their judgments.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub queries: Vec<(String, TokenSeq)>,
    pub qrels: Qrels,
}

#[derive(Debug, Clone)]
pub struct TrainData {
    pub docs: Vec<(String, TokenSeq)>,
    pub queries: HashMap<String, TokenSeq>,
    pub triples: Vec<Triple>,
    pub validation: Option<ValidationSet>,
}

pub fn tokenize_records(records: &[CorpusRecord], vocab: &Vocabulary, max_len: usize) -> Result<Vec<(String, TokenSeq)>> {
    records
        .iter()
        .map(|r| {
            let seq = tokenize(&r.text, vocab, max_len).map_err(|e| match e {
                Error::EmptyTokenSequence => Error::Format(format!("record {}: empty token sequence", r.id)),
                other => other,
            })?;
            Ok((r.id.clone(), seq))
        })
        .collect()
}

impl TrainData {
    pub fn from_records(
        vocab: &Vocabulary,
        max_len: usize,
        corpus: &[CorpusRecord],
        queries: &[CorpusRecord],
        triples: Vec<Triple>,
        validation: Option<(&[CorpusRecord], Qrels)>,
    ) -> Result<Self> {
        let validation = match validation {
            Some((q, qrels)) => Some(ValidationSet {
                queries: tokenize_records(q, vocab, max_len)?,
                qrels,
            }),
            None => None,
        };
        Ok(TrainData {
            docs: tokenize_records(corpus, vocab, max_len)?,
            queries: tokenize_records(queries, vocab, max_len)?.into_iter().collect(),
            triples,
            validation,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainEvent {
    Step { step: u64, loss: LossBreakdown<f64>, lr: f64 },
    Validation { step: u64, mrr10: f64 },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters with the best validation MRR@10 (the final parameters
    /// when there is no validation set).
    pub best: EncoderParams<T>,
    pub best_step: u64,
    pub best_mrr10: Option<f64>,
    /// `(step, MRR@10)` for every validation run.
    pub history: Vec<(u64, f64)>,
}

pub fn history_csv(history: &[(u64, f64)]) -> String {
    let mut s = String::from("step,mrr10\n");
    for (step, v) in history {
        let _ = writeln!(s, "{step},{v:.6}");
    }
    s
}

/// Encodes every sequence and narrows the weights to `f32`.
pub fn encode_all<T: Scalar>(params: &EncoderParams<T>, seqs: &[(String, TokenSeq)]) -> Result<Vec<(String, SparseRep<f32>)>> {
    seqs.par_iter()
        .map(|(id, s)| Ok((id.clone(), encode_seq(s, params)?.cast::<f32>())))
        .collect()
}

/// Ranks all documents (zero scores included, ties by doc id) for each
/// query.
pub fn rank_queries(
    queries: &[(String, SparseRep<f32>)],
    docs: &[(String, SparseRep<f32>)],
    k: usize,
) -> Result<Vec<RankedList>> {
    queries
        .par_iter()
        .map(|(id, q)| {
            Ok(RankedList {
                query_id: id.clone(),
                hits: rank_all(docs, q, k)?,
            })
        })
        .collect()
}

/// MRR@10 by brute-force retrieval over the whole corpus.
pub fn validate<T: Scalar>(
    params: &EncoderParams<T>,
    queries: &[(String, TokenSeq)],
    qrels: &Qrels,
    docs: &[(String, TokenSeq)],
) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::EmptySample("validation queries"));
    }
    let q = encode_all(params, queries)?;
    let d = encode_all(params, docs)?;
    let run = Run::from_lists(&rank_queries(&q, &d, 10)?);
    let judged = qrels.subset(queries.iter().map(|(id, _)| id.as_str()));
    Ok(mrr_at_k(&run, &judged, 10, 1).mean)
}

struct Resolved {
    query: usize,
    positive: usize,
    negative: usize,
}

fn resolve_triples(data: &TrainData, query_ids: &[&String]) -> Result<Vec<Resolved>> {
    let doc_pos: HashMap<&str, usize> = data
        .docs
        .iter()
        .enumerate()
        .map(|(i, (id, _))| (id.as_str(), i))
        .collect();
    let query_pos: HashMap<&str, usize> = query_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let doc = |id: &str| doc_pos.get(id).copied().ok_or_else(|| Error::UnknownId(id.to_string()));
    data.triples
        .iter()
        .map(|t| {
            Ok(Resolved {
                query: query_pos
                    .get(t.query_id.as_str())
                    .copied()
                    .ok_or_else(|| Error::UnknownId(t.query_id.clone()))?,
                positive: doc(&t.positive_id)?,
                negative: doc(&t.negative_id)?,
            })
        })
        .collect()
}

/// Trains from the config's initialization. Triples are consumed in a
/// seeded shuffled order each epoch; a trailing partial batch is dropped.
pub fn train(
    data: &TrainData,
    vocab_size: usize,
    config: &TrainConfig,
    on_event: &mut dyn FnMut(&TrainEvent),
) -> Result<TrainOutcome<f64>> {
    config.validate()?;
    let params = EncoderParams::<f64>::init(config.encoder_config(vocab_size), config.init_spec())?;
    train_from(data, params, config, on_event)
}

pub fn train_from<T: Scalar>(
    data: &TrainData,
    mut params: EncoderParams<T>,
    config: &TrainConfig,
    on_event: &mut dyn FnMut(&TrainEvent),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let mut query_ids: Vec<&String> = data.queries.keys().collect();
    query_ids.sort();
    let triples = resolve_triples(data, &query_ids)?;
    if config.total_steps > 0 && triples.len() < config.batch_size {
        return Err(Error::Config(format!(
            "{} triples cannot fill a batch of {}",
            triples.len(),
            config.batch_size
        )));
    }
    let validation = data.validation.as_ref().map(|v| {
        let n = v.queries.len().min(config.validation_query_count);
        (&v.queries[..n], &v.qrels)
    });

    let mut adam = AdamState::new(&params);
    let reg = config.reg_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_ba7c4e5);
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut cursor = order.len();
    let mut best = Best {
        params: params.clone(),
        step: 0,
        mrr10: None,
        history: Vec::new(),
    };
    let run_validation = |step: u64, params: &EncoderParams<T>, best: &mut Best<T>| -> Result<Option<f64>> {
        let Some((queries, qrels)) = validation else { return Ok(None) };
        let mrr = validate(params, queries, qrels, &data.docs)?;
        best.record(step, params, mrr);
        Ok(Some(mrr))
    };
    if let Some(mrr10) = run_validation(0, &params, &mut best)? {
        on_event(&TrainEvent::Validation { step: 0, mrr10 });
    }

    for step in 0..config.total_steps {
        if cursor + config.batch_size > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let picked = &order[cursor..cursor + config.batch_size];
        cursor += config.batch_size;
        let q = |r: &Resolved| data.queries[query_ids[r.query]].clone();
        let batch = TrainBatch::new(
            picked.iter().map(|&i| q(&triples[i])).collect(),
            picked.iter().map(|&i| data.docs[triples[i].positive].1.clone()).collect(),
            picked.iter().map(|&i| data.docs[triples[i].negative].1.clone()).collect(),
        )?;
        params.zero_grads();
        let loss = total_loss(&batch, &mut params, config.loss, &reg, step)?;
        if !loss.total.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {step}")));
        }
        let lr = learning_rate_at(step, config.learning_rate, config.warmup_steps, config.total_steps);
        adam.step(&mut params, lr)?;
        on_event(&TrainEvent::Step {
            step: step + 1,
            loss: LossBreakdown {
                total: loss.total.to_f64_lossy(),
                rank: loss.rank.to_f64_lossy(),
                reg_query: loss.reg_query.to_f64_lossy(),
                reg_doc: loss.reg_doc.to_f64_lossy(),
                lambda_q: loss.lambda_q.to_f64_lossy(),
                lambda_d: loss.lambda_d.to_f64_lossy(),
            },
            lr,
        });
        let done = step + 1;
        if done % config.validation_interval == 0 || done == config.total_steps {
            if let Some(mrr10) = run_validation(done, &params, &mut best)? {
                on_event(&TrainEvent::Validation { step: done, mrr10 });
            }
        }
    }

    if data.validation.is_none() {
        best.params = params;
        best.step = config.total_steps;
    }
    Ok(TrainOutcome {
        best: best.params,
        best_step: best.step,
        best_mrr10: best.mrr10,
        history: best.history,
    })
}

struct Best<T> {
    params: EncoderParams<T>,
    step: u64,
    mrr10: Option<f64>,
    history: Vec<(u64, f64)>,
}

impl<T: Scalar> Best<T> {
    /// Keeps the latest maximum.
    fn record(&mut self, step: u64, params: &EncoderParams<T>, mrr10: f64) {
        self.history.push((step, mrr10));
        if self.mrr10.map_or(true, |b| mrr10 >= b) {
            self.mrr10 = Some(mrr10);
            self.step = step;
            self.params = params.clone();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::ParamTensor;

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let mut p = vec![ParamTensor::new("x", Matrix::row_vector(vec![1.0f64, -2.0, 0.5]))];
        p[0].grad = Matrix::row_vector(vec![0.3, -4.0, 0.0]);
        let mut adam = AdamState::new(&p);
        adam.step(&mut p, 0.01).unwrap();
        let x = p[0].value.as_slice();
        assert!((x[0] - 0.99).abs() < 1e-8);
        assert!((x[1] + 1.99).abs() < 1e-8);
        assert_eq!(x[2], 0.5);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = vec![ParamTensor::new("x", Matrix::row_vector(vec![1.0f64, 2.0]))];
        let mut adam = AdamState::new(&p);
        adam.step(&mut p, 0.1).unwrap();
        assert_eq!(p[0].value.as_slice(), &[1.0, 2.0]);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn adam_decreases_quadratic() {
        let mut p = vec![ParamTensor::new("theta", Matrix::row_vector(vec![1.0f64, 1.0]))];
        let mut adam = AdamState::new(&p);
        let f = |p: &Vec<ParamTensor<f64>>| p[0].value.as_slice().iter().map(|x| x * x).sum::<f64>();
        let mut prev = f(&p);
        for _ in 0..10 {
            let g: Vec<f64> = p[0].value.as_slice().iter().map(|x| 2.0 * x).collect();
            p[0].grad = Matrix::row_vector(g);
            adam.step(&mut p, 0.05).unwrap();
            let now = f(&p);
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut p = vec![ParamTensor::new("w", Matrix::row_vector(vec![1.0f64]))];
        p[0].grad = Matrix::row_vector(vec![f64::NAN]);
        let mut adam = AdamState::new(&p);
        let err = adam.step(&mut p, 0.1).unwrap_err();
        assert!(err.to_string().contains("gradient of w"));
        assert_eq!(adam.t, 0);
    }

    #[test]
    fn schedule_shape() {
        assert_eq!(learning_rate_at(0, 1.0, 4, 104), 0.25);
        assert_eq!(learning_rate_at(3, 1.0, 4, 104), 1.0);
        assert_eq!(learning_rate_at(4, 1.0, 4, 104), 1.0);
        assert_eq!(learning_rate_at(54, 1.0, 4, 104), 0.5);
        assert_eq!(learning_rate_at(104, 1.0, 4, 104), 0.0);
        assert_eq!(learning_rate_at(0, 1.0, 0, 10), 1.0);
    }

    #[test]
    fn config_parsing() {
        let p = Path::new("c.conf");
        let cfg = TrainConfig::parse("# desk\nbatch_size = 8\nreg_kind = l1 # inline\n\n", p).unwrap();
        assert_eq!(cfg.batch_size, 8);
        assert_eq!(cfg.reg_kind, RegKind::L1);
        assert_eq!(TrainConfig::parse(&cfg.to_text(), p).unwrap(), cfg);
        assert!(TrainConfig::parse("bogus = 1\n", p).is_err());
        assert!(TrainConfig::parse("batch_size = 0\n", p).is_err());
        assert!(TrainConfig::parse("batch_size 3\n", p).is_err());
        let d = TrainConfig::default();
        assert_eq!((d.batch_size, d.total_steps, d.ramp_steps, d.embed_dim), (16, 5000, 2000, 64));
    }

    #[test]
    fn validate_constructed_query() {
        let vocab = Vocabulary::from_terms(["apple", "pear", "plum"]).unwrap();
        let mut cfg = EncoderConfig::new(vocab.len(), 4);
        cfg.gating = Gating::LexicalOnly;
        let mut params = EncoderParams::<f64>::init(cfg, InitSpec::default()).unwrap();
        params.output_bias.value.fill(1.0);
        let docs = tokenize_records(
            &[CorpusRecord::new("d1", "pear"), CorpusRecord::new("d2", "apple plum")],
            &vocab,
            8,
        )
        .unwrap();
        let queries = tokenize_records(&[CorpusRecord::new("q", "apple")], &vocab, 8).unwrap();
        let mut qrels = Qrels::new();
        qrels.insert("q", "d2", 1);
        assert_eq!(validate(&params, &queries, &qrels, &docs).unwrap(), 1.0);

        // Nothing active: every score is zero and doc-id order decides.
        params.output_bias.value.fill(-1e3);
        let mut qrels = Qrels::new();
        qrels.insert("q", "d2", 1);
        assert_eq!(validate(&params, &queries, &qrels, &docs).unwrap(), 0.5);
        assert!(validate(&params, &[], &qrels, &docs).is_err());
    }
}
