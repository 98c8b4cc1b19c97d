//! Model assessment and regularization-strength sweeps.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::eval::{mrr_at_k, recall_at_k, Qrels, Run};
use crate::index::{build_index, flops_metric_index, posting_stats, InvertedIndex};
use crate::objective::RegKind;
use crate::retrieval::batch_search;
use crate::scalar::Scalar;
use crate::sparse::SparseRep;
use crate::text::TokenSeq;
use crate::trainer::{encode_all, train, TrainConfig, TrainData};

/// Retrieval quality and cost of one model on a query set.
#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    pub mrr10: f64,
    pub recall: f64,
    pub recall_k: usize,
    pub flops: f64,
    pub gini: f64,
    pub mean_doc_nnz: f64,
    pub mean_query_nnz: f64,
}

pub struct EncodedCollection {
    pub docs: Vec<(String, SparseRep<f32>)>,
    pub queries: Vec<(String, SparseRep<f32>)>,
    pub index: InvertedIndex,
}

pub fn encode_collection<T: Scalar>(
    params: &EncoderParams<T>,
    docs: &[(String, TokenSeq)],
    queries: &[(String, TokenSeq)],
) -> Result<EncodedCollection> {
    let docs = encode_all(params, docs)?;
    let queries = encode_all(params, queries)?;
    let index = build_index(params.vocab_size(), docs.iter().map(|(id, r)| (id.as_str(), r)))?;
    Ok(EncodedCollection { docs, queries, index })
}

fn mean_nnz(reps: &[(String, SparseRep<f32>)]) -> f64 {
    if reps.is_empty() {
        return 0.0;
    }
    reps.iter().map(|(_, r)| r.nnz() as f64).sum::<f64>() / reps.len() as f64
}

pub fn assess_encoded(enc: &EncodedCollection, qrels: &Qrels, recall_k: usize) -> Result<Assessment> {
    let lists = batch_search(&enc.index, &enc.queries, recall_k.max(10))?;
    let run = Run::from_lists(&lists);
    let judged = qrels.subset(enc.queries.iter().map(|(id, _)| id.as_str()));
    let query_reps: Vec<SparseRep<f32>> = enc.queries.iter().map(|(_, r)| r.clone()).collect();
    Ok(Assessment {
        mrr10: mrr_at_k(&run, &judged, 10, 1).mean,
        recall: recall_at_k(&run, &judged, recall_k, 1).mean,
        recall_k,
        flops: flops_metric_index(&query_reps, &enc.index)?,
        gini: posting_stats(&enc.index).gini,
        mean_doc_nnz: mean_nnz(&enc.docs),
        mean_query_nnz: mean_nnz(&enc.queries),
    })
}

/// Encodes, indexes and searches the collection with `params`.
pub fn assess<T: Scalar>(
    params: &EncoderParams<T>,
    docs: &[(String, TokenSeq)],
    queries: &[(String, TokenSeq)],
    qrels: &Qrels,
    recall_k: usize,
) -> Result<Assessment> {
    assess_encoded(&encode_collection(params, docs, queries)?, qrels, recall_k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// `(λ_q, λ_d)` pairs, run in order.
    pub pairs: Vec<(f64, f64)>,
    pub reg_kind: RegKind,
    pub base: TrainConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::Config("sweep needs at least one (lambda_q, lambda_d) pair".into()));
        }
        if self.pairs.iter().any(|&(q, d)| !(q >= 0.0 && d >= 0.0 && q.is_finite() && d.is_finite())) {
            return Err(Error::Config("sweep lambdas must be finite and non-negative".into()));
        }
        self.base.validate()
    }

    pub fn config_for(&self, pair: (f64, f64)) -> TrainConfig {
        TrainConfig {
            lambda_q: pair.0,
            lambda_d: pair.1,
            reg_kind: self.reg_kind,
            ..self.base.clone()
        }
    }
}

/// Parses `lq:ld,lq:ld,...`; a bare value sets both lambdas.
pub fn parse_pairs(text: &str) -> Result<Vec<(f64, f64)>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad lambda {s:?}")))
            };
            match item.split_once(':') {
                Some((q, d)) => Ok((num(q)?, num(d)?)),
                None => {
                    let v = num(item)?;
                    Ok((v, v))
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda_q: f64,
    pub lambda_d: f64,
    pub reg_kind: RegKind,
    pub assessment: Assessment,
}

pub fn sweep_header(recall_k: usize) -> String {
    format!("lambda_q,lambda_d,reg_kind,mrr10,recall{recall_k},flops,gini\n")
}

impl SweepRow {
    pub fn to_csv(&self) -> String {
        let a = &self.assessment;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6},{:.6}",
            self.lambda_q, self.lambda_d, self.reg_kind, a.mrr10, a.recall, a.flops, a.gini
        );
        s
    }
}

/// Collection on which sweep models are scored.
pub struct EvalSet<'a> {
    pub docs: &'a [(String, TokenSeq)],
    pub queries: &'a [(String, TokenSeq)],
    pub qrels: &'a Qrels,
    pub recall_k: usize,
}

fn run_pair(
    spec: &SweepSpec,
    pair: (f64, f64),
    data: &TrainData,
    vocab_size: usize,
    eval: &EvalSet<'_>,
) -> Result<SweepRow> {
    let cfg = spec.config_for(pair);
    let out = train(data, vocab_size, &cfg, &mut |_| {})?;
    Ok(SweepRow {
        lambda_q: pair.0,
        lambda_d: pair.1,
        reg_kind: spec.reg_kind,
        assessment: assess(&out.best, eval.docs, eval.queries, eval.qrels, eval.recall_k)?,
    })
}

/// Trains and scores one model per pair, writing the header and then each
/// row to `out` as soon as it (and every row before it) is done. With
/// `parallel > 1`, that many trainings run at once.
pub fn run_sweep(
    spec: &SweepSpec,
    data: &TrainData,
    vocab_size: usize,
    eval: &EvalSet<'_>,
    parallel: usize,
    out: &mut dyn Write,
) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let io = |e| Error::Format(format!("writing sweep output: {e}"));
    out.write_all(sweep_header(eval.recall_k).as_bytes()).map_err(io)?;
    out.flush().map_err(io)?;
    let mut rows = Vec::with_capacity(spec.pairs.len());
    for chunk in spec.pairs.chunks(parallel.max(1)) {
        let done: Vec<Result<SweepRow>> = chunk
            .par_iter()
            .map(|&p| run_pair(spec, p, data, vocab_size, eval))
            .collect();
        for r in done {
            let row = r?;
            out.write_all(row.to_csv().as_bytes()).map_err(io)?;
            out.flush().map_err(io)?;
            rows.push(row);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_syntax() {
        assert_eq!(parse_pairs("1e-3:1e-2, 0.5").unwrap(), vec![(1e-3, 1e-2), (0.5, 0.5)]);
        assert!(parse_pairs("x").is_err());
        let spec = SweepSpec {
            pairs: vec![],
            reg_kind: RegKind::L1,
            base: TrainConfig::default(),
        };
        assert!(spec.validate().is_err());
        let spec = SweepSpec {
            pairs: vec![(-1.0, 0.0)],
            ..spec
        };
        assert!(spec.validate().is_err());
    }
}
