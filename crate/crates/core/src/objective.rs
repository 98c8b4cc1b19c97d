//! Ranking losses, sparsity regularizers and the combined training objective.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::encoder::{encoder_backward, forward, EncoderParams, Encoded, SeqGrads};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::SparseRep;
use crate::text::TokenSeq;

/// Sparse dot product over the shared support.
pub fn score<T: Scalar>(q: &SparseRep<T>, d: &SparseRep<T>) -> Result<T> {
    if q.dim() != d.dim() {
        return Err(Error::VocabMismatch {
            expected: q.dim(),
            found: d.dim(),
        });
    }
    Ok(sparse_dot(q.entries(), d.entries()))
}

/// Merge-join dot product of two id-sorted entry lists, summed in
/// increasing token order.
pub fn sparse_dot<T: Scalar, U: Scalar>(a: &[(u32, U)], b: &[(u32, U)]) -> T {
    let (mut i, mut k) = (0, 0);
    let mut acc = T::zero();
    while i < a.len() && k < b.len() {
        match a[i].0.cmp(&b[k].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => k += 1,
            std::cmp::Ordering::Equal => {
                acc += T::from_f64_lossy(a[i].1.to_f64_lossy())
                    * T::from_f64_lossy(b[k].1.to_f64_lossy());
                i += 1;
                k += 1;
            }
        }
    }
    acc
}

/// `-log softmax(v)[0]` and its gradient with respect to `v`, computed with
/// the maximum subtracted.
pub fn softmax_xent_first<T: Scalar>(v: &[T]) -> (T, Vec<T>) {
    assert!(!v.is_empty());
    let (top, m) = v
        .iter()
        .copied()
        .enumerate()
        .fold((0, T::neg_infinity()), |acc, (k, x)| if x > acc.1 { (k, x) } else { acc });
    let exps: Vec<T> = v.iter().map(|&x| (x - m).exp()).collect();
    // the maximum contributes exactly 1; ln_1p keeps tiny remainders
    let rest: T = exps
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != top)
        .map(|(_, &e)| e)
        .sum();
    let total = T::one() + rest;
    let loss = rest.ln_1p() + (m - v[0]);
    let mut grad: Vec<T> = exps.iter().map(|&e| e / total).collect();
    grad[0] -= T::one();
    (loss, grad)
}

/// Pairwise softmax loss `-log(e^{s+} / (e^{s+} + e^{s-}))`.
pub fn rank_loss<T: Scalar>(pos: T, neg: T) -> T {
    softmax_xent_first(&[pos, neg]).0
}

/// Scores seen by one query: its positive, its hard negative and the
/// positives of the other queries in the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryScores<T> {
    pub positive: T,
    pub hard_negative: T,
    pub in_batch: Vec<T>,
}

impl<T: Scalar> QueryScores<T> {
    fn logits(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(2 + self.in_batch.len());
        v.push(self.positive);
        v.push(self.hard_negative);
        v.extend_from_slice(&self.in_batch);
        v
    }
}

/// Mean over queries of the in-batch-negatives softmax loss. Also returns
/// `dL/d(logit)` per query, in the order positive, hard negative, in-batch.
pub fn rank_ibn_loss_with_grad<T: Scalar>(scores: &[QueryScores<T>]) -> (T, Vec<Vec<T>>) {
    let n = T::from_usize(scores.len().max(1)).unwrap();
    let mut total = T::zero();
    let mut grads = Vec::with_capacity(scores.len());
    for s in scores {
        let (l, mut g) = softmax_xent_first(&s.logits());
        total += l;
        g.iter_mut().for_each(|x| *x /= n);
        grads.push(g);
    }
    (total / n, grads)
}

pub fn rank_ibn_loss<T: Scalar>(scores: &[QueryScores<T>]) -> T {
    rank_ibn_loss_with_grad(scores).0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegKind {
    L1,
    Flops,
}

impl fmt::Display for RegKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegKind::L1 => "l1",
            RegKind::Flops => "flops",
        })
    }
}

impl FromStr for RegKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(RegKind::L1),
            "flops" => Ok(RegKind::Flops),
            _ => Err(Error::Config(format!("unknown regularizer `{s}`"))),
        }
    }
}

/// Mean activation `ā_j` per vocabulary entry over a batch of reps.
fn mean_activation<T: Scalar>(reps: &[&SparseRep<T>]) -> Vec<T> {
    let dim = reps.first().map_or(0, |r| r.dim());
    let mut mean = vec![T::zero(); dim];
    if reps.is_empty() {
        return mean;
    }
    let n = T::from_usize(reps.len()).unwrap();
    for r in reps {
        for &(j, w) in r.entries() {
            mean[j as usize] += w;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// `Σ_j ā_j`
pub fn l1_reg<T: Scalar>(reps: &[&SparseRep<T>]) -> T {
    mean_activation(reps).into_iter().sum()
}

/// `Σ_j ā_j²`
pub fn flops_reg<T: Scalar>(reps: &[&SparseRep<T>]) -> T {
    mean_activation(reps).into_iter().map(|a| a * a).sum()
}

/// Regularizer value and, per rep, `dL/dw_j` aligned with its entries.
pub fn reg_with_grad<T: Scalar>(kind: RegKind, reps: &[&SparseRep<T>]) -> (T, Vec<Vec<T>>) {
    if reps.is_empty() {
        return (T::zero(), Vec::new());
    }
    let mean = mean_activation(reps);
    let n = T::from_usize(reps.len()).unwrap();
    let two = T::lit(2.0);
    let value = match kind {
        RegKind::L1 => mean.iter().copied().sum(),
        RegKind::Flops => mean.iter().map(|&a| a * a).sum(),
    };
    let grads = reps
        .iter()
        .map(|r| {
            r.entries()
                .iter()
                .map(|&(j, _)| match kind {
                    RegKind::L1 => T::one() / n,
                    RegKind::Flops => two * mean[j as usize] / n,
                })
                .collect()
        })
        .collect();
    (value, grads)
}

/// Quadratic warm-up: `λ·(step/T)²` before step `T`, `λ` afterwards.
pub fn lambda_at<T: Scalar>(step: u64, lambda_max: T, ramp_steps: u64) -> T {
    let ramp = ramp_steps.max(1);
    if step >= ramp {
        return lambda_max;
    }
    let frac = T::from_u64(step).unwrap() / T::from_u64(ramp).unwrap();
    lambda_max * frac * frac
}

/// Ranking loss: hard negative only, or hard negative plus in-batch
/// negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LossKind {
    Pairwise,
    #[default]
    InBatch,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Pairwise => "pairwise",
            LossKind::InBatch => "in_batch",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairwise" => Ok(LossKind::Pairwise),
            "in_batch" => Ok(LossKind::InBatch),
            _ => Err(Error::Config(format!("unknown loss {s:?} (expected pairwise or in_batch)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegWeights {
    pub lambda_q: f64,
    pub lambda_d: f64,
    pub ramp_steps: u64,
    pub kind: RegKind,
}

impl RegWeights {
    pub fn none() -> Self {
        RegWeights {
            lambda_q: 0.0,
            lambda_d: 0.0,
            ramp_steps: 1,
            kind: RegKind::Flops,
        }
    }
}

/// `N` (query, positive, hard negative) token sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub queries: Vec<TokenSeq>,
    pub positives: Vec<TokenSeq>,
    pub negatives: Vec<TokenSeq>,
}

impl TrainBatch {
    pub fn new(queries: Vec<TokenSeq>, positives: Vec<TokenSeq>, negatives: Vec<TokenSeq>) -> Result<Self> {
        if queries.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        if queries.len() != positives.len() || queries.len() != negatives.len() {
            return Err(Error::Shape("batch columns differ in length".into()));
        }
        Ok(TrainBatch {
            queries,
            positives,
            negatives,
        })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Queries, then positives, then negatives.
    fn sequences(&self) -> impl Iterator<Item = &TokenSeq> {
        self.queries.iter().chain(&self.positives).chain(&self.negatives)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub rank: T,
    pub reg_query: T,
    pub reg_doc: T,
    pub lambda_q: T,
    pub lambda_d: T,
}

/// Per-query scores against the batch documents: in-batch negatives of
/// query `i` are the positives of the other queries, in batch order, and
/// are left empty for [`LossKind::Pairwise`].
pub fn batch_scores<T: Scalar>(
    queries: &[&SparseRep<T>],
    positives: &[&SparseRep<T>],
    negatives: &[&SparseRep<T>],
    loss: LossKind,
) -> Result<Vec<QueryScores<T>>> {
    let n = queries.len();
    (0..n)
        .map(|i| {
            let q = queries[i];
            let mut in_batch = Vec::with_capacity(n - 1);
            for (k, p) in positives.iter().enumerate() {
                if k != i && loss == LossKind::InBatch {
                    in_batch.push(score(q, p)?);
                }
            }
            Ok(QueryScores {
                positive: score(q, positives[i])?,
                hard_negative: score(q, negatives[i])?,
                in_batch,
            })
        })
        .collect()
}

fn loss_parts<T: Scalar>(
    reps: &[&SparseRep<T>],
    n: usize,
    loss: LossKind,
    reg: &RegWeights,
    step: u64,
    want_grad: bool,
) -> Result<(LossBreakdown<T>, Vec<Vec<T>>)> {
    let (queries, docs) = reps.split_at(n);
    let (positives, negatives) = docs.split_at(n);
    let scores = batch_scores(queries, positives, negatives, loss)?;
    let (rank, score_grads) = rank_ibn_loss_with_grad(&scores);

    let lambda_q = lambda_at(step, T::lit(reg.lambda_q), reg.ramp_steps);
    let lambda_d = lambda_at(step, T::lit(reg.lambda_d), reg.ramp_steps);
    let (reg_query, q_reg_grads) = reg_with_grad(reg.kind, queries);
    let (reg_doc, d_reg_grads) = reg_with_grad(reg.kind, docs);
    let breakdown = LossBreakdown {
        total: rank + lambda_q * reg_query + lambda_d * reg_doc,
        rank,
        reg_query,
        reg_doc,
        lambda_q,
        lambda_d,
    };
    if !want_grad {
        return Ok((breakdown, Vec::new()));
    }

    let dim = reps[0].dim();
    let mut dense: Vec<Vec<T>> = vec![vec![T::zero(); dim]; 3 * n];
    // d s(q, d) / d q_j = d_j and vice versa
    let add_pair = |dense: &mut Vec<Vec<T>>, qi: usize, di: usize, g: T| {
        if g == T::zero() {
            return;
        }
        for &(j, w) in reps[di].entries() {
            dense[qi][j as usize] += g * w;
        }
        for &(j, w) in reps[qi].entries() {
            dense[di][j as usize] += g * w;
        }
    };
    for (i, g) in score_grads.iter().enumerate() {
        add_pair(&mut dense, i, n + i, g[0]);
        add_pair(&mut dense, i, 2 * n + i, g[1]);
        for (k, &gk) in (0..n).filter(|&k| k != i).zip(&g[2..]) {
            add_pair(&mut dense, i, n + k, gk);
        }
    }
    let mut aligned: Vec<Vec<T>> = reps
        .iter()
        .zip(&dense)
        .map(|(r, d)| r.token_ids().map(|j| d[j as usize]).collect())
        .collect();
    for (a, g) in aligned[..n].iter_mut().zip(&q_reg_grads) {
        a.iter_mut().zip(g).for_each(|(x, &y)| *x += lambda_q * y);
    }
    for (a, g) in aligned[n..].iter_mut().zip(&d_reg_grads) {
        a.iter_mut().zip(g).for_each(|(x, &y)| *x += lambda_d * y);
    }
    Ok((breakdown, aligned))
}

fn encode_batch<T: Scalar>(batch: &TrainBatch, params: &EncoderParams<T>, keep_cache: bool) -> Result<Vec<Encoded<T>>> {
    let seqs: Vec<&TokenSeq> = batch.sequences().collect();
    seqs.par_iter().map(|s| forward(s, params, keep_cache)).collect()
}

/// Objective value without gradients.
pub fn loss_value<T: Scalar>(
    batch: &TrainBatch,
    params: &EncoderParams<T>,
    loss: LossKind,
    reg: &RegWeights,
    step: u64,
) -> Result<LossBreakdown<T>> {
    let encoded = encode_batch(batch, params, false)?;
    let reps: Vec<&SparseRep<T>> = encoded.iter().map(|e| &e.rep).collect();
    Ok(loss_parts(&reps, batch.len(), loss, reg, step, false)?.0)
}

/// `L = L_rank + λ_q(step)·L_reg(queries) + λ_d(step)·L_reg(documents)`.
///
/// The document regularizer pools positives and hard negatives. Gradients
/// are added into the parameters' gradient buffers; per-sequence
/// contributions are merged in batch order so the result does not depend on
/// the number of worker threads.
pub fn total_loss<T: Scalar>(
    batch: &TrainBatch,
    params: &mut EncoderParams<T>,
    loss: LossKind,
    reg: &RegWeights,
    step: u64,
) -> Result<LossBreakdown<T>> {
    let encoded = encode_batch(batch, params, true)?;
    let reps: Vec<&SparseRep<T>> = encoded.iter().map(|e| &e.rep).collect();
    let (breakdown, grads) = loss_parts(&reps, batch.len(), loss, reg, step, true)?;
    let shared: &EncoderParams<T> = params;
    let seq_grads: Vec<SeqGrads<T>> = encoded
        .par_iter()
        .zip(grads.par_iter())
        .map(|(e, g)| encoder_backward(e, g, shared))
        .collect::<Result<_>>()?;
    for g in &seq_grads {
        params.accumulate(g);
    }
    Ok(breakdown)
}
