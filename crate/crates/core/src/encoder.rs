//! Term-importance encoder.
//!
//! A token sequence is embedded (optionally passed through one residual
//! self-attention layer), each position is mapped through
//! `LayerNorm(GeLU(h·W + c))` and scored against every vocabulary embedding
//! (the input embedding matrix doubles as the output projection), giving a
//! logit `w_ij` per input position `i` and vocabulary entry `j`. Logits are
//! then pooled over positions into one non-negative weight per vocabulary
//! entry, either by summing ReLU outputs or by summing `log(1 + ReLU)`.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kernels::{
    gelu, gelu_backward, layer_norm, layer_norm_backward, linear, linear_backward, LayerNormCache,
    Matrix, ParamSet, ParamTensor, LAYER_NORM_EPS,
};
use crate::scalar::{axpy, dot, Scalar};
use crate::sparse::SparseRep;
use crate::text::{tokenize, TokenSeq, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregation {
    /// `w_j = g_j · Σ_i ReLU(w_ij)`
    SumRelu,
    /// `w_j = g_j · Σ_i log(1 + ReLU(w_ij))`
    LogSaturate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gating {
    None,
    /// Only tokens present in the input may receive weight.
    LexicalOnly,
}

impl Aggregation {
    pub fn code(self) -> u32 {
        match self {
            Aggregation::SumRelu => 0,
            Aggregation::LogSaturate => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Aggregation::SumRelu),
            1 => Ok(Aggregation::LogSaturate),
            c => Err(Error::Format(format!("unknown aggregation code {c}"))),
        }
    }

    #[inline]
    fn activate<T: Scalar>(self, logit: T) -> T {
        match self {
            Aggregation::SumRelu => logit,
            Aggregation::LogSaturate => logit.ln_1p(),
        }
    }

    /// Derivative of the pooled contribution at a positive logit.
    #[inline]
    fn slope<T: Scalar>(self, logit: T) -> T {
        match self {
            Aggregation::SumRelu => T::one(),
            Aggregation::LogSaturate => T::one() / (T::one() + logit),
        }
    }
}

impl Gating {
    pub fn code(self) -> u32 {
        match self {
            Gating::None => 0,
            Gating::LexicalOnly => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Gating::None),
            1 => Ok(Gating::LexicalOnly),
            c => Err(Error::Format(format!("unknown gating code {c}"))),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::SumRelu => "sum_relu",
            Aggregation::LogSaturate => "log_saturate",
        })
    }
}

impl FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum_relu" => Ok(Aggregation::SumRelu),
            "log_saturate" => Ok(Aggregation::LogSaturate),
            _ => Err(Error::Config(format!("unknown aggregation `{s}`"))),
        }
    }
}

impl fmt::Display for Gating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gating::None => "none",
            Gating::LexicalOnly => "lexical_only",
        })
    }
}

impl FromStr for Gating {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Gating::None),
            "lexical_only" => Ok(Gating::LexicalOnly),
            _ => Err(Error::Config(format!("unknown gating `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// 0: raw embeddings; 1: one residual self-attention layer.
    pub context_depth: u8,
    pub aggregation: Aggregation,
    pub gating: Gating,
    pub max_len: usize,
}

impl EncoderConfig {
    pub fn new(vocab_size: usize, embed_dim: usize) -> Self {
        EncoderConfig {
            vocab_size,
            embed_dim,
            context_depth: 0,
            aggregation: Aggregation::LogSaturate,
            gating: Gating::None,
            max_len: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must be at least 2".into()));
        }
        if self.embed_dim < 1 {
            return Err(Error::Config("embed_dim must be at least 1".into()));
        }
        if self.context_depth > 1 {
            return Err(Error::Config("context_depth must be 0 or 1".into()));
        }
        if self.max_len < 1 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        Ok(())
    }
}

/// Initialization scales for fresh parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitSpec {
    pub embed_std: f64,
    pub output_bias: f64,
    pub seed: u64,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec {
            embed_std: 0.1,
            output_bias: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T> {
    pub query: ParamTensor<T>,
    pub key: ParamTensor<T>,
    pub value: ParamTensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    config: EncoderConfig,
    /// `|V| × d`, shared by the input lookup and the output projection.
    pub embeddings: ParamTensor<T>,
    pub transform_weight: ParamTensor<T>,
    pub transform_bias: ParamTensor<T>,
    pub ln_gamma: ParamTensor<T>,
    pub ln_beta: ParamTensor<T>,
    /// Per-vocabulary-entry bias `b_j`.
    pub output_bias: ParamTensor<T>,
    pub attention: Option<AttentionParams<T>>,
}

impl<T: Scalar> EncoderParams<T> {
    pub fn init(config: EncoderConfig, spec: InitSpec) -> Result<Self> {
        config.validate()?;
        let (v, d) = (config.vocab_size, config.embed_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut normal = |rows: usize, cols: usize, std: f64| -> Matrix<T> {
            let dist = Normal::new(0.0, std).expect("finite std");
            let data = (0..rows * cols)
                .map(|_| T::from_f64_lossy(dist.sample(&mut rng)))
                .collect();
            Matrix::from_vec(rows, cols, data).expect("shape")
        };
        let proj_std = 1.0 / (d as f64).sqrt();
        let embeddings = normal(v, d, spec.embed_std);
        let transform_weight = normal(d, d, proj_std);
        let attention = (config.context_depth == 1).then(|| AttentionParams {
            query: ParamTensor::new("attention.query", normal(d, d, proj_std)),
            key: ParamTensor::new("attention.key", normal(d, d, proj_std)),
            value: ParamTensor::new("attention.value", normal(d, d, proj_std)),
        });
        Ok(EncoderParams {
            config,
            embeddings: ParamTensor::new("embeddings", embeddings),
            transform_weight: ParamTensor::new("transform.weight", transform_weight),
            transform_bias: ParamTensor::new("transform.bias", Matrix::zeros(1, d)),
            ln_gamma: ParamTensor::new("transform.ln_gamma", Matrix::row_vector(vec![T::one(); d])),
            ln_beta: ParamTensor::new("transform.ln_beta", Matrix::zeros(1, d)),
            output_bias: ParamTensor::new(
                "output_bias",
                Matrix::row_vector(vec![T::from_f64_lossy(spec.output_bias); v]),
            ),
            attention,
        })
    }

    /// Assembles parameters from tensors given in canonical order.
    pub fn from_tensors(config: EncoderConfig, values: Vec<Matrix<T>>) -> Result<Self> {
        config.validate()?;
        let expected = if config.context_depth == 1 { 9 } else { 6 };
        if values.len() != expected {
            return Err(Error::Format(format!(
                "expected {expected} tensors, found {}",
                values.len()
            )));
        }
        let (v, d) = (config.vocab_size, config.embed_dim);
        let shapes = [(v, d), (d, d), (1, d), (1, d), (1, d), (1, v), (d, d), (d, d), (d, d)];
        for (k, (m, &s)) in values.iter().zip(&shapes).enumerate() {
            if m.shape() != s {
                return Err(Error::Shape(format!(
                    "tensor {} ({}) has shape {:?}, expected {s:?}",
                    k,
                    TENSOR_NAMES[k],
                    m.shape()
                )));
            }
            if !m.is_finite() {
                return Err(Error::NonFinite(TENSOR_NAMES[k].into()));
            }
        }
        let mut it = values.into_iter();
        let mut next = |k: usize| ParamTensor::new(TENSOR_NAMES[k], it.next().unwrap());
        let embeddings = next(0);
        let transform_weight = next(1);
        let transform_bias = next(2);
        let ln_gamma = next(3);
        let ln_beta = next(4);
        let output_bias = next(5);
        let attention = (config.context_depth == 1).then(|| AttentionParams {
            query: next(6),
            key: next(7),
            value: next(8),
        });
        Ok(EncoderParams {
            config,
            embeddings,
            transform_weight,
            transform_bias,
            ln_gamma,
            ln_beta,
            output_bias,
            attention,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    /// Switches pooling or gating without touching the weights.
    pub fn set_variant(&mut self, aggregation: Aggregation, gating: Gating) {
        self.config.aggregation = aggregation;
        self.config.gating = gating;
    }

    /// Adds one sequence's gradients into the gradient buffers.
    pub fn accumulate(&mut self, g: &SeqGrads<T>) {
        let d = self.config.embed_dim;
        for (row, vals) in &g.embedding_rows {
            let start = *row as usize * d;
            for (acc, &v) in self.embeddings.grad.as_mut_slice()[start..start + d]
                .iter_mut()
                .zip(vals)
            {
                *acc += v;
            }
        }
        for &(j, v) in &g.output_bias {
            self.output_bias.grad.as_mut_slice()[j as usize] += v;
        }
        self.transform_weight.grad.add_assign(&g.transform_weight);
        add_row(&mut self.transform_bias.grad, &g.transform_bias);
        add_row(&mut self.ln_gamma.grad, &g.ln_gamma);
        add_row(&mut self.ln_beta.grad, &g.ln_beta);
        if let (Some(att), Some([q, k, v])) = (self.attention.as_mut(), g.attention.as_ref()) {
            att.query.grad.add_assign(q);
            att.key.grad.add_assign(k);
            att.value.grad.add_assign(v);
        }
    }

    pub fn cast<U: Scalar>(&self) -> EncoderParams<U> {
        let values = self.tensors().iter().map(|t| t.value.cast()).collect();
        EncoderParams::from_tensors(self.config, values).expect("same shapes")
    }
}

fn add_row<T: Scalar>(m: &mut Matrix<T>, v: &[T]) {
    for (a, &b) in m.as_mut_slice().iter_mut().zip(v) {
        *a += b;
    }
}

/// Canonical tensor order, used by checkpoints and gradient checks.
pub const TENSOR_NAMES: [&str; 9] = [
    "embeddings",
    "transform.weight",
    "transform.bias",
    "transform.ln_gamma",
    "transform.ln_beta",
    "output_bias",
    "attention.query",
    "attention.key",
    "attention.value",
];

impl<T: Scalar> ParamSet<T> for EncoderParams<T> {
    fn tensors(&self) -> Vec<&ParamTensor<T>> {
        let mut v = vec![
            &self.embeddings,
            &self.transform_weight,
            &self.transform_bias,
            &self.ln_gamma,
            &self.ln_beta,
            &self.output_bias,
        ];
        if let Some(a) = &self.attention {
            v.extend([&a.query, &a.key, &a.value]);
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        let mut v = vec![
            &mut self.embeddings,
            &mut self.transform_weight,
            &mut self.transform_bias,
            &mut self.ln_gamma,
            &mut self.ln_beta,
            &mut self.output_bias,
        ];
        if let Some(a) = &mut self.attention {
            v.extend([&mut a.query, &mut a.key, &mut a.value]);
        }
        v
    }
}

/// Dense logits `w_ij`, one row per input position.
#[derive(Debug, Clone, PartialEq)]
pub struct TermScores<T> {
    pub logits: Matrix<T>,
}

/// Binary mask over the vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateMask {
    mask: Vec<bool>,
}

impl GateMask {
    pub fn all(dim: usize) -> Self {
        GateMask {
            mask: vec![true; dim],
        }
    }

    pub fn is_open(&self, j: usize) -> bool {
        self.mask[j]
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.mask
    }
}

/// Mask with ones exactly at the ids occurring in `seq`.
pub fn lexical_gate(seq: &TokenSeq, vocab_size: usize) -> GateMask {
    let mut mask = vec![false; vocab_size];
    for &id in seq.ids() {
        mask[id as usize] = true;
    }
    GateMask { mask }
}

struct ContextState<T> {
    inputs: Matrix<T>,
    attention: Option<AttentionState<T>>,
    hidden: Matrix<T>,
}

struct AttentionState<T> {
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    probs: Matrix<T>,
}

fn check_seq<T: Scalar>(seq: &TokenSeq, params: &EncoderParams<T>) -> Result<()> {
    if seq.is_empty() {
        return Err(Error::EmptyTokenSequence);
    }
    if let Some(&bad) = seq.ids().iter().find(|&&id| id as usize >= params.vocab_size()) {
        return Err(Error::VocabMismatch {
            expected: params.vocab_size(),
            found: bad as usize + 1,
        });
    }
    Ok(())
}

fn contextualize_inner<T: Scalar>(seq: &TokenSeq, params: &EncoderParams<T>) -> ContextState<T> {
    let d = params.embed_dim();
    let n = seq.len();
    let mut inputs = Matrix::zeros(n, d);
    for (i, &t) in seq.ids().iter().enumerate() {
        inputs.row_mut(i).copy_from_slice(params.embeddings.value.row(t as usize));
    }
    let Some(att) = &params.attention else {
        return ContextState {
            hidden: inputs.clone(),
            inputs,
            attention: None,
        };
    };
    let q = inputs.matmul(&att.query.value).expect("shape");
    let k = inputs.matmul(&att.key.value).expect("shape");
    let v = inputs.matmul(&att.value.value).expect("shape");
    let scale = T::one() / T::from_usize(d).unwrap().sqrt();
    let mut probs = q.matmul_t(&k).expect("shape");
    for i in 0..n {
        let row = probs.row_mut(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for s in row.iter_mut() {
            *s = ((*s - max) * scale).exp();
            total += *s;
        }
        row.iter_mut().for_each(|s| *s /= total);
    }
    let mut hidden = probs.matmul(&v).expect("shape");
    hidden.add_assign(&inputs);
    ContextState {
        inputs,
        attention: Some(AttentionState { q, k, v, probs }),
        hidden,
    }
}

/// Contextual vectors `h_i` for every input position.
pub fn contextualize<T: Scalar>(seq: &TokenSeq, params: &EncoderParams<T>) -> Result<Matrix<T>> {
    check_seq(seq, params)?;
    Ok(contextualize_inner(seq, params).hidden)
}

struct TransformState<T> {
    pre: Matrix<T>,
    ln: LayerNormCache<T>,
    out: Matrix<T>,
}

fn transform<T: Scalar>(h: &Matrix<T>, params: &EncoderParams<T>) -> Result<TransformState<T>> {
    let pre = linear(
        h,
        &params.transform_weight.value,
        params.transform_bias.value.as_slice(),
    )?;
    let activated = gelu(&pre);
    let (out, ln) = layer_norm(
        &activated,
        params.ln_gamma.value.as_slice(),
        params.ln_beta.value.as_slice(),
        T::lit(LAYER_NORM_EPS),
    )?;
    Ok(TransformState {
        pre,
        ln,
        out,
    })
}

/// `w_ij = transform(h_i)ᵀ E_j + b_j` for every vocabulary entry `j`.
pub fn importance_logits<T: Scalar>(h: &Matrix<T>, params: &EncoderParams<T>) -> Result<TermScores<T>> {
    if h.cols() != params.embed_dim() {
        return Err(Error::Shape(format!(
            "hidden width {} for embedding width {}",
            h.cols(),
            params.embed_dim()
        )));
    }
    if !h.is_finite() {
        return Err(Error::NonFinite("hidden states".into()));
    }
    let z = transform(h, params)?.out;
    let mut logits = z.matmul_t(&params.embeddings.value)?;
    let bias = params.output_bias.value.as_slice();
    for i in 0..logits.rows() {
        for (w, &b) in logits.row_mut(i).iter_mut().zip(bias) {
            *w += b;
        }
    }
    Ok(TermScores { logits })
}

fn aggregate<T: Scalar>(scores: &TermScores<T>, gate: &GateMask, agg: Aggregation) -> SparseRep<T> {
    let (n, v) = scores.logits.shape();
    assert_eq!(v, gate.len(), "gate and scores disagree on vocabulary size");
    let mut dense = vec![T::zero(); v];
    for i in 0..n {
        for (j, (&w, acc)) in scores.logits.row(i).iter().zip(dense.iter_mut()).enumerate() {
            if w > T::zero() && gate.is_open(j) {
                *acc += agg.activate(w);
            }
        }
    }
    SparseRep::from_dense(&dense)
}

/// `w_j = g_j · Σ_i max(0, w_ij)`
pub fn aggregate_sum_relu<T: Scalar>(scores: &TermScores<T>, gate: &GateMask) -> SparseRep<T> {
    aggregate(scores, gate, Aggregation::SumRelu)
}

/// `w_j = g_j · Σ_i log(1 + max(0, w_ij))`
pub fn aggregate_log_saturate<T: Scalar>(scores: &TermScores<T>, gate: &GateMask) -> SparseRep<T> {
    aggregate(scores, gate, Aggregation::LogSaturate)
}

/// Activations retained for the backward pass.
pub struct ForwardCache<T> {
    seq: TokenSeq,
    context: ContextState<T>,
    transform: TransformState<T>,
    /// Positive logits `(position, logit)` grouped by representation entry.
    cells: Vec<(u32, T)>,
    /// `cells[offsets[k]..offsets[k + 1]]` feed entry `k` of the representation.
    offsets: Vec<usize>,
}

/// Output of a forward pass, with or without the cache needed for training.
pub struct Encoded<T> {
    pub rep: SparseRep<T>,
    pub cache: Option<ForwardCache<T>>,
}

impl<T: Scalar> Encoded<T> {
    pub fn without_cache(self) -> SparseRep<T> {
        self.rep
    }
}

/// Runs the full encoder. Only positive logits are retained, and with
/// lexical gating only the columns of tokens present in the input are
/// evaluated at all.
pub fn forward<T: Scalar>(seq: &TokenSeq, params: &EncoderParams<T>, keep_cache: bool) -> Result<Encoded<T>> {
    check_seq(seq, params)?;
    let agg = params.config.aggregation;
    let context = contextualize_inner(seq, params);
    let tr = transform(&context.hidden, params)?;
    let v = params.vocab_size();
    let e = &params.embeddings.value;
    let bias = params.output_bias.value.as_slice();

    let columns: Vec<u32> = match params.config.gating {
        Gating::None => (0..v as u32).collect(),
        Gating::LexicalOnly => {
            let mut ids = seq.ids().to_vec();
            ids.sort_unstable();
            ids.dedup();
            ids
        }
    };
    // (column, position, logit), position-major so each column's sum runs
    // over positions in increasing order
    let mut cells: Vec<(u32, u32, T)> = Vec::new();
    for i in 0..seq.len() {
        let z = tr.out.row(i);
        for &j in &columns {
            let w = dot(z, e.row(j as usize)) + bias[j as usize];
            if w > T::zero() {
                cells.push((j, i as u32, w));
            }
        }
    }
    cells.sort_by_key(|c| c.0);

    let mut entries: Vec<(u32, T)> = Vec::new();
    let mut offsets = vec![0usize];
    let mut grouped = Vec::with_capacity(if keep_cache { cells.len() } else { 0 });
    let mut k = 0;
    while k < cells.len() {
        let j = cells[k].0;
        let mut total = T::zero();
        while k < cells.len() && cells[k].0 == j {
            total += agg.activate(cells[k].2);
            if keep_cache {
                grouped.push((cells[k].1, cells[k].2));
            }
            k += 1;
        }
        if total > T::zero() {
            entries.push((j, total));
            offsets.push(grouped.len());
        } else if keep_cache {
            // activation underflowed to zero; no gradient path either
            grouped.truncate(offsets[offsets.len() - 1]);
        }
    }
    let rep = SparseRep::from_sorted_unchecked(v, entries);
    let cache = keep_cache.then(|| ForwardCache {
        seq: seq.clone(),
        context,
        transform: tr,
        cells: grouped,
        offsets,
    });
    Ok(Encoded { rep, cache })
}

/// Encodes a token sequence for inference.
pub fn encode_seq<T: Scalar>(seq: &TokenSeq, params: &EncoderParams<T>) -> Result<SparseRep<T>> {
    forward(seq, params, false).map(Encoded::without_cache)
}

/// Tokenizes and encodes raw text.
pub fn encode<T: Scalar>(text: &str, vocab: &Vocabulary, params: &EncoderParams<T>) -> Result<SparseRep<T>> {
    if vocab.len() != params.vocab_size() {
        return Err(Error::VocabMismatch {
            expected: params.vocab_size(),
            found: vocab.len(),
        });
    }
    let seq = tokenize(text, vocab, params.config.max_len)?;
    encode_seq(&seq, params)
}

/// Gradients contributed by one sequence. Embedding and output-bias
/// gradients are kept sparse.
#[derive(Debug, Clone)]
pub struct SeqGrads<T> {
    pub embedding_rows: Vec<(u32, Vec<T>)>,
    pub output_bias: Vec<(u32, T)>,
    pub transform_weight: Matrix<T>,
    pub transform_bias: Vec<T>,
    pub ln_gamma: Vec<T>,
    pub ln_beta: Vec<T>,
    pub attention: Option<[Matrix<T>; 3]>,
}

/// Backpropagates `dL/dw_j` (one value per entry of `encoded.rep`, in the
/// same order) to every parameter.
pub fn encoder_backward<T: Scalar>(
    encoded: &Encoded<T>,
    rep_grad: &[T],
    params: &EncoderParams<T>,
) -> Result<SeqGrads<T>> {
    let cache = encoded.cache.as_ref().ok_or(Error::MissingCache)?;
    if rep_grad.len() != encoded.rep.nnz() {
        return Err(Error::Shape(format!(
            "{} gradient values for {} representation entries",
            rep_grad.len(),
            encoded.rep.nnz()
        )));
    }
    let agg = params.config.aggregation;
    let d = params.embed_dim();
    let n = cache.seq.len();
    let z = &cache.transform.out;
    let e = &params.embeddings.value;

    let mut dz = Matrix::zeros(n, d);
    let mut embedding_rows = Vec::new();
    let mut output_bias = Vec::new();
    for (k, (&(j, _), &g)) in encoded.rep.entries().iter().zip(rep_grad).enumerate() {
        if g == T::zero() {
            continue;
        }
        let mut de = vec![T::zero(); d];
        let mut db = T::zero();
        for &(i, w) in &cache.cells[cache.offsets[k]..cache.offsets[k + 1]] {
            let dl = g * agg.slope(w);
            axpy(dl, e.row(j as usize), dz.row_mut(i as usize));
            axpy(dl, z.row(i as usize), &mut de);
            db += dl;
        }
        embedding_rows.push((j, de));
        output_bias.push((j, db));
    }

    let (dact, ln_gamma, ln_beta) =
        layer_norm_backward(&cache.transform.ln, params.ln_gamma.value.as_slice(), &dz);
    let dpre = gelu_backward(&cache.transform.pre, &dact);
    let (dh, transform_weight, transform_bias) =
        linear_backward(&cache.context.hidden, &params.transform_weight.value, &dpre)?;

    let (dinputs, attention) = match (&cache.context.attention, &params.attention) {
        (Some(st), Some(att)) => {
            let (dx, grads) = attention_backward(st, att, &cache.context.inputs, &dh, d);
            (dx, Some(grads))
        }
        _ => (dh, None),
    };
    for (i, &t) in cache.seq.ids().iter().enumerate() {
        embedding_rows.push((t, dinputs.row(i).to_vec()));
    }

    Ok(SeqGrads {
        embedding_rows,
        output_bias,
        transform_weight,
        transform_bias,
        ln_gamma,
        ln_beta,
        attention,
    })
}

fn attention_backward<T: Scalar>(
    st: &AttentionState<T>,
    att: &AttentionParams<T>,
    inputs: &Matrix<T>,
    dh: &Matrix<T>,
    d: usize,
) -> (Matrix<T>, [Matrix<T>; 3]) {
    let n = inputs.rows();
    let scale = T::one() / T::from_usize(d).unwrap().sqrt();
    // hidden = inputs + probs · v
    let mut dx = dh.clone();
    let dprobs = dh.matmul_t(&st.v).expect("shape");
    let dv = st.probs.t_matmul(dh).expect("shape");
    let mut dscores = Matrix::zeros(n, n);
    for i in 0..n {
        let p = st.probs.row(i);
        let g = dprobs.row(i);
        let inner = dot(p, g);
        for (out, (&pk, &gk)) in dscores.row_mut(i).iter_mut().zip(p.iter().zip(g)) {
            *out = pk * (gk - inner) * scale;
        }
    }
    let dq = dscores.matmul(&st.k).expect("shape");
    let dk = dscores.t_matmul(&st.q).expect("shape");
    let dwq = inputs.t_matmul(&dq).expect("shape");
    let dwk = inputs.t_matmul(&dk).expect("shape");
    let dwv = inputs.t_matmul(&dv).expect("shape");
    dx.add_assign(&dq.matmul_t(&att.query.value).expect("shape"));
    dx.add_assign(&dk.matmul_t(&att.key.value).expect("shape"));
    dx.add_assign(&dv.matmul_t(&att.value.value).expect("shape"));
    (dx, [dwq, dwk, dwv])
}
