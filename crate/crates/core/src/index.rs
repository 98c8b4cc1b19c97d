//! Immutable inverted index over document representations.
//!
//! On-disk layout, all integers little-endian:
//!
//! ```text
//! "SPLI" | version u32 | |V| u32 | doc_count u32
//! doc_count × (len u32 | UTF-8 bytes)
//! token_count u32
//! token_count × (token_id u32 | n u32 | n LEB128 ordinal deltas | n f32 weights)
//! CRC32 of everything above, u32
//! ```
//!
//! The first delta of a list is the ordinal itself.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::SparseRep;

pub const INDEX_MAGIC: &[u8; 4] = b"SPLI";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PostingList {
    pub token: u32,
    /// Internal doc ordinals, strictly increasing.
    pub docs: Vec<u32>,
    pub weights: Vec<f32>,
}

impl PostingList {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    vocab_size: usize,
    doc_ids: Vec<String>,
    /// Sorted by token; only tokens with at least one posting.
    postings: Vec<PostingList>,
    /// Token id → position in `postings`.
    slots: Vec<Option<u32>>,
    doc_nnz: Vec<u32>,
}

impl InvertedIndex {
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_id(&self, ordinal: u32) -> &str {
        &self.doc_ids[ordinal as usize]
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn postings(&self) -> &[PostingList] {
        &self.postings
    }

    pub fn posting(&self, token: u32) -> Option<&PostingList> {
        self.slots
            .get(token as usize)
            .copied()
            .flatten()
            .map(|k| &self.postings[k as usize])
    }

    /// Support size of each document.
    pub fn doc_nnz(&self) -> &[u32] {
        &self.doc_nnz
    }

    pub fn total_postings(&self) -> usize {
        self.postings.iter().map(PostingList::len).sum()
    }

    fn assemble(vocab_size: usize, doc_ids: Vec<String>, postings: Vec<PostingList>) -> Self {
        let mut slots = vec![None; vocab_size];
        let mut doc_nnz = vec![0u32; doc_ids.len()];
        for (k, p) in postings.iter().enumerate() {
            slots[p.token as usize] = Some(k as u32);
            for &d in &p.docs {
                doc_nnz[d as usize] += 1;
            }
        }
        InvertedIndex {
            vocab_size,
            doc_ids,
            postings,
            slots,
            doc_nnz,
        }
    }
}

/// Ordinals follow input order. Weights are stored as `f32`; entries that
/// round to zero are dropped.
pub fn build_index<'a, T, I>(vocab_size: usize, docs: I) -> Result<InvertedIndex>
where
    T: Scalar,
    I: IntoIterator<Item = (&'a str, &'a SparseRep<T>)>,
{
    let mut doc_ids = Vec::new();
    let mut seen = HashSet::new();
    let mut lists: Vec<(Vec<u32>, Vec<f32>)> = vec![(Vec::new(), Vec::new()); vocab_size];
    for (id, rep) in docs {
        if rep.dim() != vocab_size {
            return Err(Error::VocabMismatch {
                expected: vocab_size,
                found: rep.dim(),
            });
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        let ord = doc_ids.len() as u32;
        for &(j, w) in rep.entries() {
            let w = w.to_f64_lossy() as f32;
            if w > 0.0 {
                let l = &mut lists[j as usize];
                l.0.push(ord);
                l.1.push(w);
            }
        }
        doc_ids.push(id.to_string());
    }
    let postings = lists
        .into_iter()
        .enumerate()
        .filter(|(_, l)| !l.0.is_empty())
        .map(|(j, (docs, weights))| PostingList {
            token: j as u32,
            docs,
            weights,
        })
        .collect();
    Ok(InvertedIndex::assemble(vocab_size, doc_ids, postings))
}

fn put_varint(out: &mut Vec<u8>, mut v: u32) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

pub fn index_bytes(index: &InvertedIndex) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(INDEX_MAGIC);
    out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
    out.extend_from_slice(&(index.vocab_size as u32).to_le_bytes());
    out.extend_from_slice(&(index.doc_ids.len() as u32).to_le_bytes());
    for id in &index.doc_ids {
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    out.extend_from_slice(&(index.postings.len() as u32).to_le_bytes());
    for p in &index.postings {
        out.extend_from_slice(&p.token.to_le_bytes());
        out.extend_from_slice(&(p.docs.len() as u32).to_le_bytes());
        let mut prev = 0;
        for &d in &p.docs {
            put_varint(&mut out, d - prev);
            prev = d;
        }
        for &w in &p.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format("truncated index".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn varint(&mut self) -> Result<u32> {
        let mut v: u64 = 0;
        for shift in (0..35).step_by(7) {
            let b = self.take(1)?[0];
            v |= u64::from(b & 0x7f) << shift;
            if b & 0x80 == 0 {
                return u32::try_from(v).map_err(|_| Error::Format("varint overflow".into()));
            }
        }
        Err(Error::Format("varint too long".into()))
    }
}

pub fn index_from_bytes(buf: &[u8]) -> Result<InvertedIndex> {
    if buf.len() < 12 {
        return Err(Error::Format("truncated index".into()));
    }
    if &buf[..4] != INDEX_MAGIC {
        return Err(Error::Format("not an index file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != INDEX_VERSION {
        return Err(Error::Format(format!("unsupported index version {version}")));
    }
    let (body, trailer) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut r = Reader { buf: body, pos: 8 };
    let vocab_size = r.u32()? as usize;
    let doc_count = r.u32()? as usize;
    let mut doc_ids = Vec::with_capacity(doc_count.min(body.len()));
    for _ in 0..doc_count {
        let len = r.u32()? as usize;
        let s = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("doc id is not UTF-8".into()))?;
        doc_ids.push(s.to_string());
    }
    let token_count = r.u32()? as usize;
    let mut postings = Vec::with_capacity(token_count.min(vocab_size));
    let mut last_token = None;
    for _ in 0..token_count {
        let token = r.u32()?;
        if token as usize >= vocab_size || last_token.is_some_and(|t| t >= token) {
            return Err(Error::Format(format!("invalid token id {token}")));
        }
        last_token = Some(token);
        let n = r.u32()? as usize;
        if n == 0 || n > doc_count {
            return Err(Error::Format(format!("invalid posting count {n}")));
        }
        let mut docs = Vec::with_capacity(n);
        let mut prev = 0u32;
        for k in 0..n {
            let delta = r.varint()?;
            if k > 0 && delta == 0 {
                return Err(Error::Format("ordinals not strictly increasing".into()));
            }
            prev = prev
                .checked_add(delta)
                .filter(|&d| (d as usize) < doc_count)
                .ok_or_else(|| Error::Format("ordinal out of range".into()))?;
            docs.push(prev);
        }
        let weights = r
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        postings.push(PostingList {
            token,
            docs,
            weights,
        });
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes in index".into()));
    }
    Ok(InvertedIndex::assemble(vocab_size, doc_ids, postings))
}

pub fn write_index(index: &InvertedIndex, path: &Path) -> Result<()> {
    fs::write(path, index_bytes(index)).map_err(|e| Error::io(path, e))
}

pub fn read_index(path: &Path) -> Result<InvertedIndex> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    index_from_bytes(&buf)
}

fn activation_rates<T: Scalar>(reps: &[SparseRep<T>], dim: usize) -> Vec<f64> {
    let mut counts = vec![0u64; dim];
    for r in reps {
        for j in r.token_ids() {
            counts[j as usize] += 1;
        }
    }
    let n = reps.len() as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

fn expected_flops(pq: &[f64], pd: &[f64]) -> f64 {
    pq.iter().zip(pd).map(|(a, b)| a * b).sum()
}

/// `Σ_j p_j(q)·p_j(d)`, with activation rates estimated from the samples.
pub fn flops_metric<T: Scalar, U: Scalar>(queries: &[SparseRep<T>], docs: &[SparseRep<U>]) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::EmptySample("queries"));
    }
    if docs.is_empty() {
        return Err(Error::EmptySample("documents"));
    }
    let dim = queries[0].dim();
    if let Some(r) = docs.iter().find(|r| r.dim() != dim) {
        return Err(Error::VocabMismatch {
            expected: dim,
            found: r.dim(),
        });
    }
    Ok(expected_flops(&activation_rates(queries, dim), &activation_rates(docs, dim)))
}

/// Same as [`flops_metric`] with document rates read off posting lengths.
pub fn flops_metric_index<T: Scalar>(queries: &[SparseRep<T>], index: &InvertedIndex) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::EmptySample("queries"));
    }
    if index.doc_count() == 0 {
        return Err(Error::EmptySample("documents"));
    }
    let dim = index.vocab_size();
    if let Some(r) = queries.iter().find(|r| r.dim() != dim) {
        return Err(Error::VocabMismatch {
            expected: dim,
            found: r.dim(),
        });
    }
    let n = index.doc_count() as f64;
    let mut pd = vec![0.0; dim];
    for p in index.postings() {
        pd[p.token as usize] = p.len() as u64 as f64 / n;
    }
    Ok(expected_flops(&activation_rates(queries, dim), &pd))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostingStats {
    /// Lengths of non-empty posting lists, in token order.
    pub lengths: Vec<usize>,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub gini: f64,
}

pub fn posting_stats(index: &InvertedIndex) -> PostingStats {
    let lengths: Vec<usize> = index.postings().iter().map(PostingList::len).collect();
    length_stats(lengths)
}

pub fn length_stats(lengths: Vec<usize>) -> PostingStats {
    let n = lengths.len();
    if n == 0 {
        return PostingStats {
            lengths,
            mean: 0.0,
            variance: 0.0,
            gini: 0.0,
        };
    }
    let total: f64 = lengths.iter().map(|&l| l as f64).sum();
    let mean = total / n as f64;
    let variance = lengths.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n as f64;
    let mut sorted = lengths.clone();
    sorted.sort_unstable();
    // G = 2·Σ i·x_(i) / (n·Σx) − (n + 1)/n, ranks i from 1
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (i + 1) as f64 * x as f64)
        .sum();
    let nf = n as f64;
    let gini = if total > 0.0 {
        (2.0 * weighted / (nf * total) - (nf + 1.0) / nf).max(0.0)
    } else {
        0.0
    };
    PostingStats {
        lengths,
        mean,
        variance,
        gini,
    }
}
