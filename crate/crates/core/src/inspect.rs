//! Human-readable view of a text's representation: which input terms keep
//! a weight, which are dropped, and which vocabulary terms are added.

use std::collections::HashSet;
use std::fmt;

use crate::encoder::{encode_seq, EncoderParams};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::text::{tokenize, Vocabulary, UNK};

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionReport {
    /// Distinct input terms in order of first occurrence; weight 0 means
    /// dropped.
    pub original: Vec<(String, f64)>,
    /// Active terms absent from the input, by descending weight.
    pub expansions: Vec<(String, f64)>,
    pub dropped: usize,
    pub added: usize,
}

pub fn inspect<T: Scalar>(params: &EncoderParams<T>, vocab: &Vocabulary, text: &str) -> Result<ExpansionReport> {
    let seq = tokenize(text, vocab, params.config().max_len)?;
    let rep = encode_seq(&seq, params)?;
    let name = |j: u32| vocab.term(j).unwrap_or(UNK).to_string();
    let mut seen = HashSet::new();
    let original: Vec<(String, f64)> = seq
        .ids()
        .iter()
        .filter(|&&j| seen.insert(j))
        .map(|&j| (name(j), rep.weight(j).to_f64_lossy()))
        .collect();
    let mut expansions: Vec<(String, f64)> = rep
        .entries()
        .iter()
        .filter(|(j, _)| !seen.contains(j))
        .map(|&(j, w)| (name(j), w.to_f64_lossy()))
        .collect();
    expansions.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ExpansionReport {
        dropped: original.iter().filter(|(_, w)| *w == 0.0).count(),
        added: expansions.len(),
        original,
        expansions,
    })
}

impl fmt::Display for ExpansionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "original terms:")?;
        for (t, w) in &self.original {
            if *w == 0.0 {
                writeln!(f, "  {t} (dropped)")?;
            } else {
                writeln!(f, "  {t} ({w:.3})")?;
            }
        }
        writeln!(f, "expansion terms:")?;
        for (t, w) in &self.expansions {
            writeln!(f, "  {t} ({w:.3})")?;
        }
        writeln!(f, "dropped {} of {} terms, added {}", self.dropped, self.original.len(), self.added)
    }
}
