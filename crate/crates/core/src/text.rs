//! Tokenization, vocabulary construction and TSV ingestion.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const UNK: &str = "[UNK]";
pub const UNK_ID: u32 = 0;

/// Dense term ids in `[0, len)`, with id 0 reserved for unknown terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from an explicit term list (UNK is prepended).
    pub fn from_terms<I, S>(terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![UNK.to_string()];
        all.extend(terms.into_iter().map(Into::into));
        Self::from_full_list(all)
    }

    fn from_full_list(terms: Vec<String>) -> Result<Self> {
        if terms.first().map(String::as_str) != Some(UNK) {
            return Err(Error::Format(format!("vocabulary must start with {UNK}")));
        }
        let mut ids = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if i > 0 && (t == UNK || t.is_empty()) {
                return Err(Error::Format(format!("invalid vocabulary term `{t}` at id {i}")));
            }
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::DuplicateId(t.clone()));
            }
        }
        Ok(Vocabulary { terms, ids })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> Option<u32> {
        self.ids.get(term).copied()
    }

    /// Id of `term`, or [`UNK_ID`] when out of vocabulary.
    pub fn id_or_unk(&self, term: &str) -> u32 {
        self.id(term).unwrap_or(UNK_ID)
    }

    pub fn term(&self, id: u32) -> Option<&str> {
        self.terms.get(id as usize).map(String::as_str)
    }

    /// All terms in id order, starting with the UNK sentinel.
    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.terms {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        w.write_all(self.to_text().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut terms = Vec::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                return Err(Error::parse(path, n + 1, "empty vocabulary line"));
            }
            terms.push(line);
        }
        Self::from_full_list(terms).map_err(|e| Error::parse(path, 1, e.to_string()))
    }
}

/// Token ids of one query or document, truncated to a maximum length.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSeq {
    ids: Vec<u32>,
}

impl TokenSeq {
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyTokenSequence);
        }
        Ok(TokenSeq { ids })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
}

impl CorpusRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        CorpusRecord {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// A training triple of external ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub query_id: String,
    pub positive_id: String,
    pub negative_id: String,
}

/// Lowercased alphanumeric runs of `text`.
pub fn normalize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
}

pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenSeq> {
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let ids: Vec<u32> = normalize(text)
        .take(max_len)
        .map(|t| vocab.id_or_unk(&t))
        .collect();
    TokenSeq::new(ids)
}

/// Keeps UNK plus the `max_size - 1` most frequent terms occurring at least
/// `min_freq` times. Equal frequencies are ordered lexicographically.
pub fn build_vocab<'a, I>(corpus: I, max_size: usize, min_freq: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a CorpusRecord>,
{
    if max_size < 2 {
        return Err(Error::Config("max_size must be at least 2".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut docs = 0usize;
    for rec in corpus {
        docs += 1;
        for t in normalize(&rec.text) {
            *counts.entry(t).or_default() += 1;
        }
    }
    if docs == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_freq.max(1))
        .collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - 1);
    Vocabulary::from_terms(ranked.into_iter().map(|(t, _)| t))
}

fn read_tsv<F, R>(path: &Path, columns: usize, mut make: F) -> Result<Vec<R>>
where
    F: FnMut(Vec<&str>) -> R,
{
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != columns {
            return Err(Error::parse(
                path,
                n + 1,
                format!("expected {columns} tab-separated fields, found {}", fields.len()),
            ));
        }
        if fields[0].is_empty() {
            return Err(Error::parse(path, n + 1, "empty id"));
        }
        out.push(make(fields));
    }
    Ok(out)
}

fn records(path: &Path, unique: bool) -> Result<Vec<CorpusRecord>> {
    let recs = read_tsv(path, 2, |f| CorpusRecord::new(f[0], f[1]))?;
    if unique {
        let mut seen = HashSet::with_capacity(recs.len());
        for (n, r) in recs.iter().enumerate() {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::parse(path, n + 1, format!("duplicate doc_id `{}`", r.id)));
            }
        }
    }
    Ok(recs)
}

/// `doc_id<TAB>text` lines; doc ids must be unique.
pub fn load_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    records(path, true)
}

/// `query_id<TAB>text` lines.
pub fn load_queries(path: &Path) -> Result<Vec<CorpusRecord>> {
    records(path, false)
}

/// `qid<TAB>pos_docid<TAB>neg_docid` lines.
pub fn load_triples(path: &Path) -> Result<Vec<Triple>> {
    read_tsv(path, 3, |f| Triple {
        query_id: f[0].to_string(),
        positive_id: f[1].to_string(),
        negative_id: f[2].to_string(),
    })
}

pub fn write_records(path: &Path, records: &[CorpusRecord]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        writeln!(w, "{}\t{}", r.id, r.text).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_triples(path: &Path, triples: &[Triple]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for t in triples {
        writeln!(w, "{}\t{}\t{}", t.query_id, t.positive_id, t.negative_id)
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
