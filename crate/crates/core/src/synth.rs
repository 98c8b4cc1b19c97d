//! Synthetic retrieval collections with planted query/document vocabulary
//! mismatch.
//!
//! The vocabulary is split into topics. Each topic owns a set of document
//! terms and a disjoint set of alias terms. Documents draw only from their
//! topic's document terms; query tokens come from the topic's alias terms
//! with probability `synonym_ratio` and from its document terms otherwise.
//! Every document of a query's topic is relevant.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::Qrels;
use crate::text::{write_records, write_triples, CorpusRecord, Triple};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_docs: usize,
    /// Training queries.
    pub n_queries: usize,
    /// Size of each of the dev and test query sets.
    pub n_heldout: usize,
    pub n_topics: usize,
    /// Total distinct words across all topics.
    pub vocab_terms: usize,
    pub synonym_ratio: f64,
    pub doc_len: (usize, usize),
    pub query_len: (usize, usize),
    pub triples_per_query: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_docs: 2000,
            n_queries: 200,
            n_heldout: 50,
            n_topics: 200,
            vocab_terms: 1600,
            synonym_ratio: 1.0,
            doc_len: (8, 10),
            query_len: (3, 4),
            triples_per_query: 10,
        }
    }
}

fn parse_num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_range(key: &str, value: &str) -> Result<(usize, usize)> {
    match value.split_once(',') {
        Some((lo, hi)) => Ok((parse_num(key, lo)?, parse_num(key, hi)?)),
        None => {
            let n = parse_num(key, value)?;
            Ok((n, n))
        }
    }
}

impl SynthConfig {
    /// Sets one field by name; ranges are written `lo,hi`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "n_docs" => self.n_docs = parse_num(key, value)?,
            "n_queries" => self.n_queries = parse_num(key, value)?,
            "n_heldout" => self.n_heldout = parse_num(key, value)?,
            "n_topics" => self.n_topics = parse_num(key, value)?,
            "vocab_terms" => self.vocab_terms = parse_num(key, value)?,
            "synonym_ratio" => self.synonym_ratio = parse_num(key, value)?,
            "doc_len" => self.doc_len = parse_range(key, value)?,
            "query_len" => self.query_len = parse_range(key, value)?,
            "triples_per_query" => self.triples_per_query = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topic {
    pub doc_terms: Vec<String>,
    pub alias_terms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub topics: Vec<Topic>,
    pub corpus: Vec<CorpusRecord>,
    pub doc_topics: Vec<usize>,
    pub train_queries: Vec<CorpusRecord>,
    pub dev_queries: Vec<CorpusRecord>,
    pub test_queries: Vec<CorpusRecord>,
    pub qrels: Qrels,
    pub triples: Vec<Triple>,
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvwz";
const VOWELS: &[u8] = b"aeiou";

/// Distinct pronounceable word for every index.
fn word(mut i: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut s = String::new();
    loop {
        let syl = i % base;
        s.push(CONSONANTS[syl / VOWELS.len()] as char);
        s.push(VOWELS[syl % VOWELS.len()] as char);
        i /= base;
        if i == 0 {
            break;
        }
        i -= 1;
    }
    s
}

fn check(cfg: &SynthConfig) -> Result<(usize, usize)> {
    let bad = |m: String| Err(Error::Config(m));
    if cfg.n_topics < 2 {
        return bad("n_topics must be at least 2".into());
    }
    if cfg.n_docs < cfg.n_topics {
        return bad(format!("{} documents cannot cover {} topics", cfg.n_docs, cfg.n_topics));
    }
    let per_topic = cfg.vocab_terms / cfg.n_topics;
    if per_topic < 2 {
        return bad(format!(
            "{} terms cannot be split into {} topics with document and alias terms",
            cfg.vocab_terms, cfg.n_topics
        ));
    }
    if !(0.0..=1.0).contains(&cfg.synonym_ratio) {
        return bad("synonym_ratio must lie in [0, 1]".into());
    }
    for (name, (lo, hi)) in [("doc_len", cfg.doc_len), ("query_len", cfg.query_len)] {
        if lo == 0 || lo > hi {
            return bad(format!("{name} range must be non-empty and positive"));
        }
    }
    if cfg.n_queries == 0 || cfg.triples_per_query == 0 {
        return bad("n_queries and triples_per_query must be positive".into());
    }
    let aliases = (per_topic / 4).max(1);
    Ok((per_topic - aliases, aliases))
}

pub fn gen_synth(cfg: &SynthConfig) -> Result<SynthData> {
    let (n_doc_terms, n_aliases) = check(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per_topic = n_doc_terms + n_aliases;

    let mut words: Vec<String> = (0..cfg.n_topics * per_topic).map(word).collect();
    words.shuffle(&mut rng);
    let topics: Vec<Topic> = words
        .chunks(per_topic)
        .map(|c| Topic {
            doc_terms: c[..n_doc_terms].to_vec(),
            alias_terms: c[n_doc_terms..].to_vec(),
        })
        .collect();

    let mut doc_topics: Vec<usize> = (0..cfg.n_docs).map(|i| i % cfg.n_topics).collect();
    doc_topics.shuffle(&mut rng);
    let id_width = cfg.n_docs.to_string().len();
    let corpus: Vec<CorpusRecord> = doc_topics
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let len = rng.gen_range(cfg.doc_len.0..=cfg.doc_len.1);
            let text: Vec<&str> = (0..len)
                .map(|_| topics[t].doc_terms.choose(&mut rng).unwrap().as_str())
                .collect();
            CorpusRecord::new(format!("d{i:0id_width$}"), text.join(" "))
        })
        .collect();
    let mut by_topic: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_topics];
    for (i, &t) in doc_topics.iter().enumerate() {
        by_topic[t].push(i);
    }

    // Query topics continue round-robin across the train, dev and test sets.
    let total_queries = cfg.n_queries + 2 * cfg.n_heldout;
    let qwidth = total_queries.to_string().len();
    let mut qrels = Qrels::new();
    let mut queries = Vec::with_capacity(total_queries);
    for i in 0..total_queries {
        let t = i % cfg.n_topics;
        let len = rng.gen_range(cfg.query_len.0..=cfg.query_len.1);
        // Alias tokens cycle through a shuffled alias list so that a query
        // long enough mentions every alias of its topic.
        let mut aliases: Vec<&str> = topics[t].alias_terms.iter().map(String::as_str).collect();
        aliases.shuffle(&mut rng);
        let mut next_alias = 0;
        let text: Vec<&str> = (0..len)
            .map(|_| {
                if rng.gen_bool(cfg.synonym_ratio) {
                    next_alias += 1;
                    aliases[(next_alias - 1) % aliases.len()]
                } else {
                    topics[t].doc_terms.choose(&mut rng).unwrap().as_str()
                }
            })
            .collect();
        let id = format!("q{i:0qwidth$}");
        for &d in &by_topic[t] {
            qrels.insert(&id, &corpus[d].id, 1);
        }
        queries.push((t, CorpusRecord::new(id, text.join(" "))));
    }

    let mut triples = Vec::new();
    for (t, q) in &queries[..cfg.n_queries] {
        for _ in 0..cfg.triples_per_query {
            let pos = *by_topic[*t].choose(&mut rng).unwrap();
            let neg = loop {
                let d = rng.gen_range(0..cfg.n_docs);
                if doc_topics[d] != *t {
                    break d;
                }
            };
            triples.push(Triple {
                query_id: q.id.clone(),
                positive_id: corpus[pos].id.clone(),
                negative_id: corpus[neg].id.clone(),
            });
        }
    }

    let mut records = queries.into_iter().map(|(_, r)| r);
    let train_queries = records.by_ref().take(cfg.n_queries).collect();
    let dev_queries = records.by_ref().take(cfg.n_heldout).collect();
    let test_queries = records.collect();
    Ok(SynthData {
        topics,
        corpus,
        doc_topics,
        train_queries,
        dev_queries,
        test_queries,
        qrels,
        triples,
    })
}

pub const SYNTH_FILES: [&str; 7] = [
    "corpus.tsv",
    "queries.train.tsv",
    "queries.dev.tsv",
    "queries.test.tsv",
    "qrels.txt",
    "triples.tsv",
    "topics.tsv",
];

impl SynthData {
    /// `topic<TAB>doc terms<TAB>alias terms`, terms space-separated.
    pub fn topics_tsv(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.topics.iter().enumerate() {
            s.push_str(&format!("{i}\t{}\t{}\n", t.doc_terms.join(" "), t.alias_terms.join(" ")));
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_records(&dir.join(SYNTH_FILES[0]), &self.corpus)?;
        write_records(&dir.join(SYNTH_FILES[1]), &self.train_queries)?;
        write_records(&dir.join(SYNTH_FILES[2]), &self.dev_queries)?;
        write_records(&dir.join(SYNTH_FILES[3]), &self.test_queries)?;
        let qrels = dir.join(SYNTH_FILES[4]);
        fs::write(&qrels, self.qrels.to_text()).map_err(|e| Error::io(&qrels, e))?;
        write_triples(&dir.join(SYNTH_FILES[5]), &self.triples)?;
        let topics = dir.join(SYNTH_FILES[6]);
        fs::write(&topics, self.topics_tsv()).map_err(|e| Error::io(&topics, e))
    }
}

/// Reads a `topics.tsv` file written by [`SynthData::write`].
pub fn load_topics(path: &Path) -> Result<Vec<Topic>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 3 {
                return Err(Error::parse(path, n + 1, format!("expected 3 fields, found {}", f.len())));
            }
            let split = |s: &str| s.split_whitespace().map(str::to_string).collect();
            Ok(Topic {
                doc_terms: split(f[1]),
                alias_terms: split(f[2]),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::normalize;
    use std::collections::HashSet;

    #[test]
    fn set_by_name() {
        let mut c = SynthConfig::default();
        c.set("doc_len", "4,6").unwrap();
        c.set("query_len", "2").unwrap();
        c.set("synonym_ratio", "0.5").unwrap();
        assert_eq!((c.doc_len, c.query_len, c.synonym_ratio), ((4, 6), (2, 2), 0.5));
        assert!(c.set("n_docs", "many").is_err());
        assert!(c.set("colour", "1").is_err());
    }

    fn small() -> SynthConfig {
        SynthConfig {
            seed: 3,
            n_docs: 60,
            n_queries: 20,
            n_heldout: 5,
            n_topics: 6,
            vocab_terms: 48,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn words_are_distinct() {
        let w: HashSet<String> = (0..20_000).map(word).collect();
        assert_eq!(w.len(), 20_000);
        assert!(w.iter().all(|s| normalize(s).count() == 1));
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(gen_synth(&small()).unwrap(), gen_synth(&small()).unwrap());
        let other = SynthConfig { seed: 4, ..small() };
        assert_ne!(gen_synth(&small()).unwrap(), gen_synth(&other).unwrap());
    }

    #[test]
    fn full_synonymy_means_disjoint_supports() {
        let d = gen_synth(&small()).unwrap();
        assert_eq!(d.topics[0].doc_terms.len(), 6);
        assert_eq!(d.topics[0].alias_terms.len(), 2);
        let doc_words: HashSet<String> = d.corpus.iter().flat_map(|r| normalize(&r.text).collect::<Vec<_>>()).collect();
        for q in d.train_queries.iter().chain(&d.dev_queries).chain(&d.test_queries) {
            assert!(normalize(&q.text).all(|w| !doc_words.contains(&w)));
        }
        assert_eq!(d.triples.len(), 20 * 10);
        assert_eq!(d.qrels.len(), 30);
        for t in &d.triples {
            assert_eq!(d.qrels.grade(&t.query_id, &t.positive_id), 1);
            assert_eq!(d.qrels.grade(&t.query_id, &t.negative_id), 0);
        }
    }

    #[test]
    fn zero_synonymy_means_shared_terms() {
        let d = gen_synth(&SynthConfig { synonym_ratio: 0.0, ..small() }).unwrap();
        let aliases: HashSet<&String> = d.topics.iter().flat_map(|t| &t.alias_terms).collect();
        for q in &d.train_queries {
            assert!(normalize(&q.text).all(|w| !aliases.contains(&w)));
        }
    }

    #[test]
    fn infeasible_partitions_rejected() {
        assert!(gen_synth(&SynthConfig { vocab_terms: 6, ..small() }).is_err());
        assert!(gen_synth(&SynthConfig { n_topics: 1, ..small() }).is_err());
        assert!(gen_synth(&SynthConfig { n_docs: 5, ..small() }).is_err());
    }

    #[test]
    fn topics_file_roundtrip() {
        let d = gen_synth(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.write(dir.path()).unwrap();
        assert_eq!(load_topics(&dir.path().join("topics.tsv")).unwrap(), d.topics);
        let corpus = crate::text::load_corpus(&dir.path().join("corpus.tsv")).unwrap();
        assert_eq!(corpus, d.corpus);
    }
}
