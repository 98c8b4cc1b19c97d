//! Exact top-k retrieval: term-at-a-time over the inverted index, and a
//! brute-force scorer used as its oracle.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::index::InvertedIndex;
use crate::objective::sparse_dot;
use crate::sparse::SparseRep;

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub doc_id: String,
    pub score: f64,
}

/// Hits for one query, sorted by descending score then ascending doc id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub hits: Vec<Hit>,
}

/// Orders candidates best-first: higher score, then smaller doc id.
fn better(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.1.cmp(b.1))
}

struct Candidate<'a> {
    score: f64,
    doc_id: &'a str,
}

// The heap's maximum is the worst retained candidate.
impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        better((self.score, self.doc_id), (other.score, other.doc_id))
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

/// Bounded selection of the `k` best `(score, doc_id)` pairs.
struct TopK<'a> {
    k: usize,
    heap: BinaryHeap<Candidate<'a>>,
}

impl<'a> TopK<'a> {
    fn new(k: usize) -> Self {
        TopK {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    fn offer(&mut self, score: f64, doc_id: &'a str) {
        let c = Candidate { score, doc_id };
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(worst) = self.heap.peek() {
            if c < *worst {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }

    fn into_hits(self) -> Vec<Hit> {
        let mut v = self.heap.into_vec();
        v.sort();
        v.into_iter()
            .map(|c| Hit {
                doc_id: c.doc_id.to_string(),
                score: c.score,
            })
            .collect()
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    Ok(())
}

/// Term-at-a-time accumulation into a dense per-document array. Query
/// tokens are visited in increasing id order; untouched documents are
/// never returned.
pub fn search(index: &InvertedIndex, query: &SparseRep<f32>, k: usize) -> Result<Vec<Hit>> {
    check_k(k)?;
    if query.dim() != index.vocab_size() {
        return Err(Error::VocabMismatch {
            expected: index.vocab_size(),
            found: query.dim(),
        });
    }
    let mut acc = vec![0.0f64; index.doc_count()];
    let mut touched = vec![false; index.doc_count()];
    let mut order = Vec::new();
    for &(j, wq) in query.entries() {
        let Some(list) = index.posting(j) else { continue };
        let wq = f64::from(wq);
        for (&d, &wd) in list.docs.iter().zip(&list.weights) {
            let d = d as usize;
            acc[d] += wq * f64::from(wd);
            if !touched[d] {
                touched[d] = true;
                order.push(d);
            }
        }
    }
    let mut top = TopK::new(k);
    for d in order {
        top.offer(acc[d], index.doc_id(d as u32));
    }
    Ok(top.into_hits())
}

/// Scores every document with a sparse dot product.
pub fn brute_force_search<S: AsRef<str>>(
    docs: &[(S, SparseRep<f32>)],
    query: &SparseRep<f32>,
    k: usize,
) -> Result<Vec<Hit>> {
    check_k(k)?;
    let mut top = TopK::new(k);
    for (id, rep) in docs {
        if rep.dim() != query.dim() {
            return Err(Error::VocabMismatch {
                expected: query.dim(),
                found: rep.dim(),
            });
        }
        let s: f64 = sparse_dot(query.entries(), rep.entries());
        if s != 0.0 {
            top.offer(s, id.as_ref());
        }
    }
    Ok(top.into_hits())
}

/// Ranks every document, including those scoring zero.
pub fn rank_all<S: AsRef<str>>(
    docs: &[(S, SparseRep<f32>)],
    query: &SparseRep<f32>,
    k: usize,
) -> Result<Vec<Hit>> {
    check_k(k)?;
    let mut top = TopK::new(k);
    for (id, rep) in docs {
        top.offer(sparse_dot(query.entries(), rep.entries()), id.as_ref());
    }
    Ok(top.into_hits())
}

/// Searches every query (in parallel, results in input order).
pub fn batch_search<S: AsRef<str> + Sync>(
    index: &InvertedIndex,
    queries: &[(S, SparseRep<f32>)],
    k: usize,
) -> Result<Vec<RankedList>> {
    let mut seen = HashSet::new();
    for (id, _) in queries {
        if !seen.insert(id.as_ref()) {
            return Err(Error::DuplicateId(id.as_ref().to_string()));
        }
    }
    queries
        .par_iter()
        .map(|(id, q)| {
            Ok(RankedList {
                query_id: id.as_ref().to_string(),
                hits: search(index, q, k)?,
            })
        })
        .collect()
}

/// TREC run lines: `qid Q0 docid rank score tag`, ranks from 1.
pub fn format_run(lists: &[RankedList], tag: &str) -> String {
    let mut out = String::new();
    for l in lists {
        for (r, h) in l.hits.iter().enumerate() {
            out.push_str(&format!(
                "{} Q0 {} {} {:.6} {}\n",
                l.query_id,
                h.doc_id,
                r + 1,
                h.score,
                tag
            ));
        }
    }
    out
}

pub fn write_run(path: &Path, lists: &[RankedList], tag: &str) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(format_run(lists, tag).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::build_index;
    use proptest::prelude::*;

    fn rep(dim: usize, e: &[(u32, f32)]) -> SparseRep<f32> {
        SparseRep::new(dim, e.to_vec()).unwrap()
    }

    #[test]
    fn empty_query_returns_nothing() {
        let d = rep(5, &[(1, 1.0)]);
        let idx = build_index(5, [("d", &d)]).unwrap();
        assert!(search(&idx, &rep(5, &[]), 10).unwrap().is_empty());
    }

    #[test]
    fn single_term_arithmetic() {
        let d1 = rep(5, &[(3, 1.0)]);
        let d2 = rep(5, &[(3, 3.0)]);
        let idx = build_index(5, [("d1", &d1), ("d2", &d2)]).unwrap();
        let hits = search(&idx, &rep(5, &[(3, 2.0)]), 10).unwrap();
        assert_eq!(
            hits,
            vec![
                Hit { doc_id: "d2".into(), score: 6.0 },
                Hit { doc_id: "d1".into(), score: 2.0 }
            ]
        );
    }

    #[test]
    fn ties_break_on_doc_id() {
        let d = rep(3, &[(0, 1.0)]);
        let idx = build_index(3, [("b", &d), ("a", &d), ("c", &d)]).unwrap();
        let hits = search(&idx, &rep(3, &[(0, 1.0)]), 2).unwrap();
        let ids: Vec<&str> = hits.iter().map(|h| h.doc_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b"]);
    }

    #[test]
    fn brute_force_edge_cases() {
        let docs = vec![("only".to_string(), rep(4, &[(1, 2.0), (2, 0.5)]))];
        let hits = brute_force_search(&docs, &rep(4, &[(1, 1.5)]), 5).unwrap();
        assert_eq!(hits, vec![Hit { doc_id: "only".into(), score: 3.0 }]);
        assert!(brute_force_search(&docs, &rep(4, &[(3, 1.0)]), 5).unwrap().is_empty());
        assert!(brute_force_search(&docs, &rep(4, &[(3, 1.0)]), 0).is_err());
    }

    #[test]
    fn rank_all_includes_zero_scores() {
        let docs = vec![
            ("b".to_string(), rep(3, &[(0, 1.0)])),
            ("a".to_string(), rep(3, &[(1, 1.0)])),
        ];
        let hits = rank_all(&docs, &rep(3, &[(2, 1.0)]), 10).unwrap();
        let ids: Vec<&str> = hits.iter().map(|h| h.doc_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b"]);
    }

    #[test]
    fn run_format_and_duplicates() {
        let d = rep(3, &[(0, 1.0)]);
        let e = rep(3, &[(0, 0.5)]);
        let idx = build_index(3, [("d1", &d), ("d2", &e)]).unwrap();
        let queries = vec![("q1", rep(3, &[(0, 2.0)])), ("q2", rep(3, &[(1, 1.0)]))];
        let lists = batch_search(&idx, &queries, 10).unwrap();
        assert_eq!(
            format_run(&lists, "tag"),
            "q1 Q0 d1 1 2.000000 tag\nq1 Q0 d2 2 1.000000 tag\n"
        );
        let dup = vec![("q1", rep(3, &[])), ("q1", rep(3, &[]))];
        assert!(matches!(batch_search(&idx, &dup, 10), Err(Error::DuplicateId(_))));
    }

    fn arb_rep() -> impl Strategy<Value = SparseRep<f32>> {
        proptest::collection::vec(
            prop_oneof![3 => Just(0.0f32), 1 => (1u8..8).prop_map(|x| f32::from(x) * 0.25)],
            16,
        )
        .prop_map(|d| SparseRep::from_dense(&d))
    }

    proptest! {
        #[test]
        fn index_search_equals_brute_force(docs in proptest::collection::vec(arb_rep(), 1..40), q in arb_rep(), k in 1usize..50) {
            let named: Vec<(String, SparseRep<f32>)> =
                docs.into_iter().enumerate().map(|(i, r)| (format!("d{:03}", (i * 7) % 41), r)).collect();
            let mut seen = HashSet::new();
            let named: Vec<_> = named.into_iter().filter(|(id, _)| seen.insert(id.clone())).collect();
            let idx = build_index(16, named.iter().map(|(i, r)| (i.as_str(), r))).unwrap();
            let fast = search(&idx, &q, k).unwrap();
            prop_assert_eq!(&fast, &brute_force_search(&named, &q, k).unwrap());
            prop_assert!(fast.iter().all(|h| h.score > 0.0));
            prop_assert!(fast.windows(2).all(|w| better((w[0].score, &w[0].doc_id), (w[1].score, &w[1].doc_id)) == Ordering::Less));
        }

        #[test]
        fn adding_a_document_never_changes_other_scores(docs in proptest::collection::vec(arb_rep(), 1..20), extra in arb_rep(), q in arb_rep()) {
            let named: Vec<(String, SparseRep<f32>)> =
                docs.into_iter().enumerate().map(|(i, r)| (format!("d{i:02}"), r)).collect();
            let before = brute_force_search(&named, &q, 100).unwrap();
            let mut more = named.clone();
            more.push(("zz".to_string(), extra));
            let after = brute_force_search(&more, &q, 100).unwrap();
            for h in &before {
                let again = after.iter().find(|a| a.doc_id == h.doc_id).unwrap();
                prop_assert_eq!(again.score, h.score);
            }
        }
    }
}
