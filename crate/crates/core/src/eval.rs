//! Rank-based IR metrics over TREC run files and qrels.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::retrieval::RankedList;

/// Relevance grades keyed by query id, then doc id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    grades: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Qrels::default()
    }

    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) {
        self.grades
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade);
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.grades
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn judged(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.grades.get(query_id)
    }

    /// Query ids in sorted order.
    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.grades.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.grades.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grades.is_empty()
    }

    /// Restricts to the given queries.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Qrels {
        let mut out = Qrels::new();
        for id in ids {
            if let Some(m) = self.grades.get(id) {
                out.grades.insert(id.to_string(), m.clone());
            }
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Qrels> {
        let mut q = Qrels::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(Error::parse(path, n + 1, format!("expected 4 fields, found {}", f.len())));
            }
            let grade: u32 = f[3]
                .parse()
                .map_err(|_| Error::parse(path, n + 1, format!("bad grade {:?}", f[3])))?;
            q.insert(f[0], f[2], grade);
        }
        Ok(q)
    }

    pub fn load(path: &Path) -> Result<Qrels> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Qrels::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (q, docs) in &self.grades {
            for (d, g) in docs {
                out.push_str(&format!("{q} 0 {d} {g}\n"));
            }
        }
        out
    }
}

/// Ranked doc ids per query, best first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run {
    ranked: BTreeMap<String, Vec<String>>,
}

impl Run {
    pub fn ranking(&self, query_id: &str) -> &[String] {
        self.ranked.get(query_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, query_id: &str) -> bool {
        self.ranked.contains_key(query_id)
    }

    pub fn from_lists(lists: &[RankedList]) -> Run {
        let ranked = lists
            .iter()
            .map(|l| {
                let docs = l.hits.iter().map(|h| h.doc_id.clone()).collect();
                (l.query_id.clone(), docs)
            })
            .collect();
        Run { ranked }
    }

    /// Rows are ordered by the rank column, not by file position.
    pub fn parse(text: &str, path: &Path) -> Result<Run> {
        let mut rows: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
        let mut seen = HashSet::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(Error::parse(path, n + 1, format!("expected 6 fields, found {}", f.len())));
            }
            let rank: usize = f[3]
                .parse()
                .map_err(|_| Error::parse(path, n + 1, format!("bad rank {:?}", f[3])))?;
            f[4].parse::<f64>()
                .map_err(|_| Error::parse(path, n + 1, format!("bad score {:?}", f[4])))?;
            if !seen.insert((f[0].to_string(), f[2].to_string())) {
                return Err(Error::parse(path, n + 1, format!("document {} listed twice for query {}", f[2], f[0])));
            }
            rows.entry(f[0].to_string()).or_default().push((rank, f[2].to_string()));
        }
        let ranked = rows
            .into_iter()
            .map(|(q, mut v)| {
                v.sort();
                (q, v.into_iter().map(|(_, d)| d).collect())
            })
            .collect();
        Ok(Run { ranked })
    }

    pub fn load(path: &Path) -> Result<Run> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Run::parse(&text, path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Mrr(usize),
    Recall(usize),
    Ndcg(usize),
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Mrr(k) => write!(f, "mrr@{k}"),
            Metric::Recall(k) => write!(f, "recall@{k}"),
            Metric::Ndcg(k) => write!(f, "ndcg@{k}"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Metric> {
        let bad = || Error::Config(format!("unknown metric {s:?} (expected mrr@K, recall@K or ndcg@K)"));
        let (name, k) = s.split_once('@').ok_or_else(bad)?;
        let k: usize = k.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(bad());
        }
        match name.to_ascii_lowercase().as_str() {
            "mrr" => Ok(Metric::Mrr(k)),
            "recall" | "r" => Ok(Metric::Recall(k)),
            "ndcg" => Ok(Metric::Ndcg(k)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metric: Metric,
    /// Evaluated queries in sorted id order.
    pub per_query: Vec<(String, f64)>,
    pub mean: f64,
    /// Queries left out of the mean (no relevant documents / zero ideal DCG).
    pub excluded: Vec<String>,
    /// Judged queries with no rows in the run; scored 0.
    pub missing: Vec<String>,
}

impl MetricReport {
    pub fn value(&self, query_id: &str) -> Option<f64> {
        self.per_query
            .iter()
            .find(|(q, _)| q == query_id)
            .map(|&(_, v)| v)
    }

    pub fn to_csv_rows(&self) -> String {
        let mut out = String::new();
        for (q, v) in &self.per_query {
            out.push_str(&format!("{},{},{:.6}\n", self.metric, q, v));
        }
        out.push_str(&format!("{},ALL,{:.6}\n", self.metric, self.mean));
        out
    }
}

pub fn reports_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from("metric,query_id,value\n");
    for r in reports {
        out.push_str(&r.to_csv_rows());
    }
    out
}

fn mean(values: &[(String, f64)]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().map(|(_, v)| v).sum::<f64>() / values.len() as f64
}

fn report<F>(metric: Metric, run: &Run, qrels: &Qrels, mut per_query: F) -> MetricReport
where
    F: FnMut(&[String], &BTreeMap<String, u32>) -> Option<f64>,
{
    let mut values = Vec::new();
    let mut excluded = Vec::new();
    let mut missing = Vec::new();
    for (q, judged) in &qrels.grades {
        if !run.contains(q) {
            missing.push(q.clone());
        }
        match per_query(run.ranking(q), judged) {
            Some(v) => values.push((q.clone(), v)),
            None => excluded.push(q.clone()),
        }
    }
    MetricReport {
        metric,
        mean: mean(&values),
        per_query: values,
        excluded,
        missing,
    }
}

/// Reciprocal rank of the first document with grade ≥ `min_grade` in the
/// top `k`; every judged query counts.
pub fn mrr_at_k(run: &Run, qrels: &Qrels, k: usize, min_grade: u32) -> MetricReport {
    report(Metric::Mrr(k), run, qrels, |ranking, judged| {
        let first = ranking
            .iter()
            .take(k)
            .position(|d| judged.get(d).is_some_and(|&g| g >= min_grade));
        Some(first.map_or(0.0, |p| 1.0 / (p + 1) as f64))
    })
}

pub fn recall_at_k(run: &Run, qrels: &Qrels, k: usize, min_grade: u32) -> MetricReport {
    report(Metric::Recall(k), run, qrels, |ranking, judged| {
        let relevant = judged.values().filter(|&&g| g >= min_grade).count();
        if relevant == 0 {
            return None;
        }
        let hit = ranking
            .iter()
            .take(k)
            .filter(|d| judged.get(*d).is_some_and(|&g| g >= min_grade))
            .count();
        Some(hit as f64 / relevant as f64)
    })
}

fn dcg(grades: impl Iterator<Item = u32>) -> f64 {
    grades
        .enumerate()
        .map(|(i, g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// Gain `2^grade − 1`, discount `1/log2(rank + 1)`.
pub fn ndcg_at_k(run: &Run, qrels: &Qrels, k: usize) -> MetricReport {
    report(Metric::Ndcg(k), run, qrels, |ranking, judged| {
        let mut ideal: Vec<u32> = judged.values().copied().collect();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg = dcg(ideal.into_iter().take(k));
        if idcg == 0.0 {
            return None;
        }
        let got = dcg(ranking.iter().take(k).map(|d| judged.get(d).copied().unwrap_or(0)));
        Some(got / idcg)
    })
}

pub fn evaluate(run: &Run, qrels: &Qrels, metrics: &[Metric], min_grade: u32) -> Vec<MetricReport> {
    metrics
        .iter()
        .map(|&m| match m {
            Metric::Mrr(k) => mrr_at_k(run, qrels, k, min_grade),
            Metric::Recall(k) => recall_at_k(run, qrels, k, min_grade),
            Metric::Ndcg(k) => ndcg_at_k(run, qrels, k),
        })
        .collect()
}

pub fn evaluate_run(
    run_path: &Path,
    qrels_path: &Path,
    metrics: &[Metric],
    min_grade: u32,
) -> Result<Vec<MetricReport>> {
    let run = Run::load(run_path)?;
    let qrels = Qrels::load(qrels_path)?;
    Ok(evaluate(&run, &qrels, metrics, min_grade))
}
