//! Retrieval quality and efficiency metrics over run files and relevance
//! judgments.
//!
//! Averages run over the qrels query set: queries judged but missing from
//! the run contribute zero. A query in the run with no judgments is an
//! error, since silently dropping it would inflate every metric.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::head::LiteralIndicator;
use crate::search::RunFile;
use crate::sparse::SparseVec;

/// Relevance judgments: query id -> relevant doc ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    map: BTreeMap<String, BTreeSet<String>>,
}

impl Qrels {
    /// Parse the qrels TSV: `query_id \t doc_id`.
    pub fn load<R: BufRead>(r: R) -> Result<Self> {
        let mut map: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (i, line) in r.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 2 {
                return Err(Error::parse(line_no, format!("expected 2 columns, found {}", cols.len())));
            }
            map.entry(cols[0].to_string()).or_default().insert(cols[1].to_string());
        }
        if map.is_empty() {
            return Err(Error::data("empty qrels"));
        }
        Ok(Self { map })
    }

    pub fn from_pairs<I: IntoIterator<Item = (String, String)>>(pairs: I) -> Result<Self> {
        let mut map: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (q, d) in pairs {
            map.entry(q).or_default().insert(d);
        }
        if map.is_empty() {
            return Err(Error::data("empty qrels"));
        }
        Ok(Self { map })
    }

    pub fn num_queries(&self) -> usize {
        self.map.len()
    }

    pub fn relevant(&self, query_id: &str) -> Option<&BTreeSet<String>> {
        self.map.get(query_id)
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// Largest judged set; callers warn when hit@k is asked of multi-
    /// relevant data.
    pub fn max_relevant_per_query(&self) -> usize {
        self.map.values().map(BTreeSet::len).max().unwrap_or(0)
    }
}

fn check_run_queries(run: &RunFile, qrels: &Qrels) -> Result<()> {
    for qid in run.entries.keys() {
        if qrels.relevant(qid).is_none() {
            return Err(Error::data(format!("query '{qid}' in run has no judgments")));
        }
    }
    Ok(())
}

/// Fraction of judged queries with at least one relevant doc in the top k.
pub fn hit_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<f64> {
    check_run_queries(run, qrels)?;
    let mut hits = 0usize;
    for qid in qrels.queries() {
        let rel = qrels.relevant(qid).expect("iterating qrels");
        let hit = run
            .entries
            .get(qid)
            .map(|rows| {
                rows.iter()
                    .any(|(doc, rank, _)| (*rank as usize) <= k && rel.contains(doc))
            })
            .unwrap_or(false);
        if hit {
            hits += 1;
        }
    }
    Ok(hits as f64 / qrels.num_queries() as f64)
}

/// Mean reciprocal rank of the first relevant doc, zero beyond rank 10.
pub fn mrr_at_10(run: &RunFile, qrels: &Qrels) -> Result<f64> {
    check_run_queries(run, qrels)?;
    let mut total = 0.0;
    for qid in qrels.queries() {
        let rel = qrels.relevant(qid).expect("iterating qrels");
        let rr = run
            .entries
            .get(qid)
            .and_then(|rows| {
                rows.iter()
                    .filter(|(doc, rank, _)| *rank <= 10 && rel.contains(doc))
                    .map(|(_, rank, _)| 1.0 / f64::from(*rank))
                    .next()
            })
            .unwrap_or(0.0);
        total += rr;
    }
    Ok(total / qrels.num_queries() as f64)
}

/// Mean over queries of |top-k intersect relevant| / |relevant|.
pub fn recall_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<f64> {
    check_run_queries(run, qrels)?;
    let mut total = 0.0;
    for qid in qrels.queries() {
        let rel = qrels.relevant(qid).expect("iterating qrels");
        let found = run
            .entries
            .get(qid)
            .map(|rows| {
                rows.iter()
                    .filter(|(doc, rank, _)| (*rank as usize) <= k && rel.contains(doc))
                    .count()
            })
            .unwrap_or(0);
        total += found as f64 / rel.len() as f64;
    }
    Ok(total / qrels.num_queries() as f64)
}

/// Default cap on sampled (query, item) pairs.
pub const FLOPS_SAMPLE_CAP: usize = 10_000;

/// Mean support overlap between query and item representations: the
/// average number of term-weight multiplications a scorer pays per pair.
/// Exhaustive when the pair count fits the cap, otherwise seeded sampling
/// with replacement.
pub fn flops_overlap(queries: &[SparseVec], items: &[SparseVec], max_pairs: usize, seed: u64) -> Result<f64> {
    if queries.is_empty() || items.is_empty() || max_pairs == 0 {
        return Err(Error::data("empty sample"));
    }
    let total = queries.len().saturating_mul(items.len());
    if total <= max_pairs {
        let mut sum = 0usize;
        for q in queries {
            for d in items {
                sum += q.support_overlap(d);
            }
        }
        return Ok(sum as f64 / total as f64);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0usize;
    for _ in 0..max_pairs {
        let q = &queries[rng.gen_range(0..queries.len())];
        let d = &items[rng.gen_range(0..items.len())];
        sum += q.support_overlap(d);
    }
    Ok(sum as f64 / max_pairs as f64)
}

/// Which side of the literal/expansion partition to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKeep {
    LiteralOnly,
    ExpansionOnly,
}

impl std::str::FromStr for MaskKeep {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal_only" => Ok(Self::LiteralOnly),
            "expansion_only" => Ok(Self::ExpansionOnly),
            other => Err(Error::Config(format!("unknown mask '{other}'"))),
        }
    }
}

/// Restrict a representation to its literal or expansion dims.
pub fn mask_terms(vec: &SparseVec, lit: &LiteralIndicator, keep: MaskKeep) -> SparseVec {
    let entries: Vec<(u32, f64)> = vec
        .iter()
        .filter(|&(id, _)| match keep {
            MaskKeep::LiteralOnly => lit.contains(id),
            MaskKeep::ExpansionOnly => !lit.contains(id),
        })
        .collect();
    SparseVec::from_entries(entries).expect("filtered entries stay valid")
}

/// Quality and efficiency summary of one run.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MetricsReport {
    pub hit_at_1: f64,
    pub hit_at_10: f64,
    pub hit_at_100: f64,
    pub hit_at_1000: f64,
    pub mrr_at_10: f64,
    pub recall_at_10: f64,
    pub recall_at_100: f64,
    pub recall_at_1000: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flops_overlap: Option<f64>,
}

impl MetricsReport {
    pub fn compute(run: &RunFile, qrels: &Qrels) -> Result<Self> {
        Ok(Self {
            hit_at_1: hit_at_k(run, qrels, 1)?,
            hit_at_10: hit_at_k(run, qrels, 10)?,
            hit_at_100: hit_at_k(run, qrels, 100)?,
            hit_at_1000: hit_at_k(run, qrels, 1000)?,
            mrr_at_10: mrr_at_10(run, qrels)?,
            recall_at_10: recall_at_k(run, qrels, 10)?,
            recall_at_100: recall_at_k(run, qrels, 100)?,
            recall_at_1000: recall_at_k(run, qrels, 1000)?,
            flops_overlap: None,
        })
    }

    /// Human-readable aligned table.
    pub fn render_table(&self) -> String {
        let mut rows = vec![
            ("hit@1", self.hit_at_1),
            ("hit@10", self.hit_at_10),
            ("hit@100", self.hit_at_100),
            ("hit@1000", self.hit_at_1000),
            ("mrr@10", self.mrr_at_10),
            ("recall@10", self.recall_at_10),
            ("recall@100", self.recall_at_100),
            ("recall@1000", self.recall_at_1000),
        ];
        if let Some(f) = self.flops_overlap {
            rows.push(("#flops", f));
        }
        let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (name, value) in rows {
            out.push_str(&format!("{name:<width$}  {value:.4}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_from(rows: &[(&str, &[(&str, f64)])]) -> RunFile {
        let mut run = RunFile::default();
        for &(qid, docs) in rows {
            let ranked: Vec<(String, f64)> =
                docs.iter().map(|&(d, s)| (d.to_string(), s)).collect();
            run.push_query(qid, &ranked);
        }
        run
    }

    fn qrels_from(rows: &[(&str, &[&str])]) -> Qrels {
        Qrels::from_pairs(rows.iter().flat_map(|&(q, docs)| {
            docs.iter().map(move |&d| (q.to_string(), d.to_string()))
        }))
        .unwrap()
    }

    #[test]
    fn hit_fixtures() {
        let qrels = qrels_from(&[("q1", &["rel"])]);
        let mut docs: Vec<(&str, f64)> = (0..12).map(|i| ("x", 12.0 - i as f64)).collect();
        docs[2] = ("rel", 10.0);
        let run = run_from(&[("q1", &docs)]);
        assert_eq!(hit_at_k(&run, &qrels, 10).unwrap(), 1.0);

        let mut docs: Vec<(&str, f64)> = (0..12).map(|i| ("x", 12.0 - i as f64)).collect();
        docs[10] = ("rel", 1.5); // rank 11
        let run = run_from(&[("q1", &docs)]);
        assert_eq!(hit_at_k(&run, &qrels, 10).unwrap(), 0.0);

        // empty result list: not a hit
        let run = run_from(&[("q1", &[])]);
        assert_eq!(hit_at_k(&run, &qrels, 10).unwrap(), 0.0);
    }

    #[test]
    fn mrr_fixtures() {
        let qrels = qrels_from(&[("q1", &["rel"])]);
        let run = run_from(&[("q1", &[("a", 4.0), ("b", 3.0), ("c", 2.0), ("rel", 1.0)])]);
        assert_eq!(mrr_at_10(&run, &qrels).unwrap(), 0.25);
        let run = run_from(&[("q1", &[("rel", 4.0)])]);
        assert_eq!(mrr_at_10(&run, &qrels).unwrap(), 1.0);
        let mut docs: Vec<(&str, f64)> = (0..11).map(|i| ("x", 20.0 - i as f64)).collect();
        docs.push(("rel", 1.0)); // rank 12
        let run = run_from(&[("q1", &docs)]);
        assert_eq!(mrr_at_10(&run, &qrels).unwrap(), 0.0);
    }

    #[test]
    fn recall_fixtures() {
        let qrels = qrels_from(&[("q1", &["r1", "r2", "r3", "r4"])]);
        let run = run_from(&[("q1", &[("r1", 5.0), ("x", 4.0), ("r2", 3.0)])]);
        assert_eq!(recall_at_k(&run, &qrels, 10).unwrap(), 0.5);
        let run = run_from(&[("q1", &[("r1", 4.0), ("r2", 3.0), ("r3", 2.0), ("r4", 1.0)])]);
        assert_eq!(recall_at_k(&run, &qrels, 10).unwrap(), 1.0);
        let run = run_from(&[("q1", &[("x", 1.0)])]);
        assert_eq!(recall_at_k(&run, &qrels, 10).unwrap(), 0.0);
    }

    #[test]
    fn unknown_run_query_is_error() {
        let qrels = qrels_from(&[("q1", &["d"])]);
        let run = run_from(&[("mystery", &[("d", 1.0)])]);
        assert!(hit_at_k(&run, &qrels, 10).is_err());
    }

    #[test]
    fn absent_judged_query_counts_zero() {
        let qrels = qrels_from(&[("q1", &["d"]), ("q2", &["e"])]);
        let run = run_from(&[("q1", &[("d", 1.0)])]);
        assert_eq!(hit_at_k(&run, &qrels, 10).unwrap(), 0.5);
        assert_eq!(recall_at_k(&run, &qrels, 10).unwrap(), 0.5);
    }

    #[test]
    fn metrics_nondecreasing_in_k_and_recall_equals_hit_for_single_relevant() {
        let qrels = qrels_from(&[("q1", &["rel"]), ("q2", &["other"])]);
        let mut docs: Vec<(&str, f64)> = (0..50).map(|i| ("x", 99.0 - i as f64)).collect();
        docs[20] = ("rel", 50.0);
        let run = run_from(&[("q1", &docs), ("q2", &[("other", 1.0)])]);
        let mut prev = 0.0;
        for k in [1, 10, 100, 1000] {
            let h = hit_at_k(&run, &qrels, k).unwrap();
            assert!(h >= prev);
            prev = h;
            assert_eq!(h, recall_at_k(&run, &qrels, k).unwrap());
        }
    }

    #[test]
    fn flops_overlap_fixtures() {
        use std::slice::from_ref;
        let q = SparseVec::from_entries(vec![(0, 1.0), (1, 1.0)]).unwrap();
        let d = SparseVec::from_entries(vec![(1, 1.0), (2, 1.0)]).unwrap();
        assert_eq!(flops_overlap(from_ref(&q), from_ref(&d), 100, 0).unwrap(), 1.0);
        let disjoint = SparseVec::from_entries(vec![(9, 1.0)]).unwrap();
        assert_eq!(flops_overlap(from_ref(&q), from_ref(&disjoint), 100, 0).unwrap(), 0.0);
        let same = SparseVec::from_entries((0..5).map(|i| (i, 1.0)).collect()).unwrap();
        assert_eq!(flops_overlap(from_ref(&same), from_ref(&same), 100, 0).unwrap(), 5.0);
        assert!(flops_overlap(&[], from_ref(&q), 100, 0).is_err());
    }

    #[test]
    fn mask_partition_reconstructs_original() {
        let lit = LiteralIndicator::from_dims(vec![1, 3]);
        let v = SparseVec::from_entries(vec![(1, 0.5), (2, 0.25), (3, 1.0), (7, 2.0)]).unwrap();
        let l = mask_terms(&v, &lit, MaskKeep::LiteralOnly);
        let e = mask_terms(&v, &lit, MaskKeep::ExpansionOnly);
        assert_eq!(l.entries(), &[(1, 0.5), (3, 1.0)]);
        assert_eq!(e.entries(), &[(2, 0.25), (7, 2.0)]);
        let mut union: Vec<(u32, f64)> = l.iter().chain(e.iter()).collect();
        union.sort_by_key(|&(id, _)| id);
        assert_eq!(union, v.entries());

        // fully literal vector: literal mask is identity, expansion mask empty
        let all_lit = SparseVec::from_entries(vec![(1, 1.0), (3, 2.0)]).unwrap();
        assert_eq!(mask_terms(&all_lit, &lit, MaskKeep::LiteralOnly), all_lit);
        assert!(mask_terms(&all_lit, &lit, MaskKeep::ExpansionOnly).is_empty());
    }
}
