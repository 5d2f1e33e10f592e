//! Top-k retrieval: block-max maxscore with safe pruning, an exhaustive
//! oracle, and a BM25 baseline.
//!
//! Both learned-index search paths score documents by the dot product of
//! query weights with stored (possibly quantized) posting weights, summing
//! contributions in ascending term-id order so the two paths produce
//! bit-identical scores. Ties are broken by ascending document ordinal.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, BTreeMap};
use std::io::{BufRead, Write};

use crate::bytesio::{self, TrackedReader};
use crate::corpus::{TokenSeq, UNK_ID};
use crate::error::{Error, Result};
use crate::index::{InvertedIndex, TermPostings};
use crate::sparse::SparseVec;

/// Serving-side default for query truncation.
pub const DEFAULT_QUERY_TERMS: usize = 16;
/// Serving-side default result depth.
pub const DEFAULT_TOP_K: usize = 1000;

/// Truncated query vector: at most m entries, sorted by term id.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryVec {
    entries: Vec<(u32, f64)>,
}

impl QueryVec {
    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }
}

/// Keep the m highest-weight query terms, ties keeping the lower id.
pub fn truncate_query(w: &SparseVec, m: usize) -> QueryVec {
    QueryVec {
        entries: w.top_k(m).entries().to_vec(),
    }
}

/// Ranked results: scores non-increasing, ties by ascending ordinal.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// (document ordinal, score) pairs.
    pub hits: Vec<(u32, f64)>,
}

impl SearchResult {
    pub fn resolve<'a>(&self, idx: &'a InvertedIndex) -> Vec<(&'a str, f64)> {
        self.hits.iter().map(|&(ord, s)| (idx.doc_id(ord), s)).collect()
    }
}

/// Pruning effectiveness counters for one query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    /// Blocks discarded via block-max bounds without scoring their postings.
    pub blocks_skipped: u64,
    /// Candidate documents abandoned by a bound check.
    pub docs_pruned: u64,
    /// Documents fully scored and offered to the heap.
    pub docs_scored: u64,
}

// ---------------------------------------------------------------------------
// Top-k collector
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct HeapEntry {
    ord: u32,
    score: f64,
}

// Min-heap order: the worst entry (lowest score, then highest ordinal)
// surfaces first.
impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.score == other.score && self.ord == other.ord
    }
}
impl Eq for HeapEntry {}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .partial_cmp(&self.score)
            .expect("scores are finite")
            .then_with(|| self.ord.cmp(&other.ord))
    }
}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct TopK {
    heap: BinaryHeap<HeapEntry>,
    k: usize,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            heap: BinaryHeap::with_capacity(k + 1),
            k,
        }
    }

    /// Score a later-ordinal candidate must strictly exceed to enter.
    fn threshold(&self) -> f64 {
        if self.heap.len() >= self.k {
            self.heap.peek().map(|e| e.score).unwrap_or(f64::NEG_INFINITY)
        } else {
            f64::NEG_INFINITY
        }
    }

    fn would_enter(&self, bound: f64) -> bool {
        self.heap.len() < self.k || bound > self.threshold()
    }

    fn insert(&mut self, ord: u32, score: f64) {
        if self.k == 0 {
            return;
        }
        if self.heap.len() < self.k {
            self.heap.push(HeapEntry { ord, score });
            return;
        }
        let worst = *self.heap.peek().expect("heap full");
        if score > worst.score || (score == worst.score && ord < worst.ord) {
            self.heap.push(HeapEntry { ord, score });
            self.heap.pop();
        }
    }

    fn into_result(self) -> SearchResult {
        let mut hits: Vec<(u32, f64)> = self.heap.into_iter().map(|e| (e.ord, e.score)).collect();
        hits.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("scores are finite")
                .then_with(|| a.0.cmp(&b.0))
        });
        SearchResult { hits }
    }
}

// ---------------------------------------------------------------------------
// Exhaustive oracle
// ---------------------------------------------------------------------------

/// Score every document holding at least one query term by full dot
/// product; return the top k under the deterministic tie rule.
pub fn search_exhaustive(idx: &InvertedIndex, q: &QueryVec, k: usize) -> SearchResult {
    let scale = idx.quantization().scale();
    let mut scores = vec![0.0f64; idx.num_docs()];
    let mut touched = vec![false; idx.num_docs()];
    // ascending term order fixes the per-document accumulation order
    for &(term, qw) in q.entries() {
        let Some(postings) = idx.term(term) else {
            continue;
        };
        for (ord, w) in postings.iter(scale) {
            scores[ord as usize] += qw * f64::from(w);
            touched[ord as usize] = true;
        }
    }
    let mut topk = TopK::new(k);
    for ord in 0..idx.num_docs() {
        if touched[ord] {
            topk.insert(ord as u32, scores[ord]);
        }
    }
    topk.into_result()
}

// ---------------------------------------------------------------------------
// Block-max maxscore
// ---------------------------------------------------------------------------

const EXHAUSTED: u32 = u32::MAX;

struct Cursor<'a> {
    /// Slot of this term in ascending-term-id order; canonical summation key.
    term_slot: usize,
    q_weight: f64,
    /// Global upper bound: q_weight * term_max.
    ub: f64,
    postings: &'a TermPostings,
    scale: f32,
    block_idx: usize,
    in_block: usize,
}

impl<'a> Cursor<'a> {
    fn new(term_slot: usize, q_weight: f64, postings: &'a TermPostings, scale: f32) -> Self {
        Self {
            term_slot,
            q_weight,
            ub: q_weight * f64::from(postings.term_max),
            postings,
            scale,
            block_idx: 0,
            in_block: 0,
        }
    }

    fn exhausted(&self) -> bool {
        self.block_idx >= self.postings.blocks.len()
    }

    fn doc(&self) -> u32 {
        if self.exhausted() {
            EXHAUSTED
        } else {
            self.postings.blocks[self.block_idx].doc_ords[self.in_block]
        }
    }

    /// Contribution of the current posting to the query score.
    fn contribution(&self) -> f64 {
        let b = &self.postings.blocks[self.block_idx];
        self.q_weight * f64::from(b.weight_at(self.in_block, self.scale))
    }

    /// Upper bound over the current block.
    fn block_bound(&self) -> f64 {
        if self.exhausted() {
            0.0
        } else {
            self.q_weight * f64::from(self.postings.blocks[self.block_idx].max_weight)
        }
    }

    fn current_block_last(&self) -> u32 {
        self.postings.blocks[self.block_idx].last_doc()
    }

    fn advance(&mut self) {
        if self.exhausted() {
            return;
        }
        self.in_block += 1;
        if self.in_block >= self.postings.blocks[self.block_idx].len() {
            self.block_idx += 1;
            self.in_block = 0;
        }
    }

    /// Position at the first posting with ordinal >= target.
    fn next_geq(&mut self, target: u32) {
        while !self.exhausted() && self.postings.blocks[self.block_idx].last_doc() < target {
            self.block_idx += 1;
            self.in_block = 0;
        }
        if self.exhausted() {
            return;
        }
        let block = &self.postings.blocks[self.block_idx];
        while block.doc_ords[self.in_block] < target {
            self.in_block += 1;
        }
    }
}

/// Block-max maxscore: document-at-a-time over essential terms, ordinal
/// ranges discarded via per-block maxima, non-essential terms folded in by
/// descending bound with early exit. Results equal [`search_exhaustive`]
/// exactly.
pub fn search_bmm(idx: &InvertedIndex, q: &QueryVec, k: usize) -> (SearchResult, SearchStats) {
    let scale = idx.quantization().scale();
    let mut stats = SearchStats::default();
    let mut cursors: Vec<Cursor> = q
        .entries()
        .iter()
        .enumerate()
        .filter_map(|(slot, &(term, qw))| {
            idx.term(term).map(|p| Cursor::new(slot, qw, p, scale))
        })
        .collect();
    if cursors.is_empty() || k == 0 {
        return (SearchResult { hits: Vec::new() }, stats);
    }

    // ascending by global upper bound; prefix sums give non-essential bounds
    cursors.sort_by(|a, b| a.ub.partial_cmp(&b.ub).expect("finite bounds"));
    let prefix_ub: Vec<f64> = cursors
        .iter()
        .scan(0.0, |acc, c| {
            *acc += c.ub;
            Some(*acc)
        })
        .collect();
    let n = cursors.len();
    let total_ub = prefix_ub[n - 1];

    let mut topk = TopK::new(k);
    // first index whose cumulative bound can still beat the threshold
    let find_partition = |threshold: f64| -> usize {
        prefix_ub
            .iter()
            .position(|&ub| ub > threshold)
            .unwrap_or(n)
    };
    let mut ne = find_partition(topk.threshold());
    let mut contribs: Vec<(usize, f64)> = Vec::with_capacity(n);

    loop {
        if ne >= n {
            break; // every term is non-essential: nothing can enter
        }
        // candidate: minimum ordinal over essential cursors
        let mut d = EXHAUSTED;
        for c in &cursors[ne..] {
            let doc = c.doc();
            if doc < d {
                d = doc;
            }
        }
        if d == EXHAUSTED {
            break;
        }

        // Range check via block maxima: bound every document in [d, d')
        // where d' ends at the first essential block boundary.
        let mut bm_bound = if ne > 0 { prefix_ub[ne - 1] } else { 0.0 };
        let mut range_end = EXHAUSTED; // min block last over essential cursors
        for c in &cursors[ne..] {
            if c.exhausted() {
                continue;
            }
            bm_bound += c.block_bound();
            let last = c.current_block_last();
            if last < range_end {
                range_end = last;
            }
        }
        if !topk.would_enter(bm_bound) {
            let skip_to = range_end.saturating_add(1);
            for c in cursors[ne..].iter_mut() {
                if !c.exhausted() && c.current_block_last() < skip_to {
                    stats.blocks_skipped += 1;
                }
                c.next_geq(skip_to);
            }
            continue;
        }

        // Score candidate d: essential contributions first.
        contribs.clear();
        let mut partial = 0.0f64;
        for c in cursors[ne..].iter_mut() {
            if c.doc() == d {
                let contribution = c.contribution();
                partial += contribution;
                contribs.push((c.term_slot, contribution));
                c.advance();
            }
        }

        // Non-essential terms by descending bound with early exit.
        let mut dead = false;
        for idx_ne in (0..ne).rev() {
            let below = if idx_ne > 0 { prefix_ub[idx_ne - 1] } else { 0.0 };
            if !topk.would_enter(partial + prefix_ub[idx_ne]) {
                dead = true;
                break;
            }
            let c = &mut cursors[idx_ne];
            c.next_geq(d);
            if c.doc() == d {
                // refine with the block bound before paying for the lookup
                if !topk.would_enter(partial + below + c.block_bound()) {
                    dead = true;
                    break;
                }
                let contribution = c.contribution();
                partial += contribution;
                contribs.push((c.term_slot, contribution));
            } else if !topk.would_enter(partial + below) {
                dead = true;
                break;
            }
        }

        if dead {
            stats.docs_pruned += 1;
            continue;
        }

        // canonical score: sum contributions in ascending term order
        contribs.sort_unstable_by_key(|&(slot, _)| slot);
        let score: f64 = contribs.iter().map(|&(_, c)| c).sum();
        stats.docs_scored += 1;
        let before = topk.threshold();
        topk.insert(d, score);
        let after = topk.threshold();
        if after > before {
            ne = find_partition(after);
        }
    }

    debug_assert!(total_ub.is_finite());
    (topk.into_result(), stats)
}

// ---------------------------------------------------------------------------
// BM25 baseline
// ---------------------------------------------------------------------------

/// Lower-bounded BM25 parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    pub delta: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self {
            k1: 1.2,
            b: 0.75,
            delta: 0.25,
        }
    }
}

/// Corpus statistics for BM25 scoring. The unknown token id never enters
/// document frequencies: distinct rare words share it and must not match.
#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Stats {
    pub params: Bm25Params,
    doc_lengths: Vec<u32>,
    avgdl: f64,
    df: BTreeMap<u32, u32>,
    num_docs: u32,
}

impl Bm25Stats {
    pub fn num_docs(&self) -> u32 {
        self.num_docs
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_length(&self, ord: u32) -> u32 {
        self.doc_lengths[ord as usize]
    }

    pub fn df(&self, term: u32) -> u32 {
        self.df.get(&term).copied().unwrap_or(0)
    }

    /// idf(t) = ln((N - df + 0.5)/(df + 0.5) + 1), nonnegative by
    /// construction.
    pub fn idf(&self, term: u32) -> f64 {
        let n = f64::from(self.num_docs);
        let df = f64::from(self.df(term));
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }
}

/// Per-term saturation component: tf*(k1+1) / (tf + k1*(1-b+b*dl/avgdl)).
fn bm25_tf_component(params: &Bm25Params, tf: f64, dl: f64, avgdl: f64) -> f64 {
    if tf == 0.0 {
        return 0.0;
    }
    tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * dl / avgdl))
}

/// Score one document against the query's unique non-unknown terms:
/// sum of idf(t) * (tf-component + delta).
pub fn bm25_score(stats: &Bm25Stats, query: &TokenSeq, doc: &TokenSeq) -> f64 {
    let mut tf: BTreeMap<u32, u32> = BTreeMap::new();
    for &t in doc.ids() {
        *tf.entry(t).or_insert(0) += 1;
    }
    let dl = doc.len() as f64;
    let mut qterms: Vec<u32> = query.ids().iter().copied().filter(|&t| t != UNK_ID).collect();
    qterms.sort_unstable();
    qterms.dedup();
    let mut score = 0.0;
    for t in qterms {
        let f = f64::from(tf.get(&t).copied().unwrap_or(0));
        let comp = bm25_tf_component(&stats.params, f, dl, stats.avgdl);
        score += stats.idf(t) * (comp + stats.params.delta);
    }
    score
}

/// BM25 index over tokenized documents.
#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    stats: Bm25Stats,
    doc_ids: Vec<String>,
    postings: BTreeMap<u32, Vec<(u32, u32)>>,
}

impl Bm25Index {
    pub fn stats(&self) -> &Bm25Stats {
        &self.stats
    }

    pub fn doc_id(&self, ord: u32) -> &str {
        &self.doc_ids[ord as usize]
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn build<I>(docs: I, params: Bm25Params) -> Result<Self>
    where
        I: IntoIterator<Item = (String, TokenSeq)>,
    {
        let mut doc_ids = Vec::new();
        let mut doc_lengths = Vec::new();
        let mut postings: BTreeMap<u32, Vec<(u32, u32)>> = BTreeMap::new();
        let mut seen = std::collections::HashSet::new();
        for (ord, (id, seq)) in docs.into_iter().enumerate() {
            if !seen.insert(id.clone()) {
                return Err(Error::data(format!("duplicate doc_id '{id}'")));
            }
            doc_lengths.push(seq.len() as u32);
            let mut tf: BTreeMap<u32, u32> = BTreeMap::new();
            for &t in seq.ids() {
                if t != UNK_ID {
                    *tf.entry(t).or_insert(0) += 1;
                }
            }
            for (t, f) in tf {
                postings.entry(t).or_default().push((ord as u32, f));
            }
            doc_ids.push(id);
        }
        let num_docs = doc_ids.len() as u32;
        let total_len: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avgdl = if num_docs > 0 {
            total_len as f64 / f64::from(num_docs)
        } else {
            0.0
        };
        let df: BTreeMap<u32, u32> = postings.iter().map(|(&t, p)| (t, p.len() as u32)).collect();
        Ok(Self {
            stats: Bm25Stats {
                params,
                doc_lengths,
                avgdl,
                df,
                num_docs,
            },
            doc_ids,
            postings,
        })
    }

    /// Rank documents sharing at least one indexed query term. Scores match
    /// [`bm25_score`]: matching contributions plus the query's constant
    /// delta mass, which shifts every candidate equally.
    pub fn search(&self, query: &TokenSeq, k: usize) -> SearchResult {
        let mut qterms: Vec<u32> = query.ids().iter().copied().filter(|&t| t != UNK_ID).collect();
        qterms.sort_unstable();
        qterms.dedup();
        let delta_mass: f64 = qterms
            .iter()
            .map(|&t| self.stats.idf(t) * self.stats.params.delta)
            .sum();
        let mut scores = vec![0.0f64; self.doc_ids.len()];
        let mut touched = vec![false; self.doc_ids.len()];
        for &t in &qterms {
            let Some(postings) = self.postings.get(&t) else {
                continue;
            };
            let idf = self.stats.idf(t);
            for &(ord, tf) in postings {
                let dl = f64::from(self.stats.doc_lengths[ord as usize]);
                let comp = bm25_tf_component(&self.stats.params, f64::from(tf), dl, self.stats.avgdl);
                scores[ord as usize] += idf * comp;
                touched[ord as usize] = true;
            }
        }
        let mut topk = TopK::new(k);
        for ord in 0..self.doc_ids.len() {
            if touched[ord] {
                topk.insert(ord as u32, scores[ord] + delta_mass);
            }
        }
        topk.into_result()
    }

    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(BM25_MAGIC)?;
        bytesio::write_u32(w, BM25_VERSION)?;
        let p = &self.stats.params;
        for v in [p.k1, p.b, p.delta] {
            bytesio::write_f64(w, v)?;
        }
        bytesio::write_u64(w, self.doc_ids.len() as u64)?;
        for (id, &len) in self.doc_ids.iter().zip(&self.stats.doc_lengths) {
            bytesio::write_string(w, id)?;
            bytesio::write_u32(w, len)?;
        }
        bytesio::write_u64(w, self.postings.len() as u64)?;
        for (&t, postings) in &self.postings {
            bytesio::write_u32(w, t)?;
            bytesio::write_u32(w, postings.len() as u32)?;
            let mut prev = None;
            for &(ord, tf) in postings {
                let delta = match prev {
                    None => u64::from(ord),
                    Some(pv) => u64::from(ord - pv),
                };
                bytesio::write_vint(w, delta)?;
                bytesio::write_vint(w, u64::from(tf))?;
                prev = Some(ord);
            }
        }
        Ok(())
    }

    pub fn load<R: BufRead>(reader: R) -> Result<Self> {
        let mut r = TrackedReader::new(reader);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic, "magic")?;
        if &magic != BM25_MAGIC {
            return Err(Error::format(0, "bad magic, not a bm25 index file"));
        }
        let version = r.read_u32("version")?;
        if version != BM25_VERSION {
            return Err(Error::format(4, format!("unsupported bm25 index version {version}")));
        }
        let k1 = r.read_f64("k1")?;
        let b = r.read_f64("b")?;
        let delta = r.read_f64("delta")?;
        let num_docs = r.read_u64("doc count")? as usize;
        let mut doc_ids = Vec::with_capacity(num_docs.min(1 << 20));
        let mut doc_lengths = Vec::with_capacity(num_docs.min(1 << 20));
        for _ in 0..num_docs {
            doc_ids.push(r.read_string("doc id")?);
            doc_lengths.push(r.read_u32("doc length")?);
        }
        let num_terms = r.read_u64("term count")? as usize;
        let mut postings: BTreeMap<u32, Vec<(u32, u32)>> = BTreeMap::new();
        let mut prev_term = None;
        for _ in 0..num_terms {
            let t = r.read_u32("term id")?;
            if prev_term.is_some_and(|p| p >= t) {
                return Err(r.err("term ids not strictly increasing"));
            }
            prev_term = Some(t);
            let len = r.read_u32("postings length")? as usize;
            let mut list = Vec::with_capacity(len);
            let mut prev: Option<u32> = None;
            for _ in 0..len {
                let delta = r.read_vint("doc ordinal delta")?;
                let ord = match prev {
                    None => u32::try_from(delta).map_err(|_| r.err("doc ordinal overflow"))?,
                    Some(p) => {
                        if delta == 0 {
                            return Err(r.err("zero gap in postings"));
                        }
                        p.checked_add(u32::try_from(delta).map_err(|_| r.err("gap overflow"))?)
                            .ok_or_else(|| r.err("doc ordinal overflow"))?
                    }
                };
                if ord as usize >= num_docs {
                    return Err(r.err(format!("doc ordinal {ord} out of range")));
                }
                let tf = u32::try_from(r.read_vint("term frequency")?)
                    .map_err(|_| r.err("term frequency overflow"))?;
                if tf == 0 {
                    return Err(r.err("zero term frequency"));
                }
                prev = Some(ord);
                list.push((ord, tf));
            }
            postings.insert(t, list);
        }
        let offset = r.offset();
        if !r.at_eof()? {
            return Err(Error::format(offset, "trailing bytes after bm25 index data"));
        }
        let total_len: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avgdl = if num_docs > 0 {
            total_len as f64 / num_docs as f64
        } else {
            0.0
        };
        let df: BTreeMap<u32, u32> = postings.iter().map(|(&t, p)| (t, p.len() as u32)).collect();
        Ok(Self {
            stats: Bm25Stats {
                params: Bm25Params { k1, b, delta },
                doc_lengths,
                avgdl,
                df,
                num_docs: num_docs as u32,
            },
            doc_ids,
            postings,
        })
    }
}

const BM25_MAGIC: &[u8; 4] = b"PRB2";
const BM25_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Run files
// ---------------------------------------------------------------------------

/// Ranked results per query: the contract between search and eval.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile {
    /// query id -> (doc id, rank, score), ranks starting at 1.
    pub entries: BTreeMap<String, Vec<(String, u32, f64)>>,
}

impl RunFile {
    pub fn push_query(&mut self, query_id: &str, ranked: &[(String, f64)]) {
        let rows = ranked
            .iter()
            .enumerate()
            .map(|(i, (doc, score))| (doc.clone(), i as u32 + 1, *score))
            .collect();
        self.entries.insert(query_id.to_string(), rows);
    }

    /// TREC-style TSV: `query_id \t doc_id \t rank \t score`.
    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        for (qid, rows) in &self.entries {
            for (doc, rank, score) in rows {
                writeln!(w, "{qid}\t{doc}\t{rank}\t{score}")?;
            }
        }
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self> {
        let mut entries: BTreeMap<String, Vec<(String, u32, f64)>> = BTreeMap::new();
        for (i, line) in r.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(Error::parse(line_no, format!("expected 4 columns, found {}", cols.len())));
            }
            let rank: u32 = cols[2]
                .parse()
                .map_err(|_| Error::parse(line_no, format!("bad rank '{}'", cols[2])))?;
            if rank == 0 {
                return Err(Error::parse(line_no, "ranks start at 1"));
            }
            let score: f64 = cols[3]
                .parse()
                .map_err(|_| Error::parse(line_no, format!("bad score '{}'", cols[3])))?;
            entries
                .entry(cols[0].to_string())
                .or_default()
                .push((cols[1].to_string(), rank, score));
        }
        // the rank field governs ordering, not file position
        for rows in entries.values_mut() {
            rows.sort_by_key(|&(_, rank, _)| rank);
        }
        Ok(Self { entries })
    }

    /// Ranked doc ids for one query.
    pub fn ranking(&self, query_id: &str) -> Option<Vec<&str>> {
        self.entries
            .get(query_id)
            .map(|rows| rows.iter().map(|(d, _, _)| d.as_str()).collect())
    }
}
