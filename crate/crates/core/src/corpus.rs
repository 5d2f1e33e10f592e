//! Text ingestion: vocabulary construction, whitespace tokenization, and
//! training-pair loading.
//!
//! Tokenization is whitespace-based over a frequency-built vocabulary with
//! lowercase normalization. Id 0 is reserved for unknown terms; unknowns are
//! excluded from the literal indicator downstream.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Reserved id for out-of-vocabulary tokens.
pub const UNK_ID: u32 = 0;
/// Term string stored at id 0 in the vocab file.
pub const UNK_TERM: &str = "<unk>";
/// Default maximum token sequence length.
pub const DEFAULT_MAX_LEN: usize = 64;

/// Fixed vocabulary with dense ids 0..size-1. Id 0 is the unknown term.
#[derive(Debug, Clone)]
pub struct Vocab {
    terms: Vec<String>,
    id_of: HashMap<String, u32>,
}

impl Vocab {
    /// Build from term strings where position = id. The first entry must be
    /// the reserved unknown term.
    pub fn from_terms(terms: Vec<String>) -> Result<Self> {
        if terms.len() < 2 {
            return Err(Error::data("vocabulary must have size >= 2"));
        }
        if terms[0] != UNK_TERM {
            return Err(Error::data(format!("vocabulary must start with the reserved term '{UNK_TERM}'")));
        }
        let mut id_of = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if id_of.insert(t.clone(), i as u32).is_some() {
                return Err(Error::data(format!("duplicate vocabulary term '{t}'")));
            }
        }
        Ok(Self { terms, id_of })
    }

    pub fn size(&self) -> usize {
        self.terms.len()
    }

    pub fn id_of(&self, term: &str) -> Option<u32> {
        self.id_of.get(term).copied()
    }

    pub fn term(&self, id: u32) -> Option<&str> {
        self.terms.get(id as usize).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// One term per line; line number = id.
    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        for t in &self.terms {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self> {
        let mut terms = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                return Err(Error::parse(i + 1, "empty vocabulary line"));
            }
            terms.push(line);
        }
        Self::from_terms(terms)
    }
}

/// Token id sequence. Non-empty, truncated to the configured maximum length.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSeq {
    ids: Vec<u32>,
}

impl TokenSeq {
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false // constructors reject empty sequences
    }

    /// For tests and synthetic data: wrap raw ids, which must be non-empty.
    pub fn from_ids(ids: Vec<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::data("empty token sequence"));
        }
        Ok(Self { ids })
    }
}

fn normalized_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(|t| t.to_lowercase())
}

/// Build a vocabulary of the most frequent tokens, ties broken
/// lexicographically. Id 0 is reserved; the reserved literal itself is
/// never admitted as a regular term.
pub fn build_vocab<I, S>(texts: I, max_size: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if max_size < 2 {
        return Err(Error::data("max_size must be >= 2"));
    }
    let mut freq: HashMap<String, u64> = HashMap::new();
    let mut any = false;
    for text in texts {
        any = true;
        for tok in normalized_tokens(text.as_ref()) {
            if tok == UNK_TERM {
                continue;
            }
            *freq.entry(tok).or_insert(0) += 1;
        }
    }
    if !any {
        return Err(Error::data("empty corpus"));
    }
    let mut by_freq: Vec<(String, u64)> = freq.into_iter().collect();
    by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    by_freq.truncate(max_size - 1);

    let mut terms = Vec::with_capacity(by_freq.len() + 1);
    terms.push(UNK_TERM.to_string());
    terms.extend(by_freq.into_iter().map(|(t, _)| t));
    Vocab::from_terms(terms)
}

/// Whitespace-split, lowercase, map to ids (unknown -> 0), truncate to
/// `max_len`. All-whitespace input is an error.
pub fn tokenize(vocab: &Vocab, text: &str, max_len: usize) -> Result<TokenSeq> {
    let ids: Vec<u32> = normalized_tokens(text)
        .take(max_len)
        .map(|t| vocab.id_of(&t).unwrap_or(UNK_ID))
        .collect();
    if ids.is_empty() {
        return Err(Error::data("empty text"));
    }
    Ok(TokenSeq { ids })
}

/// One training pair: a query and its positive item, both tokenized.
#[derive(Debug, Clone)]
pub struct PairRecord {
    pub query_id: String,
    pub item_id: String,
    pub query: TokenSeq,
    pub positive_item: TokenSeq,
}

/// Ordered collection of training pairs.
#[derive(Debug, Clone, Default)]
pub struct PairSet {
    pub records: Vec<PairRecord>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Raw, untokenized pair row from the pairs TSV.
#[derive(Debug, Clone)]
pub struct RawPair {
    pub query_id: String,
    pub query_text: String,
    pub item_id: String,
    pub item_text: String,
}

/// Parse the pairs TSV: `query_id \t query_text \t item_id \t item_text`,
/// preserving file order. Malformed rows are reported with their line number.
pub fn read_pairs_raw<R: BufRead>(r: R) -> Result<Vec<RawPair>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::parse(line_no, format!("expected 4 tab-separated columns, found {}", cols.len())));
        }
        if cols[0].trim().is_empty() || cols[2].trim().is_empty() {
            return Err(Error::parse(line_no, "empty id column"));
        }
        out.push(RawPair {
            query_id: cols[0].to_string(),
            query_text: cols[1].to_string(),
            item_id: cols[2].to_string(),
            item_text: cols[3].to_string(),
        });
    }
    if out.is_empty() {
        return Err(Error::data("empty corpus"));
    }
    Ok(out)
}

/// Load and tokenize training pairs. Rows with empty query or item text and
/// duplicate (query_id, item_id) combinations are rejected with their line
/// number.
pub fn load_pairs<R: BufRead>(r: R, vocab: &Vocab, max_len: usize) -> Result<PairSet> {
    let raw = read_pairs_raw(r)?;
    let mut seen = std::collections::HashSet::new();
    let mut records = Vec::with_capacity(raw.len());
    for (i, rp) in raw.into_iter().enumerate() {
        let line_no = i + 1;
        if !seen.insert((rp.query_id.clone(), rp.item_id.clone())) {
            return Err(Error::parse(line_no, format!("duplicate pair ({}, {})", rp.query_id, rp.item_id)));
        }
        let query = tokenize(vocab, &rp.query_text, max_len)
            .map_err(|e| Error::parse(line_no, format!("query text: {e}")))?;
        let positive_item = tokenize(vocab, &rp.item_text, max_len)
            .map_err(|e| Error::parse(line_no, format!("item text: {e}")))?;
        records.push(PairRecord {
            query_id: rp.query_id,
            item_id: rp.item_id,
            query,
            positive_item,
        });
    }
    Ok(PairSet { records })
}

/// One corpus document: external id plus raw text.
#[derive(Debug, Clone, Deserialize)]
pub struct CorpusDoc {
    pub id: String,
    pub text: String,
}

/// Read the corpus JSONL: one `{"id": ..., "text": ...}` object per line.
pub fn read_corpus_jsonl<R: BufRead>(r: R) -> Result<Vec<CorpusDoc>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: CorpusDoc = serde_json::from_str(&line)
            .map_err(|e| Error::parse(i + 1, format!("invalid json: {e}")))?;
        out.push(doc);
    }
    if out.is_empty() {
        return Err(Error::data("empty corpus"));
    }
    Ok(out)
}

pub fn read_corpus_file(path: &Path) -> Result<Vec<CorpusDoc>> {
    read_corpus_jsonl(BufReader::new(std::fs::File::open(path)?))
}
