//! Inverted index with per-block maximum weights.
//!
//! Postings are term-partitioned, sorted by document ordinal, and split into
//! fixed-size blocks. Each block carries the maximum stored weight so the
//! searcher can discard whole blocks against a score threshold. Weights are
//! stored either as raw f32 or quantized to 16-bit codes under one global
//! scale; block maxima are computed after quantization so pruning bounds are
//! valid for the stored weights.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use crate::bytesio::{self, TrackedReader};
use crate::error::{Error, Result};
use crate::sparse::SparseVec;

pub const DEFAULT_BLOCK_SIZE: usize = 64;

/// Weight storage policy requested at build time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantizationMode {
    None,
    Fixed16,
}

impl std::str::FromStr for QuantizationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "fixed16" => Ok(Self::Fixed16),
            other => Err(Error::Config(format!("unknown quantization '{other}'"))),
        }
    }
}

/// Weight storage descriptor carried by a built index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Quantization {
    None,
    /// 16-bit codes; weight = code * scale. The scale is global:
    /// max weight across the index divided by 65535.
    Fixed16 { scale: f32 },
}

impl Quantization {
    pub fn scale(&self) -> f32 {
        match self {
            Quantization::None => 0.0,
            Quantization::Fixed16 { scale } => *scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockWeights {
    F32(Vec<f32>),
    U16(Vec<u16>),
}

impl BlockWeights {
    fn len(&self) -> usize {
        match self {
            BlockWeights::F32(v) => v.len(),
            BlockWeights::U16(v) => v.len(),
        }
    }
}

/// One block of a postings list: parallel ordinals and weights plus the
/// block's maximum stored weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub doc_ords: Vec<u32>,
    pub weights: BlockWeights,
    pub max_weight: f32,
}

impl Block {
    pub fn len(&self) -> usize {
        self.doc_ords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ords.is_empty()
    }

    pub fn first_doc(&self) -> u32 {
        self.doc_ords[0]
    }

    pub fn last_doc(&self) -> u32 {
        *self.doc_ords.last().expect("blocks are nonempty")
    }

    /// Stored weight at position `i`, dequantized when applicable.
    pub fn weight_at(&self, i: usize, scale: f32) -> f32 {
        match &self.weights {
            BlockWeights::F32(v) => v[i],
            BlockWeights::U16(v) => f32::from(v[i]) * scale,
        }
    }
}

/// Postings for one term.
#[derive(Debug, Clone, PartialEq)]
pub struct TermPostings {
    pub blocks: Vec<Block>,
    /// Maximum stored weight across all blocks.
    pub term_max: f32,
}

impl TermPostings {
    pub fn len(&self) -> usize {
        self.blocks.iter().map(Block::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn iter<'a>(&'a self, scale: f32) -> impl Iterator<Item = (u32, f32)> + 'a {
        self.blocks.iter().flat_map(move |b| {
            (0..b.len()).map(move |i| (b.doc_ords[i], b.weight_at(i, scale)))
        })
    }
}

/// Term-partitioned inverted index with block-max metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    doc_ids: Vec<String>,
    terms: BTreeMap<u32, TermPostings>,
    quantization: Quantization,
    block_size: usize,
}

impl InvertedIndex {
    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_id(&self, ord: u32) -> &str {
        &self.doc_ids[ord as usize]
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn quantization(&self) -> Quantization {
        self.quantization
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn term(&self, term_id: u32) -> Option<&TermPostings> {
        self.terms.get(&term_id)
    }

    pub fn terms(&self) -> impl Iterator<Item = (u32, &TermPostings)> {
        self.terms.iter().map(|(&id, p)| (id, p))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn postings_len_sum(&self) -> usize {
        self.terms.values().map(TermPostings::len).sum()
    }

    /// Build from (doc_id, vector) pairs; ordinals follow ingestion order.
    pub fn build<I>(vectors: I, block_size: usize, mode: QuantizationMode) -> Result<Self>
    where
        I: IntoIterator<Item = (String, SparseVec)>,
    {
        if block_size < 1 {
            return Err(Error::data("block_size must be >= 1"));
        }
        let docs: Vec<(String, SparseVec)> = vectors.into_iter().collect();
        let mut seen = HashSet::new();
        for (id, vec) in &docs {
            if !seen.insert(id.clone()) {
                return Err(Error::data(format!("duplicate doc_id '{id}'")));
            }
            for (term, w) in vec.iter() {
                if w <= 0.0 {
                    return Err(Error::data(format!("doc '{id}' term {term}: zero or negative weight must be dropped upstream")));
                }
            }
        }

        let global_max = docs
            .iter()
            .flat_map(|(_, v)| v.iter().map(|(_, w)| w))
            .fold(0.0f64, f64::max);
        let quantization = match mode {
            QuantizationMode::None => Quantization::None,
            QuantizationMode::Fixed16 => Quantization::Fixed16 {
                scale: (global_max as f32) / 65535.0,
            },
        };

        let mut raw: BTreeMap<u32, Vec<(u32, f64)>> = BTreeMap::new();
        for (ord, (_, vec)) in docs.iter().enumerate() {
            for (term, w) in vec.iter() {
                raw.entry(term).or_default().push((ord as u32, w));
            }
        }

        let mut terms = BTreeMap::new();
        for (term, postings) in raw {
            let mut blocks = Vec::with_capacity(postings.len().div_ceil(block_size));
            let mut term_max = 0.0f32;
            for chunk in postings.chunks(block_size) {
                let doc_ords: Vec<u32> = chunk.iter().map(|&(o, _)| o).collect();
                let (weights, max_weight) = match quantization {
                    Quantization::None => {
                        let ws: Vec<f32> = chunk.iter().map(|&(_, w)| w as f32).collect();
                        let max = ws.iter().copied().fold(0.0f32, f32::max);
                        (BlockWeights::F32(ws), max)
                    }
                    Quantization::Fixed16 { scale } => {
                        let codes: Vec<u16> = chunk
                            .iter()
                            .map(|&(_, w)| quantize(w, scale))
                            .collect();
                        let max = codes
                            .iter()
                            .map(|&c| f32::from(c) * scale)
                            .fold(0.0f32, f32::max);
                        (BlockWeights::U16(codes), max)
                    }
                };
                if max_weight > term_max {
                    term_max = max_weight;
                }
                blocks.push(Block { doc_ords, weights, max_weight });
            }
            terms.insert(term, TermPostings { blocks, term_max });
        }

        Ok(Self {
            doc_ids: docs.into_iter().map(|(id, _)| id).collect(),
            terms,
            quantization,
            block_size,
        })
    }

    /// Check the structural invariants; used by `load` and tests.
    pub fn validate(&self) -> Result<()> {
        let n = self.doc_ids.len() as u32;
        let scale = self.quantization.scale();
        for (&term, postings) in &self.terms {
            let mut prev: Option<u32> = None;
            let mut term_max = 0.0f32;
            for block in &postings.blocks {
                if block.is_empty() || block.len() != block.weights.len() {
                    return Err(Error::data(format!("term {term}: malformed block")));
                }
                if block.len() > self.block_size {
                    return Err(Error::data(format!("term {term}: block exceeds block_size")));
                }
                let mut block_max = 0.0f32;
                for i in 0..block.len() {
                    let ord = block.doc_ords[i];
                    if ord >= n {
                        return Err(Error::data(format!("term {term}: doc ordinal {ord} out of range")));
                    }
                    if prev.is_some_and(|p| p >= ord) {
                        return Err(Error::data(format!("term {term}: ordinals not strictly increasing at {ord}")));
                    }
                    prev = Some(ord);
                    let w = block.weight_at(i, scale);
                    if !w.is_finite() || w < 0.0 {
                        return Err(Error::data(format!("term {term}: invalid stored weight {w}")));
                    }
                    if w > block_max {
                        block_max = w;
                    }
                }
                if block_max != block.max_weight {
                    return Err(Error::data(format!("term {term}: block max {} != true max {block_max}", block.max_weight)));
                }
                if block_max > term_max {
                    term_max = block_max;
                }
            }
            if term_max != postings.term_max {
                return Err(Error::data(format!("term {term}: term max {} != true max {term_max}", postings.term_max)));
            }
        }
        Ok(())
    }

    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(INDEX_MAGIC)?;
        bytesio::write_u32(w, INDEX_VERSION)?;
        bytesio::write_u64(w, self.doc_ids.len() as u64)?;
        for id in &self.doc_ids {
            bytesio::write_string(w, id)?;
        }
        match self.quantization {
            Quantization::None => bytesio::write_u8(w, 0)?,
            Quantization::Fixed16 { scale } => {
                bytesio::write_u8(w, 1)?;
                bytesio::write_f32(w, scale)?;
            }
        }
        bytesio::write_u32(w, self.block_size as u32)?;
        bytesio::write_u64(w, self.terms.len() as u64)?;
        for (&term, postings) in &self.terms {
            bytesio::write_u32(w, term)?;
            bytesio::write_u32(w, postings.blocks.len() as u32)?;
            for block in &postings.blocks {
                bytesio::write_vint(w, block.len() as u64)?;
                bytesio::write_f32(w, block.max_weight)?;
                // ordinals: first absolute, then gaps
                let mut prev = None;
                for &ord in &block.doc_ords {
                    let delta = match prev {
                        None => u64::from(ord),
                        Some(p) => u64::from(ord - p),
                    };
                    bytesio::write_vint(w, delta)?;
                    prev = Some(ord);
                }
                match &block.weights {
                    BlockWeights::F32(ws) => {
                        for &x in ws {
                            bytesio::write_f32(w, x)?;
                        }
                    }
                    BlockWeights::U16(cs) => {
                        for &c in cs {
                            w.write_all(&c.to_le_bytes())?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn load<R: BufRead>(reader: R) -> Result<Self> {
        let mut r = TrackedReader::new(reader);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic, "magic")?;
        if &magic != INDEX_MAGIC {
            return Err(Error::format(0, "bad magic, not an index file"));
        }
        let version = r.read_u32("version")?;
        if version != INDEX_VERSION {
            return Err(Error::format(4, format!("unsupported index version {version}")));
        }
        let num_docs = r.read_u64("num docs")? as usize;
        let mut doc_ids = Vec::with_capacity(num_docs.min(1 << 20));
        for _ in 0..num_docs {
            doc_ids.push(r.read_string("doc id")?);
        }
        let quantization = match r.read_u8("quantization tag")? {
            0 => Quantization::None,
            1 => {
                let scale = r.read_f32("quantization scale")?;
                if !scale.is_finite() || scale < 0.0 {
                    return Err(r.err(format!("invalid quantization scale {scale}")));
                }
                Quantization::Fixed16 { scale }
            }
            other => return Err(r.err(format!("unknown quantization tag {other}"))),
        };
        let block_size = r.read_u32("block size")? as usize;
        if block_size < 1 {
            return Err(r.err("block size must be >= 1"));
        }
        let num_terms = r.read_u64("term count")? as usize;
        let mut terms = BTreeMap::new();
        let mut prev_term: Option<u32> = None;
        for _ in 0..num_terms {
            let term = r.read_u32("term id")?;
            if prev_term.is_some_and(|p| p >= term) {
                return Err(r.err(format!("term ids not strictly increasing at {term}")));
            }
            prev_term = Some(term);
            let num_blocks = r.read_u32("block count")? as usize;
            if num_blocks == 0 {
                return Err(r.err(format!("term {term} has no blocks")));
            }
            let mut blocks = Vec::with_capacity(num_blocks);
            let mut term_max = 0.0f32;
            for _ in 0..num_blocks {
                let len = r.read_vint("block length")? as usize;
                if len == 0 || len > block_size {
                    return Err(r.err(format!("term {term}: bad block length {len}")));
                }
                let max_weight = r.read_f32("block max")?;
                let mut doc_ords = Vec::with_capacity(len);
                let mut prev: Option<u32> = None;
                for _ in 0..len {
                    let delta = r.read_vint("doc ordinal delta")?;
                    let ord = match prev {
                        None => u32::try_from(delta)
                            .map_err(|_| r.err("doc ordinal overflow"))?,
                        Some(p) => {
                            if delta == 0 {
                                return Err(r.err(format!("term {term}: zero gap")));
                            }
                            p.checked_add(u32::try_from(delta).map_err(|_| r.err("gap overflow"))?)
                                .ok_or_else(|| r.err("doc ordinal overflow"))?
                        }
                    };
                    prev = Some(ord);
                    doc_ords.push(ord);
                }
                let weights = match quantization {
                    Quantization::None => {
                        let mut ws = Vec::with_capacity(len);
                        for _ in 0..len {
                            ws.push(r.read_f32("posting weight")?);
                        }
                        BlockWeights::F32(ws)
                    }
                    Quantization::Fixed16 { .. } => {
                        let mut cs = Vec::with_capacity(len);
                        for _ in 0..len {
                            let mut b = [0u8; 2];
                            r.read_exact(&mut b, "posting code")?;
                            cs.push(u16::from_le_bytes(b));
                        }
                        BlockWeights::U16(cs)
                    }
                };
                if max_weight > term_max {
                    term_max = max_weight;
                }
                blocks.push(Block { doc_ords, weights, max_weight });
            }
            terms.insert(term, TermPostings { blocks, term_max });
        }
        let offset = r.offset();
        if !r.at_eof()? {
            return Err(Error::format(offset, "trailing bytes after index data"));
        }
        let idx = Self {
            doc_ids,
            terms,
            quantization,
            block_size,
        };
        idx.validate()
            .map_err(|e| Error::format(offset, format!("invariant check failed: {e}")))?;
        Ok(idx)
    }
}

const INDEX_MAGIC: &[u8; 4] = b"PRIX";
const INDEX_VERSION: u32 = 1;

/// Monotone rounding quantizer onto 0..=65535.
fn quantize(w: f64, scale: f32) -> u16 {
    if scale <= 0.0 {
        return 0;
    }
    let code = (w / f64::from(scale)).round();
    code.clamp(0.0, 65535.0) as u16
}
