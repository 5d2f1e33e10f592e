//! Sparse vocabulary-dimensional vectors.
//!
//! The universal representation for queries, items, and postings sources:
//! entries sorted by term id with strictly positive weights. Exact zeros are
//! dropped when densifying; there is no epsilon thresholding, so activation
//! counts stay meaningful for cost accounting.

use std::io::{BufRead, Write};

use crate::bytesio::{self, TrackedReader};
use crate::error::{Error, Result};

/// Sorted map from vocabulary term id to strictly positive weight.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVec {
    entries: Vec<(u32, f64)>,
}

impl SparseVec {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Build from (term_id, weight) pairs. Entries must be sorted by id,
    /// unique, and strictly positive.
    pub fn from_entries(entries: Vec<(u32, f64)>) -> Result<Self> {
        for (i, &(id, w)) in entries.iter().enumerate() {
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::data(format!("weight for term {id} must be positive and finite, got {w}")));
            }
            if i > 0 && entries[i - 1].0 >= id {
                return Err(Error::data(format!("entries not sorted/unique at term {id}")));
            }
        }
        Ok(Self { entries })
    }

    /// Densify-in-reverse: keep nonzero coordinates of a dense vector.
    /// Coordinates must be nonnegative; exact zeros are dropped.
    pub fn from_dense(dense: &[f64]) -> Self {
        let entries = dense
            .iter()
            .enumerate()
            .filter(|&(_, &w)| w != 0.0)
            .map(|(i, &w)| {
                debug_assert!(w > 0.0, "negative weight {w} at dim {i}");
                (i as u32, w)
            })
            .collect();
        Self { entries }
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for &(id, w) in &self.entries {
            out[id as usize] = w;
        }
        out
    }

    /// Number of nonzero entries.
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn get(&self, id: u32) -> Option<f64> {
        self.entries
            .binary_search_by_key(&id, |e| e.0)
            .ok()
            .map(|i| self.entries[i].1)
    }

    /// Merge-join dot product, O(|a| + |b|). Accumulates in ascending
    /// term-id order, so the result is deterministic for given inputs.
    pub fn dot(&self, other: &SparseVec) -> f64 {
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j) = (0, 0);
        let mut acc = 0.0;
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w).sum()
    }

    pub fn scale(&self, factor: f64) -> Result<Self> {
        if !factor.is_finite() || factor <= 0.0 {
            return Err(Error::data(format!("scale factor must be positive, got {factor}")));
        }
        Ok(Self {
            entries: self.entries.iter().map(|&(id, w)| (id, w * factor)).collect(),
        })
    }

    /// Keep the k largest-weight entries; ties broken by keeping the lower
    /// term id. Returns the input unchanged when nnz <= k.
    pub fn top_k(&self, k: usize) -> Self {
        if self.entries.len() <= k {
            return self.clone();
        }
        let mut by_weight: Vec<(u32, f64)> = self.entries.clone();
        by_weight.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("weights are finite")
                .then(a.0.cmp(&b.0))
        });
        by_weight.truncate(k);
        by_weight.sort_by_key(|e| e.0);
        Self { entries: by_weight }
    }

    /// Number of shared nonzero dimensions.
    pub fn support_overlap(&self, other: &SparseVec) -> usize {
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j) = (0, 0);
        let mut n = 0;
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

/// One record of the sparse vector file: an external id plus its vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VecRecord {
    pub id: String,
    pub vec: SparseVec,
}

/// Write records in the binary vector format: per record a length-prefixed
/// id string, nnz as u32, then (term_id: u32, weight: f32) pairs sorted by
/// term id. Weights are stored at f32 precision.
pub fn write_vec_records<W: Write>(w: &mut W, records: &[VecRecord]) -> Result<()> {
    for rec in records {
        bytesio::write_string(w, &rec.id)?;
        bytesio::write_u32(w, rec.vec.nnz() as u32)?;
        for (id, weight) in rec.vec.iter() {
            bytesio::write_u32(w, id)?;
            bytesio::write_f32(w, weight as f32)?;
        }
    }
    Ok(())
}

/// Read records until EOF. Rejects unsorted ids and non-positive weights
/// with the byte offset of the offending record.
pub fn read_vec_records<R: BufRead>(reader: R) -> Result<Vec<VecRecord>> {
    let mut r = TrackedReader::new(reader);
    let mut out = Vec::new();
    while !r.at_eof()? {
        let start = r.offset();
        let id = r.read_string("record id")?;
        let nnz = r.read_u32("record nnz")? as usize;
        let mut entries = Vec::with_capacity(nnz);
        let mut prev: Option<u32> = None;
        for _ in 0..nnz {
            let term = r.read_u32("term id")?;
            let weight = r.read_f32("term weight")? as f64;
            if prev.is_some_and(|p| p >= term) {
                return Err(Error::format(start, format!("record '{id}': term ids not strictly increasing")));
            }
            if !weight.is_finite() || weight <= 0.0 {
                return Err(Error::format(start, format!("record '{id}': non-positive weight for term {term}")));
            }
            prev = Some(term);
            entries.push((term, weight));
        }
        out.push(VecRecord {
            id,
            vec: SparseVec { entries },
        });
    }
    Ok(out)
}
