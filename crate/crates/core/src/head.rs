//! From encoder outputs to sparse representations.
//!
//! The pipeline is: log-saturated ReLU on logits and hidden states, pooling
//! across positions (last-pooling for the causal encoder, max-pooling for
//! the baseline head), then literal residual enhancement: every vocabulary
//! dim whose token occurs literally in the input receives the compensation
//! max(w') - w'_j on top of its basic weight, so under-attended literal
//! terms gain the most.

use crate::corpus::{TokenSeq, UNK_ID};
use crate::encoder::{forward, EncoderOutput, ModelParams};
use crate::error::{Error, Result};
use crate::sparse::SparseVec;

/// log(1 + ReLU(x)).
pub fn saturate(x: f64) -> f64 {
    x.max(0.0).ln_1p()
}

/// Derivative of [`saturate`]; zero on the clamped branch.
pub fn saturate_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0 / (1.0 + x)
    } else {
        0.0
    }
}

/// Final position's vector.
pub fn last_pool(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    rows.last()
        .cloned()
        .ok_or_else(|| Error::Shape("last_pool over zero rows".into()))
}

/// Elementwise maximum over rows.
pub fn max_pool(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = rows
        .first()
        .ok_or_else(|| Error::Shape("max_pool over zero rows".into()))?;
    let mut out = first.clone();
    for row in &rows[1..] {
        if row.len() != out.len() {
            return Err(Error::Shape("max_pool rows of unequal width".into()));
        }
        for (o, &x) in out.iter_mut().zip(row) {
            if x > *o {
                *o = x;
            }
        }
    }
    Ok(out)
}

/// Vocabulary dims whose token literally occurs in the sequence. The
/// unknown id 0 is never literal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiteralIndicator {
    dims: Vec<u32>,
}

impl LiteralIndicator {
    pub fn from_seq(s: &TokenSeq) -> Self {
        let mut dims: Vec<u32> = s.ids().iter().copied().filter(|&id| id != UNK_ID).collect();
        dims.sort_unstable();
        dims.dedup();
        Self { dims }
    }

    pub fn from_dims(mut dims: Vec<u32>) -> Self {
        dims.sort_unstable();
        dims.dedup();
        dims.retain(|&d| d != UNK_ID);
        Self { dims }
    }

    pub fn dims(&self) -> &[u32] {
        &self.dims
    }

    pub fn contains(&self, dim: u32) -> bool {
        self.dims.binary_search(&dim).is_ok()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }
}

/// Index of the maximum value, ties resolved to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Literal residual enhancement: out_j = basic_j + (max(enh) - enh_j) on
/// literal dims, basic_j elsewhere. The max runs over all dims.
pub fn lrn_enhance(basic: &[f64], enhancement: &[f64], lit: &LiteralIndicator) -> Result<Vec<f64>> {
    if basic.len() != enhancement.len() {
        return Err(Error::Shape(format!("basic/enhancement length mismatch {} vs {}", basic.len(), enhancement.len())));
    }
    let mut out = basic.to_vec();
    if enhancement.is_empty() || lit.is_empty() {
        return Ok(out);
    }
    let max = enhancement.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for &d in lit.dims() {
        let j = d as usize;
        if j >= out.len() {
            return Err(Error::Shape(format!("literal dim {j} out of range")));
        }
        out[j] = basic[j] + (max - enhancement[j]);
    }
    Ok(out)
}

/// Head operating mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeMode {
    /// Last-pooling plus literal residual enhancement.
    Prosper,
    /// Max-pooling baseline head, no enhancement.
    SpladeMax,
    /// Last-pooling without enhancement.
    NoLrn,
}

impl std::str::FromStr for EncodeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prosper" => Ok(Self::Prosper),
            "splade_max" => Ok(Self::SpladeMax),
            "no_lrn" => Ok(Self::NoLrn),
            other => Err(Error::Config(format!("unknown encode mode '{other}'"))),
        }
    }
}

/// Final sparse representations for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    /// Basic representation w (pooled saturated logits).
    pub basic: SparseVec,
    /// Dense enhancement vector w' (all zeros outside prosper mode).
    pub enhancement: Vec<f64>,
    /// Final representation W after enhancement.
    pub final_rep: SparseVec,
}

/// Everything the training backward pass needs from one encoding.
#[derive(Debug, Clone)]
pub struct EncodeTrace {
    pub mode: EncodeMode,
    pub seq: TokenSeq,
    pub enc: EncoderOutput,
    pub lit: LiteralIndicator,
    /// Dense basic representation w.
    pub basic_dense: Vec<f64>,
    /// Saturated last hidden state (prosper mode only; empty otherwise).
    pub h_tilde_last: Vec<f64>,
    /// Dense enhancement w' (prosper mode only; empty otherwise).
    pub w_prime: Vec<f64>,
    /// Argmax dim of w' (ties -> lowest id); meaningful in prosper mode.
    pub w_prime_argmax: usize,
    /// Per-dim argmax row for max-pooling (splade_max mode only).
    pub pool_rows: Vec<u32>,
    /// Dense final representation W.
    pub final_dense: Vec<f64>,
    pub output: HeadOutput,
}

/// Encode one sequence into sparse representations, keeping the trace.
pub fn encode_traced(p: &ModelParams, s: &TokenSeq, mode: EncodeMode) -> Result<EncodeTrace> {
    let enc = forward(p, s)?;
    let v = p.vocab_size;
    let h = p.hidden_dim;
    let lit = LiteralIndicator::from_seq(s);

    let mut pool_rows = Vec::new();
    let basic_dense: Vec<f64> = match mode {
        EncodeMode::Prosper | EncodeMode::NoLrn => {
            last_pool(&enc.logits)?.iter().map(|&x| saturate(x)).collect()
        }
        EncodeMode::SpladeMax => {
            // saturate is monotone, so pooling logits first is equivalent.
            pool_rows = vec![0u32; v];
            let mut best = enc.logits[0].clone();
            for (i, row) in enc.logits.iter().enumerate().skip(1) {
                for (d, &x) in row.iter().enumerate() {
                    if x > best[d] {
                        best[d] = x;
                        pool_rows[d] = i as u32;
                    }
                }
            }
            best.iter().map(|&x| saturate(x)).collect()
        }
    };

    let (h_tilde_last, w_prime, w_prime_argmax, final_dense) = match mode {
        EncodeMode::Prosper => {
            let h_tilde: Vec<f64> = last_pool(&enc.hidden)?.iter().map(|&x| saturate(x)).collect();
            let mut w_prime = vec![0.0; v];
            for (vi, slot) in w_prime.iter_mut().enumerate() {
                let row = &p.lrn_w[vi * h..(vi + 1) * h];
                let mut a = p.lrn_b[vi];
                for (w, &x) in row.iter().zip(&h_tilde) {
                    a += w * x;
                }
                *slot = a;
            }
            let am = argmax(&w_prime).expect("vocab_size >= 2");
            let final_dense = lrn_enhance(&basic_dense, &w_prime, &lit)?;
            (h_tilde, w_prime, am, final_dense)
        }
        EncodeMode::SpladeMax | EncodeMode::NoLrn => {
            (Vec::new(), Vec::new(), 0, basic_dense.clone())
        }
    };

    let output = HeadOutput {
        basic: SparseVec::from_dense(&basic_dense),
        enhancement: if mode == EncodeMode::Prosper {
            w_prime.clone()
        } else {
            vec![0.0; v]
        },
        final_rep: SparseVec::from_dense(&final_dense),
    };

    Ok(EncodeTrace {
        mode,
        seq: s.clone(),
        enc,
        lit,
        basic_dense,
        h_tilde_last,
        w_prime,
        w_prime_argmax,
        pool_rows,
        final_dense,
        output,
    })
}

/// Encode one sequence into its sparse representations.
pub fn encode(p: &ModelParams, s: &TokenSeq, mode: EncodeMode) -> Result<HeadOutput> {
    Ok(encode_traced(p, s, mode)?.output)
}
