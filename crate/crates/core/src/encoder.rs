//! Small deterministic causal encoder.
//!
//! Aggregation is a causal prefix mean: position i sees the mean of token
//! embeddings 1..=i, mirroring the one-directional information flow of
//! causal attention. The pooled vector passes through an affine layer and
//! tanh, then a vocabulary projection produces per-position logits. All
//! gradients are exact and hand-derived; arithmetic is f64 in memory with
//! f32 persistence.

use std::io::{BufRead, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bytesio::{self, TrackedReader};
use crate::corpus::TokenSeq;
use crate::error::{Error, Result};

const MODEL_MAGIC: &[u8; 4] = b"PRSP";
const MODEL_VERSION: u32 = 1;

/// All trainable tensors. Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    /// |V| x H token embeddings.
    pub emb: Vec<f64>,
    /// H x H post-aggregation mix.
    pub mix_w: Vec<f64>,
    pub mix_b: Vec<f64>,
    /// |V| x H vocabulary projection.
    pub head: Vec<f64>,
    pub head_b: Vec<f64>,
    /// |V| x H literal-residual projection, consumed by the head module.
    pub lrn_w: Vec<f64>,
    pub lrn_b: Vec<f64>,
}

impl ModelParams {
    /// Symmetric uniform init scaled by 1/sqrt(H) for weights, zero biases.
    pub fn init(vocab_size: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        if vocab_size < 2 || hidden_dim < 2 {
            return Err(Error::Shape(format!("need vocab_size >= 2 and hidden_dim >= 2, got {vocab_size}/{hidden_dim}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (hidden_dim as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
        };
        Ok(Self {
            vocab_size,
            hidden_dim,
            emb: draw(vocab_size * hidden_dim),
            mix_w: draw(hidden_dim * hidden_dim),
            mix_b: vec![0.0; hidden_dim],
            head: draw(vocab_size * hidden_dim),
            head_b: vec![0.0; vocab_size],
            lrn_w: draw(vocab_size * hidden_dim),
            lrn_b: vec![0.0; vocab_size],
        })
    }

    pub fn zeros(vocab_size: usize, hidden_dim: usize) -> Self {
        Self {
            vocab_size,
            hidden_dim,
            emb: vec![0.0; vocab_size * hidden_dim],
            mix_w: vec![0.0; hidden_dim * hidden_dim],
            mix_b: vec![0.0; hidden_dim],
            head: vec![0.0; vocab_size * hidden_dim],
            head_b: vec![0.0; vocab_size],
            lrn_w: vec![0.0; vocab_size * hidden_dim],
            lrn_b: vec![0.0; vocab_size],
        }
    }

    /// Mutable views over all tensors in serialization order.
    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [
            &mut self.emb,
            &mut self.mix_w,
            &mut self.mix_b,
            &mut self.head,
            &mut self.head_b,
            &mut self.lrn_w,
            &mut self.lrn_b,
        ]
    }

    pub fn tensors(&self) -> [&Vec<f64>; 7] {
        [
            &self.emb,
            &self.mix_w,
            &self.mix_b,
            &self.head,
            &self.head_b,
            &self.lrn_w,
            &self.lrn_b,
        ]
    }

    fn validate_seq(&self, s: &TokenSeq) -> Result<()> {
        for &id in s.ids() {
            if id as usize >= self.vocab_size {
                return Err(Error::Shape(format!("token id {id} out of range for vocab size {}", self.vocab_size)));
            }
        }
        Ok(())
    }

    /// Binary model file: magic, version, dims, then each tensor as a
    /// length-prefixed f32 array. Weights are truncated to f32 on save.
    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        bytesio::write_u32(w, MODEL_VERSION)?;
        bytesio::write_u64(w, self.vocab_size as u64)?;
        bytesio::write_u64(w, self.hidden_dim as u64)?;
        for t in self.tensors() {
            bytesio::write_u64(w, t.len() as u64)?;
            for &v in t {
                bytesio::write_f32(w, v as f32)?;
            }
        }
        Ok(())
    }

    pub fn load<R: BufRead>(reader: R) -> Result<Self> {
        let mut r = TrackedReader::new(reader);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic, "magic")?;
        if &magic != MODEL_MAGIC {
            return Err(Error::format(0, "bad magic, not a model file"));
        }
        let version = r.read_u32("version")?;
        if version != MODEL_VERSION {
            return Err(Error::format(4, format!("unsupported model version {version}")));
        }
        let vocab_size = r.read_u64("vocab size")? as usize;
        let hidden_dim = r.read_u64("hidden dim")? as usize;
        if vocab_size < 2 || hidden_dim < 2 || vocab_size > (1 << 24) || hidden_dim > (1 << 16) {
            return Err(r.err(format!("implausible dims {vocab_size}x{hidden_dim}")));
        }
        let mut out = Self::zeros(vocab_size, hidden_dim);
        let expected = [
            vocab_size * hidden_dim,
            hidden_dim * hidden_dim,
            hidden_dim,
            vocab_size * hidden_dim,
            vocab_size,
            vocab_size * hidden_dim,
            vocab_size,
        ];
        let names = ["emb", "mix_w", "mix_b", "head", "head_b", "lrn_w", "lrn_b"];
        for ((tensor, &want), name) in out.tensors_mut().into_iter().zip(&expected).zip(names) {
            let len = r.read_u64(name)? as usize;
            if len != want {
                return Err(r.err(format!("tensor {name}: expected {want} values, file declares {len}")));
            }
            for slot in tensor.iter_mut().take(len) {
                let v = r.read_f32(name)?;
                if !v.is_finite() {
                    return Err(r.err(format!("tensor {name}: non-finite value")));
                }
                *slot = v as f64;
            }
        }
        if !r.at_eof()? {
            return Err(r.err("trailing bytes after model data"));
        }
        Ok(out)
    }
}

/// Per-position hidden states and vocabulary logits for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// N x H.
    pub hidden: Vec<Vec<f64>>,
    /// N x |V|.
    pub logits: Vec<Vec<f64>>,
}

/// Gradients with respect to an [`EncoderOutput`]. Hidden gradients are
/// dense; logit gradients are sparse per-position rows sorted by term id,
/// since downstream losses touch few vocabulary dims.
#[derive(Debug, Clone)]
pub struct EncoderUpstream {
    pub d_hidden: Vec<Vec<f64>>,
    pub d_logits: Vec<Vec<(u32, f64)>>,
}

impl EncoderUpstream {
    pub fn zeros(n: usize, hidden_dim: usize) -> Self {
        Self {
            d_hidden: vec![vec![0.0; hidden_dim]; n],
            d_logits: vec![Vec::new(); n],
        }
    }
}

/// One gradient tensor per [`ModelParams`] field.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub emb: Vec<f64>,
    pub mix_w: Vec<f64>,
    pub mix_b: Vec<f64>,
    pub head: Vec<f64>,
    pub head_b: Vec<f64>,
    pub lrn_w: Vec<f64>,
    pub lrn_b: Vec<f64>,
}

impl GradientSet {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Self {
            emb: vec![0.0; p.emb.len()],
            mix_w: vec![0.0; p.mix_w.len()],
            mix_b: vec![0.0; p.mix_b.len()],
            head: vec![0.0; p.head.len()],
            head_b: vec![0.0; p.head_b.len()],
            lrn_w: vec![0.0; p.lrn_w.len()],
            lrn_b: vec![0.0; p.lrn_b.len()],
        }
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [
            &mut self.emb,
            &mut self.mix_w,
            &mut self.mix_b,
            &mut self.head,
            &mut self.head_b,
            &mut self.lrn_w,
            &mut self.lrn_b,
        ]
    }

    pub fn tensors(&self) -> [&Vec<f64>; 7] {
        [
            &self.emb,
            &self.mix_w,
            &self.mix_b,
            &self.head,
            &self.head_b,
            &self.lrn_w,
            &self.lrn_b,
        ]
    }

    /// Sum another gradient set into this one.
    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            debug_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Prefix means m_i = (1/i) * sum_{j<=i} emb[t_j], 1-based positions.
fn prefix_means(p: &ModelParams, s: &TokenSeq) -> Vec<Vec<f64>> {
    let h = p.hidden_dim;
    let mut acc = vec![0.0; h];
    let mut out = Vec::with_capacity(s.len());
    for (i, &tok) in s.ids().iter().enumerate() {
        let row = &p.emb[tok as usize * h..(tok as usize + 1) * h];
        for (a, &e) in acc.iter_mut().zip(row) {
            *a += e;
        }
        let inv = 1.0 / (i as f64 + 1.0);
        out.push(acc.iter().map(|&a| a * inv).collect());
    }
    out
}

/// Forward pass: h_i = tanh(mix_w . m_i + mix_b) over causal prefix means,
/// logits_i = head . h_i + head_b.
pub fn forward(p: &ModelParams, s: &TokenSeq) -> Result<EncoderOutput> {
    p.validate_seq(s)?;
    let h = p.hidden_dim;
    let v = p.vocab_size;
    let means = prefix_means(p, s);
    let mut hidden = Vec::with_capacity(s.len());
    let mut logits = Vec::with_capacity(s.len());
    for m in &means {
        let mut hid = vec![0.0; h];
        for (r, slot) in hid.iter_mut().enumerate() {
            let mut a = p.mix_b[r];
            let row = &p.mix_w[r * h..(r + 1) * h];
            for (w, &x) in row.iter().zip(m) {
                a += w * x;
            }
            *slot = a.tanh();
        }
        let mut row = vec![0.0; v];
        for (vi, slot) in row.iter_mut().enumerate() {
            let hrow = &p.head[vi * h..(vi + 1) * h];
            let mut a = p.head_b[vi];
            for (w, &x) in hrow.iter().zip(&hid) {
                a += w * x;
            }
            *slot = a;
        }
        hidden.push(hid);
        logits.push(row);
    }
    Ok(EncoderOutput { hidden, logits })
}

/// Exact analytic gradients for all parameters given upstream gradients on
/// the encoder output. Repeated token ids accumulate into shared embedding
/// rows. LRN tensors are untouched (their gradients attach in the head).
pub fn backward(p: &ModelParams, s: &TokenSeq, upstream: &EncoderUpstream) -> Result<GradientSet> {
    let mut g = GradientSet::zeros_like(p);
    backward_into(p, s, upstream, &mut g)?;
    Ok(g)
}

/// [`backward`] accumulating into an existing gradient set, so a batch can
/// share one accumulator.
pub fn backward_into(p: &ModelParams, s: &TokenSeq, upstream: &EncoderUpstream, g: &mut GradientSet) -> Result<()> {
    p.validate_seq(s)?;
    let n = s.len();
    let h = p.hidden_dim;
    if upstream.d_hidden.len() != n || upstream.d_logits.len() != n {
        return Err(Error::Shape(format!("upstream rows {}/{} do not match sequence length {n}", upstream.d_hidden.len(), upstream.d_logits.len())));
    }
    for row in &upstream.d_hidden {
        if row.len() != h {
            return Err(Error::Shape("upstream hidden width mismatch".into()));
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("upstream hidden gradient".into()));
        }
    }
    for row in &upstream.d_logits {
        for &(id, g) in row {
            if id as usize >= p.vocab_size {
                return Err(Error::Shape(format!("upstream logit dim {id} out of range")));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite("upstream logit gradient".into()));
            }
        }
    }

    let means = prefix_means(p, s);
    let out = forward(p, s)?;

    // d_means[i] filled below, consumed by the suffix pass.
    let mut d_means: Vec<Vec<f64>> = vec![vec![0.0; h]; n];
    for i in 0..n {
        let hid = &out.hidden[i];
        // Total gradient on h_i: direct hidden upstream plus head backprop.
        let mut dh = upstream.d_hidden[i].clone();
        for &(vi, gl) in &upstream.d_logits[i] {
            let vi = vi as usize;
            let hrow = &p.head[vi * h..(vi + 1) * h];
            for (slot, &w) in dh.iter_mut().zip(hrow) {
                *slot += gl * w;
            }
            let grow = &mut g.head[vi * h..(vi + 1) * h];
            for (gslot, &hx) in grow.iter_mut().zip(hid) {
                *gslot += gl * hx;
            }
            g.head_b[vi] += gl;
        }
        // Through tanh.
        let m = &means[i];
        for r in 0..h {
            let da = dh[r] * (1.0 - hid[r] * hid[r]);
            g.mix_b[r] += da;
            let grow = &mut g.mix_w[r * h..(r + 1) * h];
            for (gslot, &mx) in grow.iter_mut().zip(m) {
                *gslot += da * mx;
            }
            let wrow = &p.mix_w[r * h..(r + 1) * h];
            for (slot, &w) in d_means[i].iter_mut().zip(wrow) {
                *slot += da * w;
            }
        }
    }

    // Prefix mean: d_emb[t_j] += sum_{i>=j} d_means[i] / (i+1).
    let mut carry = vec![0.0; h];
    for i in (0..n).rev() {
        let inv = 1.0 / (i as f64 + 1.0);
        for (c, &dm) in carry.iter_mut().zip(&d_means[i]) {
            *c += dm * inv;
        }
        let tok = s.ids()[i] as usize;
        let grow = &mut g.emb[tok * h..(tok + 1) * h];
        for (gslot, &c) in grow.iter_mut().zip(&carry) {
            *gslot += c;
        }
    }
    Ok(())
}
