//! Training: windowed top-k similarity, InfoNCE over in-batch negatives,
//! FLOPS regularization with quadratic warm-up, and a decoupled-weight-decay
//! adaptive-moment optimizer.
//!
//! Gradient conventions: top-k selection is straight-through on the kept
//! support (removed entries get zero gradient), the residual max routes its
//! gradient to the argmax dim with ties resolved to the lowest id, and all
//! accumulation walks ids in sorted order so runs are bit-reproducible.

use std::collections::BTreeMap;
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{PairRecord, PairSet, TokenSeq};
use crate::encoder::{backward_into, EncoderUpstream, GradientSet, ModelParams};
use crate::error::{Error, Result};
use crate::head::{encode_traced, saturate_grad, EncodeMode, EncodeTrace, HeadOutput};
use crate::sparse::SparseVec;

/// Which sides of the similarity get normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// l2-normalize the query side only (the default).
    QNorm,
    /// l2-normalize both sides (cosine).
    AllNorm,
    /// Plain dot product.
    NoNorm,
    /// l2-normalize the item side only.
    DNorm,
    /// l1-normalize the query side.
    L1QNorm,
}

impl std::str::FromStr for NormMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "q_norm" => Ok(Self::QNorm),
            "all_norm" => Ok(Self::AllNorm),
            "no_norm" => Ok(Self::NoNorm),
            "d_norm" => Ok(Self::DNorm),
            "l1_q_norm" => Ok(Self::L1QNorm),
            other => Err(Error::Config(format!("unknown norm_mode '{other}'"))),
        }
    }
}

impl NormMode {
    fn as_str(&self) -> &'static str {
        match self {
            Self::QNorm => "q_norm",
            Self::AllNorm => "all_norm",
            Self::NoNorm => "no_norm",
            Self::DNorm => "d_norm",
            Self::L1QNorm => "l1_q_norm",
        }
    }
}

/// Focusing-window schedule: fixed sizes, or ordered contraction lists with
/// a contraction threshold.
#[derive(Debug, Clone, PartialEq)]
pub enum WindowSchedule {
    Fixed,
    Dynamic {
        q_sizes: Vec<usize>,
        d_sizes: Vec<usize>,
        /// Contract when more than this fraction of a side fits under the
        /// current size.
        threshold: f64,
    },
}

impl WindowSchedule {
    pub fn default_dynamic() -> Self {
        Self::Dynamic {
            q_sizes: vec![256, 128, 64],
            d_sizes: vec![512, 256, 128],
            threshold: 0.9,
        }
    }
}

/// All training knobs. Field names double as config-file keys.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub k_q: usize,
    pub k_d: usize,
    pub lambda_q: f64,
    pub lambda_d: f64,
    pub warmup_steps_flops: u64,
    pub warmup_steps_lr: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub norm_mode: NormMode,
    pub window_schedule: WindowSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k_q: 256,
            k_d: 512,
            lambda_q: 5e-3,
            lambda_d: 1e-3,
            warmup_steps_flops: 100,
            warmup_steps_lr: 20,
            lr: 3e-5,
            weight_decay: 0.1,
            batch_size: 64,
            epochs: 5,
            seed: 42,
            norm_mode: NormMode::QNorm,
            window_schedule: WindowSchedule::Fixed,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_q < 1 || self.k_d < 1 {
            return Err(Error::Config("window sizes must be >= 1".into()));
        }
        if self.lambda_q < 0.0 || self.lambda_d < 0.0 {
            return Err(Error::Config("lambda weights must be >= 0".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2 (in-batch negatives need another query)".into()));
        }
        if let WindowSchedule::Dynamic { q_sizes, d_sizes, threshold } = &self.window_schedule {
            if q_sizes.is_empty() || d_sizes.is_empty() {
                return Err(Error::Config("dynamic window size lists must be nonempty".into()));
            }
            if !(0.0..=1.0).contains(threshold) {
                return Err(Error::Config("dynamic window threshold must be in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Parse a flat `key=value` config. Unknown keys are errors; `#` lines
    /// and blanks are skipped.
    pub fn parse<R: BufRead>(r: R) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, line) in r.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(line_no, "expected key=value"))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::parse(line_no, format!("duplicate key '{key}'")));
            }
            let bad = |what: &str| Error::parse(line_no, format!("invalid {what}: '{value}'"));
            match key {
                "k_q" => cfg.k_q = value.parse().map_err(|_| bad("k_q"))?,
                "k_d" => cfg.k_d = value.parse().map_err(|_| bad("k_d"))?,
                "lambda_q" => cfg.lambda_q = value.parse().map_err(|_| bad("lambda_q"))?,
                "lambda_d" => cfg.lambda_d = value.parse().map_err(|_| bad("lambda_d"))?,
                "warmup_steps_flops" => {
                    cfg.warmup_steps_flops = value.parse().map_err(|_| bad("warmup_steps_flops"))?
                }
                "warmup_steps_lr" => {
                    cfg.warmup_steps_lr = value.parse().map_err(|_| bad("warmup_steps_lr"))?
                }
                "lr" => cfg.lr = value.parse().map_err(|_| bad("lr"))?,
                "weight_decay" => cfg.weight_decay = value.parse().map_err(|_| bad("weight_decay"))?,
                "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad("batch_size"))?,
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad("epochs"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
                "norm_mode" => cfg.norm_mode = value.parse()?,
                "window_schedule" => cfg.window_schedule = parse_window_schedule(value, line_no)?,
                other => {
                    return Err(Error::parse(line_no, format!("unknown key '{other}'")));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Render in the config-file format.
    pub fn render(&self) -> String {
        let schedule = match &self.window_schedule {
            WindowSchedule::Fixed => "fixed".to_string(),
            WindowSchedule::Dynamic { q_sizes, d_sizes, threshold } => format!(
                "dynamic:{}:{}:{}",
                join_sizes(q_sizes),
                join_sizes(d_sizes),
                threshold
            ),
        };
        format!(
            "k_q={}\nk_d={}\nlambda_q={}\nlambda_d={}\nwarmup_steps_flops={}\nwarmup_steps_lr={}\nlr={}\nweight_decay={}\nbatch_size={}\nepochs={}\nseed={}\nnorm_mode={}\nwindow_schedule={}\n",
            self.k_q,
            self.k_d,
            self.lambda_q,
            self.lambda_d,
            self.warmup_steps_flops,
            self.warmup_steps_lr,
            self.lr,
            self.weight_decay,
            self.batch_size,
            self.epochs,
            self.seed,
            self.norm_mode.as_str(),
            schedule
        )
    }
}

fn join_sizes(sizes: &[usize]) -> String {
    sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_window_schedule(value: &str, line_no: usize) -> Result<WindowSchedule> {
    if value == "fixed" {
        return Ok(WindowSchedule::Fixed);
    }
    let rest = value
        .strip_prefix("dynamic:")
        .ok_or_else(|| Error::parse(line_no, format!("invalid window_schedule '{value}' (expected 'fixed' or 'dynamic:Q,..:D,..:T')")))?;
    let parts: Vec<&str> = rest.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::parse(line_no, "dynamic schedule needs query sizes, item sizes, and threshold"));
    }
    let parse_sizes = |s: &str| -> Result<Vec<usize>> {
        s.split(',')
            .map(|x| x.trim().parse().map_err(|_| Error::parse(line_no, format!("invalid window size '{x}'"))))
            .collect()
    };
    let q_sizes = parse_sizes(parts[0])?;
    let d_sizes = parse_sizes(parts[1])?;
    let threshold: f64 = parts[2]
        .parse()
        .map_err(|_| Error::parse(line_no, format!("invalid threshold '{}'", parts[2])))?;
    Ok(WindowSchedule::Dynamic { q_sizes, d_sizes, threshold })
}

/// Conditional top-k pooling: identity when nnz(w) <= k, otherwise keep the
/// k largest weights (ties keep the lower term id).
pub fn conditional_topk(w: &SparseVec, k: usize) -> SparseVec {
    debug_assert!(k >= 1);
    w.top_k(k)
}

fn normalize_l2(v: &SparseVec) -> Option<SparseVec> {
    let n = v.l2_norm();
    if n == 0.0 {
        return None;
    }
    Some(v.scale(1.0 / n).expect("positive factor"))
}

fn normalize_l1(v: &SparseVec) -> Option<SparseVec> {
    let n = v.l1_norm();
    if n == 0.0 {
        return None;
    }
    Some(v.scale(1.0 / n).expect("positive factor"))
}

/// Normalized views of the two sides per mode. `None` marks a zero vector,
/// which scores 0 against everything.
fn normalized_sides(q: &SparseVec, d: &SparseVec, mode: NormMode) -> (Option<SparseVec>, Option<SparseVec>) {
    match mode {
        NormMode::QNorm => (normalize_l2(q), Some(d.clone())),
        NormMode::AllNorm => (normalize_l2(q), normalize_l2(d)),
        NormMode::NoNorm => (Some(q.clone()), Some(d.clone())),
        NormMode::DNorm => (Some(q.clone()), normalize_l2(d)),
        NormMode::L1QNorm => (normalize_l1(q), Some(d.clone())),
    }
}

/// Windowed similarity: top-k both sides, then the mode's normalized dot.
pub fn similarity_lfw(wq: &SparseVec, wd: &SparseVec, cfg: &TrainConfig) -> f64 {
    similarity_windowed(wq, wd, cfg.k_q, cfg.k_d, cfg.norm_mode)
}

pub fn similarity_windowed(wq: &SparseVec, wd: &SparseVec, k_q: usize, k_d: usize, mode: NormMode) -> f64 {
    let q = conditional_topk(wq, k_q);
    let d = conditional_topk(wd, k_d);
    match normalized_sides(&q, &d, mode) {
        (Some(nq), Some(nd)) => nq.dot(&nd),
        _ => 0.0,
    }
}

/// Query and aligned positive-item representations for one batch.
#[derive(Debug, Clone)]
pub struct BatchReps {
    pub queries: Vec<HeadOutput>,
    pub items: Vec<HeadOutput>,
}

impl BatchReps {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

fn score_matrix(finals_q: &[&SparseVec], finals_d: &[&SparseVec], k_q: usize, k_d: usize, mode: NormMode) -> Result<Vec<Vec<f64>>> {
    let b = finals_q.len();
    let mut s = vec![vec![0.0; b]; b];
    for (i, q) in finals_q.iter().enumerate() {
        for (j, d) in finals_d.iter().enumerate() {
            let v = similarity_windowed(q, d, k_q, k_d, mode);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("similarity score for pair ({i},{j})")));
            }
            s[i][j] = v;
        }
    }
    Ok(s)
}

fn mean_infonce(scores: &[Vec<f64>]) -> f64 {
    let b = scores.len();
    let mut total = 0.0;
    for (i, row) in scores.iter().enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        total += lse - row[i];
    }
    total / b as f64
}

/// InfoNCE with in-batch negatives: negatives for query i are exactly the
/// other queries' positives. Batch of one has no negatives and scores 0.
pub fn infonce_lfw(batch: &BatchReps, cfg: &TrainConfig) -> Result<f64> {
    if batch.queries.len() != batch.items.len() {
        return Err(Error::Shape("batch queries/items length mismatch".into()));
    }
    if batch.is_empty() {
        return Ok(0.0);
    }
    let fq: Vec<&SparseVec> = batch.queries.iter().map(|h| &h.final_rep).collect();
    let fd: Vec<&SparseVec> = batch.items.iter().map(|h| &h.final_rep).collect();
    let s = score_matrix(&fq, &fd, cfg.k_q, cfg.k_d, cfg.norm_mode)?;
    Ok(mean_infonce(&s))
}

/// FLOPS penalty: sum over dims of the squared batch-mean weight. Dims are
/// walked in sorted order for reproducibility.
pub fn flops_loss(reps: &[SparseVec]) -> f64 {
    if reps.is_empty() {
        return 0.0;
    }
    let n = reps.len() as f64;
    let mut sums: BTreeMap<u32, f64> = BTreeMap::new();
    for rep in reps {
        for (id, w) in rep.iter() {
            *sums.entry(id).or_insert(0.0) += w;
        }
    }
    sums.values().map(|&s| (s / n) * (s / n)).sum()
}

/// Quadratic warm-up factor for the FLOPS weights.
pub fn flops_weight(target: f64, warmup_steps: u64, step: u64) -> f64 {
    if warmup_steps == 0 {
        return target;
    }
    let frac = (step as f64 / warmup_steps as f64).min(1.0);
    target * frac * frac
}

/// Per-term loss breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossParts {
    pub total: f64,
    pub rank: f64,
    pub flops_q: f64,
    pub flops_d: f64,
    pub lambda_q_eff: f64,
    pub lambda_d_eff: f64,
}

/// Ranking loss plus warmed-up FLOPS penalties on the basic representations.
pub fn total_loss(batch: &BatchReps, cfg: &TrainConfig, step: u64) -> Result<LossParts> {
    let rank = infonce_lfw(batch, cfg)?;
    let basics_q: Vec<SparseVec> = batch.queries.iter().map(|h| h.basic.clone()).collect();
    let basics_d: Vec<SparseVec> = batch.items.iter().map(|h| h.basic.clone()).collect();
    let flops_q = flops_loss(&basics_q);
    let flops_d = flops_loss(&basics_d);
    let lambda_q_eff = flops_weight(cfg.lambda_q, cfg.warmup_steps_flops, step);
    let lambda_d_eff = flops_weight(cfg.lambda_d, cfg.warmup_steps_flops, step);
    Ok(LossParts {
        total: rank + lambda_q_eff * flops_q + lambda_d_eff * flops_d,
        rank,
        flops_q,
        flops_d,
        lambda_q_eff,
        lambda_d_eff,
    })
}

/// Contract a side's window to the next smaller listed size once more than
/// the threshold fraction of the batch already fits under it. Windows never
/// grow back.
pub fn dynamic_window_update(frac_q: f64, frac_d: f64, current: (usize, usize), cfg: &TrainConfig) -> (usize, usize) {
    let WindowSchedule::Dynamic { q_sizes, d_sizes, threshold } = &cfg.window_schedule else {
        return current;
    };
    let advance = |sizes: &[usize], cur: usize, frac: f64| -> usize {
        if frac <= *threshold {
            return cur;
        }
        match sizes.iter().position(|&s| s == cur) {
            Some(pos) if pos + 1 < sizes.len() => sizes[pos + 1],
            _ => cur,
        }
    };
    (
        advance(q_sizes, current.0, frac_q),
        advance(d_sizes, current.1, frac_d),
    )
}

// ---------------------------------------------------------------------------
// Batch loss with gradients
// ---------------------------------------------------------------------------

type SparseGrad = BTreeMap<u32, f64>;

/// Per member: ReLU mask of the pooled logits row, ReLU mask of the last
/// hidden row, argmax dim of the enhancement, kept support ids.
type MemberSignature = (Vec<bool>, Vec<bool>, usize, Vec<u32>);

/// Discrete structure of one batch evaluation. Finite-difference checks
/// compare signatures at the probe points and exclude coordinates where the
/// structure changes (kink-adjacent coordinates).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSignature {
    members: Vec<MemberSignature>,
}

/// Per-step bookkeeping emitted to the training log.
#[derive(Debug, Clone, Serialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub rank_loss: f64,
    pub flops_q: f64,
    pub flops_d: f64,
    pub nnz_q_mean: f64,
    pub nnz_d_mean: f64,
    pub k_q: usize,
    pub k_d: usize,
}

pub struct BatchEval {
    pub parts: LossParts,
    pub grads: Option<GradientSet>,
    pub signature: BatchSignature,
    /// Mean nonzero counts of basic representations.
    pub nnz_q_basic_mean: f64,
    pub nnz_d_basic_mean: f64,
    /// Fractions of members whose final representation already fits under
    /// the current window.
    pub frac_q_under: f64,
    pub frac_d_under: f64,
}

struct MemberForward {
    trace: EncodeTrace,
    kept: SparseVec,
    normalized: Option<SparseVec>,
}

fn forward_member(params: &ModelParams, seq: &TokenSeq, mode: EncodeMode, k: usize, norm_self: bool, norm: NormMode) -> Result<MemberForward> {
    let trace = encode_traced(params, seq, mode)?;
    let kept = conditional_topk(&trace.output.final_rep, k);
    let normalized = if norm_self {
        match norm {
            NormMode::QNorm | NormMode::AllNorm | NormMode::DNorm => normalize_l2(&kept),
            NormMode::L1QNorm => normalize_l1(&kept),
            NormMode::NoNorm => Some(kept.clone()),
        }
    } else {
        Some(kept.clone())
    };
    Ok(MemberForward { trace, kept, normalized })
}

/// Backprop through the normalization that produced `normalized` from
/// `kept`, restricted to the kept support.
fn normalization_backward(kept: &SparseVec, g_normalized: &SparseGrad, normalized_self: bool, norm: NormMode) -> SparseGrad {
    let mut out = SparseGrad::new();
    if kept.is_empty() {
        return out;
    }
    if !normalized_self || matches!(norm, NormMode::NoNorm) {
        for (id, _) in kept.iter() {
            if let Some(&g) = g_normalized.get(&id) {
                out.insert(id, g);
            }
        }
        return out;
    }
    match norm {
        NormMode::QNorm | NormMode::AllNorm | NormMode::DNorm => {
            let n = kept.l2_norm();
            // dot of upstream with the unit vector, over the kept support
            let mut dot = 0.0;
            for (id, w) in kept.iter() {
                if let Some(&g) = g_normalized.get(&id) {
                    dot += g * (w / n);
                }
            }
            for (id, w) in kept.iter() {
                let g = g_normalized.get(&id).copied().unwrap_or(0.0);
                out.insert(id, (g - dot * (w / n)) / n);
            }
        }
        NormMode::L1QNorm => {
            let n = kept.l1_norm();
            let mut dot = 0.0;
            for (id, w) in kept.iter() {
                if let Some(&g) = g_normalized.get(&id) {
                    dot += g * w;
                }
            }
            for (id, _) in kept.iter() {
                let g = g_normalized.get(&id).copied().unwrap_or(0.0);
                out.insert(id, g / n - dot / (n * n));
            }
        }
        NormMode::NoNorm => unreachable!(),
    }
    out
}

/// Backprop one member's representation gradient (on the kept support of
/// its final representation) down to parameter gradients.
fn member_backward(
    params: &ModelParams,
    trace: &EncodeTrace,
    g_final: &SparseGrad,
    flops_coeff: f64,
    batch_means: &BTreeMap<u32, f64>,
    grads: &mut GradientSet,
) -> Result<()> {
    let h = params.hidden_dim;
    let n = trace.seq.len();

    // Gradient on the basic representation: identity path from the final
    // representation plus the FLOPS term on this member's active dims.
    let mut g_w: SparseGrad = g_final.clone();
    if flops_coeff != 0.0 {
        for (id, _) in trace.output.basic.iter() {
            if let Some(&mean) = batch_means.get(&id) {
                *g_w.entry(id).or_insert(0.0) += flops_coeff * mean;
            }
        }
    }

    let mut upstream = EncoderUpstream::zeros(n, h);

    // Residual enhancement backward (prosper mode only): literal dims pull
    // gradient out of their own enhancement coordinate and into the argmax.
    if trace.mode == EncodeMode::Prosper {
        let mut g_wprime: SparseGrad = SparseGrad::new();
        let am = trace.w_prime_argmax as u32;
        for (&id, &g) in g_final {
            if trace.lit.contains(id) {
                *g_wprime.entry(am).or_insert(0.0) += g;
                *g_wprime.entry(id).or_insert(0.0) -= g;
            }
        }
        if !g_wprime.is_empty() {
            let mut g_htilde = vec![0.0; h];
            for (&vi, &g) in &g_wprime {
                if g == 0.0 {
                    continue;
                }
                let vi = vi as usize;
                grads.lrn_b[vi] += g;
                let row = &params.lrn_w[vi * h..(vi + 1) * h];
                let grow = &mut grads.lrn_w[vi * h..(vi + 1) * h];
                for c in 0..h {
                    grow[c] += g * trace.h_tilde_last[c];
                    g_htilde[c] += g * row[c];
                }
            }
            let hid_last = trace.enc.hidden.last().expect("nonempty sequence");
            for c in 0..h {
                upstream.d_hidden[n - 1][c] += g_htilde[c] * saturate_grad(hid_last[c]);
            }
        }
    }

    // Saturation backward into logits.
    match trace.mode {
        EncodeMode::Prosper | EncodeMode::NoLrn => {
            let logits_last = trace.enc.logits.last().expect("nonempty sequence");
            let row: Vec<(u32, f64)> = g_w
                .iter()
                .map(|(&id, &g)| (id, g * saturate_grad(logits_last[id as usize])))
                .filter(|&(_, g)| g != 0.0)
                .collect();
            upstream.d_logits[n - 1] = row;
        }
        EncodeMode::SpladeMax => {
            // route each dim's gradient to its pooling argmax row
            let mut per_row: Vec<SparseGrad> = vec![SparseGrad::new(); n];
            for (&id, &g) in &g_w {
                let r = trace.pool_rows[id as usize] as usize;
                let x = trace.enc.logits[r][id as usize];
                let gg = g * saturate_grad(x);
                if gg != 0.0 {
                    *per_row[r].entry(id).or_insert(0.0) += gg;
                }
            }
            for (r, row) in per_row.into_iter().enumerate() {
                upstream.d_logits[r] = row.into_iter().collect();
            }
        }
    }

    backward_into(params, &trace.seq, &upstream, grads)
}

/// Forward (and optionally backward) for one batch at explicit window
/// sizes. The scalar loss matches [`total_loss`] exactly.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss_and_grads(
    params: &ModelParams,
    batch: &[(TokenSeq, TokenSeq)],
    cfg: &TrainConfig,
    mode: EncodeMode,
    k_q: usize,
    k_d: usize,
    step: u64,
    want_grads: bool,
) -> Result<BatchEval> {
    if batch.is_empty() {
        return Err(Error::data("empty batch"));
    }
    let b = batch.len();
    let norm = cfg.norm_mode;
    let (q_self_norm, d_self_norm) = match norm {
        NormMode::QNorm => (true, false),
        NormMode::AllNorm => (true, true),
        NormMode::NoNorm => (false, false),
        NormMode::DNorm => (false, true),
        NormMode::L1QNorm => (true, false),
    };

    let mut qs = Vec::with_capacity(b);
    let mut ds = Vec::with_capacity(b);
    for (q_seq, d_seq) in batch {
        qs.push(forward_member(params, q_seq, mode, k_q, q_self_norm, norm)?);
        ds.push(forward_member(params, d_seq, mode, k_d, d_self_norm, norm)?);
    }

    // Score matrix over normalized sides; empty sides score zero.
    let mut s = vec![vec![0.0; b]; b];
    for (i, q) in qs.iter().enumerate() {
        for (j, d) in ds.iter().enumerate() {
            s[i][j] = match (&q.normalized, &d.normalized) {
                (Some(nq), Some(nd)) => nq.dot(nd),
                _ => 0.0,
            };
            if !s[i][j].is_finite() {
                return Err(Error::NonFinite(format!("similarity score for pair ({i},{j})")));
            }
        }
    }
    let rank = mean_infonce(&s);

    let basics_q: Vec<SparseVec> = qs.iter().map(|m| m.trace.output.basic.clone()).collect();
    let basics_d: Vec<SparseVec> = ds.iter().map(|m| m.trace.output.basic.clone()).collect();
    let flops_q = flops_loss(&basics_q);
    let flops_d = flops_loss(&basics_d);
    let lambda_q_eff = flops_weight(cfg.lambda_q, cfg.warmup_steps_flops, step);
    let lambda_d_eff = flops_weight(cfg.lambda_d, cfg.warmup_steps_flops, step);
    let parts = LossParts {
        total: rank + lambda_q_eff * flops_q + lambda_d_eff * flops_d,
        rank,
        flops_q,
        flops_d,
        lambda_q_eff,
        lambda_d_eff,
    };
    if !parts.total.is_finite() {
        return Err(Error::NonFinite(format!("batch loss: {parts:?}")));
    }

    let signature = BatchSignature {
        members: qs
            .iter()
            .chain(ds.iter())
            .map(|m| {
                let logit_mask: Vec<bool> = match m.trace.mode {
                    EncodeMode::SpladeMax => m
                        .trace
                        .basic_dense
                        .iter()
                        .map(|&x| x > 0.0)
                        .collect(),
                    _ => m
                        .trace
                        .enc
                        .logits
                        .last()
                        .expect("nonempty")
                        .iter()
                        .map(|&x| x > 0.0)
                        .collect(),
                };
                let hidden_mask: Vec<bool> = m
                    .trace
                    .enc
                    .hidden
                    .last()
                    .expect("nonempty")
                    .iter()
                    .map(|&x| x > 0.0)
                    .collect();
                let support: Vec<u32> = m.kept.iter().map(|(id, _)| id).collect();
                (logit_mask, hidden_mask, m.trace.w_prime_argmax, support)
            })
            .collect(),
    };

    let nnz_q_basic_mean = basics_q.iter().map(|v| v.nnz() as f64).sum::<f64>() / b as f64;
    let nnz_d_basic_mean = basics_d.iter().map(|v| v.nnz() as f64).sum::<f64>() / b as f64;
    let frac_q_under = qs
        .iter()
        .filter(|m| m.trace.output.final_rep.nnz() < k_q)
        .count() as f64
        / b as f64;
    let frac_d_under = ds
        .iter()
        .filter(|m| m.trace.output.final_rep.nnz() < k_d)
        .count() as f64
        / b as f64;

    if !want_grads {
        return Ok(BatchEval {
            parts,
            grads: None,
            signature,
            nnz_q_basic_mean,
            nnz_d_basic_mean,
            frac_q_under,
            frac_d_under,
        });
    }

    // Softmax coefficients: d(mean rank loss)/d s_ij = (p_ij - delta_ij)/B.
    let binv = 1.0 / b as f64;
    let mut coef = vec![vec![0.0; b]; b];
    for i in 0..b {
        let row = &s[i];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|&x| (x - max).exp()).sum();
        for j in 0..b {
            let p = (row[j] - max).exp() / denom;
            coef[i][j] = (p - if i == j { 1.0 } else { 0.0 }) * binv;
        }
    }

    // Gradients on normalized views.
    let mut g_nq: Vec<SparseGrad> = vec![SparseGrad::new(); b];
    let mut g_nd: Vec<SparseGrad> = vec![SparseGrad::new(); b];
    for i in 0..b {
        for j in 0..b {
            let c = coef[i][j];
            if c == 0.0 {
                continue;
            }
            // scores with an empty side are constant zero: no gradient
            let (Some(nq), Some(nd)) = (&qs[i].normalized, &ds[j].normalized) else {
                continue;
            };
            for (id, w) in nd.iter() {
                *g_nq[i].entry(id).or_insert(0.0) += c * w;
            }
            for (id, w) in nq.iter() {
                *g_nd[j].entry(id).or_insert(0.0) += c * w;
            }
        }
    }

    // FLOPS gradient coefficient: d(lambda * flops)/d w_it = lambda*2*mean_t/B.
    let batch_mean = |reps: &[SparseVec]| -> BTreeMap<u32, f64> {
        let mut sums: BTreeMap<u32, f64> = BTreeMap::new();
        for rep in reps {
            for (id, w) in rep.iter() {
                *sums.entry(id).or_insert(0.0) += w;
            }
        }
        for v in sums.values_mut() {
            *v /= b as f64;
        }
        sums
    };
    let means_q = batch_mean(&basics_q);
    let means_d = batch_mean(&basics_d);

    let mut grads = GradientSet::zeros_like(params);
    for (i, m) in qs.iter().enumerate() {
        let g_kept = normalization_backward(&m.kept, &g_nq[i], q_self_norm, norm);
        member_backward(params, &m.trace, &g_kept, 2.0 * lambda_q_eff * binv, &means_q, &mut grads)?;
    }
    for (j, m) in ds.iter().enumerate() {
        let g_kept = normalization_backward(&m.kept, &g_nd[j], d_self_norm, norm);
        member_backward(params, &m.trace, &g_kept, 2.0 * lambda_d_eff * binv, &means_d, &mut grads)?;
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("batch gradients".into()));
    }

    Ok(BatchEval {
        parts,
        grads: Some(grads),
        signature,
        nnz_q_basic_mean,
        nnz_d_basic_mean,
        frac_q_under,
        frac_d_under,
    })
}

// ---------------------------------------------------------------------------
// Optimizer and training loop
// ---------------------------------------------------------------------------

/// Adam with decoupled weight decay.
pub struct AdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamW {
    pub fn new(params: &ModelParams) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &GradientSet, lr: f64, weight_decay: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((tensor, grad), (m, v)) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..tensor.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                tensor[i] -= lr * (mhat / (vhat.sqrt() + self.eps) + weight_decay * tensor[i]);
            }
        }
    }
}

/// Owns the parameters and runs the optimization loop.
pub struct Trainer {
    pub params: ModelParams,
    pub cfg: TrainConfig,
    pub mode: EncodeMode,
    opt: AdamW,
    step: u64,
    pub cur_k_q: usize,
    pub cur_k_d: usize,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(params: ModelParams, cfg: TrainConfig, mode: EncodeMode) -> Result<Self> {
        cfg.validate()?;
        let (cur_k_q, cur_k_d) = match &cfg.window_schedule {
            WindowSchedule::Fixed => (cfg.k_q, cfg.k_d),
            WindowSchedule::Dynamic { q_sizes, d_sizes, .. } => (q_sizes[0], d_sizes[0]),
        };
        let opt = AdamW::new(&params);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            params,
            cfg,
            mode,
            opt,
            step: 0,
            cur_k_q,
            cur_k_d,
            rng,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn effective_lr(&self) -> f64 {
        if self.cfg.warmup_steps_lr == 0 {
            return self.cfg.lr;
        }
        let frac = ((self.step + 1) as f64 / self.cfg.warmup_steps_lr as f64).min(1.0);
        self.cfg.lr * frac
    }

    /// One optimization step over a batch of at least two pairs.
    pub fn train_step(&mut self, batch: &[PairRecord]) -> Result<StepMetrics> {
        if batch.len() < 2 {
            return Err(Error::data("training batch must have >= 2 pairs"));
        }
        let pairs: Vec<(TokenSeq, TokenSeq)> = batch
            .iter()
            .map(|r| (r.query.clone(), r.positive_item.clone()))
            .collect();
        let eval = batch_loss_and_grads(
            &self.params,
            &pairs,
            &self.cfg,
            self.mode,
            self.cur_k_q,
            self.cur_k_d,
            self.step,
            true,
        )?;
        let grads = eval.grads.as_ref().expect("gradients requested");
        let lr = self.effective_lr();
        self.opt.step(&mut self.params, grads, lr, self.cfg.weight_decay);

        let metrics = StepMetrics {
            step: self.step,
            loss: eval.parts.total,
            rank_loss: eval.parts.rank,
            flops_q: eval.parts.flops_q,
            flops_d: eval.parts.flops_d,
            nnz_q_mean: eval.nnz_q_basic_mean,
            nnz_d_mean: eval.nnz_d_basic_mean,
            k_q: self.cur_k_q,
            k_d: self.cur_k_d,
        };

        let (kq, kd) = dynamic_window_update(
            eval.frac_q_under,
            eval.frac_d_under,
            (self.cur_k_q, self.cur_k_d),
            &self.cfg,
        );
        self.cur_k_q = kq;
        self.cur_k_d = kd;
        self.step += 1;
        Ok(metrics)
    }

    /// Epoch loop with seeded shuffling; trailing chunks smaller than two
    /// pairs are skipped. The callback sees every step's metrics.
    pub fn train_epochs(&mut self, pairs: &PairSet, mut on_step: impl FnMut(&StepMetrics)) -> Result<()> {
        if pairs.is_empty() {
            return Err(Error::data("empty corpus"));
        }
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        for _ in 0..self.cfg.epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(self.cfg.batch_size) {
                if chunk.len() < 2 {
                    continue;
                }
                let batch: Vec<PairRecord> =
                    chunk.iter().map(|&i| pairs.records[i].clone()).collect();
                let metrics = self.train_step(&batch)?;
                on_step(&metrics);
            }
        }
        Ok(())
    }
}
