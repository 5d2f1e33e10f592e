//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured values. Oracles here are kept independent
//! of the library internals they check: finite differences for gradients,
//! a dense double loop for the activation penalty, naive softmax for the
//! contrastive loss, and exhaustive scoring for pruned search.

use prosper_core::corpus::{build_vocab, tokenize, PairRecord, PairSet, TokenSeq};
use prosper_core::encoder::ModelParams;
use prosper_core::eval::{recall_at_k, Qrels};
use prosper_core::head::{encode, encode_traced, EncodeMode, HeadOutput, LiteralIndicator};
use prosper_core::index::{InvertedIndex, QuantizationMode};
use prosper_core::search::{
    search_bmm, search_exhaustive, truncate_query, Bm25Index, Bm25Params, QueryVec, RunFile,
    SearchResult,
};
use prosper_core::sparse::SparseVec;
use prosper_core::training::{
    batch_loss_and_grads, conditional_topk, flops_loss, infonce_lfw, similarity_lfw, BatchReps,
    NormMode, TrainConfig, Trainer, WindowSchedule,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn seq(ids: &[u32]) -> TokenSeq {
    TokenSeq::from_ids(ids.to_vec()).unwrap()
}

fn sv(entries: &[(u32, f64)]) -> SparseVec {
    SparseVec::from_entries(entries.to_vec()).unwrap()
}

// -------------------------------------------------------------------------
// 1. Gradient fidelity
// -------------------------------------------------------------------------

#[test]
fn criterion_01_gradient_fidelity() {
    let start = Instant::now();
    let (v, h) = (12usize, 4usize);
    let fd_step = 1e-5;
    let mut checked_total = 0usize;
    let mut excluded_total = 0usize;

    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b9).wrapping_add(7));
        let params = ModelParams::init(v, h, seed).unwrap();
        let cfg = TrainConfig {
            k_q: 3,
            k_d: 4,
            lambda_q: 0.01,
            lambda_d: 0.005,
            warmup_steps_flops: 10,
            norm_mode: NormMode::QNorm,
            ..TrainConfig::default()
        };
        let step = 50; // past the warm-up: full penalty weights
        let batch: Vec<(TokenSeq, TokenSeq)> = (0..2)
            .map(|_| {
                let qlen = rng.gen_range(1..4);
                let dlen = rng.gen_range(1..5);
                (
                    seq(&(0..qlen).map(|_| rng.gen_range(0..v as u32)).collect::<Vec<_>>()),
                    seq(&(0..dlen).map(|_| rng.gen_range(0..v as u32)).collect::<Vec<_>>()),
                )
            })
            .collect();

        let base = batch_loss_and_grads(
            &params,
            &batch,
            &cfg,
            EncodeMode::Prosper,
            cfg.k_q,
            cfg.k_d,
            step,
            true,
        )
        .unwrap();
        let grads = base.grads.as_ref().unwrap();

        for ti in 0..7 {
            for ci in 0..params.tensors()[ti].len() {
                let eval_at = |delta: f64| {
                    let mut p = params.clone();
                    p.tensors_mut()[ti][ci] += delta;
                    batch_loss_and_grads(&p, &batch, &cfg, EncodeMode::Prosper, cfg.k_q, cfg.k_d, step, false)
                        .unwrap()
                };
                let plus = eval_at(fd_step);
                let minus = eval_at(-fd_step);
                // kink-adjacent coordinate: the discrete structure changed
                if plus.signature != base.signature || minus.signature != base.signature {
                    excluded_total += 1;
                    continue;
                }
                let numeric = (plus.parts.total - minus.parts.total) / (2.0 * fd_step);
                let analytic = grads.tensors()[ti][ci];
                let denom = analytic.abs().max(numeric.abs());
                if denom > 1e-8 {
                    let rel = (analytic - numeric).abs() / denom;
                    assert!(
                        rel < 1e-3,
                        "seed {seed} tensor {ti} coord {ci}: analytic {analytic} vs numeric {numeric} (rel {rel:.2e})"
                    );
                }
                checked_total += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}, budget is 1 min");
    println!(
        "[criterion 1] PASS - full-pipeline gradients match central differences on 20 seeds \
         ({checked_total} coordinates checked, {excluded_total} kink-adjacent excluded, {elapsed:?})"
    );
}

// -------------------------------------------------------------------------
// 2. Oracle equivalence of pruned search
// -------------------------------------------------------------------------

fn synthetic_corpus(seed: u64, ndocs: usize, vocab: u32) -> Vec<(String, SparseVec)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..ndocs)
        .map(|i| {
            let nnz = rng.gen_range(10..40);
            let mut ids = std::collections::BTreeSet::new();
            while ids.len() < nnz {
                ids.insert(rng.gen_range(0..vocab));
            }
            // heavy-tailed weights make bound-based pruning bite
            let entries: Vec<(u32, f64)> = ids
                .into_iter()
                .map(|t| (t, (rng.gen_range(0.0..3.0f64)).exp() * 0.1))
                .collect();
            (format!("d{i:05}"), SparseVec::from_entries(entries).unwrap())
        })
        .collect()
}

#[test]
fn criterion_02_pruned_search_equals_exhaustive_oracle() {
    let start = Instant::now();
    let ndocs = 10_000;
    let nqueries = 1_000;
    let k = 100;
    let vocab = 2000u32;
    let corpus = synthetic_corpus(20_000, ndocs, vocab);

    for mode in [QuantizationMode::None, QuantizationMode::Fixed16] {
        let idx = InvertedIndex::build(corpus.clone(), 64, mode).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let mut queries_with_skips = 0usize;
        let mut total_skips = 0u64;
        for qi in 0..nqueries {
            let nterms = rng.gen_range(1..=16);
            let mut ids = std::collections::BTreeSet::new();
            while ids.len() < nterms {
                ids.insert(rng.gen_range(0..vocab));
            }
            let entries: Vec<(u32, f64)> = ids
                .into_iter()
                .map(|t| (t, rng.gen_range(0.05..2.0)))
                .collect();
            let q: QueryVec = truncate_query(&SparseVec::from_entries(entries).unwrap(), 16);
            let expected = search_exhaustive(&idx, &q, k);
            let (got, stats) = search_bmm(&idx, &q, k);
            assert_eq!(
                got, expected,
                "query {qi} mode {mode:?}: pruned result diverged from oracle"
            );
            if stats.blocks_skipped > 0 {
                queries_with_skips += 1;
                total_skips += stats.blocks_skipped;
            }
        }
        assert!(
            queries_with_skips > 0,
            "no query demonstrated block skipping in mode {mode:?}"
        );
        println!(
            "  mode {mode:?}: {nqueries} queries identical to oracle, {queries_with_skips} queries skipped {total_skips} blocks"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 120, "took {elapsed:?}, budget is 2 min");
    println!(
        "[criterion 2] PASS - block-max maxscore equals the exhaustive oracle on {ndocs} docs x {nqueries} queries at k={k}, both quantization modes ({elapsed:?})"
    );
}

// -------------------------------------------------------------------------
// 3. Closed-form loss checks
// -------------------------------------------------------------------------

#[test]
#[allow(clippy::approx_constant)] // 0.6931 and 0.3133 are the frozen fixture decimals
fn criterion_03_closed_form_losses() {
    // activation penalty vs dense double loop
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let dim = 24usize;
    for _ in 0..200 {
        let n = rng.gen_range(1..6);
        let reps: Vec<SparseVec> = (0..n)
            .map(|_| {
                let mut entries = Vec::new();
                for t in 0..dim as u32 {
                    if rng.gen_bool(0.4) {
                        entries.push((t, rng.gen_range(0.01..5.0)));
                    }
                }
                SparseVec::from_entries(entries).unwrap()
            })
            .collect();
        let mut brute = 0.0;
        for j in 0..dim {
            let mut mean = 0.0;
            for rep in &reps {
                mean += rep.get(j as u32).unwrap_or(0.0);
            }
            mean /= n as f64;
            brute += mean * mean;
        }
        let got = flops_loss(&reps);
        assert!(
            (got - brute).abs() < 1e-10,
            "activation penalty {got} vs brute force {brute}"
        );
    }

    // contrastive loss vs naive softmax
    let cfg = TrainConfig {
        k_q: 6,
        k_d: 6,
        norm_mode: NormMode::QNorm,
        ..TrainConfig::default()
    };
    for trial in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let b = rng.gen_range(2..6);
        let mk = |rng: &mut ChaCha8Rng| -> HeadOutput {
            let mut entries = Vec::new();
            for t in 0..10u32 {
                if rng.gen_bool(0.6) {
                    entries.push((t, rng.gen_range(0.1..3.0)));
                }
            }
            let v = SparseVec::from_entries(entries).unwrap();
            HeadOutput {
                basic: v.clone(),
                enhancement: vec![],
                final_rep: v,
            }
        };
        let batch = BatchReps {
            queries: (0..b).map(|_| mk(&mut rng)).collect(),
            items: (0..b).map(|_| mk(&mut rng)).collect(),
        };
        let mut naive = 0.0;
        for i in 0..b {
            let scores: Vec<f64> = (0..b)
                .map(|j| similarity_lfw(&batch.queries[i].final_rep, &batch.items[j].final_rep, &cfg))
                .collect();
            let denom: f64 = scores.iter().map(|s| s.exp()).sum();
            naive += -(scores[i].exp() / denom).ln();
        }
        naive /= b as f64;
        let got = infonce_lfw(&batch, &cfg).unwrap();
        assert!((got - naive).abs() < 1e-10, "infonce {got} vs naive {naive}");
    }

    // frozen fixtures: uniform scores and the 1-vs-0 margin
    let unit = HeadOutput {
        basic: sv(&[(0, 1.0)]),
        enhancement: vec![],
        final_rep: sv(&[(0, 1.0)]),
    };
    let uniform = BatchReps {
        queries: vec![unit.clone(), unit.clone()],
        items: vec![unit.clone(), unit.clone()],
    };
    let nn_cfg = TrainConfig {
        norm_mode: NormMode::NoNorm,
        ..cfg.clone()
    };
    let ln2 = infonce_lfw(&uniform, &nn_cfg).unwrap();
    assert!((ln2 - 0.6931).abs() < 1e-4, "uniform-batch loss {ln2}");

    let q = |id: u32| HeadOutput {
        basic: sv(&[(id, 1.0)]),
        enhancement: vec![],
        final_rep: sv(&[(id, 1.0)]),
    };
    let disjoint = BatchReps {
        queries: vec![q(0), q(1)],
        items: vec![q(0), q(1)],
    };
    let margin = infonce_lfw(&disjoint, &nn_cfg).unwrap();
    assert!((margin - 0.3133).abs() < 1e-4, "margin-batch loss {margin}");

    println!(
        "[criterion 3] PASS - activation penalty matches brute force to 1e-10, \
         contrastive loss matches naive softmax to 1e-10, ln2={ln2:.4} and margin={margin:.4} fixtures hold to 1e-4"
    );
}

// -------------------------------------------------------------------------
// 4. Literal residual structure
// -------------------------------------------------------------------------

#[test]
fn criterion_04_literal_residual_structure() {
    let v = 24usize;
    let mut violations = 0usize;
    let mut encodings = 0usize;
    for round in 0..1000u64 {
        let params = ModelParams::init(v, 4, round % 50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(round.wrapping_mul(31).wrapping_add(5));
        let len = rng.gen_range(1..6);
        let ids: Vec<u32> = (0..len).map(|_| rng.gen_range(0..v as u32)).collect();
        let s = seq(&ids);
        let tr = encode_traced(&params, &s, EncodeMode::Prosper).unwrap();
        let lit = LiteralIndicator::from_seq(&s);
        let basic = tr.output.basic.to_dense(v);
        let final_rep = tr.output.final_rep.to_dense(v);
        let w_prime = &tr.output.enhancement;
        let max_wp = w_prime.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        for dim in 0..v as u32 {
            let b = basic[dim as usize];
            let f = final_rep[dim as usize];
            if lit.contains(dim) {
                let comp = f - b;
                let expected = max_wp - w_prime[dim as usize];
                if (comp - expected).abs() > 1e-9 || comp < -1e-12 {
                    violations += 1;
                }
            } else if f != b {
                violations += 1;
            }
        }
        // compensation is monotone in -w'
        let lit_dims: Vec<u32> = lit.dims().to_vec();
        for &a in &lit_dims {
            for &b in &lit_dims {
                let (wa, wb) = (w_prime[a as usize], w_prime[b as usize]);
                let ca = final_rep[a as usize] - basic[a as usize];
                let cb = final_rep[b as usize] - basic[b as usize];
                if wa <= wb && ca < cb - 1e-12 {
                    violations += 1;
                }
            }
        }
        encodings += 1;
    }
    assert_eq!(violations, 0, "{violations} structural violations");
    println!(
        "[criterion 4] PASS - literal residual structure holds on {encodings} random encodings with zero violations"
    );
}

// -------------------------------------------------------------------------
// 5. Windowed pooling contract (exhaustive)
// -------------------------------------------------------------------------

#[test]
fn criterion_05_windowed_pooling_contract_exhaustive() {
    let mut cases = 0usize;
    // all vectors of length <= 6 with weights from {0,1,2,3}; 0 = absent
    for assignment in 0..4096u32 {
        let mut entries = Vec::new();
        for dim in 0..6u32 {
            let w = (assignment >> (2 * dim)) & 3;
            if w > 0 {
                entries.push((dim, f64::from(w)));
            }
        }
        let vec = SparseVec::from_entries(entries).unwrap();
        for k in 1..=6usize {
            let once = conditional_topk(&vec, k);
            assert!(once.nnz() <= k, "cardinality bound violated");
            if vec.nnz() <= k {
                assert_eq!(once, vec, "identity below k violated");
            }
            let twice = conditional_topk(&once, k);
            assert_eq!(twice, once, "idempotence violated");
            cases += 1;
        }
    }
    println!("[criterion 5] PASS - windowed pooling contract verified exhaustively on {cases} cases");
}

// -------------------------------------------------------------------------
// 6. Ranking invariance under query scaling
// -------------------------------------------------------------------------

#[test]
fn criterion_06_query_scaling_never_changes_ordering() {
    let corpus = synthetic_corpus(606, 300, 64);
    let idx = InvertedIndex::build(corpus, 8, QuantizationMode::None).unwrap();
    let order = |r: &SearchResult| -> Vec<u32> { r.hits.iter().map(|&(o, _)| o).collect() };
    let mut trials = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    while trials < 100 {
        let nterms = rng.gen_range(1..10);
        let mut ids = std::collections::BTreeSet::new();
        while ids.len() < nterms {
            ids.insert(rng.gen_range(0..64u32));
        }
        let entries: Vec<(u32, f64)> = ids.into_iter().map(|t| (t, rng.gen_range(0.01..4.0))).collect();
        let base = SparseVec::from_entries(entries).unwrap();
        let alpha: f64 = rng.gen_range(0.001..1000.0);
        let q = truncate_query(&base, 16);
        let qs = truncate_query(&base.scale(alpha).unwrap(), 16);
        let k = rng.gen_range(1..30);
        assert_eq!(
            order(&search_exhaustive(&idx, &q, k)),
            order(&search_exhaustive(&idx, &qs, k)),
            "exhaustive ordering changed under scaling by {alpha}"
        );
        assert_eq!(
            order(&search_bmm(&idx, &q, k).0),
            order(&search_bmm(&idx, &qs, k).0),
            "pruned ordering changed under scaling by {alpha}"
        );
        trials += 1;
    }
    println!("[criterion 6] PASS - query scaling preserved orderings in {trials} seeded trials on both search paths");
}

// -------------------------------------------------------------------------
// 7. Directional end-to-end on the planted-synonym dataset
// -------------------------------------------------------------------------

/// Frozen toy-run configuration; see the training defaults for provenance.
fn toy_train_config() -> TrainConfig {
    TrainConfig {
        k_q: 8,
        k_d: 16,
        lambda_q: 1e-3,
        lambda_d: 1e-4,
        warmup_steps_flops: 100,
        warmup_steps_lr: 20,
        lr: 1e-2,
        weight_decay: 0.01,
        batch_size: 32,
        epochs: 64,
        seed: 42,
        norm_mode: NormMode::QNorm,
        window_schedule: WindowSchedule::Fixed,
    }
}

struct ToyRun {
    data: prosper_core::synth::SynthData,
    vocab: prosper_core::corpus::Vocab,
    pairs: PairSet,
}

fn toy_dataset() -> ToyRun {
    let data = prosper_core::synth::generate(&prosper_core::synth::SynthConfig::default());
    let vocab = build_vocab(data.all_texts(), 2000).unwrap();
    let records: Vec<PairRecord> = data
        .train_pairs
        .iter()
        .map(|(qid, qtext, iid, itext)| PairRecord {
            query_id: qid.clone(),
            item_id: iid.clone(),
            query: tokenize(&vocab, qtext, 64).unwrap(),
            positive_item: tokenize(&vocab, itext, 64).unwrap(),
        })
        .collect();
    let pairs = PairSet { records };
    ToyRun { data, vocab, pairs }
}

#[test]
fn criterion_07_directional_end_to_end_beats_bm25() {
    let start = Instant::now();
    let run = toy_dataset();
    assert_eq!(run.vocab.size(), 2000, "vocabulary must saturate its cap");
    assert_eq!(run.data.items.len(), 2000);
    assert_eq!(run.data.train_pairs.len(), 500);
    assert_eq!(run.data.test_queries.len(), 100);

    let params = ModelParams::init(run.vocab.size(), 32, 42).unwrap();
    let mut trainer = Trainer::new(params, toy_train_config(), EncodeMode::Prosper).unwrap();
    trainer.train_epochs(&run.pairs, |_| {}).unwrap();

    // encode and index the items
    let vecs: Vec<(String, SparseVec)> = run
        .data
        .items
        .iter()
        .map(|(id, text)| {
            let s = tokenize(&run.vocab, text, 64).unwrap();
            (id.clone(), encode(&trainer.params, &s, EncodeMode::Prosper).unwrap().final_rep)
        })
        .collect();
    let idx = InvertedIndex::build(vecs, 64, QuantizationMode::None).unwrap();

    let mut learned_run = RunFile::default();
    for (qid, text) in &run.data.test_queries {
        let s = tokenize(&run.vocab, text, 64).unwrap();
        let rep = encode(&trainer.params, &s, EncodeMode::Prosper).unwrap().final_rep;
        let (res, _) = search_bmm(&idx, &truncate_query(&rep, 16), 100);
        let resolved: Vec<(String, f64)> = res
            .hits
            .iter()
            .map(|&(ord, score)| (idx.doc_id(ord).to_string(), score))
            .collect();
        learned_run.push_query(qid, &resolved);
    }

    // BM25 baseline over the same corpus and queries
    let bm25 = Bm25Index::build(
        run.data
            .items
            .iter()
            .map(|(id, text)| (id.clone(), tokenize(&run.vocab, text, 64).unwrap())),
        Bm25Params::default(),
    )
    .unwrap();
    let mut bm25_run = RunFile::default();
    for (qid, text) in &run.data.test_queries {
        let s = tokenize(&run.vocab, text, 64).unwrap();
        let res = bm25.search(&s, 100);
        let resolved: Vec<(String, f64)> = res
            .hits
            .iter()
            .map(|&(ord, score)| (bm25.doc_id(ord).to_string(), score))
            .collect();
        bm25_run.push_query(qid, &resolved);
    }

    let qrels = Qrels::from_pairs(run.data.qrels.iter().cloned()).unwrap();
    let learned = recall_at_k(&learned_run, &qrels, 10).unwrap();
    let baseline = recall_at_k(&bm25_run, &qrels, 10).unwrap();
    let elapsed = start.elapsed();
    assert!(
        learned >= baseline + 0.10,
        "recall@10 gap too small: learned {learned:.3} vs bm25 {baseline:.3}"
    );
    assert!(elapsed.as_secs() < 600, "took {elapsed:?}, budget is 10 min");
    println!(
        "[criterion 7] PASS - trained recall@10 {learned:.3} vs bm25 {baseline:.3} \
         (gap {:+.1} points, threshold 10.0, {elapsed:?})",
        (learned - baseline) * 100.0
    );
}

// -------------------------------------------------------------------------
// 8. Sparsification dynamics
// -------------------------------------------------------------------------

fn run_500_steps(run: &ToyRun, k_q: usize, k_d: usize) -> (f64, f64, Trainer) {
    let cfg = TrainConfig {
        k_q,
        k_d,
        ..toy_train_config()
    };
    let params = ModelParams::init(run.vocab.size(), 32, 42).unwrap();
    let mut trainer = Trainer::new(params, cfg.clone(), EncodeMode::Prosper).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..run.pairs.len()).collect();
    let mut steps = 0usize;
    let last = 'outer: loop {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<PairRecord> = chunk.iter().map(|&i| run.pairs.records[i].clone()).collect();
            let m = trainer.train_step(&batch).unwrap();
            steps += 1;
            if steps >= 500 {
                break 'outer (m.nnz_q_mean, m.nnz_d_mean);
            }
        }
    };
    (last.0, last.1, trainer)
}

#[test]
fn criterion_08_sparsification_dynamics() {
    let start = Instant::now();
    let run = toy_dataset();
    let (on_q, on_d, trainer) = run_500_steps(&run, 8, 16);
    let (off_q, off_d, _) = run_500_steps(&run, 2000, 2000);
    assert!(
        on_q <= off_q && on_d <= off_d,
        "windowed run must not be denser: on ({on_q:.1}, {on_d:.1}) vs off ({off_q:.1}, {off_d:.1})"
    );

    // representations entering the similarity never exceed the window
    for record in run.pairs.records.iter().take(50) {
        let q = encode(&trainer.params, &record.query, EncodeMode::Prosper).unwrap().final_rep;
        let d = encode(&trainer.params, &record.positive_item, EncodeMode::Prosper)
            .unwrap()
            .final_rep;
        assert!(conditional_topk(&q, 8).nnz() <= 8);
        assert!(conditional_topk(&d, 16).nnz() <= 16);
    }
    let elapsed = start.elapsed();
    println!(
        "[criterion 8] PASS - activated dims after 500 steps: windowed ({on_q:.1}, {on_d:.1}) <= unwindowed ({off_q:.1}, {off_d:.1}); windowed reps capped at (8, 16) ({elapsed:?})"
    );
}

// -------------------------------------------------------------------------
// 9. BM25 hand fixture
// -------------------------------------------------------------------------

#[test]
fn criterion_09_bm25_hand_fixture() {
    // single-doc corpus, dl = avgdl, tf = 1, k1=1.2, b=0.75, delta=0.25:
    // contribution = idf * (2.2/2.2 + 0.25) = 1.25 * idf
    let index = Bm25Index::build(
        vec![("d0".to_string(), seq(&[1, 2, 3, 4]))],
        Bm25Params::default(),
    )
    .unwrap();
    let stats = index.stats();
    let got = prosper_core::search::bm25_score(stats, &seq(&[1]), &seq(&[1, 2, 3, 4]));
    let idf = ((1.0 - 1.0 + 0.5) / (1.0 + 0.5) + 1.0f64).ln();
    let expected = 1.25 * idf;
    assert!(
        (got - expected).abs() < 1e-9,
        "bm25 fixture: got {got}, expected {expected}"
    );
    println!("[criterion 9] PASS - bm25 single-doc fixture matches 1.25*idf to 1e-9 ({got:.12})");
}

// -------------------------------------------------------------------------
// 10. Persistence
// -------------------------------------------------------------------------

#[test]
fn criterion_10_persistence_round_trips_and_corruption() {
    // model file: bit-exact round trip
    let model = ModelParams::init(64, 8, 99).unwrap();
    let mut bytes = Vec::new();
    model.save(&mut bytes).unwrap();
    let loaded = ModelParams::load(std::io::Cursor::new(&bytes)).unwrap();
    let mut bytes2 = Vec::new();
    loaded.save(&mut bytes2).unwrap();
    assert_eq!(bytes, bytes2, "model file round trip not bit-exact");

    let mut corrupted = bytes.clone();
    let mid = corrupted.len() / 2;
    corrupted.truncate(mid);
    let err = ModelParams::load(std::io::Cursor::new(&corrupted)).unwrap_err().to_string();
    assert!(err.contains("offset"), "model corruption error lacks a position: {err}");

    // index file: structural and bit-exact round trip on 1k random docs
    let corpus = synthetic_corpus(10_100, 1000, 300);
    for mode in [QuantizationMode::None, QuantizationMode::Fixed16] {
        let idx = InvertedIndex::build(corpus.clone(), 32, mode).unwrap();
        let mut ib = Vec::new();
        idx.save(&mut ib).unwrap();
        let back = InvertedIndex::load(std::io::Cursor::new(&ib)).unwrap();
        assert_eq!(back, idx, "index structural round trip failed in {mode:?}");
        let mut ib2 = Vec::new();
        back.save(&mut ib2).unwrap();
        assert_eq!(ib, ib2, "index file round trip not bit-exact in {mode:?}");

        let mut bad = ib.clone();
        bad[2] ^= 0xff; // magic
        assert!(InvertedIndex::load(std::io::Cursor::new(&bad)).is_err());
        let mut trunc = ib.clone();
        trunc.truncate(ib.len() - 3);
        let err = InvertedIndex::load(std::io::Cursor::new(&trunc)).unwrap_err().to_string();
        assert!(err.contains("offset"), "index corruption error lacks a position: {err}");
    }
    println!("[criterion 10] PASS - model and index files round-trip bit-exactly; corrupted files rejected with positioned errors");
}
