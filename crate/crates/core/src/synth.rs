//! Planted-synonym synthetic dataset.
//!
//! Items mix a few "pool" words (the query-able part of the vocabulary,
//! every one of which has a planted synonym) with several "tail" filler
//! words that only ever occur in item texts. Queries sample pool words from
//! their target item and swap each for its synonym with a fixed
//! probability. Swapped words never occur in any item text, so lexical
//! matching has nothing to match on them, while the training pairs repeat
//! each synonym often enough to learn the mapping.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bytesio::atomic_write;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub num_items: usize,
    pub num_train: usize,
    pub num_test: usize,
    /// Query-able words; each has a planted synonym.
    pub num_pool_words: usize,
    /// Item-only filler vocabulary, assigned round-robin so every word
    /// occurs in the corpus.
    pub num_tail_words: usize,
    pub item_pool_len: (usize, usize),
    pub item_tail_len: (usize, usize),
    pub query_len: (usize, usize),
    /// Probability that a query word is swapped for its synonym.
    pub synonym_swap_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_items: 2000,
            num_train: 500,
            num_test: 100,
            num_pool_words: 80,
            num_tail_words: 2100,
            item_pool_len: (2, 3),
            item_tail_len: (2, 4),
            query_len: (2, 3),
            synonym_swap_prob: 0.7,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    /// (item_id, text)
    pub items: Vec<(String, String)>,
    /// (query_id, query_text, item_id, item_text)
    pub train_pairs: Vec<(String, String, String, String)>,
    /// (query_id, text)
    pub test_queries: Vec<(String, String)>,
    /// (query_id, relevant item_id)
    pub qrels: Vec<(String, String)>,
}

fn pool_word(i: usize) -> String {
    format!("w{i:04}")
}

fn synonym_word(i: usize) -> String {
    format!("s{i:04}")
}

fn tail_word(i: usize) -> String {
    format!("t{i:04}")
}

fn sample_distinct(rng: &mut ChaCha8Rng, n: usize, len: usize) -> Vec<usize> {
    let mut picks: Vec<usize> = Vec::with_capacity(len);
    while picks.len() < len {
        let p = rng.gen_range(0..n);
        if !picks.contains(&p) {
            picks.push(p);
        }
    }
    picks
}

pub fn generate(cfg: &SynthConfig) -> SynthData {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // shuffled round-robin over tail words guarantees full coverage
    let mut tail_order: Vec<usize> = (0..cfg.num_tail_words).collect();
    use rand::seq::SliceRandom;
    tail_order.shuffle(&mut rng);
    let mut tail_cursor = 0usize;

    let mut items = Vec::with_capacity(cfg.num_items);
    let mut item_pool: Vec<Vec<usize>> = Vec::with_capacity(cfg.num_items);
    for i in 0..cfg.num_items {
        let pool_len = rng.gen_range(cfg.item_pool_len.0..=cfg.item_pool_len.1);
        let pool = sample_distinct(&mut rng, cfg.num_pool_words, pool_len);
        let tail_len = rng.gen_range(cfg.item_tail_len.0..=cfg.item_tail_len.1);
        let mut words: Vec<String> = pool.iter().map(|&w| pool_word(w)).collect();
        for _ in 0..tail_len {
            words.push(tail_word(tail_order[tail_cursor % cfg.num_tail_words]));
            tail_cursor += 1;
        }
        items.push((format!("item{i:05}"), words.join(" ")));
        item_pool.push(pool);
    }

    let make_query = |rng: &mut ChaCha8Rng, target: usize| -> String {
        let pool = &item_pool[target];
        let len = rng.gen_range(cfg.query_len.0..=cfg.query_len.1).min(pool.len());
        let picks = sample_distinct(rng, pool.len(), len);
        picks
            .iter()
            .map(|&p| {
                let w = pool[p];
                if rng.gen_bool(cfg.synonym_swap_prob) {
                    synonym_word(w)
                } else {
                    pool_word(w)
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut train_pairs = Vec::with_capacity(cfg.num_train);
    for qi in 0..cfg.num_train {
        let target = rng.gen_range(0..cfg.num_items);
        let qtext = make_query(&mut rng, target);
        train_pairs.push((
            format!("tq{qi:05}"),
            qtext,
            items[target].0.clone(),
            items[target].1.clone(),
        ));
    }

    let mut test_queries = Vec::with_capacity(cfg.num_test);
    let mut qrels = Vec::with_capacity(cfg.num_test);
    for qi in 0..cfg.num_test {
        let target = rng.gen_range(0..cfg.num_items);
        let qtext = make_query(&mut rng, target);
        let qid = format!("q{qi:05}");
        test_queries.push((qid.clone(), qtext));
        qrels.push((qid, items[target].0.clone()));
    }

    SynthData {
        items,
        train_pairs,
        test_queries,
        qrels,
    }
}

impl SynthData {
    /// Write the dataset files: items.jsonl, train_pairs.tsv,
    /// test_queries.jsonl, qrels.tsv.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut items = String::new();
        for (id, text) in &self.items {
            items.push_str(&serde_json::json!({"id": id, "text": text}).to_string());
            items.push('\n');
        }
        atomic_write(&dir.join("items.jsonl"), items.as_bytes())?;

        let mut pairs = String::new();
        for (qid, qtext, iid, itext) in &self.train_pairs {
            pairs.push_str(&format!("{qid}\t{qtext}\t{iid}\t{itext}\n"));
        }
        atomic_write(&dir.join("train_pairs.tsv"), pairs.as_bytes())?;

        let mut queries = String::new();
        for (id, text) in &self.test_queries {
            queries.push_str(&serde_json::json!({"id": id, "text": text}).to_string());
            queries.push('\n');
        }
        atomic_write(&dir.join("test_queries.jsonl"), queries.as_bytes())?;

        let mut qrels = String::new();
        for (qid, iid) in &self.qrels {
            qrels.push_str(&format!("{qid}\t{iid}\n"));
        }
        atomic_write(&dir.join("qrels.tsv"), qrels.as_bytes())?;
        Ok(())
    }

    /// Every text in the dataset, for vocabulary construction.
    pub fn all_texts(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for (_, qtext, _, itext) in &self.train_pairs {
            out.push(qtext);
            out.push(itext);
        }
        for (_, text) in &self.items {
            out.push(text);
        }
        out
    }
}
