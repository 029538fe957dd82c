//! Seeded synthetic inputs shared by the benchmarks.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tinytok_core::{TokenizerModel, TokenizerOptions, WeightMatrix};

const WORDS: &[&str] = &[
    "the",
    "little",
    "bird",
    "sang",
    "under",
    "a",
    "big",
    "tree",
    "एक",
    "छोटी",
    "चिड़िया",
    "पेड़",
    "पर",
    "बैठी",
    "थी",
    "और",
    "गाना",
    "गा",
    "रही",
    "rabbit",
    "ran",
    "home",
    "खुश",
    "दोस्त",
];

pub fn story(words: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..words)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn stories(n: usize, words: usize, seed: u64) -> Vec<String> {
    (0..n).map(|i| story(words, seed.wrapping_add(i as u64))).collect()
}

pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> WeightMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..rows * cols)
        .map(|_| {
            let u1: f64 = 1.0 - rng.random::<f64>();
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect();
    WeightMatrix::new("bench", rows, cols, values).expect("valid shape")
}

/// Byte-level BPE trained greedily on `corpus` for `merges` rounds.
pub fn trained_tokenizer(corpus: &[String], merges: usize) -> TokenizerModel {
    let printable = |b: u32| (0x21..=0x7e).contains(&b) || (0xa1..=0xac).contains(&b) || (0xae..=0xff).contains(&b);
    let mut extra = 0;
    let byte_char: Vec<String> = (0u32..256)
        .map(|b| {
            if printable(b) {
                char::from_u32(b).unwrap().to_string()
            } else {
                extra += 1;
                char::from_u32(255 + extra).unwrap().to_string()
            }
        })
        .collect();
    let mut vocab: HashMap<String, u32> = byte_char
        .iter()
        .enumerate()
        .map(|(i, c)| (c.clone(), i as u32))
        .collect();
    let mut words: HashMap<Vec<String>, u64> = HashMap::new();
    for text in corpus {
        for (i, w) in text.split(' ').enumerate() {
            let chunk = if i == 0 { w.to_string() } else { format!(" {w}") };
            let syms = chunk.bytes().map(|b| byte_char[b as usize].clone()).collect();
            *words.entry(syms).or_default() += 1;
        }
    }
    let mut rules = Vec::new();
    for _ in 0..merges {
        let mut pairs: HashMap<(String, String), u64> = HashMap::new();
        for (syms, c) in &words {
            for p in syms.windows(2) {
                *pairs.entry((p[0].clone(), p[1].clone())).or_default() += c;
            }
        }
        let Some(best) = pairs
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
            .map(|p| p.0)
        else {
            break;
        };
        let joined = format!("{}{}", best.0, best.1);
        let next = vocab.len() as u32;
        vocab.entry(joined.clone()).or_insert(next);
        words = words
            .into_iter()
            .map(|(syms, c)| {
                let mut out = Vec::with_capacity(syms.len());
                let mut i = 0;
                while i < syms.len() {
                    if i + 1 < syms.len() && syms[i] == best.0 && syms[i + 1] == best.1 {
                        out.push(joined.clone());
                        i += 2;
                    } else {
                        out.push(syms[i].clone());
                        i += 1;
                    }
                }
                (out, c)
            })
            .fold(HashMap::new(), |mut acc, (k, c)| {
                *acc.entry(k).or_default() += c;
                acc
            });
        rules.push(best);
    }
    let opts = TokenizerOptions {
        byte_fallback: true,
        pre_split: true,
        ..TokenizerOptions::default()
    };
    TokenizerModel::new("bench", vocab, rules, opts).expect("consistent merges")
}
