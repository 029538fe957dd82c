//! Lexical overlap metrics (ROUGE-1/2/L, sentence BLEU, METEOR) and
//! corpus-level pairwise diversity reports.
//!
//! All metrics work on word sequences: NFC text split on Unicode
//! whitespace. Scores are in [0, 1]; texts in morphologically rich
//! languages that share no surface word n-grams score exactly 0 under
//! every metric here, whatever their semantic similarity.

use std::collections::HashMap;
use std::hash::Hash;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::StoryCorpus;
use crate::error::{Error, Result};
use crate::stats;
use crate::text;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PrfScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrfScore {
    fn new(hits: usize, cand_total: usize, ref_total: usize) -> Self {
        if cand_total == 0 || ref_total == 0 {
            return PrfScore::default();
        }
        let precision = hits as f64 / cand_total as f64;
        let recall = hits as f64 / ref_total as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        PrfScore { precision, recall, f1 }
    }
}

/// n-gram multiset of a sequence.
pub fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Σ_g min(count_cand(g), count_ref(g)) together with the candidate and
/// reference n-gram totals.
pub fn clipped_overlap<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> (usize, usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let hits = cand
        .iter()
        .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
        .sum();
    let total = |len: usize| (len + 1).saturating_sub(n);
    (hits, total(candidate.len()), total(reference.len()))
}

pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> Result<PrfScore> {
    if n == 0 {
        return Err(Error::invalid("n", "ROUGE-N needs n >= 1"));
    }
    let (hits, c, r) = clipped_overlap(candidate, reference, n);
    Ok(PrfScore::new(hits, c, r))
}

/// Longest common subsequence length, O(|a|·|b|) time, O(|b|) memory.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L with β = 1.
pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> PrfScore {
    PrfScore::new(lcs_len(candidate, reference), candidate.len(), reference.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum Smoothing {
    None,
    /// Adds ε to zero n-gram match counts.
    Epsilon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_n: usize,
    pub smoothing: Smoothing,
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig {
            max_n: 4,
            smoothing: Smoothing::None,
        }
    }
}

/// Sentence-level BLEU with uniform weights and the standard brevity
/// penalty exp(1 − |ref|/|cand|) for short candidates.
pub fn bleu<T: Eq + Hash>(candidate: &[T], reference: &[T], cfg: BleuConfig) -> Result<f64> {
    if cfg.max_n == 0 {
        return Err(Error::invalid("max_n", "BLEU needs max_n >= 1"));
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=cfg.max_n {
        let (hits, total, _) = clipped_overlap(candidate, reference, n);
        let p = match cfg.smoothing {
            Smoothing::None => {
                if hits == 0 {
                    return Ok(0.0);
                }
                hits as f64 / total as f64
            }
            Smoothing::Epsilon(eps) => {
                let num = if hits == 0 { eps } else { hits as f64 };
                num / total.max(1) as f64
            }
        };
        log_sum += p.ln();
    }
    let c = candidate.len() as f64;
    let r = reference.len() as f64;
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    Ok(bp * (log_sum / cfg.max_n as f64).exp())
}

/// One METEOR matching stage: words align when their keys are equal.
pub trait MatchStage: Send + Sync {
    fn key(&self, word: &str) -> String;
}

/// Surface-identical words.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatch;

impl MatchStage for ExactMatch {
    fn key(&self, word: &str) -> String {
        word.to_string()
    }
}

/// Case-insensitive match, for scripts that have case.
#[derive(Debug, Clone, Copy, Default)]
pub struct LowercaseMatch;

impl MatchStage for LowercaseMatch {
    fn key(&self, word: &str) -> String {
        word.to_lowercase()
    }
}

/// Word alignment: `cand_to_ref[i]` is the reference position aligned with
/// candidate word i.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub cand_to_ref: Vec<Option<usize>>,
}

impl Alignment {
    pub fn matches(&self) -> usize {
        self.cand_to_ref.iter().flatten().count()
    }

    /// Minimal number of runs that are contiguous in both sequences.
    pub fn chunks(&self) -> usize {
        let mut chunks = 0;
        let mut prev: Option<usize> = None;
        for r in &self.cand_to_ref {
            match (prev, r) {
                (Some(p), Some(r)) if *r == p + 1 => {}
                (_, Some(_)) => chunks += 1,
                _ => {}
            }
            prev = *r;
        }
        chunks
    }
}

/// Aligns words stage by stage. Within a stage every candidate word takes an
/// unused reference word with the same key, preferring one that continues
/// the current chunk, then one whose successor also matches the next
/// candidate word, then the earliest. Each stage reaches the maximal number
/// of matches for its keys; chunk count is minimized greedily.
pub fn align<S: AsRef<str>>(candidate: &[S], reference: &[S], stages: &[&dyn MatchStage]) -> Alignment {
    let mut cand_to_ref: Vec<Option<usize>> = vec![None; candidate.len()];
    let mut ref_used = vec![false; reference.len()];
    for stage in stages {
        let ckeys: Vec<String> = candidate.iter().map(|w| stage.key(w.as_ref())).collect();
        let rkeys: Vec<String> = reference.iter().map(|w| stage.key(w.as_ref())).collect();
        let mut by_key: HashMap<&str, Vec<usize>> = HashMap::new();
        for (j, k) in rkeys.iter().enumerate() {
            if !ref_used[j] {
                by_key.entry(k.as_str()).or_default().push(j);
            }
        }
        for i in 0..candidate.len() {
            if cand_to_ref[i].is_some() {
                continue;
            }
            let Some(options) = by_key.get_mut(ckeys[i].as_str()) else {
                continue;
            };
            if options.is_empty() {
                continue;
            }
            let extends = i
                .checked_sub(1)
                .and_then(|p| cand_to_ref[p])
                .and_then(|pr| options.iter().position(|&j| j == pr + 1));
            let starts_run = || {
                options.iter().position(|&j| {
                    i + 1 < candidate.len()
                        && j + 1 < reference.len()
                        && !ref_used[j + 1]
                        && cand_to_ref[i + 1].is_none()
                        && ckeys[i + 1] == rkeys[j + 1]
                })
            };
            let pick = extends.or_else(starts_run).unwrap_or(0);
            let j = options.remove(pick);
            ref_used[j] = true;
            cand_to_ref[i] = Some(j);
        }
    }
    Alignment { cand_to_ref }
}

/// METEOR from an alignment: F_mean = 10PR/(R + 9P), fragmentation
/// penalty 0.5·(chunks/m)³.
pub fn meteor_from_alignment(alignment: &Alignment, cand_len: usize, ref_len: usize) -> f64 {
    let m = alignment.matches();
    if m == 0 || cand_len == 0 || ref_len == 0 {
        return 0.0;
    }
    let p = m as f64 / cand_len as f64;
    let r = m as f64 / ref_len as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let frag = alignment.chunks() as f64 / m as f64;
    let penalty = 0.5 * frag.powi(3);
    f_mean * (1.0 - penalty)
}

pub fn meteor<S: AsRef<str>>(candidate: &[S], reference: &[S], stages: &[&dyn MatchStage]) -> f64 {
    let a = align(candidate, reference, stages);
    meteor_from_alignment(&a, candidate.len(), reference.len())
}

pub fn meteor_exact<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    meteor(candidate, reference, &[&ExactMatch])
}

/// Hook for scorers that cannot be computed from surface words alone
/// (embedding-based similarity and the like).
pub trait ExternalScorer: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, candidate: &str, reference: &str) -> Result<f64>;
}

pub const METRICS: [&str; 5] = ["rouge1", "rouge2", "rougeL", "bleu", "meteor"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairScores {
    pub candidate: String,
    pub reference: String,
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub bleu: f64,
    pub meteor: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub external: Vec<f64>,
}

impl PairScores {
    pub fn values(&self) -> [f64; 5] {
        [self.rouge1, self.rouge2, self.rouge_l, self.bleu, self.meteor]
    }
}

/// Scores one candidate/reference text pair with every lexical metric
/// (F1 for the ROUGE variants).
pub fn score_pair(candidate: &str, reference: &str, bleu_cfg: BleuConfig) -> Result<[f64; 5]> {
    let c = text::words(candidate);
    let r = text::words(reference);
    Ok([
        rouge_n(&c, &r, 1)?.f1,
        rouge_n(&c, &r, 2)?.f1,
        rouge_l(&c, &r).f1,
        bleu(&c, &r, bleu_cfg)?,
        meteor_exact(&c, &r),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "count")]
pub enum Pairing {
    /// `k` distinct unordered story pairs drawn uniformly.
    Random(usize),
    /// Every unordered pair.
    All,
}

impl std::str::FromStr for Pairing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(Pairing::All);
        }
        let k = s
            .strip_prefix("random:")
            .and_then(|k| k.parse().ok())
            .ok_or_else(|| Error::invalid("pairs", format!("expected `all` or `random:<k>`, got {s:?}")))?;
        Ok(Pairing::Random(k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiversityReport {
    pub pairs: usize,
    pub per_pair: Vec<PairScores>,
    pub summary: Vec<MetricSummary>,
    pub metrics: Vec<String>,
    /// Pearson r between metric columns; `None` where a column is constant.
    pub correlation: Vec<Vec<Option<f64>>>,
}

/// Index pairs (i < j) selected by the pairing strategy.
pub fn select_pairs(n: usize, pairing: Pairing, seed: u64) -> Result<Vec<(usize, usize)>> {
    let available = n.saturating_mul(n.saturating_sub(1)) / 2;
    match pairing {
        Pairing::All => Ok((0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()),
        Pairing::Random(k) => {
            if k > available {
                return Err(Error::invalid(
                    "pairs",
                    format!("requested {k} pairs but {n} stories only give {available}"),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if available <= 50_000_000 {
                let mut picks: Vec<usize> = index::sample(&mut rng, available, k).into_vec();
                picks.sort_unstable();
                Ok(picks.into_iter().map(|t| decode_pair(n, t)).collect())
            } else {
                let mut seen = std::collections::HashSet::with_capacity(k);
                let mut out = Vec::with_capacity(k);
                while out.len() < k {
                    let a = rng.random_range(0..n);
                    let b = rng.random_range(0..n);
                    if a == b {
                        continue;
                    }
                    let p = (a.min(b), a.max(b));
                    if seen.insert(p) {
                        out.push(p);
                    }
                }
                out.sort_unstable();
                Ok(out)
            }
        }
    }
}

/// Maps a lexicographic pair index onto (i, j) with i < j.
fn decode_pair(n: usize, mut t: usize) -> (usize, usize) {
    let mut i = 0;
    loop {
        let row = n - 1 - i;
        if t < row {
            return (i, i + 1 + t);
        }
        t -= row;
        i += 1;
    }
}

#[derive(Default)]
pub struct DiversityOptions<'a> {
    pub bleu: BleuConfig,
    pub external: Vec<&'a dyn ExternalScorer>,
}

pub fn diversity_report(corpus: &StoryCorpus, pairing: Pairing, seed: u64) -> Result<DiversityReport> {
    diversity_report_with(corpus, pairing, seed, &DiversityOptions::default())
}

pub fn diversity_report_with(
    corpus: &StoryCorpus,
    pairing: Pairing,
    seed: u64,
    opts: &DiversityOptions<'_>,
) -> Result<DiversityReport> {
    if corpus.len() < 2 {
        return Err(Error::EmptyInput("diversity needs at least two stories"));
    }
    let pairs = select_pairs(corpus.len(), pairing, seed)?;
    let per_pair = pairs
        .par_iter()
        .map(|&(i, j)| {
            let c = &corpus.records[i];
            let r = &corpus.records[j];
            let [rouge1, rouge2, rouge_l, bleu, meteor] = score_pair(&c.text, &r.text, opts.bleu)?;
            let external = opts
                .external
                .iter()
                .map(|s| s.score(&c.text, &r.text))
                .collect::<Result<Vec<_>>>()?;
            Ok(PairScores {
                candidate: c.id.clone(),
                reference: r.id.clone(),
                rouge1,
                rouge2,
                rouge_l,
                bleu,
                meteor,
                external,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut metrics: Vec<String> = METRICS.iter().map(|s| s.to_string()).collect();
    metrics.extend(opts.external.iter().map(|s| s.name().to_string()));
    let columns: Vec<Vec<f64>> = (0..metrics.len())
        .map(|m| {
            per_pair
                .iter()
                .map(|p| if m < 5 { p.values()[m] } else { p.external[m - 5] })
                .collect()
        })
        .collect();
    let summary = metrics
        .iter()
        .zip(&columns)
        .map(|(name, col)| {
            Ok(MetricSummary {
                metric: name.clone(),
                mean: stats::mean(col)?,
                std: if col.len() > 1 { stats::sample_std(col)? } else { 0.0 },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let correlation = columns
        .iter()
        .map(|a| columns.iter().map(|b| stats::pearson(a, b).ok()).collect())
        .collect();
    Ok(DiversityReport {
        pairs: per_pair.len(),
        per_pair,
        summary,
        metrics,
        correlation,
    })
}
