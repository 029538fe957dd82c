//! Token frequency distributions and Rényi entropy.
//!
//! H_α = log(Σ p_i^α) / (1 − α) for α ≠ 1, and the Shannon entropy
//! −Σ p_i log p_i at α = 1. Zero-count tokens are ignored (0·log 0 = 0).
//! Sums use compensated accumulation because real vocabularies hold
//! hundreds of thousands of entries with heavily skewed counts.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::StoryCorpus;
use crate::error::{Error, Result};
use crate::stats::KahanSum;
use crate::tokenize::{TokenId, TokenizerModel};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrequencyDistribution {
    counts: HashMap<TokenId, u64>,
    total: u64,
}

impl FrequencyDistribution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts<I: IntoIterator<Item = (TokenId, u64)>>(counts: I) -> Self {
        let mut d = Self::new();
        for (id, c) in counts {
            d.add(id, c);
        }
        d
    }

    /// Distribution whose i-th token has count `counts[i]`.
    pub fn from_slice(counts: &[u64]) -> Self {
        Self::from_counts(counts.iter().enumerate().map(|(i, &c)| (i as TokenId, c)))
    }

    pub fn add(&mut self, id: TokenId, count: u64) {
        *self.counts.entry(id).or_insert(0) += count;
        self.total += count;
    }

    pub fn merge(mut self, other: FrequencyDistribution) -> Self {
        for (id, c) in other.counts {
            self.add(id, c);
        }
        self
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, id: TokenId) -> u64 {
        self.counts.get(&id).copied().unwrap_or(0)
    }

    /// Number of token types with a positive count.
    pub fn support(&self) -> usize {
        self.counts.values().filter(|&&c| c > 0).count()
    }

    /// Positive counts in ascending order, so summation order does not
    /// depend on hash-map iteration order.
    fn sorted_counts(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.counts.values().copied().filter(|&c| c > 0).collect();
        v.sort_unstable();
        v
    }
}

/// Counts every token id emitted by `encode` over the corpus.
pub fn build_distribution(model: &TokenizerModel, corpus: &StoryCorpus) -> Result<FrequencyDistribution> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("cannot build a distribution from an empty corpus"));
    }
    corpus
        .records
        .par_iter()
        .map(|r| {
            let mut d = FrequencyDistribution::new();
            for id in model.encode(&r.text)? {
                d.add(id, 1);
            }
            Ok(d)
        })
        .try_reduce(FrequencyDistribution::new, |a, b| Ok(a.merge(b)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyQuery {
    pub alpha: f64,
    pub log_base: f64,
}

impl EntropyQuery {
    pub fn bits(alpha: f64) -> Self {
        EntropyQuery { alpha, log_base: 2.0 }
    }
}

pub fn renyi_entropy(dist: &FrequencyDistribution, q: EntropyQuery) -> Result<f64> {
    if !q.alpha.is_finite() || q.alpha <= 0.0 {
        return Err(Error::invalid(
            "alpha",
            format!("must be a positive finite number, got {}", q.alpha),
        ));
    }
    if !q.log_base.is_finite() || q.log_base <= 1.0 {
        return Err(Error::invalid("log_base", format!("must exceed 1, got {}", q.log_base)));
    }
    if dist.total == 0 {
        return Err(Error::EmptyInput("entropy of a distribution with no counts"));
    }
    let total = dist.total as f64;
    let counts = dist.sorted_counts();
    let ln_base = q.log_base.ln();
    let h_nats = if q.alpha == 1.0 {
        let s: KahanSum = counts
            .iter()
            .map(|&c| {
                let p = c as f64 / total;
                -p * p.ln()
            })
            .collect();
        s.total()
    } else {
        // Σ p^α = Σ c^α / total^α, evaluated in log space to avoid
        // overflow for large counts and α.
        let ln_total = total.ln();
        let s: KahanSum = counts
            .iter()
            .map(|&c| (q.alpha * ((c as f64).ln() - ln_total)).exp())
            .collect();
        s.total().ln() / (1.0 - q.alpha)
    };
    Ok((h_nats / ln_base).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyRow {
    pub alpha: f64,
    pub entropy: f64,
}

/// H_α for each α, sorted by α.
pub fn entropy_sweep(dist: &FrequencyDistribution, alphas: &[f64], log_base: f64) -> Result<Vec<EntropyRow>> {
    let mut alphas = alphas.to_vec();
    alphas.sort_by(f64::total_cmp);
    alphas
        .into_iter()
        .map(|alpha| {
            let entropy = renyi_entropy(dist, EntropyQuery { alpha, log_base })?;
            Ok(EntropyRow { alpha, entropy })
        })
        .collect()
}
