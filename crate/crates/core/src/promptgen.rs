//! Unique prompt generation.
//!
//! Draws (noun, verb, adjective, feature) index tuples uniformly at random
//! and keeps a draw only if neither its four-index key nor (in strict mode)
//! its noun/verb/adjective triplet has been used before. Rejected draws are
//! counted. Because the loop would spin forever once the key space is
//! exhausted, capacity is checked up front and a rejection budget of
//! `target × 1000` bounds the run.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptLexicon {
    pub nouns: Vec<String>,
    pub verbs: Vec<String>,
    pub adjectives: Vec<String>,
    pub features: Vec<String>,
}

fn check_unique(name: &'static str, words: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for w in words {
        if w.trim().is_empty() {
            return Err(Error::invalid(name, "contains an empty entry"));
        }
        if !seen.insert(w) {
            return Err(Error::invalid(name, format!("{w:?} appears twice")));
        }
    }
    Ok(())
}

impl PromptLexicon {
    pub fn new(nouns: Vec<String>, verbs: Vec<String>, adjectives: Vec<String>, features: Vec<String>) -> Result<Self> {
        check_unique("nouns", &nouns)?;
        check_unique("verbs", &verbs)?;
        check_unique("adjectives", &adjectives)?;
        check_unique("features", &features)?;
        Ok(PromptLexicon {
            nouns,
            verbs,
            adjectives,
            features,
        })
    }

    /// Reads `nouns.txt`, `verbs.txt`, `adjectives.txt` (one word per line)
    /// and `features.json`, which is either a list of strings or an object
    /// of per-language lists. For the object form `lang` selects the list,
    /// falling back to `"en"`.
    pub fn load(dir: &Path, lang: &str) -> Result<Self> {
        let read_list = |name: &str| -> Result<Vec<String>> {
            let path = dir.join(name);
            let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            Ok(raw
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_owned)
                .collect())
        };
        let path = dir.join("features.json");
        let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Features {
            List(Vec<String>),
            ByLang(std::collections::BTreeMap<String, Vec<String>>),
        }
        let features = match serde_json::from_str(&raw).map_err(|e| Error::format(&path, e.to_string()))? {
            Features::List(v) => v,
            Features::ByLang(mut m) => m
                .remove(lang)
                .or_else(|| m.remove("en"))
                .ok_or_else(|| Error::format(&path, format!("no feature list for {lang:?} or \"en\"")))?,
        };
        Self::new(
            read_list("nouns.txt")?,
            read_list("verbs.txt")?,
            read_list("adjectives.txt")?,
            features,
        )
    }

    pub fn sizes(&self) -> LexiconSizes {
        LexiconSizes {
            nouns: self.nouns.len(),
            verbs: self.verbs.len(),
            adjectives: self.adjectives.len(),
            features: self.features.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconSizes {
    pub nouns: usize,
    pub verbs: usize,
    pub adjectives: usize,
    pub features: usize,
}

impl LexiconSizes {
    pub fn triplets(&self) -> u64 {
        (self.nouns as u64)
            .saturating_mul(self.verbs as u64)
            .saturating_mul(self.adjectives as u64)
    }

    pub fn quads(&self) -> u64 {
        self.triplets().saturating_mul(self.features as u64)
    }

    pub fn capacity(&self, mode: UniquenessMode) -> u64 {
        match mode {
            UniquenessMode::Strict => self.triplets(),
            UniquenessMode::QuadOnly => self.quads(),
        }
    }

    /// Digits per index in serialized ids (at least four).
    pub fn id_width(&self) -> usize {
        let largest = [self.nouns, self.verbs, self.adjectives, self.features]
            .into_iter()
            .max()
            .unwrap_or(0)
            .saturating_sub(1);
        largest.to_string().len().max(4)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UniquenessMode {
    /// Both the four-index key and the noun/verb/adjective triplet must be new.
    #[default]
    Strict,
    /// Only the four-index key must be new.
    QuadOnly,
}

impl std::str::FromStr for UniquenessMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(UniquenessMode::Strict),
            "quad" | "quad-only" => Ok(UniquenessMode::QuadOnly),
            other => Err(Error::invalid(
                "mode",
                format!("expected strict or quad-only, got {other:?}"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PromptKey {
    pub noun: usize,
    pub verb: usize,
    pub adjective: usize,
    pub feature: usize,
}

impl PromptKey {
    pub fn triplet(&self) -> (usize, usize, usize) {
        (self.noun, self.verb, self.adjective)
    }

    /// Zero-padded, dash-separated index concatenation, e.g.
    /// `0007-0123-0045-0210`. Fixed width keeps the encoding injective.
    pub fn quad_id(&self, width: usize) -> String {
        format!(
            "{:0w$}-{:0w$}-{:0w$}-{:0w$}",
            self.noun,
            self.verb,
            self.adjective,
            self.feature,
            w = width
        )
    }

    pub fn triplet_id(&self, width: usize) -> String {
        format!("{:0w$}-{:0w$}-{:0w$}", self.noun, self.verb, self.adjective, w = width)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptBatch {
    pub keys: Vec<PromptKey>,
    pub duplicate_count: u64,
    pub draws: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub id: String,
    pub prompt: String,
}

impl PromptBatch {
    pub fn render(&self, lex: &PromptLexicon, language: &str) -> Result<Vec<RenderedPrompt>> {
        let width = lex.sizes().id_width();
        self.keys
            .iter()
            .map(|k| {
                Ok(RenderedPrompt {
                    id: k.quad_id(width),
                    prompt: render_template(
                        language,
                        &lex.nouns[k.noun],
                        &lex.verbs[k.verb],
                        &lex.adjectives[k.adjective],
                        &lex.features[k.feature],
                    )?,
                })
            })
            .collect()
    }
}

struct Sampler {
    sizes: LexiconSizes,
    mode: UniquenessMode,
    used_quads: HashSet<(usize, usize, usize, usize)>,
    used_triplets: HashSet<(usize, usize, usize)>,
}

impl Sampler {
    fn new(sizes: LexiconSizes, mode: UniquenessMode, target: usize) -> Self {
        Sampler {
            sizes,
            mode,
            used_quads: HashSet::with_capacity(target),
            used_triplets: HashSet::with_capacity(if mode == UniquenessMode::Strict { target } else { 0 }),
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R, nouns: std::ops::Range<usize>) -> PromptKey {
        PromptKey {
            noun: rng.random_range(nouns),
            verb: rng.random_range(0..self.sizes.verbs),
            adjective: rng.random_range(0..self.sizes.adjectives),
            feature: rng.random_range(0..self.sizes.features),
        }
    }

    fn accept(&mut self, k: &PromptKey) -> bool {
        let quad = (k.noun, k.verb, k.adjective, k.feature);
        let fresh = !self.used_quads.contains(&quad)
            && (self.mode == UniquenessMode::QuadOnly || !self.used_triplets.contains(&k.triplet()));
        if fresh {
            self.used_quads.insert(quad);
            if self.mode == UniquenessMode::Strict {
                self.used_triplets.insert(k.triplet());
            }
        }
        fresh
    }
}

fn check_capacity(sizes: LexiconSizes, target: usize, mode: UniquenessMode) -> Result<()> {
    if target == 0 {
        return Ok(());
    }
    let capacity = sizes.capacity(mode);
    if sizes.features == 0 || (target as u64) > capacity {
        return Err(Error::Capacity {
            target: target as u64,
            capacity: if sizes.features == 0 { 0 } else { capacity },
        });
    }
    Ok(())
}

fn sample_range<R: Rng>(
    sizes: LexiconSizes,
    nouns: std::ops::Range<usize>,
    target: usize,
    mode: UniquenessMode,
    rng: &mut R,
) -> Result<PromptBatch> {
    let mut sampler = Sampler::new(sizes, mode, target);
    let mut keys = Vec::with_capacity(target);
    let mut duplicates = 0u64;
    let mut draws = 0u64;
    let budget = (target as u64).saturating_mul(1000);
    while keys.len() < target {
        let k = sampler.draw(rng, nouns.clone());
        draws += 1;
        if sampler.accept(&k) {
            keys.push(k);
        } else {
            duplicates += 1;
            if duplicates > budget {
                return Err(Error::CircuitBreaker {
                    accepted: keys.len(),
                    target,
                    rejections: duplicates,
                });
            }
        }
    }
    Ok(PromptBatch {
        keys,
        duplicate_count: duplicates,
        draws,
    })
}

/// Generates `target` unique prompt keys, deterministically for a seed.
pub fn generate_prompts(lex: &PromptLexicon, target: usize, seed: u64, mode: UniquenessMode) -> Result<PromptBatch> {
    generate_for_sizes(lex.sizes(), target, seed, mode)
}

pub fn generate_for_sizes(sizes: LexiconSizes, target: usize, seed: u64, mode: UniquenessMode) -> Result<PromptBatch> {
    check_capacity(sizes, target, mode)?;
    if target == 0 {
        return Ok(PromptBatch {
            keys: Vec::new(),
            duplicate_count: 0,
            draws: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_range(sizes, 0..sizes.nouns, target, mode, &mut rng)
}

/// Parallel variant: the noun index space is split into `workers`
/// contiguous ranges, each worker fills a share of the target proportional
/// to its range, so keys stay globally unique without shared state. The
/// result differs from [`generate_prompts`] for the same seed.
pub fn generate_prompts_partitioned(
    lex: &PromptLexicon,
    target: usize,
    seed: u64,
    mode: UniquenessMode,
    workers: usize,
) -> Result<PromptBatch> {
    let sizes = lex.sizes();
    check_capacity(sizes, target, mode)?;
    let workers = workers.clamp(1, sizes.nouns.max(1));
    let ranges: Vec<std::ops::Range<usize>> = (0..workers)
        .map(|w| (w * sizes.nouns / workers)..((w + 1) * sizes.nouns / workers))
        .collect();
    // largest-remainder apportionment of the target by noun share
    let mut shares: Vec<usize> = ranges.iter().map(|r| target * r.len() / sizes.nouns.max(1)).collect();
    let mut rest = target - shares.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..workers).collect();
    order.sort_by_key(|&w| std::cmp::Reverse((target * ranges[w].len()) % sizes.nouns.max(1)));
    for &w in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        let cap = sizes.capacity(mode) / sizes.nouns as u64 * ranges[w].len() as u64;
        if (shares[w] as u64) < cap {
            shares[w] += 1;
            rest -= 1;
        }
    }
    let parts = ranges
        .into_par_iter()
        .zip(shares)
        .enumerate()
        .map(|(w, (range, share))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(w as u64 + 1);
            if share == 0 {
                return Ok(PromptBatch {
                    keys: Vec::new(),
                    duplicate_count: 0,
                    draws: 0,
                });
            }
            sample_range(sizes, range, share, mode, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = PromptBatch {
        keys: Vec::with_capacity(target),
        duplicate_count: 0,
        draws: 0,
    };
    for p in parts {
        out.keys.extend(p.keys);
        out.duplicate_count += p.duplicate_count;
        out.draws += p.draws;
    }
    Ok(out)
}

pub fn language_name(code: &str) -> &str {
    match code {
        "hi" => "Hindi",
        "bn" => "Bengali",
        "mr" => "Marathi",
        "en" => "English",
        other => other,
    }
}

/// Renders the level-2+ story prompt. Slot values are inserted literally.
pub fn render_template(language: &str, noun: &str, verb: &str, adjective: &str, feature: &str) -> Result<String> {
    for (name, v) in [
        ("language", language),
        ("noun", noun),
        ("verb", verb),
        ("adjective", adjective),
        ("feature", feature),
    ] {
        if v.trim().is_empty() {
            return Err(Error::invalid("slot", format!("{name} is empty")));
        }
    }
    let language = language_name(language);
    let mut s = String::with_capacity(700);
    s.push_str("Write a short story in ");
    s.push_str(language);
    s.push_str(" suitable for 5-to-7-year-old children.\n\n");
    s.push_str(
        "Use simple, easy-to-understand words and limit the story to 3-4 short paragraphs (around 350-500 words).\n\n",
    );
    s.push_str("The story should feature a clear beginning, middle, and end.\n\n");
    s.push_str("Incorporate the verb \"");
    s.push_str(verb);
    s.push_str("\", the noun \"");
    s.push_str(noun);
    s.push_str("\", and the adjective \"");
    s.push_str(adjective);
    s.push_str("\" naturally into the story.\n\n");
    s.push_str("The story should also integrate the conclusion/tone \"");
    s.push_str(feature);
    s.push_str("\" through actions and outcomes, without directly stating the tone.\n\n");
    s.push_str("Remember to use only simple words and keep the story appropriate for the target age group.\n\n");
    s.push_str("Return the output as a JSON dictionary: { \"story\": \"your_generated_story\" }");
    Ok(s)
}

/// Slot words quoted in a rendered prompt: (noun, verb, adjective, feature).
pub fn extract_slots(prompt: &str) -> Option<(String, String, String, String)> {
    let quoted = |marker: &str, end: &str| -> Option<String> {
        let start = prompt.find(marker)? + marker.len();
        let len = prompt[start..].find(end)?;
        Some(prompt[start..start + len].to_string())
    };
    Some((
        quoted("\", the noun \"", "\", and the adjective \"")?,
        quoted("the verb \"", "\", the noun \"")?,
        quoted("\", and the adjective \"", "\" naturally into the story")?,
        quoted("conclusion/tone \"", "\" through actions and outcomes")?,
    ))
}

/// Recovers the key of a rendered prompt from its quoted slot words.
pub fn recover_key(lex: &PromptLexicon, prompt: &str) -> Option<PromptKey> {
    let (n, v, a, f) = extract_slots(prompt)?;
    Some(PromptKey {
        noun: lex.nouns.iter().position(|w| *w == n)?,
        verb: lex.verbs.iter().position(|w| *w == v)?,
        adjective: lex.adjectives.iter().position(|w| *w == a)?,
        feature: lex.features.iter().position(|w| *w == f)?,
    })
}

/// Expected rejected draws when sampling uniformly with replacement from
/// `space` keys until `target` distinct ones are accepted:
/// Σ_{i<target} space/(space − i) − target.
pub fn expected_duplicates(space: u64, target: u64) -> Option<f64> {
    if target > space || space == 0 {
        return None;
    }
    let m = space as f64;
    let mut acc = stats::KahanSum::new();
    for i in 0..target {
        acc.add(i as f64 / (m - i as f64));
    }
    Some(acc.total())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DedupEstimate {
    pub sizes: LexiconSizes,
    pub mode: UniquenessMode,
    pub target: usize,
    pub capacity: u64,
    pub feasible: bool,
    pub trials: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub min: Option<u64>,
    pub max: Option<u64>,
    pub analytic_mean: Option<f64>,
}

/// Monte-Carlo statistics of the rejected-draw count over seeded trials
/// (trial t uses seed `seed + t`), alongside the closed-form expectation.
/// An infeasible target yields a report with no statistics.
pub fn dedup_rate_estimate(
    sizes: LexiconSizes,
    target: usize,
    trials: usize,
    seed: u64,
    mode: UniquenessMode,
) -> Result<DedupEstimate> {
    let capacity = sizes.capacity(mode);
    let feasible = target as u64 <= capacity && (target == 0 || sizes.features > 0);
    let analytic_mean = expected_duplicates(capacity, target as u64);
    if !feasible || trials == 0 {
        return Ok(DedupEstimate {
            sizes,
            mode,
            target,
            capacity,
            feasible,
            trials: 0,
            mean: None,
            std: None,
            min: None,
            max: None,
            analytic_mean,
        });
    }
    let counts = (0..trials)
        .into_par_iter()
        .map(|t| generate_for_sizes(sizes, target, seed.wrapping_add(t as u64), mode).map(|b| b.duplicate_count))
        .collect::<Result<Vec<u64>>>()?;
    let xs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    Ok(DedupEstimate {
        sizes,
        mode,
        target,
        capacity,
        feasible,
        trials,
        mean: Some(stats::mean(&xs)?),
        std: Some(if xs.len() > 1 { stats::sample_std(&xs)? } else { 0.0 }),
        min: counts.iter().min().copied(),
        max: counts.iter().max().copied(),
        analytic_mean,
    })
}
