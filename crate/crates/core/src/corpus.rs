//! Story corpora: JSONL ingestion, exact-duplicate auditing, cross-split
//! overlap and deduplicating merges.
//!
//! Two stories are duplicates when their NFC-normalized, whitespace-collapsed
//! texts are identical; the comparison runs on SHA-256 digests of that
//! canonical form, so the audit never keeps more than one digest per story
//! in memory.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{self, Digest32};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Unsplit,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "valid" | "val" => Ok(Split::Validation),
            "unsplit" | "none" => Ok(Split::Unsplit),
            other => Err(Error::invalid("split", format!("unknown split label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryRecord {
    pub id: String,
    pub text: String,
    pub split: Split,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StoryCorpus {
    pub records: Vec<StoryRecord>,
    pub language: String,
}

impl StoryCorpus {
    /// Builds a corpus from raw texts, normalizing each one and assigning
    /// sequential ids. Empty texts are dropped.
    pub fn from_texts<I, S>(language: &str, texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let records = texts
            .into_iter()
            .map(|t| text::normalize(t.as_ref()))
            .filter(|t| !t.is_empty())
            .enumerate()
            .map(|(i, text)| StoryRecord {
                id: format!("s{i}"),
                text,
                split: Split::Unsplit,
                metadata: BTreeMap::new(),
            })
            .collect();
        StoryCorpus {
            records,
            language: language.to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.text.as_str())
    }
}

/// A line that could not be turned into a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Skipped {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SkipReport {
    pub skipped: Vec<Skipped>,
}

impl SkipReport {
    pub fn count(&self) -> usize {
        self.skipped.len()
    }
}

#[derive(Deserialize)]
struct RawStory {
    story: String,
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    metadata: BTreeMap<String, serde_json::Value>,
}

const PARSE_BATCH: usize = 16 * 1024;

/// Streams a JSONL story file. Lines that fail to parse, lack a `story`
/// string, are blank after trimming, or repeat an earlier id end up in the
/// skip report instead of aborting the load.
pub fn load_corpus(path: &Path, split: Split) -> Result<(StoryCorpus, SkipReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());

    let mut records = Vec::new();
    let mut skips = SkipReport::default();
    let mut seen_ids = HashSet::new();
    let mut batch: Vec<(usize, String)> = Vec::with_capacity(PARSE_BATCH);

    let mut flush = |batch: &mut Vec<(usize, String)>, records: &mut Vec<StoryRecord>, skips: &mut SkipReport| {
        let parsed: Vec<(usize, Result<StoryRecord, String>)> = batch
            .par_iter()
            .map(|(line_no, line)| (*line_no, parse_line(line, *line_no, &file_name, split)))
            .collect();
        for (line, rec) in parsed {
            match rec {
                Ok(rec) if seen_ids.insert(rec.id.clone()) => records.push(rec),
                Ok(rec) => skips.skipped.push(Skipped {
                    line,
                    reason: format!("duplicate id {:?}", rec.id),
                }),
                Err(reason) => skips.skipped.push(Skipped { line, reason }),
            }
        }
        batch.clear();
    };

    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        batch.push((idx + 1, line));
        if batch.len() == PARSE_BATCH {
            flush(&mut batch, &mut records, &mut skips);
        }
    }
    flush(&mut batch, &mut records, &mut skips);

    let language = records
        .iter()
        .find_map(|r| r.metadata.get("language").cloned())
        .unwrap_or_else(|| "und".to_string());
    Ok((StoryCorpus { records, language }, skips))
}

fn parse_line(line: &str, line_no: usize, file_name: &str, split: Split) -> Result<StoryRecord, String> {
    let raw: RawStory = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let text = text::normalize(&raw.story);
    if text.is_empty() {
        return Err("story is empty after trimming".to_string());
    }
    let metadata = raw
        .metadata
        .into_iter()
        .map(|(k, v)| {
            let v = match v {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            (k, v)
        })
        .collect();
    Ok(StoryRecord {
        id: raw.id.unwrap_or_else(|| format!("{file_name}:{line_no}")),
        text,
        split,
        metadata,
    })
}

#[derive(Serialize)]
struct StoryLine<'a> {
    id: &'a str,
    story: &'a str,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    metadata: &'a BTreeMap<String, String>,
}

pub fn write_corpus(corpus: &StoryCorpus, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in &corpus.records {
        let line = StoryLine {
            id: &r.id,
            story: &r.text,
            metadata: &r.metadata,
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| Error::format(path, e.to_string()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DuplicateGroup {
    pub hash: String,
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DedupReport {
    pub total: usize,
    pub unique: usize,
    pub duplicates: usize,
    pub duplicate_ratio: f64,
    pub duplicate_groups: Vec<DuplicateGroup>,
}

/// duplicates / total, or 0 for an empty corpus.
pub fn duplicate_ratio(total: usize, duplicates: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        duplicates as f64 / total as f64
    }
}

fn keys(corpus: &StoryCorpus) -> Vec<Digest32> {
    corpus.records.par_iter().map(|r| text::dedup_key(&r.text)).collect()
}

pub fn dedup_report(corpus: &StoryCorpus) -> DedupReport {
    let keys = keys(corpus);
    // digest -> (group index in first-seen order, member indices)
    let mut groups: HashMap<Digest32, Vec<usize>> = HashMap::with_capacity(keys.len());
    let mut order = Vec::new();
    for (i, k) in keys.iter().enumerate() {
        let members = groups.entry(*k).or_insert_with(|| {
            order.push(*k);
            Vec::new()
        });
        members.push(i);
    }
    let total = corpus.len();
    let unique = groups.len();
    let duplicates = total - unique;
    let duplicate_groups = order
        .iter()
        .filter_map(|k| {
            let members = &groups[k];
            (members.len() > 1).then(|| DuplicateGroup {
                hash: hex::encode(k),
                ids: members.iter().map(|&i| corpus.records[i].id.clone()).collect(),
            })
        })
        .collect();
    DedupReport {
        total,
        unique,
        duplicates,
        duplicate_ratio: duplicate_ratio(total, duplicates),
        duplicate_groups,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    /// Distinct canonical texts present in both corpora.
    pub count: usize,
    /// Ids in the first corpus whose text also occurs in the second.
    pub a_ids: Vec<String>,
    /// Ids in the second corpus whose text also occurs in the first.
    pub b_ids: Vec<String>,
}

pub fn split_overlap(a: &StoryCorpus, b: &StoryCorpus) -> OverlapReport {
    let ka = keys(a);
    let kb = keys(b);
    let set_a: HashSet<&Digest32> = ka.iter().collect();
    let set_b: HashSet<&Digest32> = kb.iter().collect();
    let count = set_a.intersection(&set_b).count();
    let a_ids = a
        .records
        .iter()
        .zip(&ka)
        .filter(|(_, k)| set_b.contains(k))
        .map(|(r, _)| r.id.clone())
        .collect();
    let b_ids = b
        .records
        .iter()
        .zip(&kb)
        .filter(|(_, k)| set_a.contains(k))
        .map(|(r, _)| r.id.clone())
        .collect();
    OverlapReport { count, a_ids, b_ids }
}

/// Union of both corpora with duplicate texts dropped. Records from `a`
/// come first and win ties; relative order is preserved. An id from `b`
/// that collides with one already kept gets a numeric suffix.
pub fn merge_dedup(a: &StoryCorpus, b: &StoryCorpus) -> StoryCorpus {
    let mut seen = HashSet::new();
    let mut ids = HashSet::new();
    let mut records = Vec::new();
    for (rec, key) in a.records.iter().zip(keys(a)).chain(b.records.iter().zip(keys(b))) {
        if !seen.insert(key) {
            continue;
        }
        let mut rec = rec.clone();
        if !ids.insert(rec.id.clone()) {
            let base = rec.id.clone();
            let mut n = 2;
            while !ids.insert(format!("{base}~{n}")) {
                n += 1;
            }
            rec.id = format!("{base}~{n}");
        }
        records.push(rec);
    }
    let language = if a.language.is_empty() || (a.is_empty() && !b.is_empty()) {
        b.language.clone()
    } else {
        a.language.clone()
    };
    StoryCorpus { records, language }
}
