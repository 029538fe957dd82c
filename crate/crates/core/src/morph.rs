//! Morphological boundary alignment (MorphScore).
//!
//! Each annotated word is tokenized on its own. A word scores 1 when every
//! gold morpheme seam is also a token seam, 0 otherwise; the report is the
//! mean over words. Offsets are counted in Unicode scalar values after NFC.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{SkipReport, Skipped};
use crate::error::{Error, Result};
use crate::text;
use crate::tokenize::TokenizerModel;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MorphEvalEntry {
    pub word: String,
    pub morphemes: Vec<String>,
}

impl MorphEvalEntry {
    /// Validates and NFC-normalizes an annotation.
    pub fn new(word: &str, morphemes: &[String]) -> Result<Self, String> {
        let word = text::nfc(word);
        let morphemes: Vec<String> = morphemes.iter().map(|m| text::nfc(m)).collect();
        if morphemes.len() < 2 {
            return Err("fewer than two morphemes: no interior boundary".to_string());
        }
        if morphemes.iter().any(String::is_empty) {
            return Err("empty morpheme".to_string());
        }
        if text::nfc(&morphemes.concat()) != word {
            return Err(format!("morphemes {morphemes:?} do not concatenate to {word:?}"));
        }
        Ok(MorphEvalEntry { word, morphemes })
    }

    /// Interior seams as scalar-value offsets into the word.
    pub fn gold_boundaries(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut off = 0;
        for m in &self.morphemes[..self.morphemes.len() - 1] {
            off += m.chars().count();
            out.insert(off);
        }
        out
    }
}

pub fn load_morph_set(path: &Path) -> Result<(Vec<MorphEvalEntry>, SkipReport)> {
    #[derive(Deserialize)]
    struct Raw {
        word: String,
        morphemes: Vec<String>,
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    let mut skips = SkipReport::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Raw>(&line)
            .map_err(|e| e.to_string())
            .and_then(|raw| MorphEvalEntry::new(&raw.word, &raw.morphemes));
        match parsed {
            Ok(e) => entries.push(e),
            Err(reason) => skips.skipped.push(Skipped { line: i + 1, reason }),
        }
    }
    Ok((entries, skips))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// Every gold seam must be a token seam; extra token seams are free.
    #[default]
    Subset,
    /// Token seams must equal gold seams exactly.
    Exact,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MorphOptions {
    pub criterion: Criterion,
    /// Prefix each word with a space before tokenizing, for vocabularies
    /// that mark word starts that way.
    pub leading_space: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WordScore {
    pub word: String,
    pub score: u8,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MorphScoreReport {
    pub per_word: Vec<WordScore>,
    pub mean: f64,
    pub n: usize,
}

/// Interior token seams for `word` as scalar-value offsets, together with
/// the token surface strings.
pub fn token_boundaries(
    model: &TokenizerModel,
    word: &str,
    leading_space: bool,
) -> Result<(BTreeSet<usize>, Vec<String>)> {
    let input = if leading_space {
        format!(" {word}")
    } else {
        word.to_string()
    };
    let ids = model.encode(&input)?;
    let mut byte_offsets = Vec::with_capacity(ids.len());
    let mut decoded = Vec::with_capacity(input.len());
    let mut pieces = Vec::with_capacity(ids.len());
    for id in &ids {
        let bytes = model
            .token_bytes(*id)
            .ok_or_else(|| Error::Tokenizer(format!("id {id} missing from vocabulary")))?;
        pieces.push(String::from_utf8_lossy(&bytes).into_owned());
        decoded.extend_from_slice(&bytes);
        byte_offsets.push(decoded.len());
    }
    if decoded != input.as_bytes() {
        return Err(Error::Tokenizer(format!(
            "word {word:?} does not survive tokenization (unknown symbols?)"
        )));
    }
    let skip = usize::from(leading_space);
    let word_chars = word.chars().count();
    let mut seams = BTreeSet::new();
    for off in byte_offsets {
        if !input.is_char_boundary(off) {
            continue;
        }
        let chars = input[..off].chars().count();
        if chars > skip && chars - skip < word_chars {
            seams.insert(chars - skip);
        }
    }
    Ok((seams, pieces))
}

pub fn score_word(model: &TokenizerModel, entry: &MorphEvalEntry, opts: &MorphOptions) -> Result<WordScore> {
    let (seams, tokens) = token_boundaries(model, &entry.word, opts.leading_space)?;
    let gold = entry.gold_boundaries();
    let ok = match opts.criterion {
        Criterion::Subset => gold.is_subset(&seams),
        Criterion::Exact => gold == seams,
    };
    Ok(WordScore {
        word: entry.word.clone(),
        score: u8::from(ok),
        tokens,
    })
}

pub fn morph_score(
    model: &TokenizerModel,
    entries: &[MorphEvalEntry],
    opts: &MorphOptions,
) -> Result<MorphScoreReport> {
    if entries.is_empty() {
        return Err(Error::EmptyInput("morph evaluation set has no valid entries"));
    }
    let per_word = entries
        .iter()
        .map(|e| score_word(model, e, opts))
        .collect::<Result<Vec<_>>>()?;
    let hits: usize = per_word.iter().map(|w| w.score as usize).sum();
    Ok(MorphScoreReport {
        n: per_word.len(),
        mean: hits as f64 / per_word.len() as f64,
        per_word,
    })
}
