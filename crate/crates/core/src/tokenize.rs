//! Greedy byte-pair-encoding tokenizer and token fertility.
//!
//! A model is a token→id vocabulary plus an ordered merge table. Encoding
//! splits text into initial symbols (Unicode scalar values, or raw bytes
//! through the GPT-2 printable byte alphabet when byte fallback is on) and
//! then repeatedly applies the lowest-rank applicable merge, leftmost
//! occurrence first, until no merge applies.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::StoryCorpus;
use crate::error::{Error, Result};
use crate::text;

pub type TokenId = u32;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerOptions {
    /// Start from bytes (GPT-2 byte alphabet) instead of characters.
    pub byte_fallback: bool,
    /// Token string used for characters missing from the vocabulary.
    pub unk: Option<String>,
    /// Encode whitespace-led chunks independently.
    pub pre_split: bool,
}

impl TokenizerOptions {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct TokenizerModel {
    name: String,
    vocab: HashMap<String, TokenId>,
    tokens: HashMap<TokenId, String>,
    merges: Vec<(String, String)>,
    ranks: HashMap<(TokenId, TokenId), (u32, TokenId)>,
    options: TokenizerOptions,
    unk_id: Option<TokenId>,
    byte_chars: [char; 256],
    char_bytes: HashMap<char, u8>,
}

/// GPT-2's reversible byte → printable character table.
fn byte_alphabet() -> [char; 256] {
    let mut table = ['\0'; 256];
    let printable = |b: u32| (0x21..=0x7e).contains(&b) || (0xa1..=0xac).contains(&b) || (0xae..=0xff).contains(&b);
    let mut extra = 0u32;
    for b in 0..256u32 {
        let c = if printable(b) {
            b
        } else {
            extra += 1;
            255 + extra
        };
        table[b as usize] = char::from_u32(c).expect("valid scalar");
    }
    table
}

impl TokenizerModel {
    pub fn new(
        name: impl Into<String>,
        vocab: HashMap<String, TokenId>,
        merges: Vec<(String, String)>,
        options: TokenizerOptions,
    ) -> Result<Self> {
        let mut tokens = HashMap::with_capacity(vocab.len());
        for (tok, &id) in &vocab {
            if let Some(prev) = tokens.insert(id, tok.clone()) {
                return Err(Error::Tokenizer(format!(
                    "id {id} assigned to both {prev:?} and {tok:?}"
                )));
            }
        }
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, (left, right)) in merges.iter().enumerate() {
            let lookup = |t: &str| {
                vocab.get(t).copied().ok_or_else(|| {
                    Error::Tokenizer(format!(
                        "merge {} `{left} {right}` references {t:?}, which is not in the vocabulary",
                        rank + 1
                    ))
                })
            };
            let l = lookup(left)?;
            let r = lookup(right)?;
            let merged = lookup(&format!("{left}{right}"))?;
            // a repeated pair keeps its first (highest) priority
            ranks.entry((l, r)).or_insert((rank as u32, merged));
        }
        let unk_id = match &options.unk {
            Some(u) => Some(
                vocab
                    .get(u)
                    .copied()
                    .ok_or_else(|| Error::Tokenizer(format!("unk token {u:?} is not in the vocabulary")))?,
            ),
            None => None,
        };
        let byte_chars = byte_alphabet();
        let char_bytes = byte_chars.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
        Ok(TokenizerModel {
            name: name.into(),
            vocab,
            tokens,
            merges,
            ranks,
            options,
            unk_id,
            byte_chars,
            char_bytes,
        })
    }

    /// Loads `vocab.json` (token → id) and a merges file with one
    /// space-separated pair per line; line order is merge priority.
    pub fn load(vocab_path: &Path, merges_path: &Path, options: TokenizerOptions) -> Result<Self> {
        let raw = fs::read_to_string(vocab_path).map_err(|e| Error::io(vocab_path, e))?;
        let vocab: HashMap<String, TokenId> =
            serde_json::from_str(&raw).map_err(|e| Error::format(vocab_path, e.to_string()))?;
        let raw = fs::read_to_string(merges_path).map_err(|e| Error::io(merges_path, e))?;
        let mut merges = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            if line.starts_with("#version") || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()))
                }
                _ => {
                    return Err(Error::format(
                        merges_path,
                        format!("line {}: expected exactly two space-separated tokens", i + 1),
                    ))
                }
            }
        }
        let name = vocab_path
            .parent()
            .and_then(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "tokenizer".to_string());
        Self::new(name, vocab, merges, options)
    }

    /// Loads a model directory holding `vocab.json`, `merges.txt` and an
    /// optional `tokenizer-options.json`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let options_path = dir.join("tokenizer-options.json");
        let options = if options_path.exists() {
            TokenizerOptions::load(&options_path)?
        } else {
            TokenizerOptions::default()
        };
        Self::load(&dir.join("vocab.json"), &dir.join("merges.txt"), options)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn options(&self) -> &TokenizerOptions {
        &self.options
    }

    pub fn unk_id(&self) -> Option<TokenId> {
        self.unk_id
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.vocab.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(&id).map(String::as_str)
    }

    /// Raw bytes a token stands for.
    pub fn token_bytes(&self, id: TokenId) -> Option<Vec<u8>> {
        let tok = self.tokens.get(&id)?;
        if self.options.byte_fallback {
            Some(
                tok.chars()
                    .flat_map(|c| match self.char_bytes.get(&c) {
                        Some(&b) => vec![b],
                        None => c.to_string().into_bytes(),
                    })
                    .collect(),
            )
        } else {
            Some(tok.as_bytes().to_vec())
        }
    }

    /// Maps the text onto its initial symbols, before any merge.
    pub fn initial_symbols(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut out = Vec::with_capacity(text.len());
        let mut buf = [0u8; 4];
        if self.options.byte_fallback {
            for &b in text.as_bytes() {
                let c = self.byte_chars[b as usize];
                out.push(self.symbol_id(c.encode_utf8(&mut buf))?);
            }
        } else {
            for c in text.chars() {
                out.push(self.symbol_id(c.encode_utf8(&mut buf))?);
            }
        }
        Ok(out)
    }

    fn symbol_id(&self, symbol: &str) -> Result<TokenId> {
        match self.vocab.get(symbol) {
            Some(&id) => Ok(id),
            None => self.unk_id.ok_or_else(|| Error::UnknownSymbol {
                symbol: symbol.to_string(),
            }),
        }
    }

    /// Merge rule for an adjacent pair: (rank, merged id).
    pub fn merge_rank(&self, left: TokenId, right: TokenId) -> Option<(u32, TokenId)> {
        self.ranks.get(&(left, right)).copied()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut out = Vec::new();
        if self.options.pre_split {
            for chunk in pre_split(text) {
                out.extend(self.merge_symbols(self.initial_symbols(chunk)?));
            }
        } else {
            out = self.merge_symbols(self.initial_symbols(text)?);
        }
        Ok(out)
    }

    /// Token count without materializing the id list where possible.
    pub fn count_tokens(&self, text: &str) -> Result<usize> {
        self.encode(text).map(|ids| ids.len())
    }

    /// Applies merges to a symbol sequence. Each heap entry records the pair
    /// it was computed for; entries invalidated by an earlier merge are
    /// discarded when popped.
    fn merge_symbols(&self, ids: Vec<TokenId>) -> Vec<TokenId> {
        let n = ids.len();
        if n < 2 {
            return ids;
        }
        let mut sym = ids;
        let mut next: Vec<usize> = (1..=n).collect(); // n = none
        let mut prev: Vec<usize> = (0..n).map(|i| i.wrapping_sub(1)).collect(); // usize::MAX = none
        let mut alive = vec![true; n];
        let mut heap = BinaryHeap::new();
        for i in 0..n - 1 {
            if let Some((rank, _)) = self.merge_rank(sym[i], sym[i + 1]) {
                heap.push(Reverse((rank, i, sym[i], sym[i + 1])));
            }
        }
        while let Some(Reverse((rank, i, l, r))) = heap.pop() {
            let j = next[i];
            if !alive[i] || j >= n || sym[i] != l || sym[j] != r {
                continue;
            }
            let (cur_rank, merged) = match self.merge_rank(l, r) {
                Some(m) => m,
                None => continue,
            };
            debug_assert_eq!(cur_rank, rank);
            sym[i] = merged;
            alive[j] = false;
            next[i] = next[j];
            if next[j] < n {
                prev[next[j]] = i;
            }
            let p = prev[i];
            if p != usize::MAX {
                if let Some((rk, _)) = self.merge_rank(sym[p], sym[i]) {
                    heap.push(Reverse((rk, p, sym[p], sym[i])));
                }
            }
            let k = next[i];
            if k < n {
                if let Some((rk, _)) = self.merge_rank(sym[i], sym[k]) {
                    heap.push(Reverse((rk, i, sym[i], sym[k])));
                }
            }
        }
        (0..n).filter(|&i| alive[i]).map(|i| sym[i]).collect()
    }

    /// Concatenation of token strings (mapped back through the byte
    /// alphabet when byte fallback is on). Invalid UTF-8 is replaced.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let bytes = self.decode_bytes(ids)?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    pub fn decode_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let bytes = self
                .token_bytes(id)
                .ok_or_else(|| Error::Tokenizer(format!("id {id} is not in the vocabulary")))?;
            out.extend(bytes);
        }
        Ok(out)
    }
}

/// Splits before every whitespace run that follows non-whitespace, so each
/// chunk is a word with its leading whitespace attached.
pub fn pre_split(text: &str) -> Vec<&str> {
    let mut chunks = Vec::new();
    let mut start = 0;
    let mut prev_ws = true;
    for (i, c) in text.char_indices() {
        let ws = c.is_whitespace();
        if ws && !prev_ws && i > start {
            chunks.push(&text[start..i]);
            start = i;
        }
        prev_ws = ws;
    }
    if start < text.len() {
        chunks.push(&text[start..]);
    }
    chunks
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FertilityReport {
    pub token_count: u64,
    pub word_count: u64,
    pub fertility: f64,
}

impl FertilityReport {
    pub fn from_counts(token_count: u64, word_count: u64) -> Result<Self> {
        if word_count == 0 {
            return Err(Error::EmptyInput("fertility needs at least one word"));
        }
        Ok(FertilityReport {
            token_count,
            word_count,
            fertility: token_count as f64 / word_count as f64,
        })
    }

    /// Pools two reports; fertility becomes the word-weighted combination.
    pub fn combine(&self, other: &FertilityReport) -> FertilityReport {
        let t = self.token_count + other.token_count;
        let w = self.word_count + other.word_count;
        FertilityReport {
            token_count: t,
            word_count: w,
            fertility: t as f64 / w as f64,
        }
    }
}

/// Tokens per whitespace-delimited word over the whole corpus.
pub fn fertility(model: &TokenizerModel, corpus: &StoryCorpus) -> Result<FertilityReport> {
    let (tokens, words) = corpus
        .records
        .par_iter()
        .map(|r| Ok((model.count_tokens(&r.text)? as u64, text::word_count(&r.text) as u64)))
        .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;
    FertilityReport::from_counts(tokens, words)
}
