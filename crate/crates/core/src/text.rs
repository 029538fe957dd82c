//! Unicode text helpers shared by the corpus, tokenizer and metric modules.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// NFC-normalize and trim surrounding whitespace.
pub fn normalize(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.trim().to_string()
}

pub fn nfc(text: &str) -> String {
    text.nfc().collect()
}

/// NFC, trimmed, with every whitespace run collapsed to a single space.
pub fn canonical(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    let mut out = String::with_capacity(nfc.len());
    for word in nfc.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

pub type Digest32 = [u8; 32];

/// SHA-256 of the canonical form; two texts are duplicates iff keys match.
pub fn dedup_key(text: &str) -> Digest32 {
    Sha256::digest(canonical(text).as_bytes()).into()
}

/// Word tokens used by the lexical metrics and fertility: NFC, then
/// split on Unicode whitespace.
pub fn words(text: &str) -> Vec<String> {
    let nfc: String = text.nfc().collect();
    nfc.split_whitespace().map(str::to_owned).collect()
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = reader.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nfd_and_nfc_share_a_key() {
        let nfc = "caf\u{e9}";
        let nfd = "cafe\u{301}";
        assert_ne!(nfc, nfd);
        assert_eq!(dedup_key(nfc), dedup_key(nfd));
    }

    #[test]
    fn whitespace_runs_collapse() {
        assert_eq!(canonical("  a \t b\n\nc "), "a b c");
        assert_eq!(dedup_key("a  b"), dedup_key(" a b\n"));
    }

    #[test]
    fn devanagari_trim() {
        assert_eq!(normalize("  क ख  "), "क ख");
    }
}
