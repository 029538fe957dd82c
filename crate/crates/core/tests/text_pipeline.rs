use std::collections::HashMap;
use std::fs;

use proptest::prelude::*;
use tinytok_core::corpus::{dedup_report, load_corpus, merge_dedup, split_overlap, write_corpus};
use tinytok_core::diversity::{meteor_exact, score_pair, BleuConfig};
use tinytok_core::entropy::{build_distribution, renyi_entropy};
use tinytok_core::text;
use tinytok_core::tokenize::fertility;
use tinytok_core::{EntropyQuery, FrequencyDistribution, Split, StoryCorpus, TokenizerModel, TokenizerOptions};

fn byte_model() -> TokenizerModel {
    // byte alphabet only, plus a handful of merges
    let printable = |b: u32| (0x21..=0x7e).contains(&b) || (0xa1..=0xac).contains(&b) || (0xae..=0xff).contains(&b);
    let mut extra = 0;
    let mut vocab: HashMap<String, u32> = HashMap::new();
    for b in 0u32..256 {
        let c = if printable(b) {
            char::from_u32(b).unwrap()
        } else {
            extra += 1;
            char::from_u32(255 + extra).unwrap()
        };
        vocab.insert(c.to_string(), b);
    }
    let merges = [("Ġ", "t"), ("h", "e"), ("Ġt", "he"), ("Ġ", "a")];
    for (l, r) in merges {
        let id = vocab.len() as u32;
        vocab.entry(format!("{l}{r}")).or_insert(id);
    }
    let merges = merges.iter().map(|(l, r)| (l.to_string(), r.to_string())).collect();
    let opts = TokenizerOptions {
        byte_fallback: true,
        pre_split: true,
        ..TokenizerOptions::default()
    };
    TokenizerModel::new("bytes", vocab, merges, opts).unwrap()
}

#[test]
fn corpus_round_trips_through_jsonl() {
    let d = tempfile::tempdir().unwrap();
    let c = StoryCorpus::from_texts("hi", ["पहली कहानी", "second story", "पहली   कहानी"]);
    let f = d.path().join("c.jsonl");
    write_corpus(&c, &f).unwrap();
    let (back, skipped) = load_corpus(&f, Split::Unsplit).unwrap();
    assert_eq!(skipped.count(), 0);
    assert_eq!(back.texts().collect::<Vec<_>>(), c.texts().collect::<Vec<_>>());
    assert_eq!(dedup_report(&back).duplicates, 1);
}

#[test]
fn malformed_lines_are_skipped_not_fatal() {
    let d = tempfile::tempdir().unwrap();
    let f = d.path().join("c.jsonl");
    fs::write(&f, "{\"id\":\"a\",\"story\":\"ok\"}\nnot json\n{\"id\":\"b\",\"story\":\"  \"}\n{\"id\":\"a\",\"story\":\"again\"}\n").unwrap();
    let (c, skipped) = load_corpus(&f, Split::Train).unwrap();
    assert_eq!(c.len(), 1);
    assert_eq!(skipped.count(), 3);
}

#[test]
fn overlap_counts_shared_stories() {
    let a = StoryCorpus::from_texts("en", ["x y", "z", "w"]);
    let b = StoryCorpus::from_texts("en", ["z", "x  y", "q"]);
    let o = split_overlap(&a, &b);
    assert_eq!(o.count, 2);
    assert_eq!(merge_dedup(&a, &b).len(), 4);
}

#[test]
fn entropy_of_a_tokenized_corpus_is_bounded_by_log_support() {
    let m = byte_model();
    let c = StoryCorpus::from_texts("en", ["the cat at the hat", "a theme at the end"]);
    let d = build_distribution(&m, &c).unwrap();
    let h0 = (d.support() as f64).log2();
    for alpha in [0.5, 1.0, 2.0] {
        let h = renyi_entropy(&d, EntropyQuery::bits(alpha)).unwrap();
        assert!(h > 0.0 && h <= h0 + 1e-12);
    }
}

#[test]
fn meteor_rewards_order() {
    let r: Vec<&str> = "the cat sat on the mat".split(' ').collect();
    let same = meteor_exact(&r, &r);
    let shuffled: Vec<&str> = "mat the on sat cat the".split(' ').collect();
    assert!(same > meteor_exact(&shuffled, &r));
    assert!(same > 0.9);
}

#[test]
fn identical_texts_score_one_on_ngram_metrics() {
    let s = score_pair("एक दो तीन चार पांच", "एक दो तीन चार पांच", BleuConfig::default()).unwrap();
    assert_eq!(&s[..4], &[1.0, 1.0, 1.0, 1.0]);
}

proptest! {
    #[test]
    fn byte_level_round_trip(s in "\\PC{0,40}") {
        let m = byte_model();
        prop_assert_eq!(m.decode(&m.encode(&s).unwrap()).unwrap(), s);
    }

    #[test]
    fn fertility_pools_additively(texts in prop::collection::vec("[a-z]{1,6}( [a-z]{1,6}){0,8}", 2..20), cut in 1usize..19) {
        let cut = cut.min(texts.len() - 1);
        let m = byte_model();
        let all = fertility(&m, &StoryCorpus::from_texts("en", &texts)).unwrap();
        let a = fertility(&m, &StoryCorpus::from_texts("en", &texts[..cut])).unwrap();
        let b = fertility(&m, &StoryCorpus::from_texts("en", &texts[cut..])).unwrap();
        let pooled = a.combine(&b);
        prop_assert_eq!((pooled.token_count, pooled.word_count), (all.token_count, all.word_count));
        prop_assert!(all.fertility >= 1.0);
    }

    #[test]
    fn dedup_key_ignores_spacing_and_composition(words in prop::collection::vec("[a-zé]{1,5}", 1..8), pad in " {0,3}") {
        let plain = words.join(" ");
        let messy = format!("{pad}{}{pad}", words.join(&format!(" {pad}\t"))).replace('é', "e\u{301}");
        prop_assert_eq!(text::dedup_key(&plain), text::dedup_key(&messy));
    }

    #[test]
    fn renyi_entropy_never_increases_with_order(counts in prop::collection::vec(1u64..10_000, 1..200)) {
        let d = FrequencyDistribution::from_slice(&counts);
        let mut prev = f64::INFINITY;
        for a in [0.2, 0.5, 0.99, 1.0, 1.01, 2.0, 4.0, 16.0] {
            let h = renyi_entropy(&d, EntropyQuery::bits(a)).unwrap();
            prop_assert!(h <= prev + 1e-9);
            prev = h;
        }
    }
}
