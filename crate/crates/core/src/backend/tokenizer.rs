//! Word-level vocabulary used by the linear backends.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::TokenSequence;
use crate::error::{Error, Result};

pub const START_ID: u32 = 0;
pub const END_ID: u32 = 1;
/// Placeholder id stored at positions whose embedding is a trainable parameter.
pub const LEARNABLE_ID: u32 = 2;
const FIRST_WORD_ID: u32 = 3;

/// Words shipped with the toy vocabulary. Out-of-vocabulary words hash into
/// a fixed set of buckets appended after these.
pub const TOY_WORDS: &[&str] = &[
    "a", "an", "the", "photo", "of", "text", "with", "in", "on", "at", "and", "to", "center",
    "middle", "top", "bottom", "left", "right", "corner", "upper", "lower", "side", "edge",
    "black", "white", "red", "orange", "yellow", "green", "blue", "purple", "gray", "grey",
    "brown", "pink", "gold", "silver", "dark", "bright", "light", "pale", "deep", "bold",
    "italic", "cursive", "serif", "sans", "thin", "thick", "handwritten", "painted", "neon",
    "printed", "stylized", "artistic", "outlined", "shadowed", "large", "small", "huge", "tiny",
    "banner", "sign", "signboard", "wall", "walls", "building", "buildings", "sky", "trees",
    "tree", "street", "road", "board", "poster", "shop", "window", "car", "cars", "people",
    "crowd", "fabric", "paper", "metal", "wood", "wooden", "brick", "glass", "texture",
    "pattern", "background", "scene", "city", "night", "day", "clouds", "mountains", "field",
    "grass", "water", "surface", "plain", "noisy", "gradient", "flat", "distant", "nearby",
    "letters", "word", "words", "font", "logo", "label",
];
pub const TOY_OOV_BUCKETS: u32 = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    oov_buckets: u32,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new(words: Vec<String>, oov_buckets: u32) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.chars().any(char::is_whitespace) || w != &normalize_word(w) {
                return Err(Error::Config(format!("invalid vocabulary word {w:?}")));
            }
            if index.insert(w.clone(), FIRST_WORD_ID + i as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary word {w:?}")));
            }
        }
        Ok(Self {
            words,
            oov_buckets,
            index,
        })
    }

    pub fn toy() -> Self {
        Self::new(
            TOY_WORDS.iter().map(|w| w.to_string()).collect(),
            TOY_OOV_BUCKETS,
        )
        .expect("toy vocabulary is well formed")
    }

    /// Rebuilds the lookup index after deserialization.
    pub fn reindexed(self) -> Result<Self> {
        Self::new(self.words, self.oov_buckets)
    }

    /// Total number of embedding rows, including specials and OOV buckets.
    pub fn size(&self) -> usize {
        FIRST_WORD_ID as usize + self.words.len() + self.oov_buckets as usize
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn oov_buckets(&self) -> u32 {
        self.oov_buckets
    }

    pub fn word_id(&self, word: &str) -> u32 {
        let word = normalize_word(word);
        if let Some(&id) = self.index.get(&word) {
            return id;
        }
        if self.oov_buckets == 0 {
            return LEARNABLE_ID;
        }
        FIRST_WORD_ID + self.words.len() as u32 + fnv1a(word.as_bytes()) % self.oov_buckets
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(&normalize_word(word))
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        id.checked_sub(FIRST_WORD_ID)
            .and_then(|i| self.words.get(i as usize))
            .map(String::as_str)
    }

    /// Splits `text` into normalized words without adding start/end markers.
    pub fn words_of(&self, text: &str) -> Vec<u32> {
        split_words(text).map(|w| self.word_id(&w)).collect()
    }

    pub fn tokenize(&self, text: &str, context_length: usize) -> Result<TokenSequence> {
        let mut seq = TokenSequence::default();
        seq.push_fixed(START_ID);
        for id in self.words_of(text) {
            seq.push_fixed(id);
        }
        seq.push_fixed(END_ID);
        if seq.len() > context_length {
            return Err(Error::Overflow {
                len: seq.len(),
                max: context_length,
            });
        }
        Ok(seq)
    }

    /// Inverse of [`Vocabulary::tokenize`] for in-vocabulary text. Learnable
    /// positions render as `<L>`, out-of-vocabulary buckets as `<unk:N>`.
    pub fn detokenize(&self, seq: &TokenSequence) -> String {
        let mut out = Vec::with_capacity(seq.len());
        for (&id, &learnable) in seq.ids.iter().zip(&seq.learnable_mask) {
            if learnable {
                out.push("<L>".to_string());
                continue;
            }
            match id {
                START_ID | END_ID => {}
                id => match self.word(id) {
                    Some(w) => out.push(w.to_string()),
                    None => out.push(format!("<unk:{}>", id)),
                },
            }
        }
        out.join(" ")
    }
}

pub(crate) fn normalize_word(w: &str) -> String {
    w.to_lowercase()
}

fn split_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()))
        .filter(|w| !w.is_empty())
        .map(normalize_word)
}

fn fnv1a(bytes: &[u8]) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for &b in bytes {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_start_end() {
        let v = Vocabulary::toy();
        let seq = v.tokenize("", 77).unwrap();
        assert_eq!(seq.ids, vec![START_ID, END_ID]);
        assert!(seq.learnable_mask.iter().all(|&m| !m));
    }

    #[test]
    fn single_word() {
        let v = Vocabulary::toy();
        let seq = v.tokenize("text", 77).unwrap();
        assert_eq!(seq.ids, vec![START_ID, v.word_id("text"), END_ID]);
    }

    #[test]
    fn hand_tokenized_phrase() {
        let v = Vocabulary::toy();
        // toy word ids are 3 + position in TOY_WORDS
        let pos = |w: &str| 3 + TOY_WORDS.iter().position(|x| *x == w).unwrap() as u32;
        let expected = vec![0, pos("a"), pos("photo"), pos("of"), pos("text"), 1];
        let seq = v.tokenize("a photo of text", 77).unwrap();
        assert_eq!(seq.ids, expected);
        assert_eq!(seq.len(), 6);
    }

    #[test]
    fn case_and_punctuation_are_normalized() {
        let v = Vocabulary::toy();
        let a = v.tokenize("A Black text, in the center.", 77).unwrap();
        let b = v.tokenize("a black text in the center", 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn overflow_is_rejected() {
        let v = Vocabulary::toy();
        let long = vec!["text"; 80].join(" ");
        assert!(matches!(
            v.tokenize(&long, 77),
            Err(Error::Overflow { len: 82, max: 77 })
        ));
    }

    #[test]
    fn oov_words_hash_into_buckets() {
        let v = Vocabulary::toy();
        let id = v.word_id("zebracorn");
        assert!(id as usize >= 3 + TOY_WORDS.len());
        assert!((id as usize) < v.size());
        assert_eq!(id, v.word_id("Zebracorn"));
    }

    #[test]
    fn detokenize_round_trip() {
        let v = Vocabulary::toy();
        for text in ["", "text", "a large banner with huge buildings", "a red bold text"] {
            let seq = v.tokenize(text, 77).unwrap();
            assert_eq!(v.detokenize(&seq), text);
            assert_eq!(v.tokenize(&v.detokenize(&seq), 77).unwrap(), seq);
        }
    }

    #[test]
    fn duplicate_words_rejected() {
        assert!(Vocabulary::new(vec!["a".into(), "a".into()], 0).is_err());
    }
}
