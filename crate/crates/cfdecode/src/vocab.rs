//! Vocabulary, token ids, and the toy whitespace tokenizer.
//!
//! The engine itself is tokenizer-agnostic; this tokenizer exists so that
//! the deterministic table backend stays trivially auditable. Remote
//! backends tokenize server-side and the client only ever handles ids.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("vocabulary needs at least 4 tokens, got {0}")]
    TooSmall(usize),
    #[error("duplicate vocabulary token {0:?}")]
    Duplicate(String),
    #[error("reserved token {0:?} missing from vocabulary")]
    MissingReserved(&'static str),
    #[error("token id {0} out of range for vocabulary of size {1}")]
    OutOfRange(u32, usize),
}

/// Index of a token within one vocabulary. Only meaningful relative to the
/// vocabulary (or remote backend) it came from.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for TokenId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An ordered list of distinct surface strings plus the three reserved
/// tokens, which must appear in the list (`<bos>`, `<eos>`, `<unk>`).
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    lookup: HashMap<String, TokenId>,
    bos_id: TokenId,
    eos_id: TokenId,
    unk_id: TokenId,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self, VocabError> {
        if tokens.len() < 4 {
            return Err(VocabError::TooSmall(tokens.len()));
        }
        let mut exact = std::collections::HashSet::new();
        let mut lookup = HashMap::new();
        for (i, token) in tokens.iter().enumerate() {
            if !exact.insert(token.as_str()) {
                return Err(VocabError::Duplicate(token.clone()));
            }
            // Lookup is case-folded; the first surface form wins on fold
            // collisions so resolution stays deterministic.
            lookup
                .entry(token.to_lowercase())
                .or_insert(TokenId(i as u32));
        }
        let find = |surface: &'static str| {
            lookup
                .get(surface)
                .copied()
                .ok_or(VocabError::MissingReserved(surface))
        };
        let bos_id = find(BOS_TOKEN)?;
        let eos_id = find(EOS_TOKEN)?;
        let unk_id = find(UNK_TOKEN)?;
        Ok(Self {
            tokens,
            lookup,
            bos_id,
            eos_id,
            unk_id,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn bos_id(&self) -> TokenId {
        self.bos_id
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn unk_id(&self) -> TokenId {
        self.unk_id
    }

    pub fn surface(&self, id: TokenId) -> Result<&str, VocabError> {
        self.tokens
            .get(id.index())
            .map(String::as_str)
            .ok_or(VocabError::OutOfRange(id.0, self.tokens.len()))
    }

    pub fn id_of(&self, word: &str) -> Option<TokenId> {
        self.lookup.get(&word.to_lowercase()).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Whitespace-split, case-folded lookup. Out-of-vocabulary words map to
/// `<unk>`; empty text yields an empty sequence.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<TokenId> {
    text.split_whitespace()
        .map(|word| vocab.id_of(word).unwrap_or_else(|| vocab.unk_id()))
        .collect()
}

/// Join surface strings with single spaces, omitting `<bos>` and `<eos>`.
pub fn detokenize(ids: &[TokenId], vocab: &Vocabulary) -> Result<String, VocabError> {
    let mut words = Vec::with_capacity(ids.len());
    for &id in ids {
        if id == vocab.bos_id() || id == vocab.eos_id() {
            continue;
        }
        words.push(vocab.surface(id)?);
    }
    Ok(words.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(extra: &[&str]) -> Vocabulary {
        let mut tokens = vec![
            BOS_TOKEN.to_string(),
            EOS_TOKEN.to_string(),
            UNK_TOKEN.to_string(),
        ];
        tokens.extend(extra.iter().map(|s| s.to_string()));
        Vocabulary::new(tokens).unwrap()
    }

    #[test]
    fn tokenize_looks_words_up() {
        let v = vocab(&["paris", "is"]);
        assert_eq!(tokenize("Paris is", &v), vec![TokenId(3), TokenId(4)]);
    }

    #[test]
    fn tokenize_empty_text_is_empty() {
        let v = vocab(&["paris"]);
        assert!(tokenize("", &v).is_empty());
        assert!(tokenize("   ", &v).is_empty());
    }

    #[test]
    fn tokenize_oov_maps_to_unk() {
        let v = vocab(&["paris"]);
        assert_eq!(tokenize("zzz", &v), vec![v.unk_id()]);
    }

    #[test]
    fn detokenize_inverts_lookup() {
        let v = vocab(&["paris", "is"]);
        assert_eq!(detokenize(&[TokenId(3), TokenId(4)], &v).unwrap(), "paris is");
        assert_eq!(detokenize(&[], &v).unwrap(), "");
    }

    #[test]
    fn detokenize_strips_reserved_tokens() {
        let v = vocab(&["paris"]);
        let ids = vec![v.bos_id(), TokenId(3), v.eos_id()];
        assert_eq!(detokenize(&ids, &v).unwrap(), "paris");
    }

    #[test]
    fn detokenize_rejects_out_of_range_ids() {
        let v = vocab(&["paris"]);
        assert!(matches!(
            detokenize(&[TokenId(99)], &v),
            Err(VocabError::OutOfRange(99, _))
        ));
    }

    #[test]
    fn vocabulary_requires_reserved_tokens() {
        let err = Vocabulary::new(vec![
            "a".to_string(),
            "b".to_string(),
            "c".to_string(),
            "d".to_string(),
        ])
        .unwrap_err();
        assert!(matches!(err, VocabError::MissingReserved(_)));
    }

    #[test]
    fn vocabulary_rejects_duplicates_and_tiny_lists() {
        assert!(matches!(
            Vocabulary::new(vec!["a".into(), "a".into(), "b".into(), "c".into()]),
            Err(VocabError::Duplicate(_))
        ));
        assert!(matches!(
            Vocabulary::new(vec!["a".into()]),
            Err(VocabError::TooSmall(1))
        ));
    }

    #[test]
    fn round_trip_on_lowercase_in_vocab_text() {
        let v = vocab(&["paris", "is", "the", "capital"]);
        let text = "paris is the capital";
        assert_eq!(detokenize(&tokenize(text, &v), &v).unwrap(), text);
    }
}
