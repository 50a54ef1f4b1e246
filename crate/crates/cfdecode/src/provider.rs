//! Next-token probability providers.
//!
//! [`LmProvider`] abstracts over any autoregressive backend that can report
//! a full next-token distribution for a given prefix. Two implementations
//! ship here and in [`crate::remote`]: a deterministic rule-table model used
//! as a verifiable oracle, and an HTTP client for remote backends.
//!
//! Providers are stateless per call: the same prefix must always yield the
//! same distribution, and calls may arrive concurrently from the two
//! decoding streams.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::vocab::{detokenize, tokenize, TokenId, VocabError, Vocabulary};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("vocabulary error: {0}")]
    Vocab(#[from] VocabError),
    #[error("failed to read model spec {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse model spec {path} at line {line}, column {column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid rule {rule}: {reason}")]
    InvalidRule { rule: String, reason: String },
    #[error("distribution over {got} entries does not match vocabulary size {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("distribution sums to {0}, expected 1 within 1e-9")]
    NotNormalized(f64),
    #[error("distribution has negative entry {value} at token {index}")]
    NegativeEntry { index: usize, value: f64 },
    #[error("remote backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("remote backend protocol violation: {0}")]
    Protocol(String),
}

/// A probability vector over the whole vocabulary: entries are non-negative
/// and sum to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct NextTokenDistribution {
    probs: Vec<f64>,
}

impl NextTokenDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, ProviderError> {
        for (index, &value) in probs.iter().enumerate() {
            if value < 0.0 || !value.is_finite() {
                return Err(ProviderError::NegativeEntry { index, value });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ProviderError::NotNormalized(sum));
        }
        Ok(Self { probs })
    }

    pub fn uniform(size: usize) -> Self {
        Self {
            probs: vec![1.0 / size as f64; size],
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.probs[id.index()]
    }

    /// The `k` highest-probability entries, ties broken by ascending id.
    pub fn top_k(&self, k: usize) -> Vec<(TokenId, f64)> {
        let mut entries: Vec<(TokenId, f64)> = self
            .probs
            .iter()
            .enumerate()
            .map(|(i, &p)| (TokenId(i as u32), p))
            .collect();
        entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        entries.truncate(k);
        entries
    }
}

/// Anything that can answer "what comes next?" for a token prefix.
///
/// Implementations must be deterministic (identical prefix, identical
/// output) and safe to query concurrently.
pub trait LmProvider: Send + Sync {
    fn vocab_size(&self) -> usize;
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, ProviderError>;
    fn detokenize(&self, ids: &[TokenId]) -> Result<String, ProviderError>;
    fn next_distribution(&self, prefix: &[TokenId]) -> Result<NextTokenDistribution, ProviderError>;
    /// End-of-sequence id as this backend understands it.
    fn eos_id(&self) -> Result<TokenId, ProviderError>;
}

// ---------------------------------------------------------------------------
// Table language model
// ---------------------------------------------------------------------------

/// On-disk schema of a table model spec.
#[derive(Debug, Deserialize)]
struct RawTableSpec {
    vocab: Vec<String>,
    order: usize,
    rules: Vec<RawRule>,
}

#[derive(Debug, Deserialize)]
struct RawRule {
    context: Vec<String>,
    dist: HashMap<String, f64>,
}

/// A deterministic n-gram-style backend driven by an explicit rule table.
///
/// `next_distribution` walks the prefix suffixes from the longest one the
/// order allows down to length zero and returns the first matching rule's
/// distribution; when nothing matches, it falls back to uniform. Every rule
/// is validated at load time, so lookups cannot fail.
#[derive(Debug)]
pub struct TableLm {
    vocab: Vocabulary,
    order: usize,
    rules: HashMap<Vec<TokenId>, NextTokenDistribution>,
}

impl TableLm {
    pub fn from_json(text: &str, path: &str) -> Result<Self, ProviderError> {
        let raw: RawTableSpec =
            serde_json::from_str(text).map_err(|e| ProviderError::Parse {
                path: path.to_string(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        if raw.order < 1 {
            return Err(ProviderError::InvalidRule {
                rule: "(spec)".into(),
                reason: format!("order must be >= 1, got {}", raw.order),
            });
        }
        let vocab = Vocabulary::new(raw.vocab)?;
        let mut rules = HashMap::with_capacity(raw.rules.len());
        for rule in &raw.rules {
            let label = format!("[{}]", rule.context.join(" "));
            if rule.context.len() > raw.order {
                return Err(ProviderError::InvalidRule {
                    rule: label,
                    reason: format!(
                        "context length {} exceeds order {}",
                        rule.context.len(),
                        raw.order
                    ),
                });
            }
            let mut key = Vec::with_capacity(rule.context.len());
            for word in &rule.context {
                match vocab.id_of(word) {
                    Some(id) => key.push(id),
                    None => {
                        return Err(ProviderError::InvalidRule {
                            rule: label,
                            reason: format!("context word {word:?} not in vocabulary"),
                        })
                    }
                }
            }
            let mut probs = vec![0.0; vocab.len()];
            for (word, &p) in &rule.dist {
                let id = vocab.id_of(word).ok_or_else(|| ProviderError::InvalidRule {
                    rule: label.clone(),
                    reason: format!("distribution token {word:?} not in vocabulary"),
                })?;
                probs[id.index()] += p;
            }
            let dist = NextTokenDistribution::new(probs).map_err(|e| ProviderError::InvalidRule {
                rule: label.clone(),
                reason: e.to_string(),
            })?;
            if rules.insert(key, dist).is_some() {
                return Err(ProviderError::InvalidRule {
                    rule: label,
                    reason: "duplicate rule context".into(),
                });
            }
        }
        Ok(Self {
            vocab,
            order: raw.order,
            rules,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ProviderError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }
}

impl LmProvider for TableLm {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, ProviderError> {
        Ok(tokenize(text, &self.vocab))
    }

    fn detokenize(&self, ids: &[TokenId]) -> Result<String, ProviderError> {
        Ok(detokenize(ids, &self.vocab)?)
    }

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<NextTokenDistribution, ProviderError> {
        let longest = self.order.min(prefix.len());
        // Longest-suffix match first; a matching longer rule shadows any
        // shorter one.
        for len in (0..=longest).rev() {
            let suffix = &prefix[prefix.len() - len..];
            if let Some(dist) = self.rules.get(suffix) {
                return Ok(dist.clone());
            }
        }
        Ok(NextTokenDistribution::uniform(self.vocab.len()))
    }

    fn eos_id(&self) -> Result<TokenId, ProviderError> {
        Ok(self.vocab.eos_id())
    }
}
