//! Prompt context assembly.
//!
//! Three contexts exist per example: the factual one (full history plus the
//! knowledge selected for it), the counterfactual one (nulled history, same
//! knowledge), and the null baseline (nulled history, knowledge re-selected
//! under the nulled dialogue). All three are produced by instantiating one
//! [`PromptTemplate`], which guarantees they end in the same
//! query-plus-response-marker suffix so that generated tokens line up
//! position for position across streams.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{DialogueHistory, KnowledgePiece, KnowledgePool, NullMode, Utterance};
use crate::provider::ProviderError;
use crate::selector::{select_scoped, ScoringScope};
use crate::vocab::{tokenize, TokenId, Vocabulary};

pub const DEFAULT_MAX_CONTEXT_TOKENS: usize = 1024;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("pattern must contain {{QUERY}} exactly once, found {0}")]
    QueryPlaceholder(usize),
    #[error("pattern may contain {{{0}}} at most once, found {1}")]
    RepeatedPlaceholder(&'static str, usize),
    #[error("failed to read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse template {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

fn default_max_context_tokens() -> usize {
    DEFAULT_MAX_CONTEXT_TOKENS
}

/// A prompt pattern with `{KNOWLEDGE}`, `{HISTORY}` and `{QUERY}` slots.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawTemplate")]
pub struct PromptTemplate {
    pattern: String,
    user_prefix: String,
    system_prefix: String,
    knowledge_separator: String,
    #[serde(default = "default_max_context_tokens")]
    max_context_tokens: usize,
}

#[derive(Deserialize)]
struct RawTemplate {
    pattern: String,
    user_prefix: String,
    system_prefix: String,
    knowledge_separator: String,
    #[serde(default = "default_max_context_tokens")]
    max_context_tokens: usize,
}

impl TryFrom<RawTemplate> for PromptTemplate {
    type Error = TemplateError;

    fn try_from(raw: RawTemplate) -> Result<Self, Self::Error> {
        let mut template = PromptTemplate::new(
            raw.pattern,
            raw.user_prefix,
            raw.system_prefix,
            raw.knowledge_separator,
        )?;
        template.max_context_tokens = raw.max_context_tokens;
        Ok(template)
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::new(
            "knowledge: {KNOWLEDGE} dialogue: {HISTORY} {QUERY} response:",
            "user: ",
            "system: ",
            " ; ",
        )
        .expect("default template is valid")
    }
}

impl PromptTemplate {
    pub fn new(
        pattern: impl Into<String>,
        user_prefix: impl Into<String>,
        system_prefix: impl Into<String>,
        knowledge_separator: impl Into<String>,
    ) -> Result<Self, TemplateError> {
        let pattern = pattern.into();
        let count = |slot: &str| pattern.matches(slot).count();
        let queries = count("{QUERY}");
        if queries != 1 {
            return Err(TemplateError::QueryPlaceholder(queries));
        }
        for (name, slot) in [("KNOWLEDGE", "{KNOWLEDGE}"), ("HISTORY", "{HISTORY}")] {
            let found = count(slot);
            if found > 1 {
                return Err(TemplateError::RepeatedPlaceholder(name, found));
            }
        }
        Ok(Self {
            pattern,
            user_prefix: user_prefix.into(),
            system_prefix: system_prefix.into(),
            knowledge_separator: knowledge_separator.into(),
            max_context_tokens: DEFAULT_MAX_CONTEXT_TOKENS,
        })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, TemplateError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| TemplateError::Parse {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn with_max_context_tokens(mut self, max: usize) -> Self {
        self.max_context_tokens = max;
        self
    }

    pub fn max_context_tokens(&self) -> usize {
        self.max_context_tokens
    }

    pub fn format_turn(&self, turn: &Utterance) -> String {
        use crate::dialogue::Speaker;
        let prefix = match turn.speaker {
            Speaker::User => &self.user_prefix,
            Speaker::System => &self.system_prefix,
        };
        format!("{prefix}{}", turn.text())
    }

    fn expand(&self, knowledge: &str, prior: &[Utterance], query: Option<&Utterance>) -> String {
        let history_text = prior
            .iter()
            .map(|t| self.format_turn(t))
            .collect::<Vec<_>>()
            .join(" ");
        let query_text = query.map(|q| self.format_turn(q)).unwrap_or_default();
        self.pattern
            .replace("{KNOWLEDGE}", knowledge)
            .replace("{HISTORY}", &history_text)
            .replace("{QUERY}", &query_text)
    }

    fn render_knowledge(&self, pieces: &[KnowledgePiece]) -> String {
        pieces
            .iter()
            .map(|p| p.render())
            .collect::<Vec<_>>()
            .join(&self.knowledge_separator)
    }
}

/// Which scenario a context realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Full history plus the knowledge selected for it.
    Factual,
    /// Nulled history, but the knowledge selected under the real history.
    Counterfactual,
    /// Nulled history and knowledge selected under the nulled history.
    Null,
}

/// A fully assembled, tokenized prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub tokens: Vec<TokenId>,
    pub provenance: Provenance,
    pub selected_knowledge_ids: Vec<String>,
    /// The text the tokens came from, kept for traces and debugging.
    pub text: String,
}

/// Text-to-ids boundary the builders run against: a local [`Vocabulary`] or
/// a remote backend's tokenize endpoint.
pub trait Tokenizer {
    fn encode(&self, text: &str) -> Result<Vec<TokenId>, ProviderError>;
}

impl Tokenizer for Vocabulary {
    fn encode(&self, text: &str) -> Result<Vec<TokenId>, ProviderError> {
        Ok(tokenize(text, self))
    }
}

impl Tokenizer for dyn crate::provider::LmProvider + '_ {
    fn encode(&self, text: &str) -> Result<Vec<TokenId>, ProviderError> {
        self.tokenize(text)
    }
}

fn assemble<T: Tokenizer + ?Sized>(
    template: &PromptTemplate,
    tok: &T,
    knowledge: &str,
    prior: &[Utterance],
    query: Option<&Utterance>,
    provenance: Provenance,
    selected_knowledge_ids: Vec<String>,
) -> Result<Context, ProviderError> {
    let mut prior = prior.to_vec();
    let mut text = template.expand(knowledge, &prior, query);
    let mut tokens = tok.encode(&text)?;
    // Oldest turns go first when the context exceeds the cap; the query and
    // the knowledge slot are never dropped.
    while tokens.len() > template.max_context_tokens && !prior.is_empty() {
        prior.remove(0);
        text = template.expand(knowledge, &prior, query);
        tokens = tok.encode(&text)?;
    }
    Ok(Context {
        tokens,
        provenance,
        selected_knowledge_ids,
        text,
    })
}

/// The conventional context: full history plus its selected knowledge.
pub fn build_factual<T: Tokenizer + ?Sized>(
    history: &DialogueHistory,
    selected_knowledge: &[KnowledgePiece],
    template: &PromptTemplate,
    tok: &T,
) -> Result<Context, ProviderError> {
    assemble(
        template,
        tok,
        &template.render_knowledge(selected_knowledge),
        history.prior_turns(),
        Some(history.query()),
        Provenance::Factual,
        selected_knowledge.iter().map(|p| p.id.clone()).collect(),
    )
}

/// The counterfactual context: history nulled out, but the *same* knowledge
/// the factual context uses.
pub fn build_counterfactual<T: Tokenizer + ?Sized>(
    history: &DialogueHistory,
    selected_knowledge: &[KnowledgePiece],
    template: &PromptTemplate,
    tok: &T,
    null_mode: NullMode,
) -> Result<Context, ProviderError> {
    let nulled = history.nullified(null_mode);
    let (prior, query) = match nulled.split_last() {
        Some((last, rest)) => (rest.to_vec(), Some(last.clone())),
        None => (Vec::new(), None),
    };
    assemble(
        template,
        tok,
        &template.render_knowledge(selected_knowledge),
        &prior,
        query.as_ref(),
        Provenance::Counterfactual,
        selected_knowledge.iter().map(|p| p.id.clone()).collect(),
    )
}

/// The baseline context: nulled history *and* knowledge selected under the
/// nulled dialogue (none at all when the null mode drops the query).
pub fn build_null<T: Tokenizer + ?Sized>(
    history: &DialogueHistory,
    pool: &KnowledgePool,
    top_n: usize,
    template: &PromptTemplate,
    tok: &T,
    null_mode: NullMode,
) -> Result<Context, ProviderError> {
    let nulled = history.nullified(null_mode);
    let (selected, prior, query) = match null_mode {
        NullMode::Empty => (Vec::new(), Vec::new(), None),
        NullMode::QueryOnly => {
            let query = nulled.last().cloned();
            let nulled_history =
                DialogueHistory::new(nulled.clone()).expect("query-only history is valid");
            let selection = select_scoped(&nulled_history, pool, top_n, ScoringScope::Query);
            (selection.selected, Vec::new(), query)
        }
    };
    assemble(
        template,
        tok,
        &template.render_knowledge(&selected),
        &prior,
        query.as_ref(),
        Provenance::Null,
        selected.iter().map(|p| p.id.clone()).collect(),
    )
}
