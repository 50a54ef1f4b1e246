//! Core data model for dialogues, knowledge pools, and dataset examples.
//!
//! A [`DialogueHistory`] always ends with a user turn (the query); a
//! [`KnowledgePool`] holds the candidate knowledge pieces available for
//! grounding a response. Both are immutable after construction, so they can
//! be shared freely across threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error("utterance text is empty or whitespace-only")]
    EmptyUtterance,
    #[error("malformed history: {0}")]
    MalformedHistory(String),
    #[error("knowledge piece {0:?} renders to empty text")]
    EmptyKnowledge(String),
    #[error("duplicate knowledge id {0:?}")]
    DuplicateKnowledgeId(String),
}

/// Who produced an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

/// One turn of a conversation. The text always contains at least one
/// non-whitespace character.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Utterance {
    pub speaker: Speaker,
    text: String,
}

impl Utterance {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Result<Self, DialogueError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(DialogueError::EmptyUtterance);
        }
        Ok(Self { speaker, text })
    }

    pub fn user(text: impl Into<String>) -> Result<Self, DialogueError> {
        Self::new(Speaker::User, text)
    }

    pub fn system(text: impl Into<String>) -> Result<Self, DialogueError> {
        Self::new(Speaker::System, text)
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// How the dialogue history is blanked out for the counterfactual stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullMode {
    /// Keep only the final user query. This is the default: the
    /// counterfactual stream still sees what is being asked, so it produces
    /// a dialogue-shaped continuation that is comparable to the factual one.
    #[default]
    QueryOnly,
    /// Drop every turn, including the query.
    Empty,
}

/// An ordered, non-empty sequence of turns ending with a user turn.
///
/// Speaker alternation is deliberately not enforced; arbitrary chat logs are
/// accepted as long as the final turn is the user query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct DialogueHistory {
    turns: Vec<Utterance>,
}

impl DialogueHistory {
    pub fn new(turns: Vec<Utterance>) -> Result<Self, DialogueError> {
        match turns.last() {
            None => Err(DialogueError::MalformedHistory("no turns".into())),
            Some(last) if last.speaker != Speaker::User => Err(DialogueError::MalformedHistory(
                "last turn must be a user turn (the query)".into(),
            )),
            Some(_) => Ok(Self { turns }),
        }
    }

    pub fn turns(&self) -> &[Utterance] {
        &self.turns
    }

    /// The final user turn, i.e. the query the response must answer.
    pub fn query(&self) -> &Utterance {
        self.turns.last().expect("history is non-empty")
    }

    /// All turns before the query.
    pub fn prior_turns(&self) -> &[Utterance] {
        &self.turns[..self.turns.len() - 1]
    }

    /// The turn sequence the counterfactual stream sees: the query alone
    /// under [`NullMode::QueryOnly`], nothing at all under
    /// [`NullMode::Empty`]. An empty slice is legal only as output of this
    /// operation.
    pub fn nullified(&self, mode: NullMode) -> Vec<Utterance> {
        match mode {
            NullMode::QueryOnly => vec![self.query().clone()],
            NullMode::Empty => Vec::new(),
        }
    }
}

impl<'de> Deserialize<'de> for DialogueHistory {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let turns = Vec::<Utterance>::deserialize(deserializer)?;
        DialogueHistory::new(turns).map_err(serde::de::Error::custom)
    }
}

impl<'de> Deserialize<'de> for Utterance {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            speaker: Speaker,
            text: String,
        }
        let raw = Raw::deserialize(deserializer)?;
        Utterance::new(raw.speaker, raw.text).map_err(serde::de::Error::custom)
    }
}

/// The payload of a knowledge piece: free text, or a (subject, relation,
/// object) triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KnowledgeContent {
    Text {
        text: String,
    },
    Triple {
        subject: String,
        relation: String,
        object: String,
    },
}

/// A single candidate knowledge entry, identified by a pool-unique id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgePiece {
    pub id: String,
    #[serde(flatten)]
    pub content: KnowledgeContent,
}

impl KnowledgePiece {
    pub fn text(id: impl Into<String>, text: impl Into<String>) -> Result<Self, DialogueError> {
        let piece = Self {
            id: id.into(),
            content: KnowledgeContent::Text { text: text.into() },
        };
        piece.check_renders()?;
        Ok(piece)
    }

    pub fn triple(
        id: impl Into<String>,
        subject: impl Into<String>,
        relation: impl Into<String>,
        object: impl Into<String>,
    ) -> Result<Self, DialogueError> {
        let piece = Self {
            id: id.into(),
            content: KnowledgeContent::Triple {
                subject: subject.into(),
                relation: relation.into(),
                object: object.into(),
            },
        };
        piece.check_renders()?;
        Ok(piece)
    }

    /// Serialize the piece for prompt insertion: free text verbatim, triples
    /// joined by single spaces with no extra punctuation.
    pub fn render(&self) -> String {
        match &self.content {
            KnowledgeContent::Text { text } => text.clone(),
            KnowledgeContent::Triple {
                subject,
                relation,
                object,
            } => format!("{subject} {relation} {object}"),
        }
    }

    fn check_renders(&self) -> Result<(), DialogueError> {
        if self.render().trim().is_empty() {
            return Err(DialogueError::EmptyKnowledge(self.id.clone()));
        }
        Ok(())
    }
}

/// The external knowledge candidates for one example. May be empty, in which
/// case decoding degrades to plain dialogue generation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct KnowledgePool {
    pieces: Vec<KnowledgePiece>,
}

impl KnowledgePool {
    pub fn new(pieces: Vec<KnowledgePiece>) -> Result<Self, DialogueError> {
        let mut seen = std::collections::HashSet::new();
        for piece in &pieces {
            piece.check_renders()?;
            if !seen.insert(piece.id.as_str()) {
                return Err(DialogueError::DuplicateKnowledgeId(piece.id.clone()));
            }
        }
        Ok(Self { pieces })
    }

    pub fn empty() -> Self {
        Self { pieces: Vec::new() }
    }

    pub fn pieces(&self) -> &[KnowledgePiece] {
        &self.pieces
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }
}

impl<'de> Deserialize<'de> for KnowledgePool {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let pieces = Vec::<KnowledgePiece>::deserialize(deserializer)?;
        KnowledgePool::new(pieces).map_err(serde::de::Error::custom)
    }
}

/// One dataset row: a dialogue, its knowledge pool, and an optional gold
/// response. Stored on disk as one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueExample {
    pub example_id: String,
    pub turns: DialogueHistory,
    #[serde(default = "KnowledgePool::empty")]
    pub knowledge: KnowledgePool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_response: Option<String>,
}

impl DialogueExample {
    pub fn history(&self) -> &DialogueHistory {
        &self.turns
    }

    pub fn pool(&self) -> &KnowledgePool {
        &self.knowledge
    }
}
