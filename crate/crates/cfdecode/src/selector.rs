//! Knowledge selection: rank a pool by relevance to the current dialogue.
//!
//! Scoring is cosine similarity between TF-IDF vectors of the query words
//! and each rendered knowledge piece, with document frequencies taken over
//! the pool. The scoring function is deliberately simple and fully
//! deterministic; dense retrieval is out of scope.

use std::collections::{BTreeMap, HashMap};

use crate::dialogue::{DialogueHistory, KnowledgePiece, KnowledgePool};

/// Which part of the dialogue the scorer compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoringScope {
    /// Score against the query only. KdConv-style queries carry the topical
    /// entity, and mixing in the full history dilutes it.
    #[default]
    Query,
    /// Score against every turn of the history.
    FullHistory,
}

/// Ranked pool plus the selected prefix.
#[derive(Debug, Clone)]
pub struct SelectionResult {
    /// All pieces sorted by descending score, ties broken by ascending id.
    pub ranked: Vec<(KnowledgePiece, f64)>,
    /// The top pieces, a prefix of `ranked`.
    pub selected: Vec<KnowledgePiece>,
}

impl SelectionResult {
    pub fn selected_ids(&self) -> Vec<String> {
        self.selected.iter().map(|p| p.id.clone()).collect()
    }
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

fn term_counts(tokens: &[String]) -> HashMap<&str, f64> {
    let mut counts: HashMap<&str, f64> = HashMap::new();
    for token in tokens {
        *counts.entry(token.as_str()).or_insert(0.0) += 1.0;
    }
    counts
}

/// Smoothed inverse document frequencies over the pool's rendered pieces.
/// Terms unseen in the pool are treated as if they occurred in one document.
fn idf_table(pool: &KnowledgePool) -> HashMap<String, f64> {
    let mut df: HashMap<String, f64> = HashMap::new();
    for piece in pool.pieces() {
        let mut seen = std::collections::HashSet::new();
        for word in words(&piece.render()) {
            if seen.insert(word.clone()) {
                *df.entry(word).or_insert(0.0) += 1.0;
            }
        }
    }
    let n = pool.len() as f64;
    df.into_iter()
        .map(|(term, count)| (term, ((1.0 + n) / (1.0 + count)).ln() + 1.0))
        .collect()
}

fn idf_of(table: &HashMap<String, f64>, n: f64, term: &str) -> f64 {
    match table.get(term) {
        Some(&idf) => idf,
        // Unseen term: same weight as a df-1 term.
        None => ((1.0 + n) / 2.0).ln() + 1.0,
    }
}

// Weighted vectors are ordered maps so that the cosine sums always run in
// term order; hash-iteration order would perturb the low bits and break both
// run-to-run determinism and permutation invariance.
fn weighted(tokens: &[String], table: &HashMap<String, f64>, n: f64) -> BTreeMap<String, f64> {
    term_counts(tokens)
        .into_iter()
        .map(|(term, tf)| (term.to_string(), tf * idf_of(table, n, term)))
        .collect()
}

fn cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let mut dot = 0.0;
    let mut norm_a_sq = 0.0;
    for (term, wa) in a {
        norm_a_sq += wa * wa;
        if let Some(wb) = b.get(term) {
            dot += wa * wb;
        }
    }
    if dot == 0.0 {
        return 0.0;
    }
    let norm_b_sq: f64 = b.values().map(|w| w * w).sum();
    (dot / (norm_a_sq * norm_b_sq).sqrt()).clamp(0.0, 1.0)
}

fn dialogue_text(history: &DialogueHistory, scope: ScoringScope) -> String {
    match scope {
        ScoringScope::Query => history.query().text().to_string(),
        ScoringScope::FullHistory => history
            .turns()
            .iter()
            .map(|t| t.text())
            .collect::<Vec<_>>()
            .join(" "),
    }
}

/// Relevance of one piece to the dialogue query, in `[0, 1]`.
pub fn score_piece(history: &DialogueHistory, piece: &KnowledgePiece, pool: &KnowledgePool) -> f64 {
    score_piece_scoped(history, piece, pool, ScoringScope::Query)
}

pub fn score_piece_scoped(
    history: &DialogueHistory,
    piece: &KnowledgePiece,
    pool: &KnowledgePool,
    scope: ScoringScope,
) -> f64 {
    let table = idf_table(pool);
    let n = pool.len() as f64;
    let query_vec = weighted(&words(&dialogue_text(history, scope)), &table, n);
    let piece_vec = weighted(&words(&piece.render()), &table, n);
    cosine(&query_vec, &piece_vec)
}

/// Rank the whole pool and keep the best `top_n` pieces.
pub fn select(history: &DialogueHistory, pool: &KnowledgePool, top_n: usize) -> SelectionResult {
    select_scoped(history, pool, top_n, ScoringScope::Query)
}

pub fn select_scoped(
    history: &DialogueHistory,
    pool: &KnowledgePool,
    top_n: usize,
    scope: ScoringScope,
) -> SelectionResult {
    let table = idf_table(pool);
    let n = pool.len() as f64;
    let query_vec = weighted(&words(&dialogue_text(history, scope)), &table, n);
    let mut ranked: Vec<(KnowledgePiece, f64)> = pool
        .pieces()
        .iter()
        .map(|piece| {
            let piece_vec = weighted(&words(&piece.render()), &table, n);
            (piece.clone(), cosine(&query_vec, &piece_vec))
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| a.0.id.cmp(&b.0.id))
    });
    let selected = ranked
        .iter()
        .take(top_n)
        .map(|(piece, _)| piece.clone())
        .collect();
    SelectionResult { ranked, selected }
}
