//! TF-IDF knowledge selection over a small pool.
//!
//! Run with: cargo run -p cfdecode --example knowledge_selection

use cfdecode::dialogue::{DialogueHistory, KnowledgePiece, KnowledgePool, Utterance};
use cfdecode::selector::{select, select_scoped, ScoringScope};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let history = DialogueHistory::new(vec![
        Utterance::user("i love old films")?,
        Utterance::system("me too, which one?")?,
        Utterance::user("who directed vertigo")?,
    ])?;
    let pool = KnowledgePool::new(vec![
        KnowledgePiece::triple("k-vertigo", "vertigo", "director", "hitchcock")?,
        KnowledgePiece::text("k-films", "films flicker in old projectors")?,
        KnowledgePiece::text("k-pasta", "pasta carbonara needs guanciale")?,
    ])?;

    println!("query: {:?}\n", history.query().text());
    println!("ranked by query-only TF-IDF cosine:");
    let result = select(&history, &pool, 2);
    for (piece, score) in &result.ranked {
        println!("  [{score:.4}] {}: {}", piece.id, piece.render());
    }
    println!("selected: {:?}", result.selected_ids());

    println!("\nranked against the full history instead:");
    let full = select_scoped(&history, &pool, 2, ScoringScope::FullHistory);
    for (piece, score) in &full.ranked {
        println!("  [{score:.4}] {}: {}", piece.id, piece.render());
    }

    println!("\nan empty pool is legal and selects nothing:");
    let empty = select(&history, &KnowledgePool::empty(), 3);
    println!("  selected: {:?}", empty.selected_ids());
    Ok(())
}
