//! The deterministic rule-table backend: exact lookups, longest-suffix
//! backoff, and the uniform fallback.
//!
//! Run with: cargo run -p cfdecode --example table_lm

use cfdecode::provider::{LmProvider, TableLm};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = serde_json::json!({
        "vocab": ["<bos>", "<eos>", "<unk>", "capital", "of", "france", "paris", "rome"],
        "order": 3,
        "rules": [
            {"context": ["capital", "of", "france"], "dist": {"paris": 0.9, "rome": 0.1}},
            {"context": ["of", "france"], "dist": {"rome": 1.0}},
            {"context": ["paris"], "dist": {"<eos>": 1.0}}
        ]
    })
    .to_string();
    let lm = TableLm::from_json(&spec, "inline")?;
    let vocab = lm.vocabulary();

    let show = |text: &str| {
        let prefix = lm.tokenize(text).unwrap();
        let dist = lm.next_distribution(&prefix).unwrap();
        let mut top = dist.top_k(3);
        top.retain(|(_, p)| *p > 0.0);
        let rendered: Vec<String> = top
            .iter()
            .map(|(id, p)| format!("{}={:.3}", vocab.surface(*id).unwrap(), p))
            .collect();
        println!("  p(next | {text:?}) -> {}", rendered.join(", "));
    };

    println!("exact order-3 rule:");
    show("capital of france");

    println!("\nbackoff to the order-2 rule when the full trigram is unknown:");
    show("paris of france");

    println!("\norder-1 rule:");
    show("rome likes paris");

    println!("\nuniform fallback when nothing matches:");
    show("rome rome");

    println!("\nthe same prefix always yields the same bits:");
    let prefix = lm.tokenize("capital of france")?;
    let a = lm.next_distribution(&prefix)?;
    let b = lm.next_distribution(&prefix)?;
    println!("  bitwise equal: {}", a.probs() == b.probs());
    Ok(())
}
