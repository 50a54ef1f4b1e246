//! Side-by-side greedy vs counterfactual decoding on the bundled
//! hallucination fixture.
//!
//! Run with: cargo run -p cfdecode --example dual_decode
//!
//! The fixture models a chat that asks "who directed inception" with the
//! knowledge "inception directed by nolan" available. The underlying model
//! slightly prefers the wrong answer ("cameron") given the full context and
//! strongly prefers it given the knowledge alone, so subtracting the
//! knowledge-only stream flips the choice to the grounded answer.

use cfdecode::context::{build_counterfactual, build_factual, PromptTemplate};
use cfdecode::decoder::{counterfactual_decode, greedy_decode, DecodeParams};
use cfdecode::provider::TableLm;
use cfdecode::selector::select;
use cfdecode::{load_dataset, NullMode};

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let lm = TableLm::load(fixture("world_lm.json"))?;
    let examples = load_dataset(fixture("hallu10.jsonl"))?;
    let example = &examples[0];
    let template = PromptTemplate::default();
    let params = DecodeParams::for_provider(&lm)?;

    println!("=== Dialogue ===");
    for turn in example.history().turns() {
        println!("  {:?}: {}", turn.speaker, turn.text());
    }
    let selection = select(example.history(), example.pool(), 1);
    println!("\n=== Selected knowledge ===");
    for (piece, score) in &selection.ranked {
        println!("  [{:.3}] {}: {}", score, piece.id, piece.render());
    }

    let vocab = lm.vocabulary();
    let factual = build_factual(example.history(), &selection.selected, &template, vocab)?;
    let counterfactual = build_counterfactual(
        example.history(),
        &selection.selected,
        &template,
        vocab,
        NullMode::QueryOnly,
    )?;
    println!("\n=== Contexts ===");
    println!("  factual:        {}", factual.text);
    println!("  counterfactual: {}", counterfactual.text);

    let (greedy, _) = greedy_decode(&lm, &factual, &params)?;
    let (dual, trace) = counterfactual_decode(&lm, &factual, &counterfactual, &params)?;

    println!("\n=== Step table (counterfactual decode) ===");
    println!("  step  lambda    chosen        best factual    best counterfactual");
    for step in &trace.steps {
        let word = |id| vocab.surface(id).unwrap_or("?");
        let best = |topk: &[(cfdecode::TokenId, f64)]| {
            topk.first()
                .map(|(id, p)| format!("{} ({:.2})", word(*id), p))
                .unwrap_or_default()
        };
        println!(
            "  {:<5} {:<9.4} {:<13} {:<15} {}",
            step.i,
            step.lambda_i,
            word(step.chosen),
            best(&step.p_fact_topk),
            best(&step.p_cf_topk),
        );
    }

    println!("\n=== Responses ===");
    println!("  plain greedy:   {:?}   <- parrots the knowledge-biased token", greedy.text);
    println!("  counterfactual: {:?}   <- grounded answer survives the subtraction", dual.text);
    Ok(())
}
