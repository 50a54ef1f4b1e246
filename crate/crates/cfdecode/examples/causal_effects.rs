//! Per-step effect vectors: how much of each token's probability is owed to
//! the dialogue directly (tde), to knowledge selection (pie), and in total
//! (te), with the te = tde + pie identity checked numerically.
//!
//! Run with: cargo run -p cfdecode --example causal_effects

use cfdecode::context::{build_counterfactual, build_factual, build_null, PromptTemplate};
use cfdecode::decoder::{counterfactual_decode, DecodeParams};
use cfdecode::effects::{decomposition_residual, trace_effects};
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
    let vocab = lm.vocabulary();

    let selection = select(example.history(), example.pool(), 1);
    let factual = build_factual(example.history(), &selection.selected, &template, vocab)?;
    let counterfactual = build_counterfactual(
        example.history(),
        &selection.selected,
        &template,
        vocab,
        NullMode::QueryOnly,
    )?;
    let null = build_null(
        example.history(),
        example.pool(),
        1,
        &template,
        vocab,
        NullMode::QueryOnly,
    )?;

    let (response, decode_trace) =
        counterfactual_decode(&lm, &factual, &counterfactual, &params)?;
    let chosen: Vec<_> = decode_trace.steps.iter().map(|s| s.chosen).collect();
    let effects = trace_effects(&lm, &factual, &counterfactual, &null, &chosen)?;

    println!("response: {:?}", response.text);
    println!("mean L1 of tde across steps: {:.4}\n", effects.mean_l1_tde);

    for (i, step) in effects.steps.iter().enumerate() {
        println!("step {}:", i + 1);
        println!(
            "  norms: |te|={:.4} |tde|={:.4} |pie|={:.4}",
            step.l1_te(),
            step.l1_tde(),
            step.l1_pie()
        );
        println!("  decomposition residual: {:.2e}", decomposition_residual(step));
        let suppressed = step.top_suppressed(3);
        if suppressed.is_empty() {
            println!("  nothing suppressed (streams agree)");
        } else {
            println!("  most suppressed tokens (negative tde):");
            for (id, tde) in suppressed {
                println!("    {:<12} tde = {tde:+.3}", vocab.surface(id)?);
            }
        }
    }
    Ok(())
}
