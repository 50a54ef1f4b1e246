//! Batch evaluation over the bundled corpus: every example decoded in both
//! modes, proxy metrics aggregated into a paired report.
//!
//! Run with: cargo run -p cfdecode --example batch_eval

use cfdecode::decoder::DecodeParams;
use cfdecode::eval::{run_eval, EvalConfig};
use cfdecode::load_dataset;
use cfdecode::provider::TableLm;

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let lm = TableLm::load(fixture("world_lm.json"))?;
    let examples = load_dataset(fixture("corpus50.jsonl"))?;
    let config = EvalConfig::new(DecodeParams::for_provider(&lm)?, "table:world_lm.json");
    let report = run_eval(&lm, &examples, &config)?;

    println!(
        "evaluated {} examples (alpha={}, strength={})\n",
        report.records.len(),
        report.config.alpha,
        report.config.strength
    );
    println!("{:<24} {:>10} {:>10}", "metric", "plain", "ah");
    let rows = [
        ("mean knowledge_f1", report.plain.mean_knowledge_f1, report.ah.mean_knowledge_f1),
        ("mean query_overlap_f1", report.plain.mean_query_overlap_f1, report.ah.mean_query_overlap_f1),
        ("distinct-1", report.plain.distinct_1, report.ah.distinct_1),
        ("distinct-2", report.plain.distinct_2, report.ah.distinct_2),
        ("generic rate", report.plain.generic_rate, report.ah.generic_rate),
        ("mean length", report.plain.mean_response_length, report.ah.mean_response_length),
    ];
    for (name, plain, ah) in rows {
        println!("{name:<24} {plain:>10.4} {ah:>10.4}");
    }

    println!("\nexamples where the modes disagree:");
    for record in &report.records {
        if record.plain.response != record.ah.response {
            println!(
                "  {:<10} plain={:?} ah={:?}",
                record.example_id,
                truncate(&record.plain.response),
                truncate(&record.ah.response)
            );
        }
    }
    Ok(())
}

fn truncate(s: &str) -> String {
    if s.len() > 32 {
        format!("{}...", &s[..32])
    } else {
        s.to_string()
    }
}
