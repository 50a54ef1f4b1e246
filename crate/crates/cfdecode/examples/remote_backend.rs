//! The HTTP wire protocol: spins up the bundled stub server in-process,
//! decodes through the remote client, and shows parity with the local
//! table backend.
//!
//! Run with: cargo run -p cfdecode --example remote_backend

use std::time::Duration;

use cfdecode::context::{build_counterfactual, build_factual, PromptTemplate};
use cfdecode::decoder::{counterfactual_decode, DecodeParams};
use cfdecode::provider::{LmProvider, TableLm};
use cfdecode::remote::{RemoteLm, StubServer};
use cfdecode::selector::select;
use cfdecode::{load_dataset, NullMode};

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let server = StubServer::spawn(TableLm::load(fixture("world_lm.json"))?)?;
    println!("stub server listening on {}", server.url());

    let local = TableLm::load(fixture("world_lm.json"))?;
    let remote = RemoteLm::connect(server.url(), local.vocab_size(), Duration::from_secs(10))?;
    println!(
        "connected; vocab_size={} eos_id={}\n",
        remote.vocab_size(),
        remote.eos_id()?
    );

    let examples = load_dataset(fixture("hallu10.jsonl"))?;
    let example = &examples[0];
    let template = PromptTemplate::default();
    let selection = select(example.history(), example.pool(), 1);

    // Tokenization happens on the server for the remote path.
    let remote_fact = build_factual(example.history(), &selection.selected, &template, &remote)?;
    let remote_cf = build_counterfactual(
        example.history(),
        &selection.selected,
        &template,
        &remote,
        NullMode::QueryOnly,
    )?;
    let local_fact = build_factual(
        example.history(),
        &selection.selected,
        &template,
        local.vocabulary(),
    )?;
    println!(
        "tokenize parity with the local vocabulary: {}",
        remote_fact.tokens == local_fact.tokens
    );

    let params = DecodeParams::for_provider(&remote)?;
    let (response, trace) = counterfactual_decode(&remote, &remote_fact, &remote_cf, &params)?;
    println!(
        "remote counterfactual decode: {:?} (stop: {:?}, {} steps)",
        response.text,
        trace.stop_reason,
        trace.steps.len()
    );

    // Truncated top_k still yields a valid distribution: the residual mass
    // spreads uniformly over the ids the server did not return.
    let truncated = RemoteLm::connect(server.url(), 5, Duration::from_secs(10))?;
    let dist = truncated.next_distribution(&remote_fact.tokens)?;
    println!(
        "top_k=5 reconstruction still sums to one: {:.12}",
        dist.probs().iter().sum::<f64>()
    );
    Ok(())
}
