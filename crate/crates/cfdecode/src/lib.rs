//! Counterfactual dual-decoding for knowledge-grounded dialogue.
//!
//! Knowledge-grounded generation conditions a language model on retrieved
//! knowledge, which helps informativeness but lets mismatched or redundant
//! knowledge pull the model toward hallucinated continuations. This crate
//! decodes twice in lockstep — once with the real dialogue context, once
//! with the dialogue nulled out so only the knowledge speaks — and picks
//! each token by the decayed difference of the two next-token
//! distributions. Tokens the knowledge alone would produce get suppressed;
//! tokens that need the dialogue win.
//!
//! The crate is organized around the stages of that pipeline:
//!
//! - [`dialogue`]: histories, knowledge pools, dataset rows
//! - [`vocab`] and [`provider`]: token ids and next-token distribution
//!   backends, including the deterministic rule-table oracle
//! - [`selector`]: TF-IDF knowledge selection
//! - [`context`]: prompt assembly for the factual, counterfactual and null
//!   scenarios
//! - [`decoder`]: greedy search and the dual-stream combination rule
//! - [`effects`]: total/direct/indirect effect vectors per decode step
//! - [`eval`]: batch evaluation with lexical proxy metrics
//! - [`remote`]: HTTP backend client and the bundled stub server
//! - [`cli`]: the `cfdecode` command-line front end
//!
//! The `examples/` directory holds one runnable walkthrough per capability;
//! start with `dual_decode`.

pub mod cli;
pub mod context;
pub mod decoder;
pub mod dialogue;
pub mod effects;
pub mod eval;
pub mod provider;
pub mod remote;
pub mod selector;
pub mod vocab;

pub use context::{
    build_counterfactual, build_factual, build_null, Context, PromptTemplate, Provenance,
};
pub use decoder::{
    combine_step, counterfactual_decode, decay, greedy_decode, DecodeParams, DecodeTrace,
    Response, StopReason,
};
pub use dialogue::{
    DialogueExample, DialogueHistory, KnowledgePiece, KnowledgePool, NullMode, Speaker, Utterance,
};
pub use effects::{decomposition_residual, step_effects, trace_effects, EffectVectors};
pub use eval::{knowledge_f1, load_dataset, run_eval, EvalConfig, Report};
pub use provider::{LmProvider, NextTokenDistribution, TableLm};
pub use remote::{RemoteLm, StubServer};
pub use selector::{score_piece, select, SelectionResult};
pub use vocab::{detokenize, tokenize, TokenId, Vocabulary};
