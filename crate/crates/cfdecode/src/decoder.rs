//! Greedy and counterfactual dual-stream decoding.
//!
//! The dual decoder runs two synchronized generation streams: the factual
//! one sees the real context, the counterfactual one sees the nulled
//! context, and both share every generated token. At step `i` the next
//! token is the argmax of
//!
//! ```text
//! p_factual(v) - strength * alpha^(i-1) * p_counterfactual(v)
//! ```
//!
//! over the whole vocabulary. Tokens the counterfactual stream predicts
//! confidently from the knowledge alone get penalized, which steers the
//! choice toward tokens that need the dialogue itself. The decay keeps the
//! penalty from counteracting generation quality in later steps, where both
//! streams have converged on the shared suffix anyway.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{Context, Provenance};
use crate::dialogue::NullMode;
use crate::provider::{LmProvider, NextTokenDistribution, ProviderError};
use crate::vocab::TokenId;

/// Entries kept per step in the trace.
pub const TRACE_TOP_K: usize = 10;

pub const DEFAULT_ALPHA: f64 = 0.3;
pub const DEFAULT_STRENGTH: f64 = 1.0;
pub const DEFAULT_MAX_NEW_TOKENS: usize = 64;
pub const DEFAULT_TOP_K_REMOTE: usize = 50;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid decode parameter: {0}")]
    InvalidParams(String),
    #[error("step index must be >= 1, got {0}")]
    StepIndex(usize),
    #[error("distribution sizes differ: factual {factual}, counterfactual {counterfactual}")]
    SizeMismatch { factual: usize, counterfactual: usize },
    #[error("expected a {expected:?} context, got {got:?}")]
    ProvenanceMismatch { expected: Provenance, got: Provenance },
    #[error("provider failed at step {step}: {source}")]
    Provider {
        step: usize,
        #[source]
        source: ProviderError,
    },
    #[error("{stream} stream provider failed at step {step}: {source}")]
    StreamProvider {
        stream: &'static str,
        step: usize,
        #[source]
        source: ProviderError,
    },
}

/// Knobs for one decode run. `strength` scales the counterfactual penalty:
/// 1 is the reference behavior, 0 disables it and reduces the dual decoder
/// to plain greedy search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodeParams {
    pub alpha: f64,
    pub strength: f64,
    pub max_new_tokens: usize,
    pub eos_id: TokenId,
    pub null_mode: NullMode,
    pub top_k_remote: usize,
    /// Subtract log-probabilities instead of probabilities. Off by default;
    /// the reference combination rule is probability-space.
    pub log_space: bool,
    /// Optional floor: tokens whose factual probability falls below it are
    /// never chosen (unless every token falls below it). Off by default.
    pub min_factual_prob: Option<f64>,
}

impl DecodeParams {
    pub fn new(eos_id: TokenId) -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            strength: DEFAULT_STRENGTH,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            eos_id,
            null_mode: NullMode::default(),
            top_k_remote: DEFAULT_TOP_K_REMOTE,
            log_space: false,
            min_factual_prob: None,
        }
    }

    pub fn for_provider(provider: &dyn LmProvider) -> Result<Self, ProviderError> {
        Ok(Self::new(provider.eos_id()?))
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(DecodeError::InvalidParams(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if !self.strength.is_finite() || self.strength < 0.0 {
            return Err(DecodeError::InvalidParams(format!(
                "strength must be >= 0, got {}",
                self.strength
            )));
        }
        if self.top_k_remote == 0 {
            return Err(DecodeError::InvalidParams("top_k_remote must be >= 1".into()));
        }
        if let Some(floor) = self.min_factual_prob {
            if !(0.0..=1.0).contains(&floor) {
                return Err(DecodeError::InvalidParams(format!(
                    "min_factual_prob must be in [0, 1], got {floor}"
                )));
            }
        }
        Ok(())
    }
}

/// Why a decode loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Eos,
    MaxTokens,
}

/// Everything recorded about one decode step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeStep {
    /// 1-based step index.
    pub i: usize,
    pub chosen: TokenId,
    pub lambda_i: f64,
    pub p_fact_topk: Vec<(TokenId, f64)>,
    pub p_cf_topk: Vec<(TokenId, f64)>,
    pub combined_topk: Vec<(TokenId, f64)>,
}

/// Per-step record of a whole decode, sufficient to audit every choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub steps: Vec<DecodeStep>,
    pub factual_context: Context,
    pub counterfactual_context: Option<Context>,
    pub stop_reason: StopReason,
}

/// A finished response: generated ids (end-of-sequence excluded) and their
/// surface text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub token_ids: Vec<TokenId>,
    pub text: String,
}

/// The per-step penalty weight `alpha^(i-1)`; equals 1 at the first step
/// for every alpha, including 0.
pub fn decay(i: usize, alpha: f64) -> Result<f64, DecodeError> {
    if i < 1 {
        return Err(DecodeError::StepIndex(i));
    }
    if i == 1 {
        return Ok(1.0);
    }
    Ok(alpha.powi((i - 1) as i32))
}

/// Elementwise `p_fact - strength * lambda_i * p_cf`. Entries may be
/// negative; the result is a score vector, not a distribution.
pub fn combine_step(
    p_fact: &NextTokenDistribution,
    p_cf: &NextTokenDistribution,
    lambda_i: f64,
    strength: f64,
) -> Result<Vec<f64>, DecodeError> {
    if p_fact.len() != p_cf.len() {
        return Err(DecodeError::SizeMismatch {
            factual: p_fact.len(),
            counterfactual: p_cf.len(),
        });
    }
    let weight = strength * lambda_i;
    Ok(p_fact
        .probs()
        .iter()
        .zip(p_cf.probs())
        .map(|(&f, &c)| f - weight * c)
        .collect())
}

fn combine_log_space(
    p_fact: &NextTokenDistribution,
    p_cf: &NextTokenDistribution,
    lambda_i: f64,
    strength: f64,
) -> Result<Vec<f64>, DecodeError> {
    if p_fact.len() != p_cf.len() {
        return Err(DecodeError::SizeMismatch {
            factual: p_fact.len(),
            counterfactual: p_cf.len(),
        });
    }
    let weight = strength * lambda_i;
    Ok(p_fact
        .probs()
        .iter()
        .zip(p_cf.probs())
        .map(|(&f, &c)| {
            if f == 0.0 {
                // A token the factual stream rules out stays ruled out.
                f64::NEG_INFINITY
            } else {
                f.ln() - weight * c.max(f64::MIN_POSITIVE).ln()
            }
        })
        .collect())
}

/// First index holding the maximum score; ties resolve to the lowest id.
fn argmax(scores: &[f64]) -> TokenId {
    let mut best = 0usize;
    for (i, &score) in scores.iter().enumerate().skip(1) {
        if score > scores[best] {
            best = i;
        }
    }
    TokenId(best as u32)
}

fn apply_factual_floor(scores: &mut [f64], p_fact: &NextTokenDistribution, floor: f64) {
    let any_kept = p_fact.probs().iter().any(|&p| p >= floor);
    if !any_kept {
        return;
    }
    for (score, &p) in scores.iter_mut().zip(p_fact.probs()) {
        if p < floor {
            *score = f64::NEG_INFINITY;
        }
    }
}

fn top_k_scores(scores: &[f64], k: usize) -> Vec<(TokenId, f64)> {
    let mut entries: Vec<(TokenId, f64)> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| (TokenId(i as u32), s))
        .collect();
    entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    entries.truncate(k);
    entries
}

fn finish(
    provider: &dyn LmProvider,
    generated: Vec<TokenId>,
    steps: Vec<DecodeStep>,
    factual_context: Context,
    counterfactual_context: Option<Context>,
    stop_reason: StopReason,
) -> Result<(Response, DecodeTrace), DecodeError> {
    let text = provider
        .detokenize(&generated)
        .map_err(|source| DecodeError::Provider {
            step: steps.len(),
            source,
        })?;
    Ok((
        Response {
            token_ids: generated,
            text,
        },
        DecodeTrace {
            steps,
            factual_context,
            counterfactual_context,
            stop_reason,
        },
    ))
}

/// Single-stream greedy search over the given context.
pub fn greedy_decode(
    provider: &dyn LmProvider,
    context: &Context,
    params: &DecodeParams,
) -> Result<(Response, DecodeTrace), DecodeError> {
    params.validate()?;
    let mut prefix = context.tokens.clone();
    let mut generated = Vec::new();
    let mut steps = Vec::new();
    let mut stop_reason = StopReason::MaxTokens;

    for i in 1..=params.max_new_tokens {
        let dist = provider
            .next_distribution(&prefix)
            .map_err(|source| DecodeError::Provider { step: i, source })?;
        let chosen = argmax(dist.probs());
        steps.push(DecodeStep {
            i,
            chosen,
            lambda_i: decay(i, params.alpha)?,
            p_fact_topk: dist.top_k(TRACE_TOP_K),
            p_cf_topk: Vec::new(),
            combined_topk: dist.top_k(TRACE_TOP_K),
        });
        if chosen == params.eos_id {
            stop_reason = StopReason::Eos;
            break;
        }
        prefix.push(chosen);
        generated.push(chosen);
    }

    finish(provider, generated, steps, context.clone(), None, stop_reason)
}

/// Dual-stream counterfactual decoding.
///
/// Both streams extend with the same chosen token each step, so their
/// prefixes differ only in the context segment. The counterfactual stream
/// never terminates the decode on its own: stopping is decided by the
/// combined argmax hitting `eos_id`, or by the budget.
pub fn counterfactual_decode(
    provider: &dyn LmProvider,
    ctx_factual: &Context,
    ctx_cf: &Context,
    params: &DecodeParams,
) -> Result<(Response, DecodeTrace), DecodeError> {
    params.validate()?;
    if ctx_factual.provenance != Provenance::Factual {
        return Err(DecodeError::ProvenanceMismatch {
            expected: Provenance::Factual,
            got: ctx_factual.provenance,
        });
    }
    if ctx_cf.provenance != Provenance::Counterfactual {
        return Err(DecodeError::ProvenanceMismatch {
            expected: Provenance::Counterfactual,
            got: ctx_cf.provenance,
        });
    }

    let mut prefix_fact = ctx_factual.tokens.clone();
    let mut prefix_cf = ctx_cf.tokens.clone();
    let mut generated = Vec::new();
    let mut steps = Vec::new();
    let mut stop_reason = StopReason::MaxTokens;

    for i in 1..=params.max_new_tokens {
        let p_fact =
            provider
                .next_distribution(&prefix_fact)
                .map_err(|source| DecodeError::StreamProvider {
                    stream: "factual",
                    step: i,
                    source,
                })?;
        let p_cf =
            provider
                .next_distribution(&prefix_cf)
                .map_err(|source| DecodeError::StreamProvider {
                    stream: "counterfactual",
                    step: i,
                    source,
                })?;
        let lambda_i = decay(i, params.alpha)?;
        let mut scores = if params.log_space {
            combine_log_space(&p_fact, &p_cf, lambda_i, params.strength)?
        } else {
            combine_step(&p_fact, &p_cf, lambda_i, params.strength)?
        };
        if let Some(floor) = params.min_factual_prob {
            apply_factual_floor(&mut scores, &p_fact, floor);
        }
        let chosen = argmax(&scores);
        steps.push(DecodeStep {
            i,
            chosen,
            lambda_i,
            p_fact_topk: p_fact.top_k(TRACE_TOP_K),
            p_cf_topk: p_cf.top_k(TRACE_TOP_K),
            combined_topk: top_k_scores(&scores, TRACE_TOP_K),
        });
        if chosen == params.eos_id {
            stop_reason = StopReason::Eos;
            break;
        }
        // Both streams share the generated tokens.
        prefix_fact.push(chosen);
        prefix_cf.push(chosen);
        generated.push(chosen);
    }

    finish(
        provider,
        generated,
        steps,
        ctx_factual.clone(),
        Some(ctx_cf.clone()),
        stop_reason,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::TableLm;

    fn fixture_lm() -> TableLm {
        // World: after the factual context the model slightly prefers the
        // spurious "cameron"; after the counterfactual context it prefers
        // it overwhelmingly. Subtraction must flip the choice to "nolan".
        let spec = serde_json::json!({
            "vocab": ["<bos>", "<eos>", "<unk>",
                      "knowledge:", "dialogue:", "user:", "system:", "response:",
                      "hi", "hello", "who", "directed", "inception",
                      "by", "nolan", "cameron"],
            "order": 6,
            "rules": [
                {"context": ["hello", "user:", "who", "directed", "inception", "response:"],
                 "dist": {"cameron": 0.55, "nolan": 0.45}},
                {"context": ["dialogue:", "user:", "who", "directed", "inception", "response:"],
                 "dist": {"cameron": 0.90, "nolan": 0.05, "<eos>": 0.05}},
                {"context": ["response:", "nolan"], "dist": {"<eos>": 1.0}},
                {"context": ["response:", "cameron"], "dist": {"<eos>": 1.0}}
            ]
        })
        .to_string();
        TableLm::from_json(&spec, "fixture").unwrap()
    }

    fn fixture_contexts(lm: &TableLm) -> (Context, Context) {
        use crate::context::{build_counterfactual, build_factual, PromptTemplate};
        use crate::dialogue::{DialogueHistory, KnowledgePiece, Utterance};
        let history = DialogueHistory::new(vec![
            Utterance::user("hi").unwrap(),
            Utterance::system("hello").unwrap(),
            Utterance::user("who directed inception").unwrap(),
        ])
        .unwrap();
        let knowledge = vec![KnowledgePiece::text("k1", "inception directed by nolan").unwrap()];
        let template = PromptTemplate::default();
        let vocab = lm.vocabulary();
        let fact = build_factual(&history, &knowledge, &template, vocab).unwrap();
        let cf =
            build_counterfactual(&history, &knowledge, &template, vocab, NullMode::QueryOnly)
                .unwrap();
        (fact, cf)
    }

    #[test]
    fn decay_first_step_is_one_for_any_alpha() {
        assert_eq!(decay(1, 0.3).unwrap(), 1.0);
        assert_eq!(decay(1, 0.0).unwrap(), 1.0);
        assert_eq!(decay(1, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn decay_matches_direct_exponentiation() {
        assert_eq!(decay(2, 0.3).unwrap(), 0.3);
        assert!((decay(3, 0.3).unwrap() - 0.09).abs() < 1e-12);
        // Independent oracle: sequential multiplication.
        let mut expected = 1.0;
        for i in 1..=20 {
            assert!(
                (decay(i, 0.3).unwrap() - expected).abs() < 1e-12,
                "i = {i}"
            );
            expected *= 0.3;
        }
    }

    #[test]
    fn decay_rejects_zero_step() {
        assert!(matches!(decay(0, 0.3), Err(DecodeError::StepIndex(0))));
    }

    #[test]
    fn combine_step_hand_arithmetic() {
        let p_fact = NextTokenDistribution::new(vec![0.6, 0.4]).unwrap();
        let p_cf = NextTokenDistribution::new(vec![0.9, 0.1]).unwrap();
        let scores = combine_step(&p_fact, &p_cf, 1.0, 1.0).unwrap();
        assert!((scores[0] - (-0.3)).abs() < 1e-12);
        assert!((scores[1] - 0.3).abs() < 1e-12);
        assert_eq!(argmax(&scores), TokenId(1));
    }

    #[test]
    fn combine_step_zero_strength_returns_factual() {
        let p_fact = NextTokenDistribution::new(vec![0.6, 0.4]).unwrap();
        let p_cf = NextTokenDistribution::new(vec![0.9, 0.1]).unwrap();
        let scores = combine_step(&p_fact, &p_cf, 0.7, 0.0).unwrap();
        assert_eq!(scores, p_fact.probs());
    }

    #[test]
    fn combine_step_equal_distributions_scale_preserves_argmax() {
        let u = NextTokenDistribution::new(vec![0.2, 0.5, 0.3]).unwrap();
        let scores = combine_step(&u, &u, 0.3, 1.0).unwrap();
        for (s, p) in scores.iter().zip(u.probs()) {
            assert!((s - 0.7 * p).abs() < 1e-12);
        }
        assert_eq!(argmax(&scores), TokenId(1));
    }

    #[test]
    fn combine_step_rejects_size_mismatch() {
        let a = NextTokenDistribution::new(vec![1.0]).unwrap();
        let b = NextTokenDistribution::new(vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            combine_step(&a, &b, 1.0, 1.0),
            Err(DecodeError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn greedy_emits_spurious_token_on_fixture() {
        let lm = fixture_lm();
        let (fact, _) = fixture_contexts(&lm);
        let params = DecodeParams::for_provider(&lm).unwrap();
        let (response, trace) = greedy_decode(&lm, &fact, &params).unwrap();
        assert_eq!(response.text, "cameron");
        assert_eq!(trace.stop_reason, StopReason::Eos);
    }

    #[test]
    fn counterfactual_flips_to_grounded_token() {
        let lm = fixture_lm();
        let (fact, cf) = fixture_contexts(&lm);
        let params = DecodeParams::for_provider(&lm).unwrap();
        let (response, trace) = counterfactual_decode(&lm, &fact, &cf, &params).unwrap();
        assert_eq!(response.text, "nolan");
        assert_eq!(trace.stop_reason, StopReason::Eos);
        // Hand arithmetic at step 1 (lambda = 1): cameron 0.55 - 0.90,
        // nolan 0.45 - 0.05.
        let nolan = lm.vocabulary().id_of("nolan").unwrap();
        let cameron = lm.vocabulary().id_of("cameron").unwrap();
        let p_fact = lm.next_distribution(&fact.tokens).unwrap();
        let p_cf = lm.next_distribution(&cf.tokens).unwrap();
        let scores = combine_step(&p_fact, &p_cf, 1.0, 1.0).unwrap();
        assert!((scores[cameron.index()] - (-0.35)).abs() < 1e-12);
        assert!((scores[nolan.index()] - 0.40).abs() < 1e-12);
        let step = &trace.steps[0];
        assert_eq!(step.lambda_i, 1.0);
        assert_eq!(step.chosen, nolan);
        // The winning score tops the trace's combined list.
        assert_eq!(step.combined_topk[0].0, nolan);
        assert!((step.combined_topk[0].1 - 0.40).abs() < 1e-12);
    }

    #[test]
    fn zero_strength_reduces_to_greedy_token_for_token() {
        let lm = fixture_lm();
        let (fact, cf) = fixture_contexts(&lm);
        let mut params = DecodeParams::for_provider(&lm).unwrap();
        params.strength = 0.0;
        let (cf_response, _) = counterfactual_decode(&lm, &fact, &cf, &params).unwrap();
        let (greedy_response, _) = greedy_decode(&lm, &fact, &params).unwrap();
        assert_eq!(cf_response.token_ids, greedy_response.token_ids);
        assert_eq!(cf_response.text, greedy_response.text);
    }

    #[test]
    fn zero_budget_yields_empty_response() {
        let lm = fixture_lm();
        let (fact, _) = fixture_contexts(&lm);
        let mut params = DecodeParams::for_provider(&lm).unwrap();
        params.max_new_tokens = 0;
        let (response, trace) = greedy_decode(&lm, &fact, &params).unwrap();
        assert!(response.token_ids.is_empty());
        assert_eq!(response.text, "");
        assert!(trace.steps.is_empty());
        assert_eq!(trace.stop_reason, StopReason::MaxTokens);
    }

    #[test]
    fn uniform_fallback_repeats_token_zero_until_budget() {
        let spec = serde_json::json!({
            "vocab": ["<bos>", "<eos>", "<unk>", "a"],
            "order": 1,
            "rules": []
        })
        .to_string();
        let lm = TableLm::from_json(&spec, "uniform").unwrap();
        let ctx = Context {
            tokens: lm.tokenize("a").unwrap(),
            provenance: Provenance::Factual,
            selected_knowledge_ids: vec![],
            text: "a".into(),
        };
        let mut params = DecodeParams::for_provider(&lm).unwrap();
        params.max_new_tokens = 5;
        let (response, trace) = greedy_decode(&lm, &ctx, &params).unwrap();
        assert_eq!(response.token_ids, vec![TokenId(0); 5]);
        assert_eq!(trace.stop_reason, StopReason::MaxTokens);
        // Token 0 is <bos>, which detokenization strips.
        assert_eq!(response.text, "");
    }

    #[test]
    fn identical_streams_tie_to_token_zero_at_step_one() {
        // p_fact == p_cf at every step, and at i = 1 the penalty weight is
        // exactly 1, so all combined scores are 0 and the tie rule picks
        // token 0. From i = 2 on the scores are a positive scaling of the
        // distribution, matching greedy behavior; the uniform distribution
        // makes that token 0 as well, so the whole sequence matches greedy.
        let spec = serde_json::json!({
            "vocab": ["<bos>", "<eos>", "<unk>", "a"],
            "order": 1,
            "rules": []
        })
        .to_string();
        let lm = TableLm::from_json(&spec, "uniform").unwrap();
        let make_ctx = |provenance| Context {
            tokens: lm.tokenize("a").unwrap(),
            provenance,
            selected_knowledge_ids: vec![],
            text: "a".into(),
        };
        let fact = make_ctx(Provenance::Factual);
        let cf = make_ctx(Provenance::Counterfactual);
        let mut params = DecodeParams::for_provider(&lm).unwrap();
        params.max_new_tokens = 4;
        let (response, trace) = counterfactual_decode(&lm, &fact, &cf, &params).unwrap();
        assert_eq!(response.token_ids, vec![TokenId(0); 4]);
        let step1 = &trace.steps[0];
        assert!(step1.combined_topk.iter().all(|(_, s)| *s == 0.0));
        let (greedy_response, _) = greedy_decode(&lm, &fact, &params).unwrap();
        assert_eq!(response.token_ids, greedy_response.token_ids);
    }

    #[test]
    fn lambda_recorded_exactly() {
        let lm = fixture_lm();
        let (fact, cf) = fixture_contexts(&lm);
        let mut params = DecodeParams::for_provider(&lm).unwrap();
        params.max_new_tokens = 20;
        let (_, trace) = counterfactual_decode(&lm, &fact, &cf, &params).unwrap();
        for step in &trace.steps {
            let expected = decay(step.i, params.alpha).unwrap();
            assert!((step.lambda_i - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_token_invariant_holds_in_trace() {
        let lm = fixture_lm();
        let (fact, cf) = fixture_contexts(&lm);
        let params = DecodeParams::for_provider(&lm).unwrap();
        let (response, trace) = counterfactual_decode(&lm, &fact, &cf, &params).unwrap();
        // Every non-terminal chosen token was appended to both streams; the
        // generated suffix must be the chosen-token sequence minus eos.
        let chosen: Vec<TokenId> = trace
            .steps
            .iter()
            .map(|s| s.chosen)
            .filter(|&t| t != params.eos_id)
            .collect();
        assert_eq!(chosen, response.token_ids);
    }

    #[test]
    fn two_runs_produce_bitwise_identical_traces() {
        let lm = fixture_lm();
        let (fact, cf) = fixture_contexts(&lm);
        let params = DecodeParams::for_provider(&lm).unwrap();
        let (ra, ta) = counterfactual_decode(&lm, &fact, &cf, &params).unwrap();
        let (rb, tb) = counterfactual_decode(&lm, &fact, &cf, &params).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(ta, tb);
    }

    #[test]
    fn provenance_is_checked() {
        let lm = fixture_lm();
        let (fact, cf) = fixture_contexts(&lm);
        let params = DecodeParams::for_provider(&lm).unwrap();
        assert!(matches!(
            counterfactual_decode(&lm, &cf, &fact, &params),
            Err(DecodeError::ProvenanceMismatch { .. })
        ));
    }

    #[test]
    fn budget_bounds_response_length() {
        let lm = fixture_lm();
        let (fact, cf) = fixture_contexts(&lm);
        for budget in [0usize, 1, 2, 7] {
            let mut params = DecodeParams::for_provider(&lm).unwrap();
            params.max_new_tokens = budget;
            let (response, _) = counterfactual_decode(&lm, &fact, &cf, &params).unwrap();
            assert!(response.token_ids.len() <= budget);
        }
    }

    #[test]
    fn invalid_params_are_rejected() {
        let lm = fixture_lm();
        let (fact, _) = fixture_contexts(&lm);
        let mut params = DecodeParams::for_provider(&lm).unwrap();
        params.alpha = 1.5;
        assert!(matches!(
            greedy_decode(&lm, &fact, &params),
            Err(DecodeError::InvalidParams(_))
        ));
        let mut params = DecodeParams::for_provider(&lm).unwrap();
        params.strength = -0.1;
        assert!(matches!(
            greedy_decode(&lm, &fact, &params),
            Err(DecodeError::InvalidParams(_))
        ));
    }
}
