//! Per-step causal effect vectors over the vocabulary.
//!
//! Three next-token distributions — factual, counterfactual, and null
//! baseline — yield three signed effect vectors:
//!
//! ```text
//! tde = p(d,k)  - p(d*,k)      direct influence of the dialogue
//! pie = p(d*,k) - p(d*,k*)     influence routed through knowledge selection
//! te  = p(d,k)  - p(d*,k*)     total effect; te = tde + pie
//! ```
//!
//! The dual decoder's first-step score vector (penalty weight 1) is exactly
//! the tde vector, which is what makes these the analysis companion to the
//! decoding rule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::Context;
use crate::decoder::DecodeError;
use crate::provider::{LmProvider, NextTokenDistribution};
use crate::vocab::TokenId;

/// Most-suppressed entries kept per step in reports.
pub const TOP_SUPPRESSED: usize = 10;

#[derive(Debug, Error)]
pub enum EffectsError {
    #[error("distribution sizes differ: {0}, {1}, {2}")]
    SizeMismatch(usize, usize, usize),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Signed effect vectors over the vocabulary for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectVectors {
    pub te: Vec<f64>,
    pub tde: Vec<f64>,
    pub pie: Vec<f64>,
}

impl EffectVectors {
    pub fn l1_te(&self) -> f64 {
        self.te.iter().map(|v| v.abs()).sum()
    }

    pub fn l1_tde(&self) -> f64 {
        self.tde.iter().map(|v| v.abs()).sum()
    }

    pub fn l1_pie(&self) -> f64 {
        self.pie.iter().map(|v| v.abs()).sum()
    }

    /// Tokens the counterfactual stream favors over the factual one,
    /// i.e. the most negative tde entries, ascending.
    pub fn top_suppressed(&self, k: usize) -> Vec<(TokenId, f64)> {
        let mut entries: Vec<(TokenId, f64)> = self
            .tde
            .iter()
            .enumerate()
            .filter(|(_, &v)| v < 0.0)
            .map(|(i, &v)| (TokenId(i as u32), v))
            .collect();
        entries.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        entries.truncate(k);
        entries
    }
}

/// Effect vectors from the three scenario distributions at one step.
pub fn step_effects(
    p_dk: &NextTokenDistribution,
    p_dstar_k: &NextTokenDistribution,
    p_dstar_kstar: &NextTokenDistribution,
) -> Result<EffectVectors, EffectsError> {
    if p_dk.len() != p_dstar_k.len() || p_dk.len() != p_dstar_kstar.len() {
        return Err(EffectsError::SizeMismatch(
            p_dk.len(),
            p_dstar_k.len(),
            p_dstar_kstar.len(),
        ));
    }
    let sub = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(&x, &y)| x - y).collect()
    };
    Ok(EffectVectors {
        te: sub(p_dk.probs(), p_dstar_kstar.probs()),
        tde: sub(p_dk.probs(), p_dstar_k.probs()),
        pie: sub(p_dstar_k.probs(), p_dstar_kstar.probs()),
    })
}

/// Max elementwise `|te - tde - pie|`; at most 1e-12 for vectors produced
/// by [`step_effects`].
pub fn decomposition_residual(effects: &EffectVectors) -> f64 {
    effects
        .te
        .iter()
        .zip(&effects.tde)
        .zip(&effects.pie)
        .map(|((&te, &tde), &pie)| (te - tde - pie).abs())
        .fold(0.0, f64::max)
}

/// Per-step norms for one decode step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepNorms {
    pub l1_te: f64,
    pub l1_tde: f64,
    pub l1_pie: f64,
}

/// Effect vectors for every step of a finished decode, plus summary norms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectTrace {
    pub steps: Vec<EffectVectors>,
    pub mean_l1_tde: f64,
}

impl EffectTrace {
    pub fn step_norms(&self) -> Vec<StepNorms> {
        self.steps
            .iter()
            .map(|e| StepNorms {
                l1_te: e.l1_te(),
                l1_tde: e.l1_tde(),
                l1_pie: e.l1_pie(),
            })
            .collect()
    }
}

/// Replay a generated token sequence against the three contexts and record
/// the effect vectors at every step.
///
/// Step `i` extends each context with the shared prefix of the first
/// `i - 1` generated tokens, exactly as the dual decoder saw them.
pub fn trace_effects(
    provider: &dyn LmProvider,
    ctx_factual: &Context,
    ctx_cf: &Context,
    ctx_null: &Context,
    generated: &[TokenId],
) -> Result<EffectTrace, EffectsError> {
    let mut steps = Vec::with_capacity(generated.len());
    let query = |base: &Context, shared: &[TokenId], step: usize, stream: &'static str| {
        let mut prefix = base.tokens.clone();
        prefix.extend_from_slice(shared);
        provider
            .next_distribution(&prefix)
            .map_err(|source| DecodeError::StreamProvider {
                stream,
                step,
                source,
            })
    };
    for i in 1..=generated.len() {
        let shared = &generated[..i - 1];
        let p_dk = query(ctx_factual, shared, i, "factual")?;
        let p_dstar_k = query(ctx_cf, shared, i, "counterfactual")?;
        let p_dstar_kstar = query(ctx_null, shared, i, "null")?;
        steps.push(step_effects(&p_dk, &p_dstar_k, &p_dstar_kstar)?);
    }
    let mean_l1_tde = if steps.is_empty() {
        0.0
    } else {
        steps.iter().map(EffectVectors::l1_tde).sum::<f64>() / steps.len() as f64
    };
    Ok(EffectTrace { steps, mean_l1_tde })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(probs: &[f64]) -> NextTokenDistribution {
        NextTokenDistribution::new(probs.to_vec()).unwrap()
    }

    #[test]
    fn coinciding_scenarios_have_zero_effects() {
        let p = dist(&[0.5, 0.5]);
        let effects = step_effects(&p, &p, &p).unwrap();
        assert_eq!(effects.te, vec![0.0, 0.0]);
        assert_eq!(effects.tde, vec![0.0, 0.0]);
        assert_eq!(effects.pie, vec![0.0, 0.0]);
    }

    #[test]
    fn step_effects_hand_arithmetic() {
        let effects = step_effects(&dist(&[0.7, 0.3]), &dist(&[0.5, 0.5]), &dist(&[0.5, 0.5]))
            .unwrap();
        assert!((effects.tde[0] - 0.2).abs() < 1e-12);
        assert!((effects.tde[1] + 0.2).abs() < 1e-12);
        assert_eq!(effects.pie, vec![0.0, 0.0]);
        assert!((effects.te[0] - 0.2).abs() < 1e-12);
        assert!((effects.te[1] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn residual_vanishes_on_constructed_effects() {
        let effects = step_effects(
            &dist(&[0.6, 0.3, 0.1]),
            &dist(&[0.2, 0.5, 0.3]),
            &dist(&[0.1, 0.1, 0.8]),
        )
        .unwrap();
        assert!(decomposition_residual(&effects) <= 1e-12);
    }

    #[test]
    fn residual_detects_perturbation() {
        let mut effects = step_effects(
            &dist(&[0.6, 0.4]),
            &dist(&[0.5, 0.5]),
            &dist(&[0.4, 0.6]),
        )
        .unwrap();
        effects.te[0] += 1e-3;
        assert!((decomposition_residual(&effects) - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn residual_of_zero_vectors_is_zero() {
        let effects = EffectVectors {
            te: vec![0.0; 3],
            tde: vec![0.0; 3],
            pie: vec![0.0; 3],
        };
        assert_eq!(decomposition_residual(&effects), 0.0);
    }

    #[test]
    fn effect_vectors_sum_to_zero() {
        let effects = step_effects(
            &dist(&[0.6, 0.3, 0.1]),
            &dist(&[0.2, 0.5, 0.3]),
            &dist(&[0.1, 0.1, 0.8]),
        )
        .unwrap();
        for v in [&effects.te, &effects.tde, &effects.pie] {
            assert!(v.iter().sum::<f64>().abs() <= 1e-9);
        }
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let a = dist(&[1.0]);
        let b = dist(&[0.5, 0.5]);
        assert!(matches!(
            step_effects(&a, &b, &b),
            Err(EffectsError::SizeMismatch(1, 2, 2))
        ));
    }

    #[test]
    fn top_suppressed_orders_most_negative_first() {
        let effects = EffectVectors {
            te: vec![0.0; 4],
            tde: vec![0.1, -0.3, -0.05, 0.25],
            pie: vec![0.0; 4],
        };
        let top = effects.top_suppressed(10);
        assert_eq!(top, vec![(TokenId(1), -0.3), (TokenId(2), -0.05)]);
    }
}
