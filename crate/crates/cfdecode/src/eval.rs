//! Batch evaluation with automatic lexical proxy metrics.
//!
//! Human judgments are the only reliable measure of hallucination; this
//! harness instead reports cheap deterministic proxies that move in the
//! same directions: unigram overlap with the selected knowledge
//! (groundedness), overlap with the query (topicality), distinct-n
//! (diversity), and a generic-response rate. Every example is decoded in
//! both modes — plain greedy and counterfactual — so the report reads as a
//! paired comparison.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{build_counterfactual, build_factual, PromptTemplate};
use crate::decoder::{counterfactual_decode, greedy_decode, DecodeError, DecodeParams, StopReason};
use crate::dialogue::DialogueExample;
use crate::provider::LmProvider;
use crate::selector::{select_scoped, ScoringScope};

pub const DEFAULT_GENERIC_MIN_TOKENS: usize = 3;

/// Stock phrases for the generic-response check, one per line. Shipped as
/// an editable data file; this embedded copy is only the default.
const DEFAULT_GENERIC_PHRASES: &str = include_str!("../data/generic_phrases.txt");

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("failed to read dataset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("duplicate example_id {id:?} at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("dataset contains no valid examples")]
    EmptyDataset,
    #[error("example {example_id}: {source}")]
    Example {
        example_id: String,
        #[source]
        source: DecodeError,
    },
}

pub fn default_generic_phrases() -> Vec<String> {
    DEFAULT_GENERIC_PHRASES
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

fn multiset(tokens: &[String]) -> HashMap<&str, usize> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in tokens {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    counts
}

/// Unigram F1 between two token multisets; 0 when either side is empty.
fn unigram_f1(a: &[String], b: &[String]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let ca = multiset(a);
    let cb = multiset(b);
    let overlap: usize = ca
        .iter()
        .map(|(t, &n)| n.min(cb.get(t).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / a.len() as f64;
    let recall = overlap as f64 / b.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Unigram F1 between the response and the union of the knowledge texts
/// (multiset union, max multiplicity per token).
pub fn knowledge_f1(response: &str, knowledge_texts: &[String]) -> f64 {
    let response_tokens = words(response);
    let mut union: HashMap<String, usize> = HashMap::new();
    for text in knowledge_texts {
        for (token, count) in multiset(&words(text)) {
            let entry = union.entry(token.to_string()).or_insert(0);
            *entry = (*entry).max(count);
        }
    }
    let mut union_tokens = Vec::new();
    let mut keys: Vec<&String> = union.keys().collect();
    keys.sort();
    for key in keys {
        for _ in 0..union[key] {
            union_tokens.push(key.clone());
        }
    }
    unigram_f1(&response_tokens, &union_tokens)
}

/// Unigram F1 between the response and the dialogue query.
pub fn query_overlap_f1(response: &str, query: &str) -> f64 {
    unigram_f1(&words(response), &words(query))
}

/// Unique n-grams over total n-grams across the whole response list.
pub fn distinct_n(responses: &[String], n: usize) -> f64 {
    let mut total = 0usize;
    let mut unique = std::collections::HashSet::new();
    for response in responses {
        let tokens = words(response);
        if tokens.len() < n {
            continue;
        }
        for gram in tokens.windows(n) {
            total += 1;
            unique.insert(gram.join(" "));
        }
    }
    if total == 0 {
        0.0
    } else {
        unique.len() as f64 / total as f64
    }
}

/// A response is generic when it contains any stock phrase (case-folded
/// substring match) or is shorter than `min_tokens` tokens.
pub fn is_generic(response: &str, phrases: &[String], min_tokens: usize) -> bool {
    let folded = response.to_lowercase();
    if words(response).len() < min_tokens {
        return true;
    }
    phrases
        .iter()
        .any(|phrase| folded.contains(&phrase.to_lowercase()))
}

/// Fraction of generic responses; 0 on an empty list.
pub fn generic_rate(responses: &[String], phrases: &[String], min_tokens: usize) -> f64 {
    if responses.is_empty() {
        return 0.0;
    }
    let hits = responses
        .iter()
        .filter(|r| is_generic(r, phrases, min_tokens))
        .count();
    hits as f64 / responses.len() as f64
}

// ---------------------------------------------------------------------------
// Dataset loading
// ---------------------------------------------------------------------------

fn read_lines(path: &Path) -> Result<Vec<String>, EvalError> {
    let file = std::fs::File::open(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    std::io::BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })
}

fn parse_lines(
    lines: &[String],
) -> (Vec<DialogueExample>, Vec<(usize, String)>) {
    let mut examples = Vec::new();
    let mut errors = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in lines.iter().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<DialogueExample>(line) {
            Ok(example) => {
                if seen.insert(example.example_id.clone()) {
                    examples.push(example);
                } else {
                    errors.push((
                        lineno,
                        format!("duplicate example_id {:?}", example.example_id),
                    ));
                }
            }
            Err(e) => errors.push((lineno, e.to_string())),
        }
    }
    (examples, errors)
}

/// Load a JSONL dataset, rejecting the whole file on the first malformed
/// line or duplicate id.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DialogueExample>, EvalError> {
    let lines = read_lines(path.as_ref())?;
    let (examples, errors) = parse_lines(&lines);
    if let Some((line, message)) = errors.into_iter().next() {
        if message.starts_with("duplicate example_id") {
            let id = message
                .split('"')
                .nth(1)
                .unwrap_or_default()
                .to_string();
            return Err(EvalError::DuplicateId { id, line });
        }
        return Err(EvalError::Line { line, message });
    }
    if examples.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    Ok(examples)
}

/// Like [`load_dataset`], but collects malformed lines instead of failing,
/// for partial-report runs. Still errors when no line is valid.
pub fn load_dataset_lenient(
    path: impl AsRef<Path>,
) -> Result<(Vec<DialogueExample>, Vec<(usize, String)>), EvalError> {
    let lines = read_lines(path.as_ref())?;
    let (examples, errors) = parse_lines(&lines);
    if examples.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    Ok((examples, errors))
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Per-response proxy metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub knowledge_f1: f64,
    pub query_overlap_f1: f64,
    pub distinct_1: f64,
    pub distinct_2: f64,
    pub generic: bool,
    pub response_length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub response: String,
    pub stop_reason: StopReason,
    pub selected_knowledge_ids: Vec<String>,
    pub metrics: MetricsRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleReport {
    pub example_id: String,
    pub plain: ModeResult,
    pub ah: ModeResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportError {
    pub example_id: String,
    pub message: String,
}

/// Corpus-level aggregates for one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAggregates {
    pub mean_knowledge_f1: f64,
    pub mean_query_overlap_f1: f64,
    pub distinct_1: f64,
    pub distinct_2: f64,
    pub generic_rate: f64,
    pub mean_response_length: f64,
}

/// Configuration echo embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub model_id: String,
    pub alpha: f64,
    pub strength: f64,
    pub top_n: usize,
    pub max_new_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ConfigEcho,
    pub records: Vec<ExampleReport>,
    pub errors: Vec<ReportError>,
    pub plain: ModeAggregates,
    pub ah: ModeAggregates,
    /// Seconds since the Unix epoch at report time. Excluded from
    /// determinism comparisons.
    pub generated_at: u64,
}

/// Everything `run_eval` needs besides the provider and the data.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub params: DecodeParams,
    pub template: PromptTemplate,
    pub top_n: usize,
    pub scope: ScoringScope,
    pub generic_phrases: Vec<String>,
    pub generic_min_tokens: usize,
    /// Record per-example failures instead of aborting.
    pub partial: bool,
    pub model_id: String,
}

impl EvalConfig {
    pub fn new(params: DecodeParams, model_id: impl Into<String>) -> Self {
        Self {
            params,
            template: PromptTemplate::default(),
            top_n: 1,
            scope: ScoringScope::Query,
            generic_phrases: default_generic_phrases(),
            generic_min_tokens: DEFAULT_GENERIC_MIN_TOKENS,
            partial: false,
            model_id: model_id.into(),
        }
    }
}

fn metrics_for(
    response: &str,
    knowledge_texts: &[String],
    query: &str,
    config: &EvalConfig,
) -> MetricsRecord {
    let single = vec![response.to_string()];
    MetricsRecord {
        knowledge_f1: knowledge_f1(response, knowledge_texts),
        query_overlap_f1: query_overlap_f1(response, query),
        distinct_1: distinct_n(&single, 1),
        distinct_2: distinct_n(&single, 2),
        generic: is_generic(response, &config.generic_phrases, config.generic_min_tokens),
        response_length: words(response).len(),
    }
}

fn aggregate(results: &[&ModeResult], config: &EvalConfig) -> ModeAggregates {
    let n = results.len();
    if n == 0 {
        return ModeAggregates {
            mean_knowledge_f1: 0.0,
            mean_query_overlap_f1: 0.0,
            distinct_1: 0.0,
            distinct_2: 0.0,
            generic_rate: 0.0,
            mean_response_length: 0.0,
        };
    }
    let responses: Vec<String> = results.iter().map(|r| r.response.clone()).collect();
    ModeAggregates {
        mean_knowledge_f1: results.iter().map(|r| r.metrics.knowledge_f1).sum::<f64>() / n as f64,
        mean_query_overlap_f1: results
            .iter()
            .map(|r| r.metrics.query_overlap_f1)
            .sum::<f64>()
            / n as f64,
        distinct_1: distinct_n(&responses, 1),
        distinct_2: distinct_n(&responses, 2),
        generic_rate: generic_rate(&responses, &config.generic_phrases, config.generic_min_tokens),
        mean_response_length: results
            .iter()
            .map(|r| r.metrics.response_length as f64)
            .sum::<f64>()
            / n as f64,
    }
}

fn eval_example(
    provider: &dyn LmProvider,
    example: &DialogueExample,
    config: &EvalConfig,
) -> Result<ExampleReport, DecodeError> {
    let history = example.history();
    let selection = select_scoped(history, example.pool(), config.top_n, config.scope);
    let to_provider_err = |source| DecodeError::Provider { step: 0, source };
    let ctx_fact = build_factual(history, &selection.selected, &config.template, provider)
        .map_err(to_provider_err)?;
    let ctx_cf = build_counterfactual(
        history,
        &selection.selected,
        &config.template,
        provider,
        config.params.null_mode,
    )
    .map_err(to_provider_err)?;

    let knowledge_texts: Vec<String> = selection.selected.iter().map(|p| p.render()).collect();
    let query = history.query().text();

    let (plain_response, plain_trace) = greedy_decode(provider, &ctx_fact, &config.params)?;
    let (ah_response, ah_trace) = counterfactual_decode(provider, &ctx_fact, &ctx_cf, &config.params)?;

    Ok(ExampleReport {
        example_id: example.example_id.clone(),
        plain: ModeResult {
            metrics: metrics_for(&plain_response.text, &knowledge_texts, query, config),
            response: plain_response.text,
            stop_reason: plain_trace.stop_reason,
            selected_knowledge_ids: ctx_fact.selected_knowledge_ids.clone(),
        },
        ah: ModeResult {
            metrics: metrics_for(&ah_response.text, &knowledge_texts, query, config),
            response: ah_response.text,
            stop_reason: ah_trace.stop_reason,
            selected_knowledge_ids: ctx_cf.selected_knowledge_ids.clone(),
        },
    })
}

/// Evaluate every example in both modes and aggregate.
///
/// Every example lands either in `records` (with both modes present) or,
/// under `partial`, in `errors`; without `partial` the first failure aborts
/// the run.
pub fn run_eval(
    provider: &dyn LmProvider,
    dataset: &[DialogueExample],
    config: &EvalConfig,
) -> Result<Report, EvalError> {
    run_eval_with_errors(provider, dataset, config, Vec::new())
}

/// [`run_eval`] with pre-existing error entries (e.g. unparseable dataset
/// lines from a lenient load) merged into the report.
pub fn run_eval_with_errors(
    provider: &dyn LmProvider,
    dataset: &[DialogueExample],
    config: &EvalConfig,
    mut errors: Vec<ReportError>,
) -> Result<Report, EvalError> {
    let mut records = Vec::with_capacity(dataset.len());
    for example in dataset {
        match eval_example(provider, example, config) {
            Ok(record) => records.push(record),
            Err(source) => {
                if config.partial {
                    errors.push(ReportError {
                        example_id: example.example_id.clone(),
                        message: source.to_string(),
                    });
                } else {
                    return Err(EvalError::Example {
                        example_id: example.example_id.clone(),
                        source,
                    });
                }
            }
        }
    }
    records.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    errors.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    let plain_results: Vec<&ModeResult> = records.iter().map(|r| &r.plain).collect();
    let ah_results: Vec<&ModeResult> = records.iter().map(|r| &r.ah).collect();
    Ok(Report {
        config: ConfigEcho {
            model_id: config.model_id.clone(),
            alpha: config.params.alpha,
            strength: config.params.strength,
            top_n: config.top_n,
            max_new_tokens: config.params.max_new_tokens,
        },
        plain: aggregate(&plain_results, config),
        ah: aggregate(&ah_results, config),
        records,
        errors,
        generated_at: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    })
}

/// Load a dataset file (leniently under `config.partial`) and evaluate it,
/// folding unparseable lines into the report's error list.
pub fn eval_dataset_file(
    provider: &dyn LmProvider,
    path: impl AsRef<Path>,
    config: &EvalConfig,
) -> Result<Report, EvalError> {
    if config.partial {
        let (examples, line_errors) = load_dataset_lenient(path)?;
        let errors = line_errors
            .into_iter()
            .map(|(line, message)| ReportError {
                example_id: format!("line:{line}"),
                message,
            })
            .collect();
        run_eval_with_errors(provider, &examples, config, errors)
    } else {
        let examples = load_dataset(path)?;
        run_eval(provider, &examples, config)
    }
}
