//! The `cfdecode` command line: batch decoding, an interactive chat REPL,
//! effect tracing, and batch evaluation.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error. Data goes to
//! stdout (or `--out`), diagnostics to stderr. Option precedence is
//! flags, then `--config` file, then built-in defaults.

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::context::{
    build_counterfactual, build_factual, build_null, Context, PromptTemplate,
};
use crate::decoder::{
    counterfactual_decode, greedy_decode, DecodeParams, DecodeTrace, StopReason,
};
use crate::dialogue::{
    DialogueExample, DialogueHistory, KnowledgePiece, KnowledgePool, NullMode, Utterance,
};
use crate::effects::{trace_effects, StepNorms, TOP_SUPPRESSED};
use crate::eval::{eval_dataset_file, EvalConfig};
use crate::provider::{LmProvider, TableLm};
use crate::remote::{RemoteLm, DEFAULT_TIMEOUT, REMOTE_URL_ENV};
use crate::selector::{select_scoped, ScoringScope};
use crate::vocab::TokenId;

#[derive(Parser)]
#[command(name = "cfdecode", version, about = "Counterfactual dual-decoding for knowledge-grounded dialogue")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode every example of a JSONL dataset; one result object per line.
    Decode(DecodeCmd),
    /// Interactive chat with counterfactual decoding on every turn.
    Chat(ChatCmd),
    /// Per-step causal effect report for every example.
    Trace(TraceCmd),
    /// Paired plain-vs-counterfactual evaluation with proxy metrics.
    Eval(EvalCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DecodeMode {
    Plain,
    Ah,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NullModeArg {
    QueryOnly,
    Empty,
}

impl From<NullModeArg> for NullMode {
    fn from(value: NullModeArg) -> Self {
        match value {
            NullModeArg::QueryOnly => NullMode::QueryOnly,
            NullModeArg::Empty => NullMode::Empty,
        }
    }
}

/// Options shared by every subcommand that runs the engine.
#[derive(Args, Clone)]
struct EngineOpts {
    /// Model to use: `table:PATH` or `remote:URL` (`remote:` alone reads
    /// the CFD_REMOTE_URL environment variable).
    #[arg(long)]
    model: Option<String>,
    /// Decay base for the counterfactual penalty.
    #[arg(long)]
    alpha: Option<f64>,
    /// Penalty multiplier; 0 disables the counterfactual stream.
    #[arg(long)]
    strength: Option<f64>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
    /// How the counterfactual stream nulls the history.
    #[arg(long, value_enum)]
    null_mode: Option<NullModeArg>,
    /// Top-k log-probabilities requested from remote backends.
    #[arg(long)]
    top_k: Option<usize>,
    /// Knowledge pieces selected per example.
    #[arg(long)]
    top_n: Option<usize>,
    /// Prompt template JSON file.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Config file supplying defaults for any of these options.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Remote request timeout in seconds.
    #[arg(long)]
    timeout_secs: Option<u64>,
    /// Subtract log-probabilities instead of probabilities.
    #[arg(long)]
    log_space: bool,
    /// Drop candidate tokens whose factual probability is below this floor.
    #[arg(long)]
    min_factual_prob: Option<f64>,
    /// Override the end-of-sequence token id (mostly for remote backends).
    #[arg(long)]
    eos_id: Option<u32>,
    /// Score knowledge against the full history instead of the query only.
    #[arg(long)]
    full_history_scoring: bool,
}

#[derive(Args)]
struct DecodeCmd {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "ah")]
    mode: DecodeMode,
    /// Write per-example decode traces (JSON lines) to this file.
    #[arg(long)]
    emit_trace: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineOpts,
}

#[derive(Args)]
struct ChatCmd {
    /// JSON file with a knowledge array to ground the session in.
    #[arg(long)]
    knowledge: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineOpts,
}

#[derive(Args)]
struct TraceCmd {
    #[arg(long)]
    dataset: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineOpts,
}

#[derive(Args)]
struct EvalCmd {
    #[arg(long)]
    dataset: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record per-example failures in the report instead of aborting.
    #[arg(long)]
    partial: bool,
    #[command(flatten)]
    engine: EngineOpts,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self::Usage(message.into())
    }

    fn runtime(message: impl std::fmt::Display) -> Self {
        Self::Runtime(message.to_string())
    }
}

/// Optional settings read from `--config`; any flag overrides them.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    model: Option<String>,
    alpha: Option<f64>,
    strength: Option<f64>,
    max_new_tokens: Option<usize>,
    null_mode: Option<NullMode>,
    top_k: Option<usize>,
    top_n: Option<usize>,
    template: Option<PathBuf>,
    timeout_secs: Option<u64>,
    log_space: Option<bool>,
    min_factual_prob: Option<f64>,
    eos_id: Option<u32>,
    full_history_scoring: Option<bool>,
}

#[derive(Debug, Clone)]
enum ModelSpec {
    Table(PathBuf),
    Remote(String),
}

impl ModelSpec {
    fn parse(spec: &str) -> Result<Self, CliError> {
        if let Some(path) = spec.strip_prefix("table:") {
            if path.is_empty() {
                return Err(CliError::usage("table: model spec needs a path"));
            }
            return Ok(Self::Table(PathBuf::from(path)));
        }
        if let Some(url) = spec.strip_prefix("remote:").or(match spec {
            "remote" => Some(""),
            _ => None,
        }) {
            if !url.is_empty() {
                return Ok(Self::Remote(url.to_string()));
            }
            return match std::env::var(REMOTE_URL_ENV) {
                Ok(url) if !url.is_empty() => Ok(Self::Remote(url)),
                _ => Err(CliError::usage(format!(
                    "remote: model spec needs a URL or {REMOTE_URL_ENV} set"
                ))),
            };
        }
        Err(CliError::usage(format!(
            "unknown model spec {spec:?}; expected table:PATH or remote:URL"
        )))
    }

    fn id(&self) -> String {
        match self {
            Self::Table(path) => format!("table:{}", path.display()),
            Self::Remote(url) => format!("remote:{url}"),
        }
    }
}

/// Fully resolved run configuration. The engine is deterministic so there
/// is no seed to carry.
struct RunConfig {
    model: ModelSpec,
    alpha: f64,
    strength: f64,
    max_new_tokens: usize,
    null_mode: NullMode,
    top_k: usize,
    top_n: usize,
    template: PromptTemplate,
    timeout: Duration,
    log_space: bool,
    min_factual_prob: Option<f64>,
    eos_id: Option<TokenId>,
    scope: ScoringScope,
}

impl RunConfig {
    fn resolve(opts: &EngineOpts) -> Result<Self, CliError> {
        let file = match &opts.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::runtime(format!("cannot read config {}: {e}", path.display()))
                })?;
                serde_json::from_str::<ConfigFile>(&text).map_err(|e| {
                    CliError::usage(format!("invalid config {}: {e}", path.display()))
                })?
            }
            None => ConfigFile::default(),
        };
        let model_spec = opts
            .model
            .clone()
            .or(file.model)
            .ok_or_else(|| CliError::usage("no model given; pass --model table:PATH or remote:URL"))?;
        let template_path = opts.template.clone().or(file.template);
        let template = match template_path {
            Some(path) => PromptTemplate::load(&path)
                .map_err(|e| CliError::usage(format!("invalid template: {e}")))?,
            None => PromptTemplate::default(),
        };
        let scope = if opts.full_history_scoring || file.full_history_scoring.unwrap_or(false) {
            ScoringScope::FullHistory
        } else {
            ScoringScope::Query
        };
        Ok(Self {
            model: ModelSpec::parse(&model_spec)?,
            alpha: opts.alpha.or(file.alpha).unwrap_or(crate::decoder::DEFAULT_ALPHA),
            strength: opts
                .strength
                .or(file.strength)
                .unwrap_or(crate::decoder::DEFAULT_STRENGTH),
            max_new_tokens: opts
                .max_new_tokens
                .or(file.max_new_tokens)
                .unwrap_or(crate::decoder::DEFAULT_MAX_NEW_TOKENS),
            null_mode: opts
                .null_mode
                .map(NullMode::from)
                .or(file.null_mode)
                .unwrap_or_default(),
            top_k: opts
                .top_k
                .or(file.top_k)
                .unwrap_or(crate::decoder::DEFAULT_TOP_K_REMOTE),
            top_n: opts.top_n.or(file.top_n).unwrap_or(1),
            template,
            timeout: Duration::from_secs(
                opts.timeout_secs
                    .or(file.timeout_secs)
                    .unwrap_or(DEFAULT_TIMEOUT.as_secs()),
            ),
            log_space: opts.log_space || file.log_space.unwrap_or(false),
            min_factual_prob: opts.min_factual_prob.or(file.min_factual_prob),
            eos_id: opts.eos_id.or(file.eos_id).map(TokenId),
            scope,
        })
    }

    fn provider(&self) -> Result<Box<dyn LmProvider>, CliError> {
        match &self.model {
            ModelSpec::Table(path) => Ok(Box::new(
                TableLm::load(path).map_err(CliError::runtime)?,
            )),
            ModelSpec::Remote(url) => Ok(Box::new(
                RemoteLm::connect(url, self.top_k, self.timeout).map_err(CliError::runtime)?,
            )),
        }
    }

    fn params(&self, provider: &dyn LmProvider) -> Result<DecodeParams, CliError> {
        let eos_id = match self.eos_id {
            Some(id) => id,
            None => provider.eos_id().map_err(CliError::runtime)?,
        };
        let params = DecodeParams {
            alpha: self.alpha,
            strength: self.strength,
            max_new_tokens: self.max_new_tokens,
            eos_id,
            null_mode: self.null_mode,
            top_k_remote: self.top_k,
            log_space: self.log_space,
            min_factual_prob: self.min_factual_prob,
        };
        params
            .validate()
            .map_err(|e| CliError::usage(e.to_string()))?;
        Ok(params)
    }
}

/// Parse `argv` and run the chosen subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Decode(cmd) => run_decode(cmd),
        Command::Chat(cmd) => run_chat(cmd),
        Command::Trace(cmd) => run_trace(cmd),
        Command::Eval(cmd) => run_eval_cmd(cmd),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            1
        }
        Err(CliError::Runtime(message)) => {
            eprintln!("error: {message}");
            2
        }
    }
}

/// One line of `decode` output.
#[derive(Debug, Serialize)]
struct ResultLine<'a> {
    example_id: &'a str,
    mode: &'a str,
    response: &'a str,
    selected_knowledge_ids: &'a [String],
    stop_reason: StopReason,
}

#[derive(Debug, Serialize)]
struct TraceLine<'a> {
    example_id: &'a str,
    mode: &'a str,
    trace: &'a DecodeTrace,
}

struct BuiltContexts {
    factual: Context,
    counterfactual: Context,
}

fn build_contexts(
    example: &DialogueExample,
    config: &RunConfig,
    provider: &dyn LmProvider,
) -> Result<BuiltContexts, CliError> {
    let selection = select_scoped(example.history(), example.pool(), config.top_n, config.scope);
    let factual = build_factual(
        example.history(),
        &selection.selected,
        &config.template,
        provider,
    )
    .map_err(CliError::runtime)?;
    let counterfactual = build_counterfactual(
        example.history(),
        &selection.selected,
        &config.template,
        provider,
        config.null_mode,
    )
    .map_err(CliError::runtime)?;
    Ok(BuiltContexts {
        factual,
        counterfactual,
    })
}

fn run_decode(cmd: DecodeCmd) -> Result<(), CliError> {
    let config = RunConfig::resolve(&cmd.engine)?;
    let provider = config.provider()?;
    let params = config.params(provider.as_ref())?;
    let examples = crate::eval::load_dataset(&cmd.dataset).map_err(CliError::runtime)?;

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut trace_file = match &cmd.emit_trace {
        Some(path) => Some(std::fs::File::create(path).map_err(|e| {
            CliError::runtime(format!("cannot create {}: {e}", path.display()))
        })?),
        None => None,
    };
    let mut emit = |example_id: &str,
                    mode: &str,
                    response: &crate::decoder::Response,
                    ctx: &Context,
                    trace: &DecodeTrace,
                    trace_file: &mut Option<std::fs::File>|
     -> Result<(), CliError> {
        let line = ResultLine {
            example_id,
            mode,
            response: &response.text,
            selected_knowledge_ids: &ctx.selected_knowledge_ids,
            stop_reason: trace.stop_reason,
        };
        serde_json::to_writer(&mut out, &line).map_err(CliError::runtime)?;
        writeln!(out).map_err(CliError::runtime)?;
        if let Some(file) = trace_file {
            let line = TraceLine {
                example_id,
                mode,
                trace,
            };
            serde_json::to_writer(&mut *file, &line).map_err(CliError::runtime)?;
            writeln!(file).map_err(CliError::runtime)?;
        }
        Ok(())
    };

    for example in &examples {
        let contexts = build_contexts(example, &config, provider.as_ref())?;
        if matches!(cmd.mode, DecodeMode::Plain | DecodeMode::Both) {
            let (response, trace) = greedy_decode(provider.as_ref(), &contexts.factual, &params)
                .map_err(|e| {
                CliError::runtime(format!("example {}: {e}", example.example_id))
            })?;
            emit(
                &example.example_id,
                "plain",
                &response,
                &contexts.factual,
                &trace,
                &mut trace_file,
            )?;
        }
        if matches!(cmd.mode, DecodeMode::Ah | DecodeMode::Both) {
            let (response, trace) = counterfactual_decode(
                provider.as_ref(),
                &contexts.factual,
                &contexts.counterfactual,
                &params,
            )
            .map_err(|e| CliError::runtime(format!("example {}: {e}", example.example_id)))?;
            emit(
                &example.example_id,
                "ah",
                &response,
                &contexts.factual,
                &trace,
                &mut trace_file,
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SuppressedEntry {
    token_id: TokenId,
    token: String,
    tde: f64,
}

#[derive(Debug, Serialize)]
struct EffectStepLine {
    step: usize,
    top_suppressed: Vec<SuppressedEntry>,
    norms: StepNorms,
}

#[derive(Debug, Serialize)]
struct EffectReportLine<'a> {
    example_id: &'a str,
    response: &'a str,
    mean_l1_tde: f64,
    steps: Vec<EffectStepLine>,
}

fn run_trace(cmd: TraceCmd) -> Result<(), CliError> {
    let config = RunConfig::resolve(&cmd.engine)?;
    let provider = config.provider()?;
    let params = config.params(provider.as_ref())?;
    let examples = crate::eval::load_dataset(&cmd.dataset).map_err(CliError::runtime)?;

    let mut output: Box<dyn Write> = match &cmd.out {
        Some(path) => Box::new(std::fs::File::create(path).map_err(|e| {
            CliError::runtime(format!("cannot create {}: {e}", path.display()))
        })?),
        None => Box::new(std::io::stdout().lock()),
    };

    for example in &examples {
        let contexts = build_contexts(example, &config, provider.as_ref())?;
        let ctx_null = build_null(
            example.history(),
            example.pool(),
            config.top_n,
            &config.template,
            provider.as_ref(),
            config.null_mode,
        )
        .map_err(CliError::runtime)?;
        let (response, decode_trace) = counterfactual_decode(
            provider.as_ref(),
            &contexts.factual,
            &contexts.counterfactual,
            &params,
        )
        .map_err(|e| CliError::runtime(format!("example {}: {e}", example.example_id)))?;
        // Replay every decode step, including a terminal eos step, so the
        // effect trace aligns one-to-one with the decode trace.
        let chosen: Vec<TokenId> = decode_trace.steps.iter().map(|s| s.chosen).collect();
        let effect_trace = trace_effects(
            provider.as_ref(),
            &contexts.factual,
            &contexts.counterfactual,
            &ctx_null,
            &chosen,
        )
        .map_err(|e| CliError::runtime(format!("example {}: {e}", example.example_id)))?;
        let norms = effect_trace.step_norms();
        let steps = effect_trace
            .steps
            .iter()
            .zip(norms)
            .enumerate()
            .map(|(idx, (effects, norms))| EffectStepLine {
                step: idx + 1,
                top_suppressed: effects
                    .top_suppressed(TOP_SUPPRESSED)
                    .into_iter()
                    .map(|(token_id, tde)| SuppressedEntry {
                        token_id,
                        token: provider
                            .detokenize(std::slice::from_ref(&token_id))
                            .unwrap_or_default(),
                        tde,
                    })
                    .collect(),
                norms,
            })
            .collect();
        let line = EffectReportLine {
            example_id: &example.example_id,
            response: &response.text,
            mean_l1_tde: effect_trace.mean_l1_tde,
            steps,
        };
        serde_json::to_writer(&mut output, &line).map_err(CliError::runtime)?;
        writeln!(output).map_err(CliError::runtime)?;
    }
    Ok(())
}

fn run_eval_cmd(cmd: EvalCmd) -> Result<(), CliError> {
    let config = RunConfig::resolve(&cmd.engine)?;
    let provider = config.provider()?;
    let params = config.params(provider.as_ref())?;
    let mut eval_config = EvalConfig::new(params, config.model.id());
    eval_config.template = config.template.clone();
    eval_config.top_n = config.top_n;
    eval_config.scope = config.scope;
    eval_config.partial = cmd.partial;
    let report = eval_dataset_file(provider.as_ref(), &cmd.dataset, &eval_config)
        .map_err(CliError::runtime)?;
    let json = serde_json::to_string_pretty(&report).map_err(CliError::runtime)?;
    match &cmd.out {
        Some(path) => std::fs::write(path, json.as_bytes()).map_err(|e| {
            CliError::runtime(format!("cannot write {}: {e}", path.display()))
        })?,
        None => println!("{json}"),
    }
    eprintln!(
        "evaluated {} examples ({} errors); knowledge_f1 plain {:.4} vs ah {:.4}",
        report.records.len(),
        report.errors.len(),
        report.plain.mean_knowledge_f1,
        report.ah.mean_knowledge_f1
    );
    Ok(())
}

fn load_session_pool(path: Option<&PathBuf>) -> Result<KnowledgePool, CliError> {
    match path {
        None => Ok(KnowledgePool::empty()),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::runtime(format!("cannot read {}: {e}", path.display()))
            })?;
            let pieces: Vec<KnowledgePiece> = serde_json::from_str(&text).map_err(|e| {
                CliError::runtime(format!("invalid knowledge file {}: {e}", path.display()))
            })?;
            KnowledgePool::new(pieces).map_err(CliError::runtime)
        }
    }
}

fn run_chat(cmd: ChatCmd) -> Result<(), CliError> {
    let config = RunConfig::resolve(&cmd.engine)?;
    let provider = config.provider()?;
    let params = config.params(provider.as_ref())?;
    let pool = load_session_pool(cmd.knowledge.as_ref())?;

    let stdin = std::io::stdin();
    let mut lines = stdin.lock().lines();
    let mut turns: Vec<Utterance> = Vec::new();
    let mut last_selected: Vec<KnowledgePiece> = Vec::new();
    let mut last_trace: Option<DecodeTrace> = None;

    eprintln!("chat ready; /knowledge shows the selection, /trace the last step table, /quit exits");
    loop {
        eprint!("you> ");
        let _ = std::io::stderr().flush();
        let line = match lines.next() {
            Some(Ok(line)) => line,
            Some(Err(e)) => return Err(CliError::runtime(e)),
            None => break,
        };
        let input = line.trim();
        if input.is_empty() {
            continue;
        }
        match input {
            "/quit" => break,
            "/knowledge" => {
                if last_selected.is_empty() {
                    println!("(no knowledge selected yet)");
                } else {
                    for piece in &last_selected {
                        println!("{}: {}", piece.id, piece.render());
                    }
                }
                continue;
            }
            "/trace" => {
                match &last_trace {
                    Some(trace) => print_step_table(trace, provider.as_ref()),
                    None => println!("(no decode yet)"),
                }
                continue;
            }
            _ => {}
        }

        let user_turn = Utterance::user(input).map_err(CliError::runtime)?;
        turns.push(user_turn);
        let history = DialogueHistory::new(turns.clone()).map_err(CliError::runtime)?;
        let selection = select_scoped(&history, &pool, config.top_n, config.scope);
        let factual = build_factual(&history, &selection.selected, &config.template, provider.as_ref())
            .map_err(CliError::runtime)?;
        let counterfactual = build_counterfactual(
            &history,
            &selection.selected,
            &config.template,
            provider.as_ref(),
            config.null_mode,
        )
        .map_err(CliError::runtime)?;
        let (response, trace) =
            counterfactual_decode(provider.as_ref(), &factual, &counterfactual, &params)
                .map_err(CliError::runtime)?;
        if response.text.trim().is_empty() {
            println!("(empty response)");
        } else {
            println!("{}", response.text);
            turns.push(Utterance::system(response.text.clone()).map_err(CliError::runtime)?);
        }
        last_selected = selection.selected;
        last_trace = Some(trace);
    }
    Ok(())
}

fn print_step_table(trace: &DecodeTrace, provider: &dyn LmProvider) {
    println!("step  lambda      chosen             top combined scores");
    for step in &trace.steps {
        let surface = provider
            .detokenize(std::slice::from_ref(&step.chosen))
            .unwrap_or_default();
        let top: Vec<String> = step
            .combined_topk
            .iter()
            .take(4)
            .map(|(id, score)| format!("{id}:{score:+.4}"))
            .collect();
        println!(
            "{:<5} {:<11.6} {:<18} {}",
            step.i,
            step.lambda_i,
            format!("{} ({})", step.chosen, surface),
            top.join("  ")
        );
    }
}
