//! End-to-end tests of the `cfdecode` binary: exit codes, stream discipline,
//! determinism, and the remote path over the bundled stub server.

use std::io::Write;
use std::process::{Command, Output, Stdio};

use cfdecode::provider::TableLm;
use cfdecode::remote::StubServer;

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cfdecode"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn table_model() -> String {
    format!("table:{}", fixture("world_lm.json"))
}

#[test]
fn decode_happy_path_emits_jsonl_schema() {
    let output = run(&[
        "decode",
        "--dataset",
        &fixture("hallu10.jsonl"),
        "--model",
        &table_model(),
        "--mode",
        "both",
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr_of(&output));
    let stdout = stdout_of(&output);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 20, "10 examples x 2 modes");
    for line in &lines {
        let value: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in [
            "example_id",
            "mode",
            "response",
            "selected_knowledge_ids",
            "stop_reason",
        ] {
            assert!(value.get(key).is_some(), "missing {key} in {line}");
        }
    }
    // The canonical example: plain line says cameron, ah line says nolan.
    let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    let second: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
    assert_eq!(first["mode"], "plain");
    assert_eq!(first["response"], "cameron");
    assert_eq!(second["mode"], "ah");
    assert_eq!(second["response"], "nolan");
}

#[test]
fn decode_without_model_is_a_usage_error() {
    let output = run(&["decode", "--dataset", &fixture("hallu10.jsonl")]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr_of(&output).contains("--model"));
    assert!(stdout_of(&output).is_empty());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let output = run(&["decode", "--no-such-flag"]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let output = run(&["--help"]);
    assert_eq!(output.status.code(), Some(0));
    assert!(stdout_of(&output).contains("decode"));
}

#[test]
fn unreachable_remote_is_a_runtime_error() {
    let output = run(&[
        "eval",
        "--dataset",
        &fixture("hallu10.jsonl"),
        "--model",
        "remote:http://127.0.0.1:9",
        "--timeout-secs",
        "1",
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("unavailable"), "stderr: {}", stderr_of(&output));
}

#[test]
fn decode_is_deterministic_across_runs() {
    let args = [
        "decode",
        "--dataset",
        &fixture("corpus50.jsonl"),
        "--model",
        &table_model(),
        "--mode",
        "ah",
    ];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout_of(&a), stdout_of(&b));
}

#[test]
fn eval_report_is_deterministic_modulo_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a.json");
    let out_b = dir.path().join("b.json");
    for out in [&out_a, &out_b] {
        let output = run(&[
            "eval",
            "--dataset",
            &fixture("corpus50.jsonl"),
            "--model",
            &table_model(),
            "--alpha",
            "0.3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr_of(&output));
    }
    let normalize = |path: &std::path::Path| {
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        v["generated_at"] = serde_json::json!(0);
        serde_json::to_string_pretty(&v).unwrap()
    };
    assert_eq!(normalize(&out_a), normalize(&out_b));
}

#[test]
fn eval_partial_records_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("mixed.jsonl");
    let good = std::fs::read_to_string(fixture("hallu10.jsonl")).unwrap();
    let first = good.lines().next().unwrap();
    std::fs::write(&dataset, format!("{first}\n{{\"example_id\": \"broken\"}}\n")).unwrap();

    // Without --partial the malformed line kills the run.
    let strict = run(&[
        "eval",
        "--dataset",
        dataset.to_str().unwrap(),
        "--model",
        &table_model(),
    ]);
    assert_eq!(strict.status.code(), Some(2));

    let out = dir.path().join("report.json");
    let partial = run(&[
        "eval",
        "--dataset",
        dataset.to_str().unwrap(),
        "--model",
        &table_model(),
        "--partial",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(partial.status.code(), Some(0), "stderr: {}", stderr_of(&partial));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["records"].as_array().unwrap().len(), 1);
    assert_eq!(report["errors"].as_array().unwrap().len(), 1);
    assert_eq!(report["errors"][0]["example_id"], "line:2");
}

#[test]
fn eval_config_echo_reflects_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        serde_json::json!({"alpha": 0.9, "strength": 2.0, "model": table_model()}).to_string(),
    )
    .unwrap();
    let out = dir.path().join("report.json");
    let output = run(&[
        "eval",
        "--dataset",
        &fixture("hallu10.jsonl"),
        "--config",
        config.to_str().unwrap(),
        "--alpha",
        "0.3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr_of(&output));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    // Flag beats config file; config file beats default.
    assert_eq!(report["config"]["alpha"], 0.3);
    assert_eq!(report["config"]["strength"], 2.0);
}

#[test]
fn trace_reports_suppressed_tokens_with_hand_computed_tde() {
    let output = run(&[
        "trace",
        "--dataset",
        &fixture("hallu10.jsonl"),
        "--model",
        &table_model(),
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr_of(&output));
    let stdout = stdout_of(&output);
    let first: serde_json::Value = serde_json::from_str(stdout.lines().next().unwrap()).unwrap();
    assert_eq!(first["example_id"], "hallu-01");
    assert_eq!(first["response"], "nolan");
    let step1 = &first["steps"][0];
    assert_eq!(step1["step"], 1);
    let suppressed = step1["top_suppressed"].as_array().unwrap();
    let cameron = suppressed
        .iter()
        .find(|e| e["token"] == "cameron")
        .expect("spurious token is suppressed");
    // tde at the spurious token: 0.55 - 0.90 = -0.35.
    assert!((cameron["tde"].as_f64().unwrap() - (-0.35)).abs() <= 1e-12);
    for key in ["l1_te", "l1_tde", "l1_pie"] {
        assert!(step1["norms"].get(key).is_some());
    }
    assert!(first["mean_l1_tde"].as_f64().unwrap() > 0.0);
}

#[test]
fn decode_emit_trace_writes_step_records() {
    let dir = tempfile::tempdir().unwrap();
    let trace_path = dir.path().join("traces.jsonl");
    let output = run(&[
        "decode",
        "--dataset",
        &fixture("hallu10.jsonl"),
        "--model",
        &table_model(),
        "--mode",
        "ah",
        "--emit-trace",
        trace_path.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr_of(&output));
    let text = std::fs::read_to_string(&trace_path).unwrap();
    assert_eq!(text.lines().count(), 10);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["example_id"], "hallu-01");
    assert_eq!(first["mode"], "ah");
    let steps = first["trace"]["steps"].as_array().unwrap();
    assert_eq!(steps[0]["lambda_i"], 1.0);
    assert!(steps[0]["p_fact_topk"].as_array().unwrap().len() <= 10);
    assert_eq!(
        first["trace"]["factual_context"]["provenance"],
        "factual"
    );
}

#[test]
fn remote_decode_via_cli_matches_table_decode() {
    let lm = TableLm::load(fixture("world_lm.json")).unwrap();
    let vocab_size = {
        use cfdecode::provider::LmProvider;
        lm.vocab_size()
    };
    let server = StubServer::spawn(lm).unwrap();
    let table = run(&[
        "decode",
        "--dataset",
        &fixture("hallu10.jsonl"),
        "--model",
        &table_model(),
        "--mode",
        "both",
    ]);
    let remote = run(&[
        "decode",
        "--dataset",
        &fixture("hallu10.jsonl"),
        "--model",
        &format!("remote:{}", server.url()),
        "--top-k",
        &vocab_size.to_string(),
        "--mode",
        "both",
    ]);
    assert_eq!(table.status.code(), Some(0));
    assert_eq!(remote.status.code(), Some(0), "stderr: {}", stderr_of(&remote));
    assert_eq!(stdout_of(&table), stdout_of(&remote));
}

#[test]
fn remote_model_spec_reads_env_var() {
    let server = StubServer::spawn(TableLm::load(fixture("world_lm.json")).unwrap()).unwrap();
    let output = bin()
        .args([
            "decode",
            "--dataset",
            &fixture("hallu10.jsonl"),
            "--model",
            "remote:",
        ])
        .env("CFD_REMOTE_URL", server.url())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr_of(&output));

    let missing = bin()
        .args([
            "decode",
            "--dataset",
            &fixture("hallu10.jsonl"),
            "--model",
            "remote:",
        ])
        .env_remove("CFD_REMOTE_URL")
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn chat_survives_empty_input_and_answers() {
    let dir = tempfile::tempdir().unwrap();
    let knowledge = dir.path().join("knowledge.json");
    std::fs::write(
        &knowledge,
        serde_json::json!([{"id": "k1", "text": "inception directed by nolan"}]).to_string(),
    )
    .unwrap();
    let mut child = bin()
        .args([
            "chat",
            "--model",
            &table_model(),
            "--knowledge",
            knowledge.to_str().unwrap(),
        ])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    {
        let stdin = child.stdin.as_mut().unwrap();
        // Empty lines must re-prompt, not crash. The dialogue mirrors the
        // canonical fixture so the counterfactual decode answers "nolan".
        write!(stdin, "\n\nhi\nwho directed inception\n/knowledge\n/trace\n\n/quit\n").unwrap();
    }
    let output = child.wait_with_output().unwrap();
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr_of(&output));
    let stdout = stdout_of(&output);
    assert!(stdout.contains("nolan"), "stdout: {stdout}");
    assert!(stdout.contains("k1: inception directed by nolan"), "stdout: {stdout}");
    assert!(stdout.contains("step"), "trace table printed: {stdout}");
}

#[test]
fn template_flag_accepts_the_shipped_template() {
    let output = run(&[
        "decode",
        "--dataset",
        &fixture("hallu10.jsonl"),
        "--model",
        &table_model(),
        "--template",
        &fixture("template_default.json"),
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr_of(&output));
    let first: serde_json::Value =
        serde_json::from_str(stdout_of(&output).lines().next().unwrap()).unwrap();
    assert_eq!(first["response"], "nolan");
}
