//! End-to-end checks of the `reasonforge` binary: every stage runs through
//! real files in temp directories, exactly as an operator would drive it.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_reasonforge");

fn reasonforge(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("REASONFORGE_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = reasonforge(args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn serve_backend(role: &str) -> String {
    format!("{BIN} serve-stdio --role {role}")
}

/// gen-scenes, synthesize, and a scripted run set up in one temp dir.
fn synthesized_corpus(dir: &TempDir, scene_count: &str, seed: &str) -> (String, String) {
    let scenes = dir.path().join("scenes.json");
    let data = dir.path().join("data");
    ok(&[
        "gen-scenes",
        "--count",
        scene_count,
        "--seed",
        seed,
        "--out",
        s(&scenes),
    ]);
    ok(&["synthesize", "--scenes", s(&scenes), "--out", s(&data)]);
    (
        scenes.to_str().unwrap().to_string(),
        data.join("dataset.e2e.jsonl").to_str().unwrap().to_string(),
    )
}

#[test]
fn pipeline_runs_from_scenes_to_perfect_report() {
    let dir = TempDir::new().unwrap();
    let (scenes, dataset) = synthesized_corpus(&dir, "8", "11");
    let traces = dir.path().join("traces.jsonl");
    let report_path = dir.path().join("report.json");

    let data_dir = dir.path().join("data");
    assert!(data_dir.join("dataset.steps.jsonl").exists());
    assert!(data_dir.join("stats.json").exists());

    let out = ok(&["validate", "--scenes", &scenes, "--dataset", &dataset]);
    assert!(stdout_of(&out).contains("0 failing"));

    ok(&[
        "run",
        "--scenes",
        &scenes,
        "--dataset",
        &dataset,
        "--out",
        s(&traces),
    ]);
    let out = ok(&[
        "eval",
        "--traces",
        s(&traces),
        "--gold",
        &dataset,
        "--scenes",
        &scenes,
        "--out",
        s(&report_path),
    ]);
    assert!(stdout_of(&out).contains("accuracy (em): 1.0000"));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["accuracy"], 1.0);
    assert_eq!(report["metric"], "em");
    assert!(report["n"].as_u64().unwrap() > 0);
    assert_eq!(report["errors"], serde_json::json!({}));
    assert!(report["by_steps"].as_object().unwrap().len() > 1);
    let mut keys: Vec<&str> = report
        .as_object()
        .unwrap()
        .keys()
        .map(String::as_str)
        .collect();
    keys.sort_unstable();
    assert_eq!(keys, ["accuracy", "by_steps", "errors", "metric", "n"]);
}

#[test]
fn operator_errors_exit_two_and_zero_yield_exits_three() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nowhere.json");
    let out_dir = dir.path().join("data");

    let out = reasonforge(&["synthesize", "--scenes", s(&missing), "--out", s(&out_dir)]);
    assert_eq!(exit_code(&out), 2);

    let empty = dir.path().join("empty.json");
    ok(&["gen-scenes", "--count", "0", "--out", s(&empty)]);
    let out = reasonforge(&["synthesize", "--scenes", s(&empty), "--out", s(&out_dir)]);
    assert_eq!(exit_code(&out), 3);

    let bad_cfg = dir.path().join("bad.toml");
    fs::write(&bad_cfg, "seeed = 7\n").unwrap();
    let out = reasonforge(&["--config", s(&bad_cfg), "gen-scenes", "--out", s(&empty)]);
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("seeed"));
}

#[test]
fn synthesis_is_deterministic_across_parallelism_and_reruns() {
    let dir = TempDir::new().unwrap();
    let scenes = dir.path().join("scenes.json");
    ok(&[
        "gen-scenes",
        "--count",
        "8",
        "--seed",
        "3",
        "--out",
        s(&scenes),
    ]);

    let mut outputs = Vec::new();
    for (name, par) in [("a", "1"), ("b", "8"), ("c", "1")] {
        let out_dir = dir.path().join(name);
        ok(&[
            "synthesize",
            "--scenes",
            s(&scenes),
            "--out",
            s(&out_dir),
            "--parallelism",
            par,
        ]);
        outputs.push((
            fs::read(out_dir.join("dataset.e2e.jsonl")).unwrap(),
            fs::read(out_dir.join("dataset.steps.jsonl")).unwrap(),
        ));
    }
    assert!(!outputs[0].0.is_empty());
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn flags_override_config_and_env_var_supplies_defaults() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("conf.toml");
    fs::write(&cfg, "seed = 1\n").unwrap();

    let flag_only = dir.path().join("flag.json");
    let flag_over_cfg = dir.path().join("both.json");
    ok(&["gen-scenes", "--seed", "9", "--out", s(&flag_only)]);
    ok(&[
        "--config",
        s(&cfg),
        "gen-scenes",
        "--seed",
        "9",
        "--out",
        s(&flag_over_cfg),
    ]);
    assert_eq!(
        fs::read(&flag_only).unwrap(),
        fs::read(&flag_over_cfg).unwrap()
    );

    let cfg_only = dir.path().join("cfg_only.json");
    let seed_one = dir.path().join("seed1.json");
    ok(&["--config", s(&cfg), "gen-scenes", "--out", s(&cfg_only)]);
    ok(&["gen-scenes", "--seed", "1", "--out", s(&seed_one)]);
    assert_eq!(fs::read(&cfg_only).unwrap(), fs::read(&seed_one).unwrap());

    let env_cfg = dir.path().join("env.json");
    let out = Command::new(BIN)
        .args(["gen-scenes", "--out", s(&env_cfg)])
        .env("REASONFORGE_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(fs::read(&env_cfg).unwrap(), fs::read(&seed_one).unwrap());
}

#[test]
fn subprocess_generators_match_template_synthesis() {
    let dir = TempDir::new().unwrap();
    let scenes = dir.path().join("scenes.json");
    ok(&[
        "gen-scenes",
        "--count",
        "6",
        "--seed",
        "5",
        "--out",
        s(&scenes),
    ]);

    let template_dir = dir.path().join("template");
    ok(&[
        "synthesize",
        "--scenes",
        s(&scenes),
        "--out",
        s(&template_dir),
    ]);

    let wire_dir = dir.path().join("wire");
    ok(&[
        "synthesize",
        "--scenes",
        s(&scenes),
        "--out",
        s(&wire_dir),
        "--questioner",
        &serve_backend("question"),
        "--combiner",
        &serve_backend("combine"),
    ]);

    assert_eq!(
        fs::read(template_dir.join("dataset.e2e.jsonl")).unwrap(),
        fs::read(wire_dir.join("dataset.e2e.jsonl")).unwrap()
    );
}

#[test]
fn remote_policy_answers_every_question_correctly() {
    let dir = TempDir::new().unwrap();
    let (scenes, dataset) = synthesized_corpus(&dir, "6", "17");
    let traces = dir.path().join("traces.jsonl");
    let report_path = dir.path().join("report.json");

    let out = ok(&[
        "run",
        "--scenes",
        &scenes,
        "--dataset",
        &dataset,
        "--out",
        s(&traces),
        "--policy",
        "remote",
        "--policy-endpoint",
        &serve_backend("policy"),
    ]);
    let stdout = stdout_of(&out);
    let ran: Vec<&str> = stdout.split_whitespace().collect();
    assert_eq!(
        ran[1],
        ran[3].trim_start_matches('('),
        "every task answered: {stdout}"
    );

    let out = ok(&[
        "eval",
        "--traces",
        s(&traces),
        "--gold",
        &dataset,
        "--scenes",
        &scenes,
        "--out",
        s(&report_path),
    ]);
    assert!(stdout_of(&out).contains("accuracy (em): 1.0000"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["accuracy"], 1.0);
    assert_eq!(report["errors"], serde_json::json!({}));
}

#[test]
fn trace_files_are_stable_and_replay_matches_run() {
    let dir = TempDir::new().unwrap();
    let (scenes, dataset) = synthesized_corpus(&dir, "6", "23");
    let first = dir.path().join("t1.jsonl");
    let second = dir.path().join("t2.jsonl");
    let replayed = dir.path().join("t3.jsonl");

    ok(&[
        "run",
        "--scenes",
        &scenes,
        "--dataset",
        &dataset,
        "--out",
        s(&first),
    ]);
    ok(&[
        "run",
        "--scenes",
        &scenes,
        "--dataset",
        &dataset,
        "--out",
        s(&second),
    ]);
    ok(&[
        "replay",
        "--scenes",
        &scenes,
        "--dataset",
        &dataset,
        "--out",
        s(&replayed),
        "--tools",
        "oracle",
    ]);

    let bytes = fs::read(&first).unwrap();
    assert!(!bytes.is_empty());
    assert_eq!(bytes, fs::read(&second).unwrap());
    assert_eq!(bytes, fs::read(&replayed).unwrap());

    for line in String::from_utf8(bytes).unwrap().lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(record["format"], "v1");
        let trace: reasonforge_core::reasoner::Trace =
            serde_json::from_value(record["trace"].clone()).unwrap();
        assert_eq!(serde_json::to_value(&trace).unwrap(), record["trace"]);
    }
}

#[test]
fn eval_rejects_traces_without_gold_and_accepts_recall_metric() {
    let dir = TempDir::new().unwrap();
    let (scenes, dataset) = synthesized_corpus(&dir, "4", "29");
    let traces = dir.path().join("traces.jsonl");
    ok(&[
        "run",
        "--scenes",
        &scenes,
        "--dataset",
        &dataset,
        "--out",
        s(&traces),
    ]);

    let recall_report = dir.path().join("recall.json");
    ok(&[
        "eval",
        "--traces",
        s(&traces),
        "--gold",
        &dataset,
        "--scenes",
        &scenes,
        "--metric",
        "recall",
        "--out",
        s(&recall_report),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&recall_report).unwrap()).unwrap();
    assert_eq!(report["metric"], "recall");

    let forged = dir.path().join("forged.jsonl");
    let line = fs::read_to_string(&traces).unwrap();
    let mut record: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    record["path_id"] = serde_json::json!("no-such-path");
    fs::write(&forged, format!("{record}\n")).unwrap();
    let out = reasonforge(&[
        "eval",
        "--traces",
        s(&forged),
        "--gold",
        &dataset,
        "--scenes",
        &scenes,
        "--out",
        s(&dir.path().join("x.json")),
    ]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn empty_dataset_runs_to_an_empty_trace_file() {
    let dir = TempDir::new().unwrap();
    let scenes = dir.path().join("scenes.json");
    ok(&[
        "gen-scenes",
        "--count",
        "2",
        "--seed",
        "1",
        "--out",
        s(&scenes),
    ]);
    let dataset = dir.path().join("empty.jsonl");
    fs::write(&dataset, "").unwrap();
    let traces = dir.path().join("traces.jsonl");

    ok(&[
        "run",
        "--scenes",
        s(&scenes),
        "--dataset",
        s(&dataset),
        "--out",
        s(&traces),
    ]);
    assert_eq!(fs::read(&traces).unwrap(), b"");

    let report_path = dir.path().join("report.json");
    ok(&[
        "eval",
        "--traces",
        s(&traces),
        "--gold",
        s(&dataset),
        "--scenes",
        s(&scenes),
        "--out",
        s(&report_path),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["n"], 0);
}

#[test]
fn render_writes_a_png_for_full_and_cropped_views() {
    let dir = TempDir::new().unwrap();
    let scenes = dir.path().join("scenes.json");
    ok(&[
        "gen-scenes",
        "--count",
        "1",
        "--seed",
        "2",
        "--out",
        s(&scenes),
    ]);
    let listing: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&scenes).unwrap()).unwrap();
    let scene_id = listing["scenes"][0]["id"].as_str().unwrap();

    let full = dir.path().join("full.png");
    ok(&[
        "render",
        "--scenes",
        s(&scenes),
        "--scene-id",
        scene_id,
        "--out",
        s(&full),
    ]);
    let cropped = dir.path().join("crop.png");
    ok(&[
        "render",
        "--scenes",
        s(&scenes),
        "--scene-id",
        scene_id,
        "--out",
        s(&cropped),
        "--viewport",
        "10,10,200,120",
        "--mark",
        "40,40,90,80",
        "--long-side",
        "300",
    ]);

    for path in [&full, &cropped] {
        let bytes = fs::read(path).unwrap();
        assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
    }

    let out = reasonforge(&[
        "render",
        "--scenes",
        s(&scenes),
        "--scene-id",
        "no-such-scene",
        "--out",
        s(&dir.path().join("x.png")),
    ]);
    assert_eq!(exit_code(&out), 2);
}
