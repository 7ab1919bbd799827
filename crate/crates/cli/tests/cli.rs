use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bpstory(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bpstory"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = bpstory(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn manifests(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

const TRAIN: &[&str] = &[
    "train",
    "--corpus",
    "work/annotated.jsonl",
    "--mode",
    "iterative",
    "--steps",
    "40",
    "--learning-rate",
    "0.01",
];

#[test]
fn toy_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["toy-corpus", "--out-dir", "toy", "--stories", "10"]);
    ok(
        d,
        &[
            "annotate",
            "--corpus",
            "toy/corpus.jsonl",
            "--out",
            "work/annotated.jsonl",
        ],
    );
    let stats = ok(
        d,
        &["stats", "--corpus", "work/annotated.jsonl", "--out", "work/stats.json"],
    );
    assert!(stats.contains("images / sequence") && stats.contains("5.00"), "{stats}");
    ok(d, &[TRAIN, &["--checkpoint-dir", "work/ckpt"]].concat());
    let gen = &[
        "generate",
        "--checkpoint",
        "work/ckpt",
        "--images",
        "toy/corpus.jsonl",
        "--max-iterations",
        "6",
    ];
    ok(d, &[gen.as_slice(), &["--out", "work/gen.jsonl"]].concat());
    ok(
        d,
        &[
            "concepts",
            "--corpus",
            "toy/corpus.jsonl",
            "--out",
            "work/concepts.jsonl",
        ],
    );
    ok(
        d,
        &[
            "evaluate",
            "--generated",
            "work/gen.jsonl",
            "--concepts",
            "work/concepts.jsonl",
            "--metrics",
            "repetition,grounding,faithfulness",
            "--out",
            "work/report.json",
        ],
    );
    ok(
        d,
        &["refine", "--generated", "work/gen.jsonl", "--out", "work/refined.jsonl"],
    );

    let generated = std::fs::read_to_string(d.join("work/gen.jsonl")).unwrap();
    assert_eq!(generated.lines().count(), 10);
    let first: Value = serde_json::from_str(generated.lines().next().unwrap()).unwrap();
    for key in ["sequence_id", "story", "blueprint", "flags", "steps", "concepts"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
    let report: Value = serde_json::from_str(&std::fs::read_to_string(d.join("work/report.json")).unwrap()).unwrap();
    for key in [
        "intra_repetition",
        "inter_repetition",
        "grounding_precision",
        "grounding_recall",
        "faithfulness",
    ] {
        assert!(report["corpus_metrics"][key].is_number(), "missing {key}");
    }

    let work = manifests(&d.join("work/manifest.jsonl"));
    let commands: Vec<&str> = work.iter().map(|m| m["command"].as_str().unwrap()).collect();
    assert_eq!(
        commands,
        ["annotate", "stats", "generate", "concepts", "evaluate", "refine"]
    );
    let ckpt = manifests(&d.join("work/ckpt/manifest.jsonl"));
    assert_eq!(ckpt.len(), 1);
    assert_eq!(ckpt[0]["command"], "train");
    assert_eq!(ckpt[0]["config"]["train"]["max_steps"], 40);
    assert_eq!(manifests(&d.join("toy/manifest.jsonl"))[0]["seed"], 7);
    for m in work.iter().chain(&ckpt) {
        assert_eq!(m["status"], "ok");
        assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
        assert!(m["versions"]["encoder"].is_string() || m["command"] != "generate");
    }

    // Same config and seed: identical checkpoint and generation bytes.
    ok(d, &[TRAIN, &["--checkpoint-dir", "work/ckpt2"]].concat());
    for f in ["weights.json", "tokenizer.json", "config.json"] {
        assert_eq!(
            std::fs::read(d.join("work/ckpt").join(f)).unwrap(),
            std::fs::read(d.join("work/ckpt2").join(f)).unwrap(),
            "{f}"
        );
    }
    ok(d, &[gen.as_slice(), &["--out", "work/gen2.jsonl"]].concat());
    assert_eq!(generated, std::fs::read_to_string(d.join("work/gen2.jsonl")).unwrap());
}

#[test]
fn misspelled_key_fails_with_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("run.toml"), "[decode]\nbeem_size = 3\n").unwrap();
    std::fs::write(d.join("corpus.jsonl"), "").unwrap();
    let out = bpstory(d, &["--config", "run.toml", "stats", "--corpus", "corpus.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["category"], "config");
    assert!(err["error"]["message"].as_str().unwrap().contains("beem_size"));
    let m = manifests(&d.join("manifest.jsonl"));
    assert_eq!(m.len(), 1);
    assert_eq!(m[0]["status"], "error");
    assert!(m[0]["config"].is_null());
}

#[test]
fn missing_input_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bpstory(tmp.path(), &["stats", "--corpus", "nope.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["category"], "io");
}

#[test]
fn unknown_metric_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("gen.jsonl"), "").unwrap();
    let out = bpstory(
        d,
        &[
            "evaluate",
            "--generated",
            "gen.jsonl",
            "--metrics",
            "blue",
            "--out",
            "r.json",
        ],
    );
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["category"], "config");
    assert!(err["error"]["message"].as_str().unwrap().contains("`blue`"));
}

#[test]
fn external_metrics_follow_the_command_protocol() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["toy-corpus", "--out-dir", "toy", "--stories", "2"]);
    let gen: String = ["toy-0000", "toy-0001"]
        .iter()
        .map(|id| format!("{{\"sequence_id\":\"{id}\",\"story\":[\"Anna ran.\"],\"blueprint\":[[]]}}\n"))
        .collect();
    std::fs::write(d.join("gen.jsonl"), gen).unwrap();
    let stub = |script: &str| format!("external_metrics={{program = \"sh\", args = [\"-c\", \"{script}\"]}}");
    let args = |set: &str| {
        [
            "--set",
            set,
            "evaluate",
            "--generated",
            "gen.jsonl",
            "--references",
            "toy/corpus.jsonl",
            "--metrics",
            "repetition,bleu",
            "--out",
            "r.json",
        ]
        .map(str::to_string)
        .to_vec()
    };
    let run = |set: String| bpstory(d, &args(&set).iter().map(String::as_str).collect::<Vec<_>>());

    let out = run(stub(
        "cat > /dev/null; echo '{\\\"value\\\": 12.5, \\\"versions\\\": {\\\"stub\\\": \\\"1\\\"}}'",
    ));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["corpus_metrics"]["bleu"], 12.5);
    assert_eq!(report["config_snapshot"]["external_versions"]["bleu"]["stub"], "1");

    let out = run(stub("cat > /dev/null; echo 'pip install sacrebleu' >&2; exit 3"));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["category"], "capability");
    assert!(err["error"]["message"].as_str().unwrap().contains("sacrebleu"));
}
