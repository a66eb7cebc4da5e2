use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn mcqforge(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcqforge"))
        .env_remove("MCQFORGE_CONFIG")
        .current_dir(out)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = mcqforge(out, args);
    assert!(
        o.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn run_pipeline(dir: &Path) {
    let squad = fixtures().join("squad/dev-mini.json");
    let race = fixtures().join("race");
    ok(
        dir,
        &[
            "ingest",
            "--squad",
            squad.to_str().unwrap(),
            "--race",
            race.to_str().unwrap(),
        ],
    );
    ok(
        dir,
        &[
            "--seed",
            "5",
            "generate-questions",
            "--input",
            "squad.jsonl",
        ],
    );
    ok(
        dir,
        &[
            "--seed",
            "5",
            "generate-distractors",
            "--input",
            "race.jsonl",
        ],
    );
    ok(dir, &["--seed", "5", "qa-filter", "--input", "mcq.jsonl"]);
    ok(
        dir,
        &[
            "evaluate",
            "--generated",
            "mcq.jsonl",
            "--reference",
            "race.jsonl",
        ],
    );
}

#[test]
fn pipeline_outputs_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(a.path());
    run_pipeline(b.path());
    for f in [
        "squad.jsonl",
        "race.jsonl",
        "questions.jsonl",
        "mcq.jsonl",
        "verdicts.jsonl",
        "accepted.jsonl",
        "rejected.jsonl",
        "evaluation.json",
    ] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(!x.is_empty(), "{f} is empty");
        assert_eq!(x, y, "{f} differs");
    }
    let mcq = std::fs::read_to_string(a.path().join("mcq.jsonl")).unwrap();
    let failures = std::fs::read_to_string(a.path().join("mcq.failures.jsonl")).unwrap_or_default();
    assert_eq!(mcq.lines().count() + failures.lines().count(), 20);
}

#[test]
fn seed_changes_generated_output() {
    let a = tempfile::tempdir().unwrap();
    let race = fixtures().join("race");
    ok(a.path(), &["ingest", "--race", race.to_str().unwrap()]);
    ok(
        a.path(),
        &[
            "--seed",
            "1",
            "generate-distractors",
            "--input",
            "race.jsonl",
        ],
    );
    let first = std::fs::read(a.path().join("mcq.jsonl")).unwrap();
    ok(
        a.path(),
        &[
            "--seed",
            "2",
            "generate-distractors",
            "--input",
            "race.jsonl",
        ],
    );
    assert_ne!(first, std::fs::read(a.path().join("mcq.jsonl")).unwrap());
}

#[test]
fn evaluating_references_against_themselves_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    // Every distractor has at least four words so each BLEU order has n-grams.
    let item = |id: usize| {
        serde_json::json!({
            "id": format!("x{id}"),
            "context": "c",
            "question": "q?",
            "answer": "the right answer here",
            "distractors": [
                format!("first wrong option number {id}"),
                "a second wrong option",
                "yet another wrong one",
            ],
            "source": "dataset",
            "split": "test",
        })
        .to_string()
    };
    let text: String = (0..5).map(|i| item(i) + "\n").collect();
    std::fs::write(dir.path().join("ref.jsonl"), text).unwrap();
    for pooled in [false, true] {
        let mut args = vec![
            "evaluate",
            "--generated",
            "ref.jsonl",
            "--reference",
            "ref.jsonl",
        ];
        if pooled {
            args.push("--pooled");
        }
        ok(dir.path(), &args);
        let report = read_json(&dir.path().join("evaluation.json"));
        for key in [
            "bleu1",
            "bleu2",
            "bleu3",
            "bleu4",
            "rougeL_p",
            "rougeL_r",
            "rougeL_f1",
        ] {
            assert_eq!(report["averaged"][key], 1.0, "{key} pooled={pooled}");
        }
    }
}

#[test]
fn plan_with_default_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = String::new();
    for i in 0..400 {
        let accepted = i % 2 == 0;
        let v = serde_json::json!({
            "id": format!("item-{i}"),
            "probabilities": [0.25, 0.25, 0.25, 0.25],
            "chosen": if accepted { 0 } else { 1 },
            "gold": 0,
            "accepted": accepted,
            "order": [0, 1, 2, 3],
        });
        lines.push_str(&v.to_string());
        lines.push('\n');
    }
    std::fs::write(dir.path().join("verdicts.jsonl"), lines).unwrap();
    let stdout = ok(
        dir.path(),
        &[
            "--seed",
            "9",
            "humaneval-plan",
            "--verdicts",
            "verdicts.jsonl",
        ],
    );
    assert_eq!(
        stdout.trim(),
        "310 distinct items, 400 rating tasks, 155 accepted / 155 rejected"
    );
    let plan = read_json(&dir.path().join("plan.json"));
    assert_eq!(plan["shared_items"].as_array().unwrap().len(), 30);
    assert_eq!(plan["assessors"].as_array().unwrap().len(), 4);

    // Stats over an empty log: everything pending, no failure.
    std::fs::write(dir.path().join("ratings.jsonl"), "").unwrap();
    let stdout = ok(
        dir.path(),
        &[
            "humaneval-stats",
            "--plan",
            "plan.json",
            "--ratings",
            "ratings.jsonl",
            "--export-csv",
            "r.csv",
        ],
    );
    assert!(stdout.contains("Fleiss' kappa Q1: pending"), "{stdout}");
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(csv.trim(), "assessor,item,q1,q2,timestamp,verdict");
}

#[test]
fn stats_prints_per_split_table() {
    let dir = tempfile::tempdir().unwrap();
    let race = fixtures().join("race");
    let stdout = ok(dir.path(), &["stats", "--race", race.to_str().unwrap()]);
    assert!(stdout.contains("train"), "{stdout}");
    let stats = read_json(&dir.path().join("stats.json"));
    assert_eq!(stats["all"]["item_count"], 20);
}

#[test]
fn failures_exit_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let o = mcqforge(dir.path(), &["qa-filter", "--input", "missing.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    let o = mcqforge(dir.path(), &["ingest"]);
    assert_eq!(o.status.code(), Some(1));

    let o = mcqforge(dir.path(), &["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(
        dir.path().join("bad.toml"),
        "[generation]\nrepetition_penalty = 0.5\n",
    )
    .unwrap();
    let o = mcqforge(
        dir.path(),
        &["--config", "bad.toml", "stats", "--input", "x.jsonl"],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_from_environment_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let race = fixtures().join("race");
    let cfg = format!(
        "[paths]\nrace = {:?}\nout = \"from-config\"\n",
        race.to_str().unwrap()
    );
    std::fs::write(dir.path().join("cfg.toml"), cfg).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mcqforge"))
        .env("MCQFORGE_CONFIG", dir.path().join("cfg.toml"))
        .current_dir(dir.path())
        .arg("stats")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("from-config/stats.json").exists());
}
