use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use emomem_core::memory_store::save_memory;
use emomem_core::{emotion_distance, Engine, EmotionVector, MemoryFragment, MemoryUnit, SemanticVector};
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

/// A scratch directory holding `emomem.toml`, `profiles.jsonl` and `mem/`.
fn workspace(dimension: usize) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("mem")).unwrap();
    fs::copy(fixture("profiles.jsonl"), dir.path().join("profiles.jsonl")).unwrap();
    fs::write(
        dir.path().join("emomem.toml"),
        format!("memory_dir = \"mem\"\nprofiles = \"profiles.jsonl\"\n\n[embedder]\ndimension = {dimension}\n"),
    )
    .unwrap();
    dir
}

fn emomem(dir: &Path, args: &[&str]) -> Output {
    emomem_with_stdin(dir, args, "")
}

fn emomem_with_stdin(dir: &Path, args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_emomem"))
        .current_dir(dir)
        .arg("--offline")
        .args(args)
        .env_remove("EMOMEM_API_KEY")
        .env_remove("RUST_LOG")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_code(o: &Output, code: i32) {
    assert_eq!(o.status.code(), Some(code), "stdout:\n{}\nstderr:\n{}", stdout(o), stderr(o));
}

fn ingest_fixtures(dir: &Path) {
    for id in ["ada", "bram"] {
        let input = fixture(&format!("dialogues_{id}.jsonl"));
        assert_code(&emomem(dir, &["ingest", input.to_str().unwrap(), "--character", id]), 0);
        assert_code(&emomem(dir, &["precompute", "--character", id]), 0);
    }
}

#[test]
fn ingest_writes_one_fragment_per_row() {
    let dir = workspace(16);
    let rows: String = (0..113)
        .map(|i| format!("{{\"question\":\"Question number {i}?\",\"answer\":\"Answer number {i}.\"}}\n"))
        .collect();
    fs::write(dir.path().join("rows.jsonl"), rows).unwrap();
    let out = emomem(dir.path(), &["ingest", "rows.jsonl", "--character", "ada"]);
    assert_code(&out, 0);
    assert!(stdout(&out).starts_with("113 fragments"), "{}", stdout(&out));
    let unit = emomem_core::memory_store::load_memory(&dir.path().join("mem/ada.jsonl")).unwrap();
    assert_eq!(unit.len(), 113);
    assert_eq!(unit.fragments()[7].text, "Q: Question number 7?\nA: Answer number 7.");
    assert_eq!(unit.uncached_ids().len(), 113);
}

#[test]
fn empty_input_warns_and_writes_empty_memory() {
    let dir = workspace(16);
    fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let out = emomem(dir.path(), &["ingest", "empty.jsonl", "--character", "ada"]);
    assert_code(&out, 0);
    assert!(stderr(&out).contains("warning"), "{}", stderr(&out));
    assert_eq!(fs::read_to_string(dir.path().join("mem/ada.jsonl")).unwrap(), "");
}

#[test]
fn malformed_row_is_a_data_error_naming_the_line() {
    let dir = workspace(16);
    fs::write(
        dir.path().join("bad.jsonl"),
        "{\"question\":\"a?\",\"answer\":\"b\"}\n{\"question\":\"c?\",\"answer\":\"d\"}\n{\"question\":\"e?\"}\n",
    )
    .unwrap();
    let out = emomem(dir.path(), &["ingest", "bad.jsonl", "--character", "ada"]);
    assert_code(&out, 2);
    let err = stderr(&out);
    assert!(err.contains("bad.jsonl:3") && err.contains("answer"), "{err}");
    assert!(!dir.path().join("mem/ada.jsonl").exists());
}

#[test]
fn retrieval_on_uncached_memory_asks_for_precompute() {
    let dir = workspace(16);
    let input = fixture("dialogues_ada.jsonl");
    assert_code(&emomem(dir.path(), &["ingest", input.to_str().unwrap(), "--character", "ada"]), 0);
    let out = emomem(dir.path(), &["retrieve", "storm", "--character", "ada"]);
    assert_code(&out, 2);
    assert!(stderr(&out).contains("emomem precompute"), "{}", stderr(&out));
}

#[test]
fn retrieval_is_deterministic_and_caps_k() {
    let dir = workspace(16);
    ingest_fixtures(dir.path());
    let args = ["retrieve", "Were you ever frightened?", "--character", "ada", "--json"];
    let first = emomem(dir.path(), &args);
    assert_code(&first, 0);
    for _ in 0..2 {
        assert_eq!(stdout(&emomem(dir.path(), &args)).as_bytes(), first.stdout.as_slice());
    }
    let ranked: Vec<serde_json::Value> = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(ranked.len(), 10);

    let all = emomem(dir.path(), &["retrieve", "storm", "--character", "ada", "-k", "50", "--strategy", "c-m"]);
    assert_code(&all, 0);
    assert_eq!(stdout(&all).lines().count(), 1 + 12);
}

#[test]
fn second_precompute_skips_cached_fragments() {
    let dir = workspace(16);
    ingest_fixtures(dir.path());
    let out = emomem(dir.path(), &["precompute", "--character", "bram"]);
    assert_code(&out, 0);
    assert!(stdout(&out).starts_with("0 computed, 12 already cached, 0 failed"), "{}", stdout(&out));
}

#[tokio::test]
async fn strategies_disagree_when_emotion_matters() {
    let dir = workspace(4);
    let query = "How did the storm make you feel?";
    let q = Engine::offline(4).encode_query(query).await.unwrap();
    let qs = q.semantic.as_slice().to_vec();
    let qe = q.emotion.values();

    // Farthest emotion: all weight on the query's weakest emotion.
    let weakest = (0..8).min_by_key(|&i| qe[i]).unwrap();
    let mut far = [1u8; 8];
    far[weakest] = 10;
    let far = EmotionVector::new(far).unwrap();
    let mid = EmotionVector::uniform(5).unwrap();
    assert!(emotion_distance(&q.emotion, &mid) < emotion_distance(&q.emotion, &far));

    let shifted = |d: f64| SemanticVector::new(qs.iter().map(|v| v + d).collect()).unwrap();
    let frag = |id: &str, s: SemanticVector, e: EmotionVector| {
        MemoryFragment::new(id, "ada", format!("Q: {id}?\nA: {id}.")).unwrap().with_vectors(s, e)
    };
    let unit = MemoryUnit::new(vec![
        frag("same-words", shifted(0.0), far),
        frag("same-feeling", shifted(0.05), q.emotion),
        frag("unrelated", shifted(1.0), mid),
    ])
    .unwrap();
    save_memory(&unit, &dir.path().join("mem/ada.jsonl")).unwrap();

    let first_id = |strategy: &str| {
        let out = emomem(dir.path(), &["retrieve", query, "--character", "ada", "-k", "1", "--strategy", strategy]);
        assert_code(&out, 0);
        stdout(&out).lines().nth(1).unwrap().split_whitespace().nth(1).unwrap().to_owned()
    };
    assert_eq!(first_id("semantic-only"), "same-words");
    assert_eq!(first_id("c-a"), "same-feeling");
}

#[test]
fn chat_logs_every_turn() {
    let dir = workspace(16);
    ingest_fixtures(dir.path());
    let out = emomem_with_stdin(
        dir.path(),
        &["chat", "--character", "bram", "-k", "2", "--show-memory", "--transcript", "t.jsonl"],
        "What is your best dish?\n\nWhere do you travel?\n",
    );
    assert_code(&out, 0);
    assert_eq!(stdout(&out).matches("Bram Tolley: ").count(), 2);
    assert_eq!(stdout(&out).matches("-- memory used:").count(), 2);
    let log = fs::read_to_string(dir.path().join("t.jsonl")).unwrap();
    let turns: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(turns.len(), 2);
    assert_eq!(turns[1]["query"], "Where do you travel?");
    assert_eq!(turns[1]["used_fragment_ids"].as_array().unwrap().len(), 2);
}

#[test]
fn evaluate_prints_types_and_metrics() {
    let dir = workspace(16);
    ingest_fixtures(dir.path());
    let q = fixture("questionnaire.jsonl");
    let out = emomem(dir.path(), &["evaluate", "--questionnaire", q.to_str().unwrap(), "--transcripts", "tx"]);
    assert_code(&out, 0);
    let text = stdout(&out);
    assert!(text.contains("ada: ") && text.contains("bram: "), "{text}");
    assert!(text.contains("MBTI over 2 labelled characters: acc_dim"), "{text}");
    assert!(dir.path().join("tx/ada.c-a.json").exists());

    let bfi = emomem(dir.path(), &["evaluate", "--questionnaire", q.to_str().unwrap(), "--instrument", "bfi"]);
    assert_code(&bfi, 0);
    assert!(stdout(&bfi).contains("BFI over 2 labelled characters"), "{}", stdout(&bfi));
}

#[test]
fn compare_writes_table_and_csv() {
    let dir = workspace(16);
    ingest_fixtures(dir.path());
    let q = fixture("questionnaire.jsonl");
    let labels = fixture("labels.jsonl");
    let out = emomem(
        dir.path(),
        &[
            "compare",
            "--questionnaire",
            q.to_str().unwrap(),
            "--labels",
            labels.to_str().unwrap(),
            "-k",
            "3",
            "--csv",
            "report.csv",
        ],
    );
    assert_code(&out, 0);
    let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "strategy,method,acc_dim,acc_full,mse,mae,characters,failed_items,failures");
    let kinds: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(kinds, ["semantic-only", "c-a", "c-m", "s-s", "s-e"]);
    assert!(stdout(&out).contains("acc_dim"));

    let again = emomem(
        dir.path(),
        &["compare", "--questionnaire", q.to_str().unwrap(), "-k", "3", "--strategies", "s-s,c-m", "--csv", "two.csv"],
    );
    assert_code(&again, 0);
    assert_eq!(fs::read_to_string(dir.path().join("two.csv")).unwrap().lines().count(), 3);
}

#[test]
fn usage_and_lookup_errors_have_distinct_codes() {
    let dir = workspace(16);
    assert_code(&emomem(dir.path(), &["retrieve", "x", "--character", "ada", "--strategy", "nope"]), 1);
    assert_code(&emomem(dir.path(), &["retrieve", "x", "--character", "ada", "-k", "0"]), 2);
    assert_code(&emomem(dir.path(), &["retrieve", "x", "--character", "ada", "--weight", "3"]), 1);
    assert_code(&emomem(dir.path(), &["retrieve", "x", "--character", "ghost"]), 2);
    assert_code(&emomem(dir.path(), &["--help"]), 0);

    let bare = tempfile::tempdir().unwrap();
    let out = emomem(bare.path(), &["precompute", "--character", "ada"]);
    assert_code(&out, 1);
    assert!(stderr(&out).contains("--memory"), "{}", stderr(&out));
}
