mod common;

use std::fs;
use std::path::Path;

use common::*;
use serde_json::Value;

fn manifest(dir: &Path, command: &str) -> Value {
    let text = fs::read_to_string(dir.join(format!("manifest-{command}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn stderr_of(out: &std::process::Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Imports, splits and trains a small ngram model under `dir`.
fn prepare_model(dir: &Path, seed: &str) -> std::path::PathBuf {
    let tsv = dir.join("labeled.tsv");
    write_tsv(&tsv, 12);
    let data = dir.join("data/all.jsonl");
    ok(&["import", "--tsv", p(&tsv), "--out", p(&data), "--prefix", "toy"]);
    ok(&["split", "--data", p(&data), "--out-dir", p(&dir.join("split")), "--stratified", "--seed", seed]);
    let model = dir.join("model");
    ok(&[
        "train",
        "--train",
        p(&dir.join("split/train.jsonl")),
        "--val",
        p(&dir.join("split/val.jsonl")),
        "--out",
        p(&model),
        "--family",
        "ngram_linear",
        "--epochs",
        "40",
        "--seed",
        seed,
    ]);
    model
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["split", "--bogus"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    fs::write(&data, "").unwrap();
    let out = run(&["train", "--train", p(&data), "--val", p(&data), "--out", p(&dir.path().join("m")), "--family", "svm"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("svm"));
    let out = run(&["split", "--data", p(&dir.path().join("absent.jsonl")), "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["split", "--data", p(&data), "--out-dir", p(dir.path()), "--ratios", "0.5,0.5,0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("ratios"));
}

#[test]
fn malformed_data_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    fs::write(&data, "{not json}\n").unwrap();
    let out = run(&["split", "--data", p(&data), "--out-dir", p(&dir.path().join("s"))]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr_of(&out));
}

#[test]
fn divergent_training_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let tsv = dir.path().join("l.tsv");
    write_tsv(&tsv, 4);
    let data = dir.path().join("all.jsonl");
    ok(&["import", "--tsv", p(&tsv), "--out", p(&data)]);
    let out = run(&[
        "train", "--train", p(&data), "--val", p(&data), "--out", p(&dir.path().join("m")),
        "--family", "ngram_linear", "--lr-grid", "1e308", "--epochs", "5",
    ]);
    // train and validation share ids, which is a data error
    assert_eq!(out.status.code(), Some(3), "{}", stderr_of(&out));

    ok(&["split", "--data", p(&data), "--out-dir", p(&dir.path().join("s"))]);
    let out = run(&[
        "train", "--train", p(&dir.path().join("s/train.jsonl")), "--val", p(&dir.path().join("s/val.jsonl")),
        "--out", p(&dir.path().join("m")), "--family", "cnn", "--lr-grid", "1e30", "--epochs", "2",
        "--padding-size", "16", "--batch-size", "8",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("diverged"));
}

#[test]
fn ingest_reports_clauses_and_rejects_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let meta = write_corpus(dir.path());
    let out_file = dir.path().join("out/clauses.jsonl");
    let stdout = ok(&["ingest", "--in", p(&dir.path().join("docs")), "--meta", p(&meta), "--out", p(&out_file)]);
    assert!(stdout.contains("total: 5 clauses from 2 documents"), "{stdout}");
    let lines: Vec<Value> = fs::read_to_string(&out_file)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 5);
    assert!(lines.iter().any(|c| c["text"].as_str().unwrap().contains("自然通风方式， 且应便于维护")));
    let m = manifest(&dir.path().join("out"), "ingest");
    assert_eq!(m["summary"]["clauses"], 5);
    assert_eq!(m["inputs"].as_array().unwrap().len(), 2);

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = run(&["ingest", "--in", p(&empty), "--meta", p(&meta), "--out", p(&dir.path().join("x.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("no documents"));
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = prepare_model(d, "7");
    let m = manifest(&d.join("split"), "split");
    assert_eq!(m["summary"]["train"].as_u64().unwrap() + m["summary"]["val"].as_u64().unwrap() + m["summary"]["test"].as_u64().unwrap(), 84);
    let m = manifest(&model, "train");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["settings"]["family"], "ngram_linear");

    // eval prints the table and the headline
    let stdout = ok(&["eval", "--model", p(&model), "--data", p(&d.join("split/test.jsonl")), "--out-dir", p(&d.join("eval"))]);
    let headline = stdout.lines().last().unwrap();
    assert!(headline.starts_with("weighted F1: ") && headline.ends_with('%'), "{stdout}");
    let pct = headline.trim_start_matches("weighted F1: ").trim_end_matches('%');
    assert_eq!(pct.split('.').nth(1).unwrap().len(), 2);
    assert!(d.join("eval/eval.json").is_file());

    // seven example sentences give seven labels
    let mut args = vec!["predict", "--model", p(&model)];
    for (_, text) in CATEGORY_EXAMPLES {
        args.extend(["--text", text]);
    }
    let stdout = ok(&args);
    let labels: Vec<&str> = stdout.lines().collect();
    assert_eq!(labels, CATEGORY_EXAMPLES.map(|(l, _)| l));

    // ingest, predict, score
    let meta = write_corpus(d);
    let clauses = d.join("corpus/clauses.jsonl");
    ok(&["ingest", "--in", p(&d.join("docs")), "--meta", p(&meta), "--out", p(&clauses)]);
    let preds = d.join("preds/predictions.jsonl");
    ok(&["predict", "--model", p(&model), "--clauses", p(&clauses), "--out", p(&preds)]);
    let first: Value = serde_json::from_str(fs::read_to_string(&preds).unwrap().lines().next().unwrap()).unwrap();
    for key in ["clause_id", "doc_id", "category", "confidence"] {
        assert!(first.get(key).is_some(), "{first}");
    }
    let stdout = ok(&["score", "--predictions", p(&d.join("preds")), "--meta", p(&meta), "--out-dir", p(&d.join("score"))]);
    assert!(stdout.starts_with("domain,level,codes,clauses,"));
    let csv = fs::read_to_string(d.join("score/corpus_report.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("fire,GB,1,")), "{csv}");
    assert!(csv.lines().any(|l| l.starts_with("All,all,2,5,")), "{csv}");

    // filter experiment from scripted outcomes
    let script = d.join("outcomes.jsonl");
    let text = fs::read_to_string(&clauses).unwrap();
    let ids: Vec<String> = text
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["clause_id"].as_str().unwrap().to_string())
        .collect();
    let script_text: String = ids.iter().map(|id| format!("{{\"clause_id\":\"{id}\",\"outcome\":\"success\"}}\n")).collect();
    fs::write(&script, script_text).unwrap();
    ok(&["filter-exp", "--clauses", p(&clauses), "--predictions", p(&preds), "--interpreter", p(&script), "--out-dir", p(&d.join("filter"))]);
    let report: Value = serde_json::from_str(&fs::read_to_string(d.join("filter/filter_report.json")).unwrap()).unwrap();
    assert_eq!(report["input_count_before"], 5);
    assert_eq!(report["pct_before_rounded"], 100);
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = prepare_model(d, "3");
    ok(&["eval", "--model", p(&model), "--data", p(&d.join("split/test.jsonl")), "--out-dir", p(&d.join("eval"))]);
    let meta = write_corpus(d);
    let data = d.join("data/all.jsonl");
    let augmented = d.join("data/augmented.jsonl");
    ok(&["augment", "--data", p(&data), "--out", p(&augmented), "--target", "14", "--categories", "direct,indirect", "--seed", "5"]);

    let eval_spec = format!("ngram={}", p(&d.join("eval")));
    let report = |out: &Path| {
        ok(&[
            "report", "--out-dir", p(out), "--data", p(&augmented), "--eval", &eval_spec,
            "--predictions", p(&data), "--meta", p(&meta), "--seed", "5",
        ])
    };
    // the labeled dataset carries doc ids "toy"; give it metadata
    fs::write(&meta, r#"{"toy": {"title": "Toy", "level": "HB", "domain_tag": "mixed"}}"#).unwrap();
    report(&d.join("r1"));
    report(&d.join("r2"));
    let mut names: Vec<String> = fs::read_dir(d.join("r1"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| !n.starts_with("manifest-"))
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "class_distribution.csv", "class_distribution.svg", "corpus_report.csv", "corpus_report.json",
            "document_scores.csv", "interpretability.svg", "model_comparison.csv", "model_comparison.svg",
        ]
    );
    for n in &names {
        assert_eq!(fs::read(d.join("r1").join(n)).unwrap(), fs::read(d.join("r2").join(n)).unwrap(), "{n}");
    }
    let dist = fs::read_to_string(d.join("r1/class_distribution.csv")).unwrap();
    assert!(dist.contains("direct,12,2,14"), "{dist}");
    let m1 = manifest(&d.join("r1"), "report");
    let m2 = manifest(&d.join("r2"), "report");
    assert_eq!(m1["config_sha256"], m2["config_sha256"]);
    assert_eq!(m1["inputs"], m2["inputs"]);

    // training twice with one seed gives the same model files
    let again = d.join("again");
    fs::create_dir(&again).unwrap();
    let model2 = prepare_model(&again, "3");
    for f in ["manifest.json", "training_log.json", "weights.json"] {
        assert_eq!(fs::read(model.join(f)).unwrap(), fs::read(model2.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn locked_output_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let tsv = dir.path().join("l.tsv");
    write_tsv(&tsv, 2);
    let data = dir.path().join("all.jsonl");
    ok(&["import", "--tsv", p(&tsv), "--out", p(&data)]);
    let out_dir = dir.path().join("split");
    fs::create_dir(&out_dir).unwrap();
    fs::write(out_dir.join(".codeinterp.lock"), "1").unwrap();
    let out = run(&["split", "--data", p(&data), "--out-dir", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_of(&out).contains("locked"));
    assert!(!out_dir.join("train.jsonl").exists());
    fs::remove_file(out_dir.join(".codeinterp.lock")).unwrap();
    ok(&["split", "--data", p(&data), "--out-dir", p(&out_dir)]);
    assert!(!out_dir.join(".codeinterp.lock").exists());
}

#[test]
fn config_file_supplies_values_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_tsv(&d.join("l.tsv"), 4);
    let config = d.join("run.toml");
    fs::write(
        &config,
        r#"
seed = 21

[import]
tsv = "l.tsv"
out = "data/all.jsonl"

[split]
data = "data/all.jsonl"
out_dir = "split"
ratios = ["0.5", "1/4", "1/4"]
"#,
    )
    .unwrap();
    ok(&["--config", p(&config), "import"]);
    ok(&["--config", p(&config), "split"]);
    let m = manifest(&d.join("split"), "split");
    assert_eq!(m["seed"], 21);
    assert_eq!(m["summary"]["train"], 14);
    assert!(m["config_file_sha256"].as_str().is_some());

    ok(&["--config", p(&config), "split", "--ratios", "0.8,0.1,0.1", "--seed", "4"]);
    let m = manifest(&d.join("split"), "split");
    assert_eq!(m["seed"], 4);
    assert_eq!(m["summary"]["train"], 23);

    fs::write(&config, "[split]\nratio = 1\n").unwrap();
    let out = run(&["--config", p(&config), "split"]);
    assert_eq!(out.status.code(), Some(2));
}
