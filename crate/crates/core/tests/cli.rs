use std::path::Path;
use std::process::{Command, Output};

fn wordblock(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_wordblock")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn datagen_train_eval_predict_match() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"samples": 12, "symbols": "abc", "dictionary": ["ab", "ca", "b"], "length_range": [1, 3],
            "max_len": 3, "holdout_fraction": 0.25,
            "glyphs": {"synthetic": {"writers": 2, "variants": 1, "seed": 0}}}"#,
    )
    .unwrap();
    let data = dir.path().join("data");
    wordblock(&["datagen", "--spec", path(&spec), "--out", path(&data), "--seed", "3"]);
    let manifest = data.join("manifest.jsonl");
    assert_eq!(std::fs::read_to_string(&manifest).unwrap().lines().count(), 12);

    let job = dir.path().join("train.json");
    std::fs::write(
        &job,
        r#"{"config": {"batch_size": 2, "batch_composition": [2], "total_iterations": 2, "width_mult": 0.125,
                       "learning_rate": 0.001},
            "sources": ["data/manifest.jsonl"], "max_len": 3}"#,
    )
    .unwrap();
    let bundle = dir.path().join("bundle");
    for target in ["length", "symbol"] {
        wordblock(&["train", "--config", path(&job), "--target", target, "--out", path(&bundle), "--seed", "1"]);
    }
    let loss = std::fs::read_to_string(bundle.join("loss_symbol.csv")).unwrap();
    assert!(loss.starts_with("iteration,loss,lr\n"));
    assert_eq!(loss.lines().count(), 3);

    let report = dir.path().join("report.json");
    let csv = dir.path().join("per_sample.csv");
    let vocab = dir.path().join("words.tsv");
    std::fs::write(&vocab, "ab\t5\nca\t2\nb\t1\n").unwrap();
    wordblock(&[
        "eval", "--manifest", path(&manifest), "--bundle", path(&bundle), "--vocab", path(&vocab),
        "--out", path(&report), "--csv", path(&csv), "--split", "holdout", "--no-vocab-stage",
    ]);
    let holdout = std::fs::read_to_string(&manifest).unwrap().matches(r#""split":"holdout""#).count();
    assert!(holdout > 0);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["samples"], holdout);
    assert_eq!(r["stage_counts"]["symbol"], holdout);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), holdout + 1);

    let image = data.join("images/000000.png");
    let out = wordblock(&["predict", "--image", path(&image), "--bundle", path(&bundle), "--vocab", path(&vocab)]);
    let record: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(record["confidence"].is_number());

    let preds = dir.path().join("preds.txt");
    std::fs::write(&preds, "abb\nc\n").unwrap();
    let out = wordblock(&["match", "--vocab", path(&vocab), "--input", path(&preds)]);
    let text = String::from_utf8(out.stdout).unwrap();
    // "abb": ab at distance 1 with count 5 -> 1 + 1/6
    assert!(text.starts_with("input,matched_word,score\nabb,ab,1.1666666666666667\n"), "{text}");
    assert_eq!(text.lines().nth(2).unwrap().split(',').nth(1), Some("ca"));
}

#[test]
fn rejects_unknown_job_fields() {
    let dir = tempfile::tempdir().unwrap();
    let job = dir.path().join("train.json");
    std::fs::write(&job, r#"{"config": {}, "sources": [], "bogus": 1}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_wordblock"))
        .args(["train", "--config", path(&job), "--target", "symbol", "--out", path(dir.path())])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}
