use std::fs;
use std::path::Path;
use std::process::Command;

use tubesearch::io::{read_jsonl_file, AnnotationRecord, ResultRecord};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tubesearch"))
}

fn status(args: &[&str]) -> i32 {
    bin().args(args).output().unwrap().status.code().unwrap()
}

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["tubesearch"];
    full.extend_from_slice(args);
    tubesearch::cli::run(full)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn clip_count(dir: &Path) -> usize {
    let anns: Vec<AnnotationRecord> = read_jsonl_file(&dir.join("annotations.jsonl")).unwrap();
    let mut clips: Vec<&str> = anns.iter().map(|a| a.clip_id.as_str()).collect();
    clips.dedup();
    clips.len()
}

#[test]
fn exit_codes() {
    assert_eq!(status(&["--help"]), 0);
    assert_eq!(status(&["synth", "--help"]), 0);
    assert_eq!(status(&[]), 1);
    assert_eq!(status(&["frobnicate"]), 1);
    assert_eq!(status(&["synth", "--clips", "many"]), 1);
    assert_eq!(status(&["eval", "--results", "x.jsonl"]), 1);
    assert_eq!(status(&["eval", "--results", "/nonexistent", "--annotations", "a", "--tubes", "t"]), 2);
    assert_eq!(status(&["train", "--method", "svm", "--out", "m"]), 1);
}

#[test]
fn malformed_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let det = dir.path().join("det.jsonl");
    fs::write(&det, "{\"clip_id\": \"c\", \"frame\": 0, \"boxes\": [}\n").unwrap();
    let out = dir.path().join("out.jsonl");
    assert_eq!(status(&["propose", "--detections", s(&det), "--out", s(&out)]), 2);
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, "[1, 2]").unwrap();
    assert_eq!(status(&["synth", "--config", s(&cfg), "--out", s(dir.path())]), 1);
    fs::write(&cfg, "{\"clips\": \"ten\"}").unwrap();
    assert_eq!(status(&["synth", "--config", s(&cfg), "--out", s(dir.path())]), 1);
}

#[test]
fn flag_beats_config_beats_default() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, "{\"clips\": 3, \"frames\": 4, \"false-positive-rate\": 0.0}").unwrap();

    let from_config = dir.path().join("a");
    assert_eq!(run(&["synth", "--config", s(&cfg), "--out", s(&from_config)]), 0);
    assert_eq!(clip_count(&from_config), 3);

    let from_flag = dir.path().join("b");
    assert_eq!(run(&["synth", "--config", s(&cfg), "--clips", "2", "--out", s(&from_flag)]), 0);
    assert_eq!(clip_count(&from_flag), 2);

    let written: serde_json::Value = serde_json::from_slice(&fs::read(from_flag.join("synth_config.json")).unwrap()).unwrap();
    assert_eq!(written["frames_per_clip"], 4);
    assert_eq!(written["false_positive_rate"], 0.0);
    assert_eq!(written["seed"], 0);

    let defaults = dir.path().join("c");
    assert_eq!(run(&["synth", "--frames", "3", "--out", s(&defaults)]), 0);
    assert_eq!(clip_count(&defaults), 20);
}

#[test]
fn text_query_retrieval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    assert_eq!(run(&["synth", "--clips", "9", "--frames", "5", "--out", s(&data)]), 0);
    assert_eq!(run(&["features", "--index", s(&data.join("blocks.json")), "--out", s(&d.join("tubes.fmat"))]), 0);
    assert_eq!(
        run(&[
            "encode-text",
            "--words",
            s(&data.join("words.txt")),
            "--annotations",
            s(&data.join("annotations.jsonl")),
            "--k-centers",
            "3",
            "--pca-dim",
            "12",
            "--encoder-out",
            s(&d.join("enc.fmat")),
            "--out",
            s(&d.join("text.fmat")),
        ]),
        0
    );
    assert_eq!(
        run(&[
            "train",
            "--method",
            "cca",
            "--tube-features",
            s(&d.join("tubes.fmat")),
            "--desc-features",
            s(&d.join("text.fmat")),
            "--annotations",
            s(&data.join("annotations.jsonl")),
            "--out",
            s(&d.join("cca.fmat")),
        ]),
        0
    );
    let results = d.join("results.jsonl");
    assert_eq!(
        run(&[
            "retrieve",
            "--model",
            s(&d.join("cca.fmat")),
            "--candidates",
            s(&d.join("tubes.fmat")),
            "--encoder",
            s(&d.join("enc.fmat")),
            "--words",
            s(&data.join("words.txt")),
            "--query",
            "a woman in a red shirt walking",
            "--top-k",
            "4",
            "--out",
            s(&results),
        ]),
        0
    );
    let recs: Vec<ResultRecord> = read_jsonl_file(&results).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].tube_ids.len(), 4);
    assert!(recs[0].scores.windows(2).all(|w| w[0] >= w[1]));

    // unknown words only: data error
    assert_eq!(
        run(&[
            "retrieve",
            "--model",
            s(&d.join("cca.fmat")),
            "--candidates",
            s(&d.join("tubes.fmat")),
            "--encoder",
            s(&d.join("enc.fmat")),
            "--words",
            s(&data.join("words.txt")),
            "--query",
            "zzqx",
        ]),
        2
    );
}
