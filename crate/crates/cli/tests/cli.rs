use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codec-probe"))
        .args(args)
        .current_dir(dir)
        .env("CODEC_PROBE_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, preset: &str, n: usize) {
    ok(dir, &["synth", "--preset", preset, "--n", &n.to_string(), "--out", "c/corpus.jsonl"]);
}

fn entries(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn validate_prints_utterance_count() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "speechtokenizer-like", 30);
    let out = ok(d.path(), &["validate", "--corpus", "c/corpus.jsonl"]);
    assert!(out.contains("30 utterances"), "{out}");
}

#[test]
fn bad_scale_is_a_data_error_and_writes_nothing() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "speechtokenizer-like", 20);
    let out = run(d.path(), &["assoc", "--corpus", "c/corpus.jsonl", "--scale", "9", "--out", "a"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scale out of range"));
    assert!(!d.path().join("a").exists());
}

#[test]
fn usage_errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    for args in [&["validate", "--bogus"][..], &["nope"], &["synth", "--n", "x", "--out", "c.jsonl"]] {
        let out = run(d.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    assert_eq!(run(d.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn malformed_corpus_is_a_data_error() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.jsonl"), "{\"id\": 1}\n").unwrap();
    let out = run(d.path(), &["topk", "--corpus", "bad.jsonl", "--out", "t"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    let out = run(d.path(), &["validate", "--corpus", "missing.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_run_leaves_existing_outputs_untouched() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "speechtokenizer-like", 10);
    std::fs::write(d.path().join("mi.csv"), "previous").unwrap();
    // 10 utterances are far below the MI report's minimum frame count.
    let out = run(d.path(), &["mi", "--corpus", "c/corpus.jsonl", "--out", "mi.csv"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(d.path().join("mi.csv")).unwrap(), "previous");
    assert_eq!(entries(d.path()), ["c", "mi.csv"]);
}

#[test]
fn unknown_target_speaker_writes_nothing() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "deterministic", 8);
    ok(d.path(), &["train", "--corpus", "c/corpus.jsonl", "--out", "m/model.anc", "--steps", "2", "--dim", "8", "--heads", "2"]);
    assert_eq!(entries(&d.path().join("m")), ["model.anc", "model.anc.json"]);
    let out = run(
        d.path(),
        &["convert", "--model", "m/model.anc", "--corpus", "c/corpus.jsonl", "--target-speaker", "nobody", "--out", "v.jsonl"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.path().join("v.jsonl").exists());
}

#[test]
fn same_seed_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        synth(d, "speechtokenizer-like", 40);
        ok(d, &["--seed", "3", "tsne", "--codebook", "c/codebook.cbk", "--scale", "0", "--corpus", "c/corpus.jsonl", "--iterations", "300", "--out", "t"]);
        ok(d, &["topk", "--corpus", "c/corpus.jsonl", "--out", "k"]);
    }
    for f in ["c/corpus.jsonl", "c/ground_truth.json", "c/codebook.cbk", "t/points.csv", "t/trace.csv", "t/layout.svg", "k/topk.svg"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn threads_and_deterministic_flags_do_not_change_results() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "speechtokenizer-like", 40);
    ok(d.path(), &["assoc", "--corpus", "c/corpus.jsonl", "--scale", "1", "--out", "p"]);
    ok(d.path(), &["--deterministic", "--threads", "1", "assoc", "--corpus", "c/corpus.jsonl", "--scale", "1", "--out", "s"]);
    for f in ["cooccurrence.csv", "mapping.csv"] {
        assert_eq!(std::fs::read(d.path().join("p").join(f)).unwrap(), std::fs::read(d.path().join("s").join(f)).unwrap());
    }
}

#[test]
fn seed_flag_overrides_spec_seed() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("s.json"), r#"{"seed": 5}"#).unwrap();
    ok(d.path(), &["synth", "--spec", "s.json", "--n", "4", "--out", "a/c.jsonl"]);
    ok(d.path(), &["--seed", "5", "synth", "--n", "4", "--out", "b/c.jsonl"]);
    ok(d.path(), &["--seed", "6", "synth", "--spec", "s.json", "--n", "4", "--out", "x/c.jsonl"]);
    let read = |p: &str| std::fs::read(d.path().join(p)).unwrap();
    assert_eq!(read("a/c.jsonl"), read("b/c.jsonl"));
    assert_ne!(read("a/c.jsonl"), read("x/c.jsonl"));
}

fn analytic_argmax(truth: &Value, attribute: &str) -> (usize, f64) {
    truth["analytic_mi"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["attribute"] == attribute)
        .map(|r| (r["scale"].as_u64().unwrap() as usize, r["nats"].as_f64().unwrap()))
        .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
}

#[test]
fn mi_report_follows_ground_truth_orderings() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "speechtokenizer-like", 200);
    ok(d.path(), &["mi", "--corpus", "c/corpus.jsonl", "--epochs", "20"]);
    let truth: Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("c/ground_truth.json")).unwrap()).unwrap();
    let csv = std::fs::read_to_string(d.path().join("mi_report.csv")).unwrap();
    let rows: Vec<(usize, String, String, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].to_string(), f[2].to_string(), f[3].parse().unwrap())
        })
        .collect();
    let dominant = |attr: &str, est: &str| {
        rows.iter()
            .filter(|r| r.1 == attr && r.2 == est)
            .map(|r| (r.0, r.3))
            .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
    };
    let (content_scale, content_mi) = analytic_argmax(&truth, "content");
    let (speaker_scale, speaker_mi) = analytic_argmax(&truth, "speaker");
    let (_, pitch_mi) = analytic_argmax(&truth, "pitch_bin");
    assert!(pitch_mi < speaker_mi && pitch_mi < content_mi);
    for est in ["club", "plugin"] {
        assert_eq!(dominant("content", est).0, content_scale, "{est}");
        assert_eq!(dominant("identity", est).0, speaker_scale, "{est}");
    }
    let pitch = dominant("pitch", "club").1;
    assert!(pitch < dominant("identity", "club").1);
    assert!(pitch < dominant("content", "club").1);
}

#[test]
fn report_bundles_curves_projections_and_mi() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "speechtokenizer-like", 60);
    ok(
        d.path(),
        &["report", "--corpus", "c/corpus.jsonl", "--codebook", "c/codebook.cbk", "--categories", "c/categories.csv", "--out", "r", "--iterations", "260", "--no-mi"],
    );
    let files = entries(&d.path().join("r"));
    for f in ["topk.csv", "topk.svg", "topk_scale0.csv", "tsne_scale0.svg", "tsne_scale7_points.csv"] {
        assert!(files.iter().any(|x| x == f), "{f} missing from {files:?}");
    }
    assert!(!files.iter().any(|x| x == "mi_report.csv"));
    let svg = std::fs::read_to_string(d.path().join("r/tsne_scale0.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("group"));
}

#[test]
fn train_analyze_generate_convert_round() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "deterministic", 12);
    ok(
        d.path(),
        &["train", "--corpus", "c/corpus.jsonl", "--out", "m.anc", "--steps", "5", "--dim", "8", "--heads", "2", "--loss-csv", "loss.csv"],
    );
    assert_eq!(std::fs::read_to_string(d.path().join("loss.csv")).unwrap().lines().count(), 6);
    ok(d.path(), &["analyze", "--model", "m.anc", "--corpus", "c/corpus.jsonl", "--out", "a.jsonl", "--metrics", "am.csv"]);
    ok(d.path(), &["generate", "--model", "m.anc", "--corpus", "c/corpus.jsonl", "--out", "g.jsonl", "--metrics", "gm.csv"]);
    let truth: Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("c/ground_truth.json")).unwrap()).unwrap();
    let target = truth["speaker_ids"][1].as_str().unwrap().to_string();
    ok(d.path(), &["convert", "--model", "m.anc", "--corpus", "c/corpus.jsonl", "--target-speaker", &target, "--out", "v.jsonl"]);
    for f in ["a.jsonl", "g.jsonl", "v.jsonl"] {
        let s = ok(d.path(), &["validate", "--corpus", f]);
        assert!(s.contains("12 utterances"), "{f}: {s}");
    }
    let am = std::fs::read_to_string(d.path().join("am.csv")).unwrap();
    assert!(am.starts_with("name,value,units,n\ncontent_accuracy,"));
    let gm = std::fs::read_to_string(d.path().join("gm.csv")).unwrap();
    assert_eq!(gm.lines().filter(|l| l.starts_with("codec_match_scale")).count(), truth["spec"]["num_scales"].as_u64().unwrap() as usize);
    let converted = std::fs::read_to_string(d.path().join("v.jsonl")).unwrap();
    assert!(converted.lines().all(|l| l.contains(&format!("\"{target}\""))));
}
