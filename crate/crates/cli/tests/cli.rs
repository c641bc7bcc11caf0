use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hnc_core::caption_gen::number_word;
use hnc_core::dataset::{read_dataset, DatasetRecord};
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn synthetic() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/synthetic_scenes.json")
}

fn hnc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hnc")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = hnc(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn records(path: &Path) -> Vec<DatasetRecord> {
    let read = read_dataset(fs::read(path).unwrap().as_slice()).unwrap();
    assert_eq!(read.malformed_lines, 0);
    read.records
}

#[test]
fn missing_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.bin");
    let r = hnc(&["build-tables", "--scenes", "/no/such/file.json", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("does not exist"));
    let r = hnc(&["generate", "--scenes", "/no/such/file.json", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    let r = hnc(&["stats", "--dataset", "/no/such/file.jsonl"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn bad_regime_and_config_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.jsonl");
    let r = hnc(&["generate", "--scenes", s(&fixture("kitchen.json")), "--out", s(&out), "--regime", "muddy"]);
    assert_eq!(r.status.code(), Some(2));
    let config = dir.path().join("c.toml");
    fs::write(&config, "regime = \"sloppy\"\n").unwrap();
    let r = hnc(&["generate", "--config", s(&config), "--scenes", s(&fixture("kitchen.json")), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("sloppy"));
}

#[test]
fn build_tables_is_byte_identical_on_rebuild() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    let out = ok(&["build-tables", "--scenes", s(&synthetic()), "--out", s(&a), "--workers", "1"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("scenes 60"));
    ok(&["build-tables", "--scenes", s(&synthetic()), "--out", s(&b), "--workers", "4"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let report: Value = serde_json::from_slice(&fs::read(dir.path().join("a.bin.report.json")).unwrap()).unwrap();
    assert_eq!(report["parse"]["scenes"], 60);
}

#[test]
fn empty_scene_file_gives_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.jsonl");
    ok(&["generate", "--scenes", s(&fixture("empty.json")), "--out", s(&out)]);
    assert!(fs::read(&out).unwrap().is_empty());
    let report: Value = serde_json::from_slice(&fs::read(dir.path().join("d.jsonl.report.json")).unwrap()).unwrap();
    assert_eq!(report["generation"]["images"], 0);
}

#[test]
fn generate_is_idempotent_and_stats_reconcile() {
    let dir = tempfile::tempdir().unwrap();
    let tables = dir.path().join("t.bin");
    ok(&["build-tables", "--scenes", s(&synthetic()), "--out", s(&tables)]);
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let args = |out: &Path| {
        vec![
            "generate".to_string(), "--tables".into(), s(&tables).into(), "--scenes".into(),
            format!("train={}", s(&synthetic())), "--out".into(), s(out).into(), "--seed".into(), "5".into(),
        ]
    };
    let run = |out: &Path| {
        let a = args(out);
        ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    };
    run(&a);
    run(&b);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read(dir.path().join("a.jsonl.stats.json")).unwrap(), fs::read(dir.path().join("b.jsonl.stats.json")).unwrap());

    let lines = fs::read_to_string(&a).unwrap().lines().count() as u64;
    let stats_out = dir.path().join("stats.json");
    let printed = ok(&["stats", "--dataset", s(&a), "--out", s(&stats_out)]);
    let stats: Value = serde_json::from_slice(&fs::read(&stats_out).unwrap()).unwrap();
    assert_eq!(stats["total_captions"], lines);
    assert_eq!(stats["pairs"].as_u64().unwrap() * 2, lines);
    assert_eq!(stats["captions_per_split"]["train"], lines);
    let per_type: u64 = stats["per_type"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(per_type, lines);

    // recount tokens independently: words are alphanumeric runs
    let recs = records(&a);
    let tokens: usize = recs
        .iter()
        .map(|r| r.text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).count())
        .sum();
    let mean = tokens as f64 / recs.len() as f64;
    assert!((stats["avg_caption_tokens"].as_f64().unwrap() - mean).abs() < 1e-9);
    assert!(String::from_utf8_lossy(&printed.stdout).contains("object_compare_count"));
    for r in &recs {
        assert_eq!(r.seed, 5);
        assert_eq!(r.split, "train");
    }
}

#[test]
fn stats_skips_malformed_lines() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d.jsonl");
    ok(&["generate", "--scenes", s(&fixture("kitchen.json")), "--out", s(&d)]);
    let mut text = fs::read_to_string(&d).unwrap();
    let good = text.lines().count() as u64;
    text.push_str("{broken\n");
    fs::write(&d, text).unwrap();
    let stats_out = dir.path().join("s.json");
    ok(&["stats", "--dataset", s(&d), "--out", s(&stats_out)]);
    let stats: Value = serde_json::from_slice(&fs::read(&stats_out).unwrap()).unwrap();
    assert_eq!(stats["total_captions"], good);
    assert_eq!(stats["malformed_lines"], 1);
}

/// Tokens of the shortest span that differs between two captions.
fn differing_span(a: &str, b: &str) -> (Vec<String>, Vec<String>) {
    let words = |t: &str| t.trim_end_matches('.').split(' ').map(str::to_lowercase).collect::<Vec<_>>();
    let (a, b) = (words(a), words(b));
    let prefix = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let suffix = a[prefix..].iter().rev().zip(b[prefix..].iter().rev()).take_while(|(x, y)| x == y).count();
    (a[prefix..a.len() - suffix].to_vec(), b[prefix..b.len() - suffix].to_vec())
}

#[test]
fn kitchen_scene_pairs_are_minimal_edits() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d.jsonl");
    ok(&["generate", "--scenes", s(&fixture("kitchen.json")), "--out", s(&d), "--max-pairs", "3"]);
    let recs = records(&d);
    let fig: Vec<&DatasetRecord> = recs.iter().filter(|r| r.image_id == "fig").collect();
    assert!(!fig.is_empty());
    let types: std::collections::BTreeSet<_> = fig.iter().map(|r| r.caption_type).collect();
    assert!(types.len() >= 10, "{types:?}");
    for pair in recs.chunks(2) {
        let (pos, neg) = (&pair[0], &pair[1]);
        assert_eq!((pos.label, neg.label), (1, 0));
        let (pos_span, neg_span) = differing_span(&pos.text, &neg.text);
        assert!(!pos_span.is_empty() && !neg_span.is_empty(), "{} / {}", pos.text, neg.text);
        let foil = match pos.foil_slot {
            hnc_core::foil_sampler::FoilSlot::Count => number_word(pos.foil_value.parse().unwrap()),
            _ => pos.foil_value.clone(),
        };
        let foil_words: Vec<&str> = foil.split(' ').collect();
        // the edit is the foil itself plus at most agreement words
        assert!(neg_span.len() <= foil_words.len() + 2, "{} / {}", pos.text, neg.text);
        assert!(neg.text.to_lowercase().contains(&foil), "{} / {}", pos.text, neg.text);
        // anything changed beyond the foil is an article, verb form, comparative or noun inflection
        let inflected = |w: &str| pos_span.iter().any(|p| w.starts_with(p.as_str()) || p.starts_with(w));
        for w in &neg_span {
            assert!(foil_words.contains(&w.as_str()) || w.len() <= 3 || w == "than" || inflected(w), "{} / {}", pos.text, neg.text);
        }
    }
}

#[test]
fn audit_writes_reports_and_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d.jsonl");
    ok(&["generate", "--scenes", s(&synthetic()), "--out", s(&d), "--max-pairs", "3"]);
    let report = dir.path().join("audit.json");
    let out = ok(&["audit", "--dataset", s(&d), "--out", s(&report)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("proxy"));
    let json: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    let acc = json["clean-strict"]["probe_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(fs::read_to_string(dir.path().join("audit.json.txt")).unwrap().contains("AND_logic_relation"));

    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    assert_eq!(hnc(&["audit", "--dataset", s(&empty), "--out", s(&report)]).status.code(), Some(1));

    let positives: String = fs::read_to_string(&d).unwrap().lines().step_by(2).map(|l| format!("{l}\n")).collect();
    let single = dir.path().join("single.jsonl");
    fs::write(&single, positives).unwrap();
    let r = hnc(&["audit", "--dataset", s(&single), "--out", s(&report)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("both labels"));
}
