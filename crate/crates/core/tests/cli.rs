use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use retrieval_ocr::GrayImage;

fn rocr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rocr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    let config = r#"{
        "seed": 3,
        "labels": ["a", "b", "c", "d", "e"],
        "train_fonts": [{"builtin": "sans"}, {"builtin": "serif"}],
        "variants_per_class": 3,
        "trainer": {"classes_per_batch": 5, "epochs": 1, "passes_per_epoch": 2},
        "corpus": {"lines": 6, "words_per_line": [1, 2], "word_len": [1, 3]}
    }"#;
    fs::write(&path, config).unwrap();
    path
}

fn snapshot_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots")
}

#[test]
fn help_output_matches_snapshots() {
    let update = std::env::var_os("UPDATE_SNAPSHOTS").is_some();
    let mut cmd = retrieval_ocr::cli::command();
    cmd.build();
    let mut pages = vec![("rocr".to_string(), cmd.render_long_help().to_string())];
    for sub in cmd.get_subcommands_mut().filter(|s| s.get_name() != "help") {
        pages.push((format!("rocr-{}", sub.get_name()), sub.render_long_help().to_string()));
    }
    for (name, text) in pages {
        let path = snapshot_dir().join(format!("{name}.txt"));
        if update {
            fs::create_dir_all(snapshot_dir()).unwrap();
            fs::write(&path, &text).unwrap();
            continue;
        }
        let expected = fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing snapshot {}", path.display()));
        assert_eq!(text, expected, "help for {name} changed; rerun with UPDATE_SNAPSHOTS=1");
    }
}

#[test]
fn subcommand_help_lists_global_flags() {
    for sub in ["render", "train", "build-index", "ocr", "eval", "bench", "curve", "ablate", "silver"] {
        let out = rocr(&[sub, "--help"]);
        assert!(out.status.success(), "{sub}");
        let text = String::from_utf8(out.stdout).unwrap();
        for flag in ["--config", "--out", "--workers", "--seed"] {
            assert!(text.contains(flag), "{sub} help lacks {flag}");
        }
    }
}

#[test]
fn invalid_config_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"trainer": {"epochz": 3}}"#).unwrap();
    let out = rocr(&["--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "render"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));

    fs::write(&path, r#"{"datasets": ["/nonexistent/crops"]}"#).unwrap();
    let out = rocr(&["--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "render"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("datasets[0]"));
}

#[test]
fn missing_model_files_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = rocr(&[
        "--out",
        dir.path().to_str().unwrap(),
        "ocr",
        "/nonexistent.png",
        "--weights",
        "/nonexistent.weights",
        "--index",
        "/nonexistent.index",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn end_to_end_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let config = config.to_str().unwrap();
    let path = |p: &str| dir.path().join(p).to_str().unwrap().to_string();

    let out = rocr(&["--config", config, "--out", &path("data"), "render"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("data/crops/manifest.json").exists());
    assert!(dir.path().join("data/lines/annotations.json").exists());
    assert!(dir.path().join("data/run_config.json").exists());

    for run in ["run1", "run2"] {
        let out = rocr(&["--config", config, "--out", &path(run), "train"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let w1 = fs::read(dir.path().join("run1/final.weights")).unwrap();
    let w2 = fs::read(dir.path().join("run2/final.weights")).unwrap();
    assert_eq!(w1, w2, "training is not reproducible");
    assert!(dir.path().join("run1/history.csv").exists());
    let resolved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run1/run_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["trainer"]["epochs"], 1);
    assert_eq!(resolved["trainer"]["m"], 4);

    let weights = path("run1/final.weights");
    let out = rocr(&["--config", config, "--out", &path("idx"), "build-index", "--weights", &weights]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let index = path("idx/chars.index");

    let blank = dir.path().join("blank.png");
    GrayImage::filled(64, 32, 1.0).unwrap().save_png(&blank).unwrap();
    let out = rocr(&["--config", config, "--out", &path("ocr"), "ocr", blank.to_str().unwrap(), "--weights", &weights, "--index", &index]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let record: serde_json::Value =
        serde_json::from_str(fs::read_to_string(dir.path().join("ocr/ocr.jsonl")).unwrap().trim()).unwrap();
    assert_eq!(record["text"], "");
    assert_eq!(record["fallback_events"], 0);

    let lines = path("data/lines");
    let out = rocr(&[
        "--config", config, "--out", &path("eval"), "eval", "--lines", &lines, "--weights", &weights, "--index", &index,
        "--assert-cer", "1.0",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("eval/eval.json")).unwrap()).unwrap();
    assert_eq!(report["line_count"], 6);

    let out = rocr(&[
        "--config", config, "--out", &path("eval2"), "eval", "--lines", &lines, "--weights", &weights, "--index", &index,
        "--assert-cer=0",
    ]);
    let expected = if report["cer"].as_f64().unwrap() > 0.0 { 1 } else { 0 };
    assert_eq!(out.status.code(), Some(expected));

    let out = rocr(&[
        "--config", config, "--out", &path("ocr2"), "ocr", &lines, "--weights", &weights, "--index", &index, "--workers", "2",
    ]);
    assert!(out.status.success());
    let text = fs::read_to_string(dir.path().join("ocr2/ocr.txt")).unwrap();
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn experiment_and_silver_commands() {
    let dir = tempfile::tempdir().unwrap();
    let path = |p: &str| dir.path().join(p).to_str().unwrap().to_string();
    let config = dir.path().join("config.json");
    fs::write(
        &config,
        r#"{
        "labels": ["a", "b", "c", "d", "e"],
        "train_fonts": [{"builtin": "sans"}, {"builtin": "serif"}],
        "variants_per_class": 3,
        "trainer": {"classes_per_batch": 5, "epochs": 1, "passes_per_epoch": 2},
        "words": {"lexicon": ["ab", "bad", "cab"], "distractors": 3, "variants_per_word": 2},
        "corpus": {"lines": 50, "words_per_line": [1, 2], "use_lexicon": true},
        "experiment": {
            "labels": ["a", "b", "c", "d", "e"],
            "train_fonts": [{"builtin": "sans"}, {"builtin": "serif"}],
            "variants_per_class": 3,
            "trainer": {"classes_per_batch": 5, "epochs": 1, "passes_per_epoch": 2},
            "target_lines": 12, "words_per_line": [1, 2], "word_len": [1, 3]
        }
    }"#,
    )
    .unwrap();
    let config = config.to_str().unwrap();
    let ok = |out: Output| assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    ok(rocr(&["--config", config, "--out", &path("data"), "render", "--no-crops"]));
    ok(rocr(&["--config", config, "--out", &path("run"), "train"]));
    let catalog = retrieval_ocr::GlyphCatalog::load(dir.path().join("run/catalog.txt")).unwrap();
    assert_eq!(catalog.len(), 5 + 3 + 3);
    assert_eq!(catalog.labels()[5], "ab");
    let weights = path("run/final.weights");
    ok(rocr(&["--config", config, "--out", &path("idx"), "build-index", "--weights", &weights]));
    ok(rocr(&["--config", config, "--out", &path("idx"), "build-index", "--weights", &weights, "--words"]));

    let (index, words, lines) = (path("idx/chars.index"), path("idx/words.index"), path("data/lines"));
    let out = rocr(&[
        "--config", config, "--out", &path("bench"), "bench", "--lines", &lines, "--weights", &weights, "--index", &index,
        "--word-index", &words, "--worker-counts", "1,2",
    ]);
    ok(out);
    let csv = fs::read_to_string(dir.path().join("bench/throughput.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4, "{csv}");
    assert!(csv.contains("\nchar,1,") && csv.contains("\nword,2,"));

    ok(rocr(&["--config", config, "--out", &path("silver"), "silver", "--lines", &lines, "--weights", &weights, "--index", &index, "--cap", "2"]));
    assert!(dir.path().join("silver/silver/manifest.json").exists());

    ok(rocr(&["--config", config, "--out", &path("curve"), "curve", "--fractions", "0.5,0.0"]));
    let curve = fs::read_to_string(dir.path().join("curve/curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);
    ok(rocr(&["--config", config, "--out", &path("ablate"), "ablate"]));
    assert!(fs::read_to_string(dir.path().join("ablate/ablation.txt")).unwrap().contains("no-synthetic"));
}
