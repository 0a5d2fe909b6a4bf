use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cqa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = cqa(args);
    assert_eq!(code(&o), 0, "{args:?}\nstdout: {}\nstderr: {}", stdout(&o), stderr(&o));
    stdout(&o)
}

fn synth(out: &Path, gammas: &str, variants: &str) -> String {
    ok(&[
        "synth",
        "--procedural",
        "2",
        "--size",
        "48",
        "--gammas",
        gammas,
        "--variants",
        variants,
        "--seed",
        "7",
        "--out",
        s(out),
    ])
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.cfg");
    std::fs::write(&p, body).unwrap();
    p
}

/// Sorted (relative path, bytes) of every file below `root`.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_counts_rows_and_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    let msg = synth(&a, "0.4,0.7,1.0,1.5,2.5", "1");
    assert!(msg.starts_with("10 records"), "{msg}");
    synth(&b, "0.4,0.7,1.0,1.5,2.5", "1");
    let manifest = std::fs::read_to_string(a.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 11);
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn synth_from_base_directory() {
    let d = tempfile::tempdir().unwrap();
    synth(&d.path().join("first"), "1.0", "1");
    let bases = d.path().join("first").join("bases");
    let out = d.path().join("ds");
    let msg = ok(&["synth", "--bases", s(&bases), "--gammas", "0.5,2.0", "--contrasts", "0.5", "--out", s(&out)]);
    assert!(msg.starts_with("6 records"), "{msg}");
}

#[test]
fn synth_validation_errors_name_the_flag() {
    let d = tempfile::tempdir().unwrap();
    let o = cqa(&["synth", "--procedural", "1", "--gammas", "-1", "--out", s(d.path())]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("--gammas"), "{}", stderr(&o));
    let o = cqa(&["synth", "--procedural", "1", "--gammas", "1.0", "--contrasts", "3", "--out", s(d.path())]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("--contrasts"));
    let o = cqa(&["synth", "--gammas", "1.0", "--out", s(d.path())]);
    assert_eq!(code(&o), 3);
    let o = cqa(&["synth", "--bases", s(&d.path().join("none")), "--gammas", "1.0", "--out", s(d.path())]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&cqa(&["synth", "--bogus"])), 3);
}

#[test]
fn extract_handcrafted_and_cnn() {
    let d = tempfile::tempdir().unwrap();
    let ds = d.path().join("ds");
    synth(&ds, "0.4,0.7,1.0,1.5,2.5", "1");
    let m = ds.join("manifest.csv");
    let msg = ok(&["extract", "--manifest", s(&m), "--extractor", "handcrafted", "--out", s(&d.path().join("hc.cqwa"))]);
    assert!(msg.starts_with("10 rows of dimension 16"), "{msg}");

    let msg = ok(&[
        "extract",
        "--manifest",
        s(&m),
        "--extractor",
        "cnn",
        "--random-weights",
        "3",
        "--config",
        "nano",
        "--out",
        s(&d.path().join("cnn.cqwa")),
    ]);
    assert!(msg.starts_with("10 rows of dimension 1280"), "{msg}");

    let missing = cqa(&[
        "extract",
        "--manifest",
        s(&m),
        "--extractor",
        "cnn",
        "--weights",
        s(&d.path().join("w.cqwa")),
        "--config",
        "nano",
        "--out",
        s(&d.path().join("x.cqwa")),
    ]);
    assert_eq!(code(&missing), 2);
    assert!(stderr(&missing).contains("--weights"));

    let o = cqa(&["extract", "--manifest", s(&d.path().join("nope.csv")), "--out", s(&d.path().join("y.cqwa"))]);
    assert_eq!(code(&o), 2);
}

/// Synthesises, extracts and trains; returns (dataset dir, run dir).
fn trained(d: &Path, epochs: usize) -> (PathBuf, PathBuf) {
    let ds = d.join("ds");
    synth(&ds, "1.0,1.3,1.6,2.0,2.6", "4");
    let feats = d.join("features.cqwa");
    ok(&["extract", "--manifest", s(&ds.join("manifest.csv")), "--out", s(&feats)]);
    let run = d.join("run");
    let cfg = write_config(
        d,
        &format!(
            "# synthetic run\nmanifest = ds/manifest.csv\nfeatures = features.cqwa\nout_dir = run\nseed = 3\nepochs = {epochs}\n\
             learning_rate = 0.001\nbatch_size = 8\n"
        ),
    );
    let msg = ok(&["train", "--config", s(&cfg)]);
    assert!(msg.contains("best epoch"), "{msg}");
    (ds, run)
}

#[test]
fn train_eval_report_round() {
    let d = tempfile::tempdir().unwrap();
    let (_, run) = trained(d.path(), 12);
    for f in ["head.cqwa", "report.csv", "normalizer.json", "split.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let report = std::fs::read_to_string(run.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 13);

    let eval_dir = d.path().join("eval");
    ok(&[
        "eval",
        "--manifest",
        s(&run.join("split.csv")),
        "--head",
        s(&run.join("head.cqwa")),
        "--features",
        s(&d.path().join("features.cqwa")),
        "--out",
        s(&eval_dir),
    ]);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(eval_dir.join("report.json")).unwrap()).unwrap();
    for k in ["plcc", "srcc", "tolerance_accuracy", "mse"] {
        assert!(json[k].is_number(), "{k}");
    }

    // The stored head is the best epoch: eval must reproduce its validation numbers.
    let best = report
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .min_by(|a, b| a[2].total_cmp(&b[2]))
        .unwrap();
    let summary = std::fs::read_to_string(eval_dir.join("summary.csv")).unwrap();
    let row: Vec<f64> = summary.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!((row[0], row[1], row[3]), (best[3], best[4], best[2]), "eval {row:?}, best epoch {best:?}");

    let plots = d.path().join("plots");
    ok(&[
        "report",
        "--train-report",
        s(&run.join("report.csv")),
        "--per-image",
        s(&eval_dir.join("per_image.csv")),
        "--out",
        s(&plots),
    ]);
    let curves = std::fs::read_to_string(plots.join("curves.csv")).unwrap();
    assert!(curves.starts_with("epoch,train_loss,val_loss,val_plcc,val_srcc,lr\n"));
    assert_eq!(curves.lines().count(), 13);
    let scatter = std::fs::read_to_string(plots.join("scatter.csv")).unwrap();
    assert_eq!(scatter, std::fs::read_to_string(eval_dir.join("per_image.csv")).unwrap());
}

#[test]
fn training_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (_, ra) = trained(a.path(), 4);
    let (_, rb) = trained(b.path(), 4);
    assert_eq!(tree(&ra), tree(&rb));
}

#[test]
fn train_with_inline_extraction_and_epoch_override() {
    let d = tempfile::tempdir().unwrap();
    synth(&d.path().join("ds"), "1.0,2.0", "3");
    let cfg = write_config(d.path(), "manifest = ds/manifest.csv\nout_dir = out\n");
    ok(&["train", "--config", s(&cfg), "--epochs", "1"]);
    assert_eq!(std::fs::read_to_string(d.path().join("out/report.csv")).unwrap().lines().count(), 2);
    assert!(d.path().join("out/features.cqwa").exists());

    let cfg = write_config(d.path(), "manifest = ds/manifest.csv\nout_dir = aug\naugment = true\nepochs = 1\n");
    ok(&["train", "--config", s(&cfg)]);
}

#[test]
fn train_config_errors() {
    let d = tempfile::tempdir().unwrap();
    synth(&d.path().join("ds"), "1.0,2.0", "2");
    let base = "manifest = ds/manifest.csv\nout_dir = out\n";
    for (extra, needle) in [("batch_size = 0\n", "batch_size"), ("learnig_rate = 1\n", "learnig_rate")] {
        let cfg = write_config(d.path(), &format!("{base}{extra}"));
        let o = cqa(&["train", "--config", s(&cfg)]);
        assert_eq!(code(&o), 3, "{extra}");
        assert!(stderr(&o).contains(needle), "{}", stderr(&o));
    }
    let cfg = write_config(d.path(), base);
    assert_eq!(code(&cqa(&["train", "--config", s(&cfg), "--epochs", "0"])), 3);
    assert_eq!(code(&cqa(&["train", "--config", s(&d.path().join("missing.cfg"))])), 2);
}

#[test]
fn eval_rejects_mismatched_cache() {
    let d = tempfile::tempdir().unwrap();
    let (_, run) = trained(d.path(), 2);
    let other = d.path().join("other");
    synth(&other, "1.0,2.0", "1");
    let o = cqa(&[
        "eval",
        "--manifest",
        s(&other.join("manifest.csv")),
        "--head",
        s(&run.join("head.cqwa")),
        "--features",
        s(&d.path().join("features.cqwa")),
        "--out",
        s(&d.path().join("e")),
    ]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("--features"));
}

#[test]
fn score_image_in_range_and_undecodable_file() {
    let d = tempfile::tempdir().unwrap();
    let (ds, run) = trained(d.path(), 3);
    let img = ds.join("base00__gamma__1.6.png");
    let v: f64 = ok(&["score", "--image", s(&img), "--head", s(&run.join("head.cqwa"))]).trim().parse().unwrap();
    assert!((1.0..=5.0).contains(&v));

    let junk = d.path().join("junk.png");
    std::fs::write(&junk, b"not an image").unwrap();
    let o = cqa(&["score", "--image", s(&junk), "--head", s(&run.join("head.cqwa"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--image"));
}

#[test]
fn pair_train_and_score() {
    let d = tempfile::tempdir().unwrap();
    synth(&d.path().join("ds"), "1.0,1.5,2.2", "3");
    let cfg = write_config(d.path(), "manifest = ds/manifest.csv\nout_dir = pairs\nepochs = 3\npartners = 2\n");
    let msg = ok(&["pair-train", "--config", s(&cfg)]);
    assert!(msg.contains("training pairs"), "{msg}");
    let run = d.path().join("pairs");
    let head = contrast_iqa::regressor::SavedHead::load(&run.join("head.cqwa")).unwrap();
    assert_eq!(head.arch, "siamese");

    let img = d.path().join("ds/base01__gamma__1.5.png");
    let with = ok(&[
        "score",
        "--image",
        s(&img),
        "--head",
        s(&run.join("head.cqwa")),
        "--anchors",
        s(&run.join("anchors.cqwa")),
    ]);
    let v: f64 = with.trim().parse().unwrap();
    assert!((1.0..=5.0).contains(&v));
    let without = cqa(&["score", "--image", s(&img), "--head", s(&run.join("head.cqwa"))]);
    assert_eq!(code(&without), 3);
    assert!(stderr(&without).contains("--anchors"));
}

#[test]
fn report_rejects_empty_file() {
    let d = tempfile::tempdir().unwrap();
    let empty = d.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let o = cqa(&["report", "--train-report", s(&empty), "--out", s(&d.path().join("r"))]);
    assert_eq!(code(&o), 3);
    let o = cqa(&["report", "--train-report", s(&d.path().join("absent.csv")), "--out", s(&d.path().join("r"))]);
    assert_eq!(code(&o), 2);
}
