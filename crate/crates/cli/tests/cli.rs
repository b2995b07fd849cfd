use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use freqiqa::distort::dead_leaves;
use freqiqa::imagio::GrayImage;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_freqiqa"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Data rows of a feature CSV as numbers (f1..f24 and an optional score).
fn feature_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .skip(2)
        .map(|l| l.split(',').skip(1).filter(|s| !s.is_empty()).map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn synth(dir: &Path, contents: usize, levels: &str) -> PathBuf {
    let o = run(&["synth", "--out", p(dir), "--contents", &contents.to_string(), "--size", "64", "--levels", levels]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    PathBuf::from(stdout(&o).trim())
}

#[test]
fn constant_image_gives_degenerate_vector() {
    let tmp = tempfile::tempdir().unwrap();
    let img = tmp.path().join("flat.png");
    GrayImage::filled(64, 64, 90.0).unwrap().save(&img).unwrap();
    let o = run(&["extract", "--image", p(&img)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("# freqiqa-features v1 layout=fdgpr24-v1\npath,f1,"));
    let rows = feature_rows(&out);
    let mut want = vec![0.0; 24];
    for g in 0..4 {
        want[g * 5] = 1.0;
    }
    assert_eq!(rows, vec![want]);
}

#[test]
fn manifest_rows_in_order_with_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tmp.path().join("m.csv");
    let mut text = String::from("path,score,distortion,content_id\n");
    for i in 0..3 {
        let name = format!("i{i}.png");
        dead_leaves(40, 40, i).save(&tmp.path().join(&name)).unwrap();
        text.push_str(&format!("{name},{},gblur,c{i}\n", 10 * i + 1));
    }
    std::fs::write(&manifest, text).unwrap();
    let out = tmp.path().join("f.csv");
    let o = run(&["extract", "--manifest", p(&manifest), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 2 + 3);
    let rows = feature_rows(&text);
    assert_eq!(rows.iter().map(|r| r[24]).collect::<Vec<_>>(), vec![1.0, 11.0, 21.0]);
    for (i, line) in text.lines().skip(2).enumerate() {
        assert!(line.contains(&format!("i{i}.png,")));
    }
}

#[test]
fn nf_override_changes_histograms_not_closure() {
    let tmp = tempfile::tempdir().unwrap();
    let img = tmp.path().join("a.png");
    dead_leaves(96, 96, 4).save(&img).unwrap();
    let a = feature_rows(&stdout(&run(&["extract", "--image", p(&img)])));
    let b = feature_rows(&stdout(&run(&["extract", "--image", p(&img), "--nf", "4000,400,400,80"])));
    assert_ne!(a[0][..20], b[0][..20]);
    for row in [&a[0], &b[0]] {
        for g in 0..4 {
            assert!((row[g * 5..g * 5 + 5].iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn unreadable_image_leaves_no_output() {
    let tmp = tempfile::tempdir().unwrap();
    let good = tmp.path().join("good.png");
    dead_leaves(32, 32, 1).save(&good).unwrap();
    let junk = tmp.path().join("junk.png");
    std::fs::write(&junk, b"not an image").unwrap();
    let out = tmp.path().join("f.csv");
    let o = run(&["extract", "--image", p(&good), p(&junk), p(&tmp.path().join("missing.png")), "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("junk.png") && err.contains("missing.png"), "{err}");
    assert!(!out.exists());
    assert!(o.stdout.is_empty());

    // An existing output is left untouched.
    std::fs::write(&out, "previous").unwrap();
    assert_eq!(code(&run(&["extract", "--image", p(&junk), "--out", p(&out)])), 2);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "previous");
    let leftovers = std::fs::read_dir(tmp.path()).unwrap().count();
    assert_eq!(leftovers, 3);
}

#[test]
fn train_then_predict_recovers_training_target() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("lad"), 4, "0.5,1,2,4");
    let feats = tmp.path().join("f.csv");
    assert_eq!(code(&run(&["extract", "--manifest", p(&manifest), "--out", p(&feats)])), 0);
    let model = tmp.path().join("m.json");
    let o = run(&["train", "--features", p(&feats), "--out", p(&model), "--noise", "1e-8", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["format"], "freqiqa-train");
    assert_eq!(summary["n"], 16);

    let image = tmp.path().join("lad").join("c002_02_gblur2.png");
    let o = run(&["predict", "--model", p(&model), "--image", p(&image)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("path,score,variance"));
    let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
    let score: f64 = fields[1].parse().unwrap();
    // Target range is 3.5.
    assert!((score - 2.0).abs() <= 1e-4 * 3.5, "{score}");
    assert!(fields[2].parse::<f64>().unwrap() >= 0.0);

    // Same answer from the feature file.
    let o = run(&["predict", "--model", p(&model), "--features", p(&feats)]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 17);
}

#[test]
fn foreign_layout_model_is_a_version_error() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("lad"), 3, "0.5,2");
    let feats = tmp.path().join("f.csv");
    run(&["extract", "--manifest", p(&manifest), "--out", p(&feats)]);
    let model = tmp.path().join("m.json");
    assert_eq!(code(&run(&["train", "--features", p(&feats), "--out", p(&model)])), 0);
    let text = std::fs::read_to_string(&model).unwrap().replace("fdgpr24-v1", "fdgpr24-v0");
    std::fs::write(&model, text).unwrap();
    let o = run(&["predict", "--model", p(&model), "--features", p(&feats)]);
    assert_ne!(code(&o), 0);
    assert!(stderr(&o).contains("version mismatch"), "{}", stderr(&o));
    assert!(o.stdout.is_empty());

    let old = tmp.path().join("old.csv");
    std::fs::write(&old, std::fs::read_to_string(&feats).unwrap().replace("v1 layout", "v0 layout")).unwrap();
    let o = run(&["train", "--features", p(&old), "--out", p(&tmp.path().join("x.json"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("version mismatch"));
}

#[test]
fn evaluate_emits_tagged_report() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("lad"), 4, "0.5,1,2,3");
    let feats = tmp.path().join("f.csv");
    run(&["extract", "--manifest", p(&manifest), "--out", p(&feats)]);
    let model = tmp.path().join("m.json");
    run(&["train", "--features", p(&feats), "--out", p(&model)]);
    let o = run(&["evaluate", "--model", p(&model), "--manifest", p(&manifest)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["format"], "freqiqa-eval");
    assert_eq!(v["version"], 1);
    for k in ["srocc", "plcc", "krocc"] {
        let x = v[k].as_f64().unwrap();
        assert!((-1.0..=1.0).contains(&x), "{k}={x}");
    }
    assert!(v["rmse"].as_f64().unwrap() >= 0.0);
    assert_eq!(v["logistic"]["beta"].as_array().unwrap().len(), 5);
    assert_eq!(v["n"], 16);

    let o = run(&["evaluate", "--model", p(&model), "--manifest", p(&manifest), "--format", "kv"]);
    let kv = stdout(&o);
    assert!(kv.starts_with("# freqiqa-eval v1\n"));
    assert!(kv.lines().skip(1).all(|l| l.split_once('=').is_some()));
}

#[test]
fn crossval_and_ablate() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth(&tmp.path().join("a"), 10, "0.5,1,2,3,5");
    let o = run(&["crossval", "--manifest", p(&a), "--iterations", "3", "--seed", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["format"], "freqiqa-experiment");
    assert_eq!(v["iterations"].as_array().unwrap().len(), 3);
    let mut again: serde_json::Value =
        serde_json::from_str(&stdout(&run(&["crossval", "--manifest", p(&a), "--iterations", "3", "--seed", "2"]))).unwrap();
    // Timing is the only field allowed to differ between runs.
    let mut v = v;
    v.as_object_mut().unwrap().remove("extraction_seconds_per_image");
    again.as_object_mut().unwrap().remove("extraction_seconds_per_image");
    assert_eq!(v, again);

    let o = run(&["ablate", "--manifest", p(&a), "--iterations", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().next(), Some("feature,median_srocc,degenerate_iterations"));
    assert_eq!(out.lines().count(), 25);
    assert!(out.lines().nth(24).unwrap().starts_with("f24,"));
}

#[test]
fn crossval_between_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth(&tmp.path().join("a"), 3, "0.5,1,2,3");
    let o = run(&["synth", "--out", p(&tmp.path().join("b")), "--contents", "3", "--size", "64", "--levels", "0.5,1,2,3", "--seed", "50"]);
    assert_eq!(code(&o), 0);
    let b = PathBuf::from(stdout(&o).trim());
    let o = run(&["crossval", "--train-manifest", p(&a), "--test-manifest", p(&b)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["format"], "freqiqa-eval");
    assert_eq!(v["n"], 12);
    assert_eq!(code(&run(&["crossval", "--train-manifest", p(&a)])), 1);
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    for kind in ["awgn", "combined"] {
        let mut outs = Vec::new();
        for d in ["x", "y"] {
            let dir = tmp.path().join(format!("{kind}{d}"));
            let o = run(&["synth", "--out", p(&dir), "--kind", kind, "--contents", "2", "--size", "32", "--seed", "9"]);
            assert_eq!(code(&o), 0, "{}", stderr(&o));
            let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
                .unwrap()
                .map(|e| e.unwrap())
                .map(|e| (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap()))
                .collect();
            files.sort();
            outs.push(files);
        }
        assert_eq!(outs[0], outs[1]);
    }
    let o = run(&["synth", "--out", p(&tmp.path().join("z")), "--kind", "combined", "--levels", "1,2"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn dumps() {
    let tmp = tempfile::tempdir().unwrap();
    let img = tmp.path().join("a.png");
    dead_leaves(40, 24, 2).save(&img).unwrap();
    let grid = tmp.path().join("mscn.txt");
    let o = run(&["extract", "--image", p(&img), "--dump-mscn", p(&grid), "--dump-block", "1,2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&grid).unwrap();
    assert_eq!(text.lines().count(), 24);
    assert!(text.lines().all(|l| l.split(' ').count() == 40 && l.split(' ').all(|v| v.parse::<f64>().is_ok())));
    let err = stderr(&o);
    assert!(err.contains("gray block 1,2") && err.contains("mscn block 1,2"));
    assert_eq!(err.lines().count(), 18);

    assert_eq!(code(&run(&["extract", "--image", p(&img), "--dump-block", "3,0"])), 2);
    assert_eq!(code(&run(&["extract", "--image", p(&img), p(&img), "--dump-mscn", p(&grid)])), 1);
}

#[test]
fn bench_is_single_threaded() {
    let tmp = tempfile::tempdir().unwrap();
    let img = tmp.path().join("a.png");
    dead_leaves(64, 64, 2).save(&img).unwrap();
    let o = run(&["--threads", "4", "bench", "--image", p(&img), "--repeat", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["format"], "freqiqa-bench");
    assert_eq!(v["threads"], 1);
    assert_eq!(v["per_image"][0][1]["samples"].as_array().unwrap().len(), 3);
}

#[test]
fn exit_codes() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["nonsense"])), 1);
    assert_eq!(code(&run(&["extract"])), 1);
    assert_eq!(code(&run(&["extract", "--image", "a.png", "--nf", "1,2,3"])), 1);
    assert_eq!(code(&run(&["extract", "--image", "a.png", "--epsilon", "-1"])), 1);
    assert_eq!(code(&run(&["--threads", "0", "extract", "--image", "a.png"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);

    // One training row cannot be fitted.
    let tmp = tempfile::tempdir().unwrap();
    let img = tmp.path().join("a.png");
    dead_leaves(32, 32, 1).save(&img).unwrap();
    let m = tmp.path().join("m.csv");
    std::fs::write(&m, format!("path,score,distortion,content_id\n{},1,,c0\n", p(&img))).unwrap();
    let f = tmp.path().join("f.csv");
    assert_eq!(code(&run(&["extract", "--manifest", p(&m), "--out", p(&f)])), 0);
    let o = run(&["train", "--features", p(&f), "--out", p(&tmp.path().join("model.json"))]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(!tmp.path().join("model.json").exists());

    // Unscored features cannot be trained on.
    let o = run(&["extract", "--image", p(&img), "--out", p(&f)]);
    assert_eq!(code(&o), 0);
    assert_eq!(code(&run(&["train", "--features", p(&f), "--out", p(&tmp.path().join("model.json"))])), 2);
}
