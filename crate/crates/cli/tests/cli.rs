use std::path::Path;
use std::process::{Command, Output};

use memo_core::image::ImageSet;
use memo_core::metrics::accuracy_metric;
use memo_core::synthetic::{brightness_seeds, perturbed_gray_images};
use memo_core::{GapMatrix, SelectorModel};

const SIZE: (usize, usize) = (8, 8);

fn memo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memo"))
        .current_dir(dir)
        .args(args)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Working directory with a brightness-oracle config, `n` images and a
/// catalog with the given brightness offsets.
fn workspace(n: usize, deltas: &[f64]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("memo.toml"),
        "image_size = [8, 8]\nscorer = \"oracle:brightness\"\nsynthesizer = \"brightness\"\ncatalog = \"seeds\"\nselector = \"selector.ckpt\"\n",
    )
    .unwrap();
    perturbed_gray_images("img", n, SIZE, 0.1, 3).unwrap().save_dir(dir.path().join("images")).unwrap();
    brightness_seeds(deltas, SIZE).unwrap().save(dir.path().join("seeds")).unwrap();
    dir
}

#[test]
fn full_mask_on_two_by_two_gives_four_records() {
    let dir = workspace(2, &[0.1, -0.1]);
    let out = memo(dir.path(), &["gen-gaps", "--images", "images", "--omega", "1.0", "--out", "gaps.jsonl"]);
    stdout(&out);
    let text = std::fs::read_to_string(dir.path().join("gaps.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 1 + 4);
    assert_eq!(GapMatrix::read(dir.path().join("gaps.jsonl")).unwrap().observed_count(), 4);
}

#[test]
fn usage_errors_exit_two() {
    let dir = workspace(2, &[0.1, -0.1]);
    let out = memo(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(memo(dir.path(), &["gen-gaps"]).status.code(), Some(2));
    assert_eq!(memo(dir.path(), &["recommend", "--image", "x.png", "--top-q", "x"]).status.code(), Some(2));
    let help = memo(dir.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_one() {
    let dir = workspace(2, &[0.1, -0.1]);
    let out = memo(dir.path(), &["gen-gaps", "--images", "missing", "--out", "g.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    let out = memo(dir.path(), &["stylize", "--image", "images/img0000.png", "--seed", "nope", "--out", "o.png"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn pipeline_end_to_end() {
    let dir = workspace(24, &[0.15, 0.05, -0.05, -0.15]);
    let d = dir.path();
    let gen = |out: &str| {
        stdout(&memo(d, &["gen-gaps", "--images", "images", "--omega", "0.5", "--rng-seed", "4", "--workers", "2", "--out", out]))
    };
    gen("train.jsonl");
    gen("again.jsonl");
    assert_eq!(std::fs::read(d.join("train.jsonl")).unwrap(), std::fs::read(d.join("again.jsonl")).unwrap());
    stdout(&memo(d, &["gen-gaps", "--images", "images", "--omega", "1", "--out", "test.jsonl"]));

    let train = |out: &str| {
        stdout(&memo(
            d,
            &[
                "train-selector", "--gaps", "train.jsonl", "--images", "images", "--input-size", "8x8",
                "--iterations", "40", "--batch-size", "8", "--rng-seed", "2", "--out", out,
            ],
        ))
    };
    train("selector.ckpt");
    train("selector2.ckpt");
    assert_eq!(std::fs::read(d.join("selector.ckpt")).unwrap(), std::fs::read(d.join("selector2.ckpt")).unwrap());

    // Evaluate reports the library-level accuracy.
    let out = stdout(&memo(
        d,
        &["evaluate", "--json", "--test-gaps", "test.jsonl", "--images", "images", "--train-gaps", "train.jsonl", "--results", "results.jsonl"],
    ));
    let records: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0]["method_tag"], "scube");
    assert_eq!(records[1]["method_tag"], "baseline");
    assert_eq!(records[0]["omega_bar"], 0.5);
    let model = SelectorModel::load(d.join("selector.ckpt")).unwrap();
    let images = ImageSet::load_dir(d.join("images"), SIZE).unwrap();
    let test = GapMatrix::read(d.join("test.jsonl")).unwrap();
    let truth = test.dense_rows().unwrap();
    let predicted: Vec<Vec<f64>> = test.image_ids().iter().map(|id| model.predict(images.get(id).unwrap()).unwrap()).collect();
    let expected = accuracy_metric(&truth, &predicted).unwrap();
    assert!((records[0]["accuracy"].as_f64().unwrap() - expected).abs() < 1e-12);
    assert_eq!(std::fs::read_to_string(d.join("results.jsonl")).unwrap().lines().count(), 2);

    let curves = stdout(&memo(d, &["topn", "--json", "--test-gaps", "test.jsonl", "--images", "images", "--n", "1,3,10"]));
    let curves: serde_json::Value = serde_json::from_str(&curves).unwrap();
    assert_eq!(curves[0]["curve"]["n_values"], serde_json::json!([1, 3, 4]));

    // Recommendations: three lines, predicted gaps descending.
    let out = stdout(&memo(d, &["recommend", "--image", "images/img0000.png", "--top-q", "3"]));
    let lines: Vec<(String, f64)> = out
        .lines()
        .map(|l| {
            let (id, gap) = l.split_once(' ').unwrap();
            (id.to_string(), gap.parse().unwrap())
        })
        .collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.windows(2).all(|w| w[0].1 >= w[1].1));
    let img = memo_core::image::load_image(d.join("images/img0000.png"), SIZE).unwrap();
    let library = model.rank(&img).unwrap();
    for (line, entry) in lines.iter().zip(&library.entries) {
        assert_eq!((&line.0, line.1), (&entry.seed_id, entry.predicted_gap));
    }
    for q in ["0", "5"] {
        assert_eq!(memo(d, &["recommend", "--image", "images/img0000.png", "--top-q", q]).status.code(), Some(2));
    }
}

#[test]
fn stylize_and_data_preparation() {
    let dir = workspace(6, &[0.2, -0.2]);
    let d = dir.path();
    let out = stdout(&memo(
        d,
        &["stylize", "--json", "--image", "images/img0000.png", "--seed", "seed-0000", "--alpha", "2", "--out", "out.png", "--scorer", "oracle:brightness"],
    ));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(v["memorability"].as_f64().unwrap() > v["original_memorability"].as_f64().unwrap());
    assert!(d.join("out.png").exists());

    let labels: String = (0..6).map(|i| format!("{{\"image_id\":\"img{i:04}\",\"score\":{}}}\n", i as f64 / 10.0)).collect();
    std::fs::write(d.join("labels.jsonl"), labels).unwrap();
    stdout(&memo(d, &["split-scorer-data", "--labels", "labels.jsonl", "--out-dir", "split", "--rng-seed", "1"]));
    let read = |f: &str| std::fs::read_to_string(d.join("split").join(f)).unwrap();
    let (a, b) = (read("internal.jsonl"), read("external.jsonl"));
    assert_eq!((a.lines().count(), b.lines().count()), (3, 3));
    assert!(a.lines().all(|l| !b.contains(l)));

    let out = stdout(&memo(
        d,
        &[
            "train-scorer", "--images", "images", "--labels", "split/internal.jsonl", "--out", "m.ckpt",
            "--iterations", "5", "--batch-size", "3", "--input-size", "8x8",
        ],
    ));
    assert!(out.contains("m.ckpt"));

    stdout(&memo(d, &["build-seeds", "--candidates", "images", "--k", "2", "--out", "pool"]));
    let pool = memo_core::SeedCatalog::load(d.join("pool"), SIZE).unwrap();
    assert_eq!(pool.len(), 4);
}
