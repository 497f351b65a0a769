use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;
use tempfile::TempDir;

fn kpboost(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kpboost"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = kpboost(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Gaussian blobs `(cx, cy, label, count)` with unit-free spread `sd`.
fn blobs_csv(
    dir: &Path,
    name: &str,
    blobs: &[(f64, f64, &str, usize)],
    sd: f64,
    seed: u64,
) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sd).unwrap();
    let mut text = String::from("x,y,class\n");
    for &(cx, cy, label, n) in blobs {
        for _ in 0..n {
            let x = cx + noise.sample(&mut rng);
            let y = cy + noise.sample(&mut rng);
            writeln!(text, "{x},{y},{label}").unwrap();
        }
    }
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn imbalanced(dir: &Path) -> PathBuf {
    blobs_csv(
        dir,
        "imb.csv",
        &[(0.0, 0.0, "neg", 90), (1.5, 1.5, "pos", 10)],
        1.0,
        7,
    )
}

fn lines(text: &str) -> Vec<Value> {
    text.lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn cv_args<'a>(data: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "cv",
        "--data",
        data,
        "--algo",
        "kpboost",
        "--sigma",
        "1",
        "--cost",
        "100",
        "--step",
        "0.01,0.05",
        "--rounds",
        "4",
        "--folds",
        "10",
        "--seed",
        "3",
        "--out",
        out,
    ]
}

#[test]
fn cv_writes_fold_and_cell_records() {
    let dir = TempDir::new().unwrap();
    let data = imbalanced(dir.path());
    let out = dir.path().join("r.jsonl");
    ok(&cv_args(data.to_str().unwrap(), out.to_str().unwrap()));
    let text = std::fs::read_to_string(&out).unwrap();
    let records = lines(&text);
    assert_eq!(records.len(), 22);
    let folds = records.iter().filter(|r| r["record"] == "fold").count();
    assert_eq!(folds, 20);
    for r in &records {
        assert_eq!(r["status"], "ok");
        assert_eq!(r["seed"], 3);
        assert!(r["version"].is_string() && r["sigma"].is_number() && r["step"].is_number());
    }
    // stable key order
    let first = text.lines().next().unwrap();
    let keys = [
        "record", "version", "seed", "cell", "sigma", "fold", "gmean", "recalls",
    ]
    .map(|k| format!("\"{k}\":"));
    let pos: Vec<usize> = keys
        .iter()
        .map(|k| first.find(k.as_str()).unwrap())
        .collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]));
    let cell1 = &records[21];
    assert_eq!(
        (cell1["record"].as_str(), cell1["cell"].as_u64()),
        (Some("cell"), Some(1))
    );
    let mean: f64 = records[11..21]
        .iter()
        .map(|r| r["gmean"].as_f64().unwrap())
        .sum::<f64>()
        / 10.0;
    assert!((mean - cell1["gmean"].as_f64().unwrap()).abs() < 1e-12);
}

#[test]
fn cv_reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let data = imbalanced(dir.path());
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    ok(&cv_args(data.to_str().unwrap(), a.to_str().unwrap()));
    ok(&cv_args(data.to_str().unwrap(), b.to_str().unwrap()));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

fn cell_line(cell: usize, recalls: [f64; 2]) -> String {
    format!(
        "{{\"record\":\"cell\",\"version\":\"0\",\"seed\":1,\"data\":\"d\",\"cell\":{cell},\"algorithm\":\"kpboost\",\
         \"decomposition\":\"auto\",\"sigma\":1.0,\"cost\":100.0,\"step\":0.0{cell},\"theta\":null,\"rounds\":10,\
         \"folds\":10,\"fold\":null,\"kappa\":null,\"status\":\"ok\",\"error\":null,\"gmean\":0.5,\"auc\":0.5,\
         \"gsdi\":null,\"recalls\":[{},{}]}}\n",
        recalls[0], recalls[1]
    )
}

#[test]
fn select_prefers_best_tradeoff() {
    let dir = TempDir::new().unwrap();
    let rows = [[0.4, 0.8], [0.67, 0.67], [0.875, 0.515], [0.9, 0.5]];
    let text: String = rows
        .iter()
        .enumerate()
        .map(|(i, r)| cell_line(i, *r))
        .collect();
    let path = dir.path().join("r.jsonl");
    std::fs::write(&path, text).unwrap();
    let winners = lines(&ok(&["select", path.to_str().unwrap()]));
    assert_eq!(winners.len(), 1);
    assert_eq!(winners[0]["cell"], 1);
    assert!((winners[0]["mu"].as_f64().unwrap() - 1.106_666_666_666_666_7).abs() < 1e-9);
}

#[test]
fn select_ties_go_to_first_cell() {
    let dir = TempDir::new().unwrap();
    let text: String = (0..3).map(|i| cell_line(i, [0.7, 0.6])).collect();
    let path = dir.path().join("r.jsonl");
    std::fs::write(&path, text).unwrap();
    assert_eq!(
        lines(&ok(&["select", path.to_str().unwrap()]))[0]["cell"],
        0
    );
}

#[test]
fn select_needs_two_cells() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("r.jsonl");
    std::fs::write(&path, cell_line(0, [0.7, 0.6])).unwrap();
    assert_eq!(
        kpboost(&["select", path.to_str().unwrap()]).status.code(),
        Some(2)
    );
}

#[test]
fn disjuncts_finds_cluster_count_at_knee() {
    let dir = TempDir::new().unwrap();
    let mut blobs = Vec::new();
    for (cy, label) in [(0.0, "a"), (20.0, "b")] {
        for cx in [0.0, 20.0, 40.0] {
            blobs.push((cx, cy, label, 8));
        }
    }
    let data = blobs_csv(dir.path(), "clusters.csv", &blobs, 0.5, 11);
    let prefix = dir.path().join("prof");
    let stdout = ok(&[
        "disjuncts",
        "--data",
        data.to_str().unwrap(),
        "--neighbors",
        "within",
        "--traversal",
        "symmetric",
        "--out",
        prefix.to_str().unwrap(),
    ]);
    let summary = &lines(&stdout)[0];
    assert_eq!(summary["delta"], 6);
    let curve = std::fs::read_to_string(dir.path().join("prof.curve.txt")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 6);
    let partition = std::fs::read_to_string(dir.path().join("prof.partition.txt")).unwrap();
    assert_eq!(partition.lines().count(), 1 + 48);
}

#[test]
fn train_then_predict_round_trip() {
    let dir = TempDir::new().unwrap();
    let data = blobs_csv(
        dir.path(),
        "three.csv",
        &[
            (0.0, 0.0, "a", 30),
            (6.0, 0.0, "b", 20),
            (0.0, 6.0, "c", 10),
        ],
        0.7,
        5,
    );
    let model = dir.path().join("m.json");
    for decomp in ["ovo", "ova"] {
        ok(&[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--algo",
            "kproi",
            "--decomp",
            decomp,
            "--sigma",
            "1",
            "--cost",
            "100",
            "--step",
            "0.01",
            "--theta",
            "0.7",
            "--out",
            model.to_str().unwrap(),
        ]);
        let predicted = ok(&[
            "predict",
            "--model",
            model.to_str().unwrap(),
            "--test",
            data.to_str().unwrap(),
        ]);
        let truth: Vec<String> = std::fs::read_to_string(&data)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().to_string())
            .collect();
        let predicted: Vec<&str> = predicted.lines().collect();
        assert_eq!(predicted.len(), truth.len());
        let hits = predicted
            .iter()
            .zip(&truth)
            .filter(|(p, t)| **p == t.as_str())
            .count();
        assert!(hits >= 57, "{decomp}: {hits} of 60");
    }
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let data = imbalanced(dir.path());
    let d = data.to_str().unwrap();
    let code = |args: &[&str]| kpboost(args).status.code();
    assert_eq!(
        code(&["cv", "--data", "/no/such.csv", "--seed", "1"]),
        Some(3)
    );
    assert_eq!(
        code(&["cv", "--data", d, "--seed", "1", "--folds", "1"]),
        Some(2)
    );
    assert_eq!(
        code(&["cv", "--data", d, "--seed", "1", "--sigma", "0"]),
        Some(2)
    );
    assert_eq!(code(&["cv", "--data", d]), Some(2));
    assert_eq!(
        code(&[
            "train", "--data", d, "--sigma", "1,2", "--cost", "1", "--step", "0.1", "--out", "x"
        ]),
        Some(2)
    );
}
