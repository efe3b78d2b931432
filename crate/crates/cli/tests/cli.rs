use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

/// Small deterministic generator so the fixtures need no RNG crate.
struct XorShift(u64);

impl XorShift {
    fn next(&mut self) -> u64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        self.0
    }

    fn pick(&mut self, alphabet: &[u8], p_first: f64) -> char {
        let u = (self.next() % 10_000) as f64 / 10_000.0;
        if u < p_first {
            alphabet[0] as char
        } else {
            alphabet[1 + (self.next() % (alphabet.len() as u64 - 1)) as usize] as char
        }
    }
}

/// Positives favour `A`, negatives favour `T`; `bias` sets how strongly.
fn corpus(rows: usize, len: usize, bias: f64, seed: u64) -> String {
    let mut rng = XorShift(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1);
    let mut out = String::from("sequence,label\n");
    for i in 0..rows {
        let positive = i % 2 == 0;
        let alphabet: &[u8] = if positive { b"ACGT" } else { b"TGCA" };
        let s: String = (0..len).map(|_| rng.pick(alphabet, bias)).collect();
        out.push_str(&format!("{s},{}\n", positive as u8));
    }
    out
}

fn hmme(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmme"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const MINIMAL: &str = r#"
seed = 5

[data]
train = "train.csv"
test = "test.csv"

[ensemble]
n_positive = 2
n_negative = 2
subset_factor = 1.0
state_counts = [2, 3]

[train]
max_iters = 8

[mlp]
hidden_dims = [8, 4]
epochs = 30
batch_size = 16
"#;

fn workspace(config: &str, bias: f64) -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("train.csv"), corpus(60, 30, bias, 1)).unwrap();
    fs::write(dir.path().join("test.csv"), corpus(40, 30, bias, 2)).unwrap();
    fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

fn train(dir: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec!["train", "--config", "run.toml", "--out", out];
    args.extend_from_slice(extra);
    ok(&hmme(dir, &args));
    dir.join(out)
}

fn data_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn model_counts(path: &Path) -> (usize, usize) {
    let v: serde_json::Value = serde_json::from_slice(&fs::read(path).unwrap()).unwrap();
    let e = &v["ensemble"];
    (
        e["positive_models"].as_array().unwrap().len(),
        e["negative_models"].as_array().unwrap().len(),
    )
}

#[test]
fn train_writes_four_models_and_reruns_identically() {
    let dir = workspace(MINIMAL, 0.6);
    let a = train(dir.path(), "a", &[]);
    let b = train(dir.path(), "b", &["--threads", "3"]);
    assert_eq!(model_counts(&a.join("model.json")), (2, 2));
    for file in ["model.json", "training_log.csv", "config.resolved.toml"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let log = fs::read_to_string(a.join("training_log.csv")).unwrap();
    assert!(log.starts_with("# tool=hmme"));
    assert!(log.contains("# seed=5"));
    let model: serde_json::Value = serde_json::from_slice(&fs::read(a.join("model.json")).unwrap()).unwrap();
    assert_eq!(model["seed"], 5);
    assert_eq!(model["config_hash"].as_str().unwrap().len(), 64);

    let c = train(dir.path(), "c", &["--seed", "6"]);
    assert_ne!(fs::read(a.join("model.json")).unwrap(), fs::read(c.join("model.json")).unwrap());
}

#[test]
fn missing_training_data_is_a_data_error() {
    let dir = workspace(&MINIMAL.replace("train.csv", "absent.csv"), 0.6);
    let out = hmme(dir.path(), &["train", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));
}

#[test]
fn config_errors_exit_with_two_and_name_the_key() {
    let dir = workspace(&MINIMAL.replace("n_positive = 2", "n_postive = 2"), 0.6);
    let out = hmme(dir.path(), &["train", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_postive"));

    let dir = workspace(&MINIMAL.replace("subset_factor = 1.0", "subset_factor = 0.0"), 0.6);
    let out = hmme(dir.path(), &["train", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("subset"));

    let out = hmme(dir.path(), &["train", "--config", "nowhere.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.toml"));
}

#[test]
fn score_rows_follow_the_corpus() {
    let dir = workspace(MINIMAL, 0.6);
    train(dir.path(), "m", &[]);
    ok(&hmme(
        dir.path(),
        &["score", "--config", "run.toml", "--model", "m/model.json", "--corpus", "test.csv", "--out", "s"],
    ));
    let text = fs::read_to_string(dir.path().join("s/scores.csv")).unwrap();
    assert!(text.contains("# model_config_hash="));
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 40);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.len(), 2 + 4);
        assert_eq!(r[0], i.to_string());
        assert!(r[1].parse::<u64>().unwrap() <= 4);
    }

    // Scoring one sequence alone reproduces its row.
    let third = fs::read_to_string(dir.path().join("test.csv")).unwrap().lines().nth(3).unwrap().to_string();
    fs::write(dir.path().join("one.csv"), format!("sequence,label\n{third}\n")).unwrap();
    ok(&hmme(
        dir.path(),
        &["score", "--config", "run.toml", "--model", "m/model.json", "--corpus", "one.csv", "--out", "one"],
    ));
    let single = data_rows(&fs::read_to_string(dir.path().join("one/scores.csv")).unwrap());
    assert_eq!(single.len(), 1);
    assert_eq!(single[0][1..], rows[2][1..]);
}

#[test]
fn score_rejects_unknown_symbols() {
    let dir = workspace(MINIMAL, 0.6);
    train(dir.path(), "m", &[]);
    fs::write(dir.path().join("bad.csv"), "sequence\nACGN\n").unwrap();
    let out = hmme(
        dir.path(),
        &["score", "--config", "run.toml", "--model", "m/model.json", "--corpus", "bad.csv"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vocabulary"));
}

#[test]
fn evaluate_report_matches_its_score_file() {
    let dir = workspace(MINIMAL, 0.55);
    train(dir.path(), "m", &[]);
    ok(&hmme(dir.path(), &["evaluate", "--config", "run.toml", "--model", "m/model.json", "--out", "e"]));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("e/report.json")).unwrap()).unwrap();
    for key in ["config_hash", "model_config_hash", "seed", "imbalance_ratio", "auc_roc", "average_precision", "tp", "fp", "tn", "fn"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert_eq!(report["seed"], 5);

    let rows = data_rows(&fs::read_to_string(dir.path().join("e/evaluation_scores.csv")).unwrap());
    let labels: Vec<bool> = rows.iter().map(|r| r[1] == "1").collect();
    let scores: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert_eq!(rows.len(), 28);
    let auc = hmme_core::roc_auc(&labels, &scores).unwrap();
    let ap = hmme_core::average_precision(&labels, &scores).unwrap();
    assert_eq!(report["auc_roc"].as_f64().unwrap(), auc);
    assert_eq!(report["average_precision"].as_f64().unwrap(), ap);
}

#[test]
fn separable_corpus_evaluates_perfectly() {
    let dir = workspace(MINIMAL, 0.97);
    train(dir.path(), "m", &[]);
    ok(&hmme(dir.path(), &["evaluate", "--config", "run.toml", "--model", "m/model.json", "--out", "e"]));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("e/report.json")).unwrap()).unwrap();
    assert_eq!(report["auc_roc"], 1.0);
    assert_eq!(report["average_precision"], 1.0);
}

#[test]
fn evaluate_rejects_single_class_corpus() {
    let dir = workspace(MINIMAL, 0.6);
    train(dir.path(), "m", &[]);
    fs::write(dir.path().join("pos.csv"), "sequence,label\nAAAC,1\nACAA,1\nAAAA,1\nCAAA,1\n").unwrap();
    let out = hmme(
        dir.path(),
        &["evaluate", "--config", "run.toml", "--model", "m/model.json", "--corpus", "pos.csv"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("both classes"));
}

#[test]
fn features_diversity_generate_and_neural_head() {
    let dir = workspace(MINIMAL, 0.6);
    train(dir.path(), "m", &[]);
    let run = |args: &[&str]| {
        let mut v = vec!["--config", "run.toml"];
        v.extend_from_slice(args);
        ok(&hmme(dir.path(), &v));
    };

    run(&["features", "--model", "m/model.json", "--corpus", "train.csv", "--out", "f"]);
    let rows = data_rows(&fs::read_to_string(dir.path().join("f/features.csv")).unwrap());
    assert_eq!(rows.len(), 60);
    for r in &rows {
        assert_eq!(r.len(), 1 + 4);
        let norm: f64 = r[1..].iter().map(|x| x.parse::<f64>().unwrap().powi(2)).sum();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    run(&["diversity", "--model", "m/model.json", "--out", "d"]);
    let rows = data_rows(&fs::read_to_string(dir.path().join("d/similarity.csv")).unwrap());
    assert_eq!(rows.len(), 4);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[1 + i].parse::<f64>().unwrap(), 1.0);
    }

    run(&["generate", "--model", "m/model.json", "--class", "positive", "--count", "7", "--length", "12", "--seed", "3", "--out", "g1"]);
    run(&["generate", "--model", "m/model.json", "--class", "positive", "--count", "7", "--length", "12", "--seed", "3", "--out", "g2"]);
    let g1 = fs::read(dir.path().join("g1/generated.csv")).unwrap();
    assert_eq!(g1, fs::read(dir.path().join("g2/generated.csv")).unwrap());
    let rows = data_rows(&String::from_utf8(g1).unwrap());
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r[0].len() == 12 && r[1] == "1"));

    run(&["features", "--model", "m/model.json", "--corpus", "test.csv", "--out", "ft"]);
    run(&[
        "classify-nn",
        "--features", "f/features.csv",
        "--labels", "train.csv",
        "--test-features", "ft/features.csv",
        "--test-labels", "test.csv",
        "--out", "nn",
    ]);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("nn/mlp_report.json")).unwrap()).unwrap();
    assert_eq!(report["evaluated_on"], "test");
    assert_eq!(report["n_pos"].as_u64().unwrap() + report["n_neg"].as_u64().unwrap(), 40);
    let auc = report["auc_roc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert!(dir.path().join("nn/mlp_model.json").exists());
}

#[test]
fn full_pipeline_reruns_are_byte_identical() {
    let dir = workspace(MINIMAL, 0.6);
    let mut files = Vec::new();
    for run in ["r1", "r2"] {
        train(dir.path(), &format!("{run}/m"), &[]);
        let model = format!("{run}/m/model.json");
        ok(&hmme(
            dir.path(),
            &["score", "--config", "run.toml", "--model", &model, "--corpus", "test.csv", "--out", &format!("{run}/s")],
        ));
        let out = hmme(dir.path(), &["evaluate", "--config", "run.toml", "--model", &model, "--out", &format!("{run}/e")]);
        ok(&out);
        let stdout = String::from_utf8_lossy(&out.stdout).to_string();
        assert!(stdout.starts_with("auc_roc "), "{stdout}");
        files.push(
            ["m/model.json", "s/scores.csv", "e/report.json", "e/evaluation_scores.csv"]
                .map(|f| fs::read(dir.path().join(run).join(f)).unwrap()),
        );
    }
    assert_eq!(files[0], files[1]);
}
