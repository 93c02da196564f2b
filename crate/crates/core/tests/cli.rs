use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pwae::experiment::{evaluate, prepare, CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE};
use pwae::io::array::Array;
use pwae::io::checkpoint::file_sha256;
use pwae::io::grid::png_config_hash;
use pwae::io::metrics::{read_metrics, without_wall_clock};

const MNIST: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist");

fn pwae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pwae")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = pwae(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn train(task: &str, seed: &str, iterations: &str, dir: &Path) {
    ok(&["train", "--task", task, "--seed", seed, "--iterations", iterations, "--data-dir", MNIST, "--out", dir.to_str().unwrap()]);
}

#[test]
fn repeated_training_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    train("denoise", "7", "3", &a);
    train("denoise", "7", "3", &b);
    let text = |d: &Path| fs::read_to_string(d.join(METRICS_FILE)).unwrap();
    assert_eq!(without_wall_clock(&text(&a)), without_wall_clock(&text(&b)));
    assert_eq!(fs::read(a.join(CHECKPOINT_FILE)).unwrap(), fs::read(b.join(CHECKPOINT_FILE)).unwrap());

    let m = read_metrics(a.join(METRICS_FILE)).unwrap();
    assert_eq!(m.rows.len(), 3);
    assert_eq!(m.checkpoint_sha256.unwrap(), file_sha256(a.join(CHECKPOINT_FILE)).unwrap());

    let c = tmp.path().join("c");
    train("denoise", "8", "3", &c);
    assert_ne!(without_wall_clock(&text(&a)), without_wall_clock(&text(&c)));
}

#[test]
fn evaluate_matches_the_library_call() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("lg");
    train("linear-gaussian", "3", "40", &dir);
    let ckpt = dir.join(CHECKPOINT_FILE);
    let report = tmp.path().join("eval.json");
    ok(&["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--oracle", "--out", report.to_str().unwrap()]);

    let (model, config, _) = pwae::cli::open_checkpoint(&ckpt).unwrap();
    let data = prepare(&config).unwrap();
    let expected = evaluate(&model, &config, &data, true).unwrap();
    assert!(expected.posterior.is_some());
    assert_eq!(fs::read_to_string(&report).unwrap(), expected.to_json().unwrap());
}

#[test]
fn sampling_writes_the_figure_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("den");
    train("denoise", "1", "2", &dir);
    let ckpt = dir.join(CHECKPOINT_FILE);
    let samples = tmp.path().join("samples");
    ok(&[
        "sample", "--checkpoint", ckpt.to_str().unwrap(), "--n", "4", "--sigmas", "-1,-0.5,0,0.5,1",
        "--out", samples.to_str().unwrap(),
    ]);
    let ladder = Array::load(samples.join("ladder.arr")).unwrap();
    let m = ladder.header.shape[0];
    assert_eq!(ladder.header.shape, vec![m, 5, 1, 28, 28]);
    assert_eq!(Array::load(samples.join("samples.arr")).unwrap().header.shape, vec![m, 4, 1, 28, 28]);
    assert_eq!(Array::load(samples.join("std.arr")).unwrap().header.shape, vec![m, 1, 28, 28]);

    // Columns: truth, observation, five ladder entries, mean, std.
    let png = samples.join("grid.png");
    let decoder = png::Decoder::new(fs::File::open(&png).unwrap());
    let info = decoder.read_info().unwrap().info().clone();
    assert_eq!(info.width as usize, 9 * 30 + 2);
    assert_eq!(info.height as usize, m * 30 + 2);
    let hash = pwae::io::config::RunConfig::load(dir.join(CONFIG_FILE)).unwrap().hash().unwrap();
    assert_eq!(png_config_hash(&png).unwrap().unwrap(), hash);

    // The ladder's middle column is the point estimate.
    let len = 28 * 28;
    let mid = &ladder.data[2 * len..3 * len];
    let (model, _, _) = pwae::cli::open_checkpoint(&ckpt).unwrap();
    let x2 = Array::load(samples.join("conditions.arr")).unwrap().to_batch().unwrap();
    let est = pwae::sampler::point_estimate(&model, &x2.single(0).unwrap().reshape(vec![1, 28, 28]).unwrap()).unwrap();
    assert_eq!(mid, est.data());

    // Replotting after swapping in an array from another config is refused.
    let other = tmp.path().join("other");
    train("denoise", "2", "1", &other);
    let other_samples = tmp.path().join("other-samples");
    ok(&["sample", "--checkpoint", other.join(CHECKPOINT_FILE).to_str().unwrap(), "--n", "2", "--out", other_samples.to_str().unwrap()]);
    let first = fs::read_to_string(dir.join(CONFIG_FILE)).unwrap();
    let second = fs::read_to_string(other.join(CONFIG_FILE)).unwrap();
    if first != second {
        fs::copy(other_samples.join("std.arr"), samples.join("std.arr")).unwrap();
        let out = pwae(&["plot", "--samples-dir", samples.to_str().unwrap()]);
        assert!(!out.status.success());
        assert!(String::from_utf8_lossy(&out.stderr).contains("kind=hash_mismatch"));
    }
}

#[test]
fn evaluate_refuses_mixed_hashes() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    train("linear-gaussian", "1", "2", &a);
    train("linear-gaussian", "2", "2", &b);
    fs::copy(b.join(METRICS_FILE), a.join(METRICS_FILE)).unwrap();
    let out = pwae(&["evaluate", "--checkpoint", a.join(CHECKPOINT_FILE).to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kind=hash_mismatch"));
}

#[test]
fn config_errors_list_every_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    let text = ok(&["train", "--task", "linear-gaussian", "--iterations", "1", "--out", tmp.path().join("run").to_str().unwrap()]);
    assert!(text.contains("config_hash="));
    let mut c = pwae::io::config::RunConfig::load(tmp.path().join("run").join(CONFIG_FILE)).unwrap();
    c.train.lambda1 = -1.0;
    c.train.batch_size = 1;
    c.train.learning_rate = 0.0;
    c.save(&cfg).unwrap();
    let out = pwae(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    for field in ["train.lambda1", "train.batch_size", "train.learning_rate"] {
        assert!(err.lines().any(|l| l.starts_with("error: kind=config") && l.contains(&format!("field={field}"))), "{err}");
    }

    let out = pwae(&["evaluate", "--checkpoint", tmp.path().join("missing.ckpt").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: kind="));
}
