use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eiphase::idx::write_idx_images;
use eiphase::training::{read_csv, EvalReport, TrainConfig};

fn eiphase(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eiphase")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = eiphase(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_images(dir: &Path, name: &str, count: usize, seed: u8) -> PathBuf {
    let pixels: Vec<u8> = (0..count * 64).map(|k| ((k as u32 * 37 + seed as u32 * 11) % 256) as u8).collect();
    let path = dir.join(name);
    write_idx_images(&path, &pixels, count, 8, 8).unwrap();
    path
}

const TINY: [&str; 6] = ["--scales", "1", "--base_channels", "2", "--epochs", "1"];

#[test]
fn build_train_eval_baseline_export() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let train = write_images(dir, "train.idx", 10, 1);
    let test = write_images(dir, "test.idx", 4, 2);
    let cache = dir.join("cache");
    let archive = ok(&[
        "dataset", "build", "--train_images", train.to_str().unwrap(), "--test_images", test.to_str().unwrap(),
        "--alpha", "1.5", "--seed", "3", "--out_dir", cache.to_str().unwrap(), "--corpus", "toy",
    ]);
    let archive = PathBuf::from(archive.trim());
    assert_eq!(archive, cache.join("toy").join("op_m96_n64_s3"));
    assert!(archive.exists());

    std::fs::write(dir.join("cfg.toml"), "epochs = 3\nlearning_rate = 0.001\nbatch_size = 4\n").unwrap();
    let run = dir.join("run");
    let cfg = dir.join("cfg.toml");
    let mut args = vec![
        "train", "--config", cfg.to_str().unwrap(), "--dataset", archive.to_str().unwrap(),
        "--out-dir", run.to_str().unwrap(), "--dataset_fraction", "1.0", "--alpha", "1.5", "--seed", "4",
    ];
    args.extend(TINY);
    let ckpt = ok(&args);
    let resolved = TrainConfig::load(run.join("config.toml")).unwrap();
    // flags override the file, the file overrides the defaults
    assert_eq!((resolved.epochs, resolved.batch_size, resolved.learning_rate, resolved.seed), (1, 4, 0.001, 4));
    let log = std::fs::read_to_string(run.join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["step", "epoch", "loss_total", "loss_mc", "loss_ei"] {
            assert!(v.get(key).is_some());
        }
    }
    assert!(run.join("checkpoints/epoch_1.ckpt").exists());

    let report = dir.join("report.json");
    ok(&["eval", "--checkpoint", ckpt.trim(), "--dataset", archive.to_str().unwrap(), "--report", report.to_str().unwrap(), "--keep", "2"]);
    ok(&[
        "baseline", "--dataset", archive.to_str().unwrap(), "--report", report.to_str().unwrap(), "--count", "2",
        "--steps", "50", "--restarts", "1",
    ]);
    let r = EvalReport::load(&report).unwrap();
    assert_eq!(r.cells.len(), 2);
    assert_eq!(r.cells[0].count, 4);
    assert_eq!(r.cells[1].count, 2);

    let out = dir.join("figures");
    ok(&["export", "--report", report.to_str().unwrap(), "--out_dir", out.to_str().unwrap()]);
    assert_eq!(read_csv(&out.join("cs_vs_alpha.csv")).unwrap().len(), 2);
    assert!(out.join("cs_vs_alpha.svg").exists());
    assert!(out.join("grid_alpha_1.5.png").exists());
}

#[test]
fn supervised_training_on_a_truthless_split_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let train = write_images(tmp.path(), "train.idx", 4, 1);
    let archive = ok(&["dataset", "build", "--train_images", train.to_str().unwrap(), "--alpha", "1", "--seed", "0", "--out_dir", tmp.path().to_str().unwrap()]);
    let mut args = vec!["train", "--dataset", archive.trim(), "--split", "test", "--out_dir", tmp.path().to_str().unwrap()];
    args.extend(TINY);
    let out = eiphase(&args);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no 'test' split"));
}

#[test]
fn sweep_requires_a_seed() {
    let out = eiphase(&["sweep", "--train_images", "a", "--test_images", "b", "--run_dir", "c"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn sweep_runs_and_exports() {
    let tmp = tempfile::tempdir().unwrap();
    let train = write_images(tmp.path(), "train.idx", 8, 1);
    let test = write_images(tmp.path(), "test.idx", 3, 2);
    let out = tmp.path().join("out");
    let run = tmp.path().join("run");
    let mut args = vec![
        "sweep", "--seed", "1", "--train_images", train.to_str().unwrap(), "--test_images", test.to_str().unwrap(),
        "--alphas", "1.0,2.0", "--methods", "ss_amplitude,supervised", "--train_count", "6",
        "--run_dir", run.to_str().unwrap(), "--out_dir", out.to_str().unwrap(),
    ];
    args.extend(TINY);
    let stdout = ok(&args);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("alpha=")).count(), 4);
    assert_eq!(read_csv(&out.join("cs_vs_alpha.csv")).unwrap().len(), 4);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "epochz = 3\n").unwrap();
    let out = eiphase(&["train", "--config", cfg.to_str().unwrap(), "--dataset", "x", "--out_dir", "y"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
}
