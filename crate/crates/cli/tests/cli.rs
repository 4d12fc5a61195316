use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn tst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tst")).args(args).output().expect("spawn tst")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn tiny_config(dir: &Path, epochs: usize, extra: &str) -> std::path::PathBuf {
    let text = format!(
        "# smoke run\n\
         variant = tst-s\n\
         epochs = {epochs}\n\
         batch_size = 2\n\
         seed = 3\n\
         train_data = synth\n\
         train_count = 2\n\
         train_size = 64x64\n\
         val_data = synth\n\
         val_count = 1\n\
         val_size = 64x64\n\
         aug_crop = none\n\
         out_dir = run\n\
         {extra}"
    );
    let path = dir.join("train.cfg");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&tst(&["--help"])), 0);
    assert_eq!(code(&tst(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&tst(&[])), 1);
    assert_eq!(code(&tst(&["frobnicate"])), 1);
    assert_eq!(code(&tst(&["profile", "--variant", "tst-xl", "--shape", "64x64"])), 1);
    assert_eq!(code(&tst(&["profile", "--variant", "tst", "--shape", "60x64"])), 1);
    assert_eq!(code(&tst(&["bench", "--variant", "tst", "--shape", "64x64", "--iters", "0"])), 1);
}

#[test]
fn profile_emits_rows_and_totals() {
    let out = tst(&["profile", "--variant", "tst-s", "--shape", "64x64", "--csv"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().contains("params"));
    assert!(text.lines().any(|l| l.starts_with("decoder.head")));
    let table = stdout(&tst(&["profile", "--variant", "tst", "--shape", "64x64"]));
    assert!(table.lines().any(|l| l.starts_with("total")));
}

#[test]
fn bench_reports_fps() {
    let out = tst(&["bench", "--variant", "tst-s", "--shape", "32x32", "--iters", "3", "--warmup", "1"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("fps"));
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = TempDir::new().unwrap();
    let cfg = tiny_config(dir.path(), 2, "");
    let out = tst(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let log = stdout(&out);
    let rows: Vec<&str> = log.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("epoch,lr,train_loss"));
    assert!(rows[1].starts_with("0,3e-4,"));

    let run = dir.path().join("run");
    let ckpt = run.join("final.tst");
    assert!(ckpt.exists());
    assert_eq!(fs::read_to_string(run.join("train_log.csv")).unwrap(), log);

    // Data directory for eval and an image for predict.
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    let sample = tst_core::data::synth_scene(11, 72, 80, 10.0).unwrap();
    tst_core::data::write_sample(&data.join("s0"), &sample).unwrap();

    let out = tst(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(), "--crop", "eigen"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], tst_core::loss_metrics::METRICS_CSV_HEADER);
    assert!(lines[1].starts_with("tst-s,"));

    let pgm = dir.path().join("depth.pgm");
    let image = data.join("s0_rgb.tstf");
    let out = tst(&["predict", "--ckpt", ckpt.to_str().unwrap(), "--image", image.to_str().unwrap(), "--out", pgm.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let depth = tst_core::data::read_depth_pgm(&pgm).unwrap();
    assert_eq!(depth.shape(), &[1, 72, 80]);
    assert!(depth.data().iter().all(|&d| (0.0..=10.0).contains(&d)));

    // Resuming a finished run trains no further epochs.
    let out = tst(&["train", "--config", cfg.to_str().unwrap(), "--resume", ckpt.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).lines().count(), 1);
}

#[test]
fn bad_inputs_map_to_exit_codes() {
    let dir = TempDir::new().unwrap();
    let junk = dir.path().join("junk.tst");
    fs::write(&junk, b"not a checkpoint").unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();

    let out = tst(&["eval", "--ckpt", junk.to_str().unwrap(), "--data", empty.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    let missing = dir.path().join("missing.tst");
    assert_eq!(code(&tst(&["predict", "--ckpt", missing.to_str().unwrap(), "--image", "x", "--out", "y"])), 2);

    let cfg = tiny_config(dir.path(), 0, "");
    assert_eq!(code(&tst(&["train", "--config", cfg.to_str().unwrap()])), 1);
    let cfg = tiny_config(dir.path(), 1, "warp_factor = 9\n");
    let out = tst(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warp_factor"));
}

#[test]
fn diverging_training_exits_three() {
    let dir = TempDir::new().unwrap();
    let cfg = tiny_config(dir.path(), 3, "lr = 1e30\n");
    let out = tst(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}
