//! End-to-end exercise of the command-line interface: generate a tiny
//! dataset, train one epoch, reconstruct the test scans with and without
//! adaptation, and evaluate the results.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const MINI_CONFIG: &str = "\
[net]
h = 16
w = 16
stem_channels = 3
stage_channels = 4, 8
dstate = 4
conv_kernel = 2
expand = 2
coarse_dim = 8
feature_dim = 8
heads = 2
imus = 2
n_frames = 4

[train]
epochs = 1
lr = 0.001
seed = 1
aug_crop_min = 64
aug_reverse = false

[adapt]
iterations = 2
lr = 0.000001

[data]
scans = 10
n_min = 5
n_max = 7
h = 16
w = 16
phantom_mm = 32
imus = 2
split_train = 0.6
split_val = 0.2
";

fn fima(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fima"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = fima(args);
    assert!(
        out.status.success(),
        "`fima {}` failed:\nstdout: {}\nstderr: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path_str(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("mini.cfg");
    fs::write(&cfg, MINI_CONFIG).unwrap();
    let cfg = path_str(&cfg);
    let data = path_str(&tmp.path().join("data"));
    let ckpt = path_str(&tmp.path().join("model.ckpt"));

    // Dataset generation, with refusal to overwrite unless forced.
    let out = ok(&["gen-data", "--config", &cfg, "--out", &data, "--seed", "3"]);
    assert!(out.contains("wrote 10 scans"));
    let refused = fima(&["gen-data", "--config", &cfg, "--out", &data, "--seed", "3"]);
    assert!(!refused.status.success());
    ok(&["gen-data", "--config", &cfg, "--out", &data, "--seed", "3", "--force"]);

    // Training writes the checkpoint trio.
    let out = ok(&["train", "--config", &cfg, "--data", &data, "--out", &ckpt]);
    assert!(out.contains("best val loss"));
    assert!(Path::new(&ckpt).is_file());
    assert!(Path::new(&format!("{ckpt}.meta.json")).is_file());
    assert!(Path::new(&format!("{ckpt}.log.csv")).is_file());

    // Reconstruct every test scan, plain and adapted.
    let pred = tmp.path().join("pred");
    let pred_adapt = tmp.path().join("pred_adapt");
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&pred_adapt).unwrap();
    let test_dir = Path::new(&data).join("test");
    let mut scan_ids: Vec<String> = fs::read_dir(&test_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    scan_ids.sort();
    assert_eq!(scan_ids.len(), 2);
    for id in &scan_ids {
        let scan = path_str(&test_dir.join(id));
        ok(&[
            "reconstruct",
            "--ckpt",
            &ckpt,
            "--scan",
            &scan,
            "--out",
            &path_str(&pred.join(format!("{id}.csv"))),
        ]);
        let out = ok(&[
            "reconstruct",
            "--ckpt",
            &ckpt,
            "--scan",
            &scan,
            "--adapt",
            "--adapt-iters",
            "2",
            "--out",
            &path_str(&pred_adapt.join(format!("{id}.csv"))),
        ]);
        assert!(out.contains("adapted 2 iterations"));
    }

    // Reconstruction does not need the ground-truth file.
    let blind = tmp.path().join("blind");
    let src = test_dir.join(&scan_ids[0]);
    fs::create_dir_all(&blind).unwrap();
    for f in ["frames.f32", "meta.txt", "imu.csv"] {
        fs::copy(src.join(f), blind.join(f)).unwrap();
    }
    let blind_csv = tmp.path().join("blind.csv");
    ok(&[
        "reconstruct",
        "--ckpt",
        &ckpt,
        "--scan",
        &path_str(&blind),
        "--out",
        &path_str(&blind_csv),
    ]);
    assert_eq!(
        fs::read(&blind_csv).unwrap(),
        fs::read(pred.join(format!("{}.csv", scan_ids[0]))).unwrap()
    );

    // Evaluation: clean run exits zero and writes both report forms.
    let report = tmp.path().join("report.txt");
    let out = ok(&[
        "eval",
        "--pred",
        &path_str(&pred),
        "--gt",
        &path_str(&test_dir),
        "--report",
        &path_str(&report),
    ]);
    assert!(out.contains("mean.fdr="));
    assert!(report.is_file());
    assert!(Path::new(&format!("{}.json", report.display())).is_file());

    // Identical inputs give a byte-identical report.
    let report2 = tmp.path().join("report2.txt");
    ok(&[
        "eval",
        "--pred",
        &path_str(&pred),
        "--gt",
        &path_str(&test_dir),
        "--report",
        &path_str(&report2),
    ]);
    assert_eq!(fs::read(&report).unwrap(), fs::read(&report2).unwrap());

    // A missing prediction is reported and flips the exit code, but the
    // report is still produced.
    fs::remove_file(pred.join(format!("{}.csv", scan_ids[0]))).unwrap();
    let partial = fima(&[
        "eval",
        "--pred",
        &path_str(&pred),
        "--gt",
        &path_str(&test_dir),
        "--report",
        &path_str(&report),
    ]);
    assert_eq!(partial.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&partial.stdout).contains("skipped.entry="));
}

#[test]
fn bad_inputs_fail_with_clear_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("mini.cfg");
    fs::write(&cfg, MINI_CONFIG).unwrap();

    // Unknown config key is a hard error naming the location.
    let bad_cfg = tmp.path().join("bad.cfg");
    fs::write(&bad_cfg, "[train]\nepochz = 5\n").unwrap();
    let out = fima(&["gen-data", "--config", &path_str(&bad_cfg), "--out", &path_str(&tmp.path().join("x"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("epochz"), "stderr: {err}");
    assert!(err.contains("line 2") || err.contains(":2"), "stderr: {err}");

    // Unknown model kind.
    let out = fima(&[
        "train",
        "--config",
        &path_str(&cfg),
        "--data",
        &path_str(&tmp.path().join("nope")),
        "--out",
        &path_str(&tmp.path().join("c.ckpt")),
        "--kind",
        "imageonly",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("imageonly"));

    // Missing checkpoint.
    let out = fima(&[
        "reconstruct",
        "--ckpt",
        &path_str(&tmp.path().join("ghost.ckpt")),
        "--scan",
        &path_str(&tmp.path().join("scan")),
        "--out",
        &path_str(&tmp.path().join("t.csv")),
    ]);
    assert!(!out.status.success());
}
