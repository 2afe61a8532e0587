use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cofuse::data::{read_labels, Raster};
use cofuse::metrics::MetricsReport;

fn cofuse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cofuse"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cofuse(dir, args);
    assert!(
        out.status.success(),
        "cofuse {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap() + &String::from_utf8_lossy(&out.stderr)
}

fn err(dir: &Path, args: &[&str]) -> String {
    let out = cofuse(dir, args);
    assert!(
        !out.status.success(),
        "cofuse {} should fail",
        args.join(" ")
    );
    let msg = String::from_utf8(out.stderr).unwrap();
    assert_eq!(
        msg.trim().lines().count(),
        1,
        "diagnostic not one line: {msg}"
    );
    msg
}

fn synth(dir: &Path, out: &str, bands: &str) {
    ok(
        dir,
        &[
            "synth",
            "--size",
            "32x32",
            "--bands",
            bands,
            "--train-per-class",
            "20",
            "--test-per-class",
            "40",
            "--out",
            out,
        ],
    );
}

const DATA: [&str; 6] = [
    "--hsi",
    "s/hsi.json",
    "--lidar",
    "s/lidar.json",
    "--train-labels",
    "s/train.csv",
];

fn train(dir: &Path, epochs: &str, extra: &[&str]) -> String {
    let mut args = vec![
        "train",
        "--k",
        "6",
        "--epochs",
        epochs,
        "--test-labels",
        "s/test.csv",
    ];
    args.extend(DATA);
    args.extend(extra);
    ok(dir, &args)
}

#[test]
fn synth_round_trips_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        dir,
        &[
            "synth",
            "--classes",
            "4",
            "--size",
            "64x64",
            "--bands",
            "30",
            "--seed",
            "7",
            "--out",
            "d",
        ],
    );
    ok(
        dir,
        &[
            "synth",
            "--classes",
            "4",
            "--size",
            "64x64",
            "--bands",
            "30",
            "--seed",
            "7",
            "--out",
            "e",
        ],
    );
    let hsi = Raster::load_pair(&dir.join("d/hsi.json")).unwrap();
    assert_eq!((hsi.height, hsi.width, hsi.bands), (64, 64, 30));
    let lidar = Raster::load_pair(&dir.join("d/lidar.json")).unwrap();
    assert_eq!(lidar.bands, 1);
    assert_eq!(read_labels(&dir.join("d/train.csv")).unwrap().len(), 160);
    assert!(!read_labels(&dir.join("d/test.csv")).unwrap().is_empty());
    for f in [
        "hsi.json",
        "hsi.raw",
        "lidar.json",
        "lidar.raw",
        "train.csv",
        "test.csv",
        "truth.csv",
        "manifest.json",
    ] {
        assert_eq!(
            fs::read(dir.join("d").join(f)).unwrap(),
            fs::read(dir.join("e").join(f)).unwrap(),
            "{f}"
        );
    }
    assert!(err(dir, &["synth", "--classes", "1", "--out", "x"]).contains("at least 2 classes"));
    err(dir, &["synth", "--size", "64", "--out", "x"]);
}

#[test]
fn train_eval_map_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "s", "12");
    let log = train(dir, "15", &["--out", "df"]);
    assert!(log.contains("wall time"));
    let ckpt = fs::read(dir.join("df/model.ckpt")).unwrap();
    assert!(ckpt.windows(10).any(|w| w == b"decision.U"));
    let lines = fs::read_to_string(dir.join("df/train_log.csv")).unwrap();
    assert_eq!(lines.lines().next().unwrap(), "epoch,L,L1,L2,L3,train_OA");
    assert_eq!(lines.lines().count(), 16);

    let mut eval = vec!["eval", "--out", "df"];
    eval.extend([
        "--hsi",
        "s/hsi.json",
        "--lidar",
        "s/lidar.json",
        "--test-labels",
        "s/test.csv",
    ]);
    let table = ok(dir, &eval);
    let metrics: MetricsReport =
        serde_json::from_str(&fs::read_to_string(dir.join("df/metrics.json")).unwrap()).unwrap();
    assert!(metrics.oa > 0.9, "OA {}", metrics.oa);
    assert!(table.contains(&format!("{:.2}", 100.0 * metrics.oa)));
    assert!(table.contains(&format!("{:.4}", metrics.kappa)));
    for (i, a) in metrics.per_class_accuracy.iter().enumerate() {
        let row = table
            .lines()
            .find(|l| l.split_whitespace().next() == Some(&(i + 1).to_string()))
            .unwrap();
        assert!(row.ends_with(&format!("{:.2}", 100.0 * a.unwrap())));
    }

    let mut map = vec![
        "map",
        "--out",
        "df",
        "--hsi",
        "s/hsi.json",
        "--lidar",
        "s/lidar.json",
        "--test-labels",
        "s/test.csv",
    ];
    ok(dir, &map);
    let ppm = fs::read(dir.join("df/map.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n32 32\n255\n"));
    assert_eq!(ppm.len(), 13 + 32 * 32 * 3);
    let truth = fs::read(dir.join("df/map_truth.ppm")).unwrap();
    assert!(truth.starts_with(b"P6\n64 32\n255\n"));
    let labels = read_labels(&dir.join("s/test.csv")).unwrap();
    let labelled: std::collections::HashSet<_> = labels.iter().map(|l| (l.row, l.col)).collect();
    let pixel = |r: usize, c: usize| &truth[13 + 3 * (r * 64 + c)..13 + 3 * (r * 64 + c) + 3];
    let unlabelled = (0..32 * 32)
        .map(|i| (i / 32, i % 32))
        .find(|p| !labelled.contains(p))
        .unwrap();
    assert_eq!(pixel(unlabelled.0, 32 + unlabelled.1), [0, 0, 0]);
    let l = &labels[0];
    assert_ne!(pixel(l.row, 32 + l.col), [0, 0, 0]);
    map[2] = "df2";
    map.extend(["--checkpoint", "df/model.ckpt"]);
    ok(dir, &map);
    assert_eq!(fs::read(dir.join("df2/map.ppm")).unwrap(), ppm);

    let missing = err(
        dir,
        &[
            "eval",
            "--out",
            "none",
            "--hsi",
            "s/hsi.json",
            "--lidar",
            "s/lidar.json",
            "--test-labels",
            "s/test.csv",
        ],
    );
    assert!(missing.contains("checkpoint"));
}

#[test]
fn variants_and_heads() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "s", "12");
    train(dir, "2", &["--variant", "CNN-F-S", "--out", "fs"]);
    let ckpt = fs::read(dir.join("fs/model.ckpt")).unwrap();
    assert!(!ckpt.windows(10).any(|w| w == b"decision.U"));
    assert!(!ckpt.windows(12).any(|w| w == b"head1.weight"));

    let hs = train(dir, "2", &["--variant", "CNN-HS", "--out", "hs"]);
    assert!(hs.contains("warning: CNN-HS ignores the LiDAR raster"));
    train(
        dir,
        "2",
        &["--variant", "CNN-DF-S", "--fusion", "max", "--out", "dfm"],
    );
    let cfg = fs::read_to_string(dir.join("dfm/config.json")).unwrap();
    assert!(cfg.contains("\"CNN-DF-M\""));
    let e = err(
        dir,
        &[
            "train",
            "--variant",
            "CNN-LiDAR",
            "--fusion",
            "sum",
            "--lidar",
            "s/lidar.json",
            "--train-labels",
            "s/train.csv",
        ],
    );
    assert!(e.contains("fusion"));
}

#[test]
fn config_file_with_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "s", "12");
    fs::write(
        dir.join("run.json"),
        r#"{"hsi": "s/hsi.json", "lidar": "s/lidar.json", "train_labels": "s/train.csv",
            "k": 4, "epochs": 3, "variant": "CNN-F-C", "out": "from_file"}"#,
    )
    .unwrap();
    ok(
        dir,
        &[
            "train", "--config", "run.json", "--epochs", "2", "--out", "flagged",
        ],
    );
    let echoed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("flagged/config.json")).unwrap())
            .unwrap();
    assert_eq!(echoed["epochs"], 2);
    assert_eq!(echoed["k"], 4);
    assert_eq!(echoed["variant"], "CNN-F-C");
    assert_eq!(
        fs::read_to_string(dir.join("flagged/train_log.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
    fs::write(dir.join("bad.json"), r#"{"epoch": 3}"#).unwrap();
    err(dir, &["train", "--config", "bad.json"]);
}

#[test]
fn eval_rejects_class_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "s", "12");
    train(dir, "1", &["--out", "m"]);
    fs::write(dir.join("extra.csv"), "row,col,class_id\n0,0,9\n").unwrap();
    let e = err(
        dir,
        &[
            "eval",
            "--out",
            "m",
            "--hsi",
            "s/hsi.json",
            "--lidar",
            "s/lidar.json",
            "--test-labels",
            "extra.csv",
        ],
    );
    assert!(e.contains("4 classes"), "{e}");
}

#[test]
fn ablation_row_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "s", "30");
    let mut base = vec![
        "--epochs",
        "1",
        "--batch",
        "32",
        "--test-labels",
        "s/test.csv",
        "--out",
        "ab",
    ];
    base.extend(DATA);
    for (axis, rows) in [
        ("k", 7),
        ("p", 6),
        ("lambda", 8),
        ("coupling", 2),
        ("fusion", 3),
    ] {
        let mut args = vec!["ablate", "--axis", axis];
        args.extend(&base);
        ok(dir, &args);
        let report = fs::read_to_string(dir.join(format!("ab/ablate_{axis}.csv"))).unwrap();
        assert_eq!(
            report.lines().next().unwrap(),
            "axis,setting,variant,OA,AA,Kappa"
        );
        assert_eq!(report.lines().count(), rows + 1, "{axis}");
    }
    let lambda = fs::read_to_string(dir.join("ab/ablate_lambda.csv")).unwrap();
    for v in ["0.001", "0.01", "0.1", "1"] {
        assert!(lambda.contains(&format!("lambda2={v}\"")), "{v}");
        assert!(lambda.contains(&format!("lambda1={v},")), "{v}");
    }
    let mut args = vec!["ablate", "--axis", "width"];
    args.extend(&base);
    err(dir, &args);
}
