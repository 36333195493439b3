use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn calattn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_calattn")).args(args).output().unwrap()
}

fn tiny_train(out: &Path) -> Output {
    let mut args = vec!["train", "--quiet", "--out", out.to_str().unwrap()];
    for kv in [
        "model.image_h=8",
        "model.image_w=8",
        "model.patch=4",
        "model.dim=8",
        "model.depth=1",
        "model.heads=2",
        "model.classes=3",
        "model.calattn_hidden=4",
        "data.source=\"synthetic\"",
        "data.synth_per_class=30",
        "data.synth_test_per_class=20",
        "batch_size=16",
        "total_epochs=2",
        "optimizer.lr_stages=[[2, 0.05]]",
    ] {
        args.extend(["--set", kv]);
    }
    calattn(&args)
}

#[test]
fn train_then_eval_and_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = tiny_train(&run);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("fitted temperature"));
    let report = fs::read(run.join("report.csv")).unwrap();

    let again = dir.path().join("again");
    let out = calattn(&["eval", run.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(again.join("report.csv")).unwrap(), report);

    let manifest = run.join("checkpoint.manifest");
    let out = calattn(&["diagnose", manifest.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(again.join("diagnose_curve.csv").is_file());
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = calattn(&["train", "--out", d, "--set", "model.dim=7"]);
    assert_eq!(out.status.code(), Some(2));
    let out = calattn(&["train", "--out", d, "--set", "nonsense.key=1"]);
    assert_eq!(out.status.code(), Some(2));
    let missing = dir.path().join("missing-images");
    let set = format!("data.images=\"{}\"", missing.display());
    let out = calattn(&["train", "--out", d, "--set", &set]);
    assert_eq!(out.status.code(), Some(3));
    let out = calattn(&["eval", dir.path().join("nothing").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn fit_temp_reads_logit_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("logits.csv");
    // 3:1 odds doubled; T = 2 restores calibration
    let z = 2.0 * 3f64.ln();
    let mut text = String::from("label,l0,l1\n");
    for i in 0..400 {
        text.push_str(&format!("{},{z},0\n", usize::from(i % 4 == 0)));
    }
    fs::write(&path, text).unwrap();
    let out = calattn(&["fit-temp", path.to_str().unwrap()]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().nth(1).unwrap().starts_with("2.0,"), "{stdout}");

    fs::write(&path, "label,l0,l1\n5,1,2\n").unwrap();
    assert_eq!(calattn(&["fit-temp", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn diagram_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("preds.csv");
    fs::write(&input, "confidence,correct\n0.9,1\n0.8,1\n0.6,0\n0.55,true\n").unwrap();
    let stem = dir.path().join("diagram");
    let out = calattn(&["diagram", input.to_str().unwrap(), "--out", stem.to_str().unwrap(), "--bins", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().contains("ece 0.037500"));
    let svg = fs::read_to_string(stem.with_extension("svg")).unwrap();
    assert_eq!(svg.matches("class=\"bar\"").count(), 2);
    assert!(stem.with_extension("csv").is_file());
}

#[test]
fn selftest_passes() {
    let out = calattn(&["selftest"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = calattn::harness::RunConfig::load(Some(&path), &[]).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.validate().unwrap();
        seen += 1;
    }
    assert!(seen >= 3);
}
