use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_densemetric"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_small(dir: &Path) {
    let out = run(&[
        "synth", "--classes", "4", "--per-class", "10", "--dim", "6", "--sigma", "0.05", "--seed", "3", "--out",
        s(dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn train_small(dir: &Path, extra: &[&str]) -> Output {
    let train = dir.join("train.txt");
    let ckpt = dir.join("model.ckpt");
    let mut args = vec![
        "train", "--train", s(&train), "--checkpoint", s(&ckpt), "-P", "2", "-K", "5", "--iterations", "60",
        "--lr", "0.01", "--embedding-dim", "4", "--set", "hidden=16",
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn synth_is_deterministic_and_splits_classes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth_small(a.path());
    synth_small(b.path());
    for name in ["train.txt", "test.txt"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap()
        );
    }
    let labels = |name: &str| -> std::collections::BTreeSet<String> {
        std::fs::read_to_string(a.path().join(name))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(|l| l.split(',').next().unwrap().to_string())
            .collect()
    };
    assert!(labels("train.txt").is_disjoint(&labels("test.txt")));
}

#[test]
fn missing_out_is_a_usage_error() {
    assert_eq!(run(&["synth", "--classes", "4"]).status.code(), Some(2));
}

#[test]
fn invalid_loss_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    assert_eq!(train_small(dir.path(), &["--loss", "hinge"]).status.code(), Some(2));
}

#[test]
fn train_eval_embed_round() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(d);
    let out = train_small(d, &["--loss", "triplet", "--lambda", "0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(d.join("model.ckpt.log")).unwrap();
    assert!(log.lines().last().unwrap().starts_with("iteration=60 "));

    // the stored config echoes the flags
    let inspect = String::from_utf8(run(&["inspect", "--checkpoint", s(&d.join("model.ckpt"))]).stdout).unwrap();
    for line in ["loss = triplet", "lambda = 0.0", "classes_per_batch = 2", "hidden = 16", "iterations = 60"] {
        assert!(inspect.contains(line), "{line} missing from\n{inspect}");
    }

    let ckpt = d.join("model.ckpt");
    let records = d.join("report.txt");
    let out = run(&["eval", "--checkpoint", s(&ckpt), "--test", s(&d.join("test.txt")), "--out", s(&records)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("R@1 ") && stdout.contains("NMI"));
    let report = std::fs::read_to_string(&records).unwrap();
    assert!(report.contains("recall@1=1.0"), "{report}");

    let emb = d.join("emb.txt");
    let emb2 = d.join("emb2.txt");
    for path in [&emb, &emb2] {
        let out = run(&["embed", "--checkpoint", s(&ckpt), "--features", s(&d.join("test.txt")), "--out", s(path)]);
        assert!(out.status.success());
    }
    let text = std::fs::read_to_string(&emb).unwrap();
    assert_eq!(text, std::fs::read_to_string(&emb2).unwrap());
    for line in text.lines().filter(|l| !l.starts_with('#')) {
        let norm: f64 = line.split(',').skip(1).map(|v| v.trim().parse::<f64>().unwrap().powi(2)).sum();
        assert!((norm - 1.0).abs() < 1e-9);
    }
}

#[test]
fn resume_matches_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(d);
    assert!(train_small(d, &[]).status.success());
    let straight = std::fs::read(d.join("model.ckpt")).unwrap();

    let half = d.join("half.ckpt");
    let out = train_small(d, &["--iterations", "30", "--checkpoint", s(&half)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let resumed = d.join("resumed.ckpt");
    let out = run(&[
        "train", "--train", s(&d.join("train.txt")), "--resume", s(&half), "--iterations", "60", "--checkpoint",
        s(&resumed),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(&resumed).unwrap(), straight);

    let out = run(&[
        "train", "--train", s(&d.join("train.txt")), "--resume", s(&half), "--lambda", "3", "--checkpoint",
        s(&resumed),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(d);
    let conf = d.join("run.conf");
    std::fs::write(&conf, "# test\nloss = npair\neta = 0.25\nseed = 4\n").unwrap();
    let out = train_small(d, &["--config", s(&conf), "--seed", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let inspect = String::from_utf8(run(&["inspect", "--checkpoint", s(&d.join("model.ckpt"))]).stdout).unwrap();
    assert!(inspect.contains("loss = npair") && inspect.contains("eta = 0.25") && inspect.contains("seed = 5"));

    std::fs::write(&conf, "no_such_key = 1\n").unwrap();
    assert_eq!(train_small(d, &["--config", s(&conf)]).status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_detects_perturbation() {
    let out = run(&["gradcheck"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.contains("PASS")).count(), 6);

    let out = run(&["gradcheck", "--component", "density"]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1);
    assert!(stdout.starts_with("density"));

    let out = run(&["gradcheck", "--component", "triplet", "--perturb", "0.01"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("triplet"));
}

#[test]
fn missing_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = run(&["eval", "--checkpoint", s(&d.join("nope.ckpt")), "--test", s(&d.join("nope.txt"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn corrupt_checkpoint_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(d);
    std::fs::write(d.join("bad.ckpt"), b"DMCKPT\0\0garbage").unwrap();
    let out = run(&["eval", "--checkpoint", s(&d.join("bad.ckpt")), "--test", s(&d.join("test.txt"))]);
    assert_eq!(out.status.code(), Some(1));
}
