use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dpreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpreg"))
        .args(args)
        .env_remove("RUST_BACKTRACE")
        .output()
        .expect("spawn dpreg")
}

fn ok(args: &[&str]) -> String {
    let out = dpreg(args);
    assert!(
        out.status.success(),
        "dpreg {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small dataset plus a one-epoch checkpoint.
fn fixture(dir: &Path) {
    let data = dir.join("data");
    ok(&["gen", "--out", p(&data), "--pairs", "2", "--points", "500", "--seed", "3"]);
    let cfg = dir.join("cfg.toml");
    fs::write(&cfg, "n_patch = 32\nlatent_dim = 8\nsamples_per_pair = 8\nepochs = 1\n").unwrap();
    ok(&[
        "train",
        "--data",
        p(&data.join("train")),
        "--config",
        p(&cfg),
        "--out",
        p(&dir.join("net.json")),
        "--loss-log",
        p(&dir.join("loss.csv")),
    ]);
}

#[test]
fn gen_writes_both_splits() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    ok(&["gen", "--out", p(&out), "--pairs", "2", "--points", "300"]);
    for split in ["train", "test"] {
        let manifest = fs::read_to_string(out.join(split).join("manifest.csv")).unwrap();
        assert_eq!(manifest.lines().count(), 3, "{split}");
        assert!(out.join(split).join("pair_0001_b.ply").exists());
    }
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["gen", "--out", p(out), "--split", "test", "--pairs", "1", "--points", "200", "--seed", "9"]);
    }
    let read = |d: &Path| fs::read(d.join("test").join("pair_0000_b.ply")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert!(!a.join("train").exists());
}

#[test]
fn train_describe_match_register_bench() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    let log = fs::read_to_string(d.join("loss.csv")).unwrap();
    assert!(log.starts_with("epoch,l_rec,l_pose,l_feat,total"));
    assert_eq!(log.lines().count(), 2);

    let test = d.join("data").join("test");
    for side in ["a", "b"] {
        ok(&[
            "describe",
            "--checkpoint",
            p(&d.join("net.json")),
            "--cloud",
            p(&test.join(format!("pair_0000_{side}.ply"))),
            "--out",
            p(&d.join(format!("{side}.json"))),
        ]);
    }
    ok(&["match", "--a", p(&d.join("a.json")), "--b", p(&d.join("b.json")), "--out", p(&d.join("m.csv"))]);
    let matches = fs::read_to_string(d.join("m.csv")).unwrap();
    assert!(matches.starts_with("index_a,index_b,distance"));
    assert!(matches.lines().count() > 1);

    // With ground-truth rotations every hypothesis carries the exact rotation.
    let reg = d.join("reg.jsonl");
    ok(&[
        "register",
        "--data",
        p(&test),
        "--pair",
        "0",
        "--checkpoint",
        p(&d.join("net.json")),
        "--oracle-rotations",
        "--out",
        p(&reg),
        "--hypotheses",
        p(&d.join("h.csv")),
    ]);
    ok(&["register", "--data", p(&test), "--pair", "1", "--checkpoint", p(&d.join("net.json")), "--method", "ransac", "--out", p(&reg)]);
    let lines: Vec<serde_json::Value> = fs::read_to_string(&reg)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["method"], "direct");
    assert!(lines[0]["hypothesis_stats"]["median_angular_deviation"].as_f64().unwrap() < 1e-9, "{}", lines[0]);
    assert_eq!(lines[1]["method"], "ransac");
    assert_eq!(lines[1]["pair_id"], 1);
    let hyps = fs::read_to_string(d.join("h.csv")).unwrap();
    assert!(hyps.lines().last().unwrap().starts_with("gt,"));

    let bench = d.join("bench");
    let stdout = ok(&["bench", "--data", p(&test), "--checkpoint", p(&d.join("net.json")), "--out", p(&bench), "--iterations", "50", "--rmse-max", "0.3"]);
    assert!(stdout.contains("direct"));
    for f in ["direct.csv", "ransac.csv", "summary.txt"] {
        assert!(bench.join(f).exists(), "{f}");
    }
    let direct = fs::read_to_string(bench.join("direct.csv")).unwrap();
    assert!(direct.lines().next().unwrap().contains("rmse"));
}

#[test]
fn errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = dpreg(&["describe", "--checkpoint", "missing.json", "--cloud", "x.ply", "--out", p(&dir.path().join("o.json"))]);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "no_such_field = 1\n").unwrap();
    let out = dpreg(&["train", "--data", p(dir.path()), "--config", p(&cfg), "--out", "n.json"]);
    assert!(!out.status.success());

    let out = dpreg(&["match", "--a", "a", "--b", "b", "--out", "m", "--strategy", "bogus"]);
    assert!(!out.status.success());
}
