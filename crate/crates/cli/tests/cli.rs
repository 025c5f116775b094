use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use r2c::data::{load_png, read_pairs};
use r2c::metrics::EVAL_HEADER;

fn r2c(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_r2c")).args(args).output().expect("spawn r2c")
}

fn ok(args: &[&str]) -> Output {
    let out = r2c(args);
    assert!(out.status.success(), "{args:?}\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn toy(dir: &Path, seed: &str, severity: &str) {
    let d = dir.to_str().unwrap();
    ok(&["make-toy", "--out", d, "--seed", seed, "--severity", severity, "--n-poor", "6", "--n-high", "6", "--n-test", "3", "--size", "16"]);
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn make_toy_is_byte_identical_per_seed() {
    let t = tempfile::tempdir().unwrap();
    let (a, b, c) = (t.path().join("a"), t.path().join("b"), t.path().join("c"));
    toy(&a, "5", "1");
    toy(&b, "5", "1");
    toy(&c, "6", "1");
    assert_eq!(tree(&a), tree(&b));
    assert_ne!(tree(&a), tree(&c));
}

#[test]
fn zero_severity_leaves_poor_images_clean() {
    let t = tempfile::tempdir().unwrap();
    toy(t.path(), "3", "0");
    let pairs = read_pairs(&t.path().join("pairs.csv")).unwrap();
    assert_eq!(pairs.len(), 9);
    for (clean, corrupt) in pairs {
        let a = load_png(&t.path().join(&clean)).unwrap();
        let b = load_png(&t.path().join(&corrupt)).unwrap();
        assert_eq!(a.data(), b.data(), "{corrupt}");
    }
}

#[test]
fn train_restore_classify_eval_export_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("toy");
    let ckpt = t.path().join("ckpt");
    toy(&data, "1", "1");
    let manifest = data.join("manifest.csv");
    let test_manifest = data.join("test_manifest.csv");
    let (m, tm, c) = (manifest.to_str().unwrap(), test_manifest.to_str().unwrap(), ckpt.to_str().unwrap());
    let train = |extra: &[&str]| {
        let mut args = vec!["train", "--manifest", m, "--ckpt-dir", c, "--seed", "2", "--q", "2", "--gen-base", "2", "--disc-base", "2"];
        args.extend_from_slice(extra);
        ok(&args)
    };
    train(&["--epochs", "1"]);
    train(&["--epochs", "2", "--resume"]);
    let losses = fs::read_to_string(ckpt.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 3, "{losses}");
    assert!(ckpt.join("epoch_0002.r2c").exists());
    let latest = ckpt.join("latest.r2c");
    let l = latest.to_str().unwrap();

    let restored = t.path().join("restored");
    let poor = data.join("test/poor_0000.png");
    ok(&["restore", "--ckpt", l, "--iterate-k", "2", "--out", restored.to_str().unwrap(), poor.to_str().unwrap()]);
    let img = load_png(&restored.join("poor_0000.png")).unwrap();
    assert_eq!(img.shape(), load_png(&poor).unwrap().shape());

    let classes = String::from_utf8(ok(&["classify", "--ckpt", l, "--manifest", tm]).stdout).unwrap();
    assert_eq!(classes.lines().next().unwrap(), "path,domain,label,predicted,p0,p1");
    assert_eq!(classes.lines().count(), 7);

    let report = String::from_utf8(ok(&["eval", "--model", &format!("r2c={l}"), "--manifest", tm]).stdout).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], EVAL_HEADER);
    assert!(lines[1].starts_with("r2c,2,"), "{report}");

    let bundle = t.path().join("bundle");
    let b = bundle.to_str().unwrap();
    let export = |id: &str| {
        r2c(&["export-study", "--study-id", id, "--manifest", tm, "--model", &format!("r2c-a={l}@1"), "--model", &format!("r2c-b={l}"), "--limit", "2", "--seed", "4", "--out", b])
    };
    assert!(export("s1").status.success());
    let study: serde_json::Value = serde_json::from_slice(&fs::read(bundle.join("study.json")).unwrap()).unwrap();
    assert_eq!(study["queries"].as_array().unwrap().len(), 2);
    assert_eq!(study["queries"][0]["images"].as_array().unwrap().len(), 3);
    assert!(!study.to_string().contains("r2c-"));
    assert!(!export("s2").status.success());
}

#[test]
fn missing_or_empty_manifest_fails() {
    let t = tempfile::tempdir().unwrap();
    let missing = t.path().join("none.csv");
    let out = r2c(&["train", "--manifest", missing.to_str().unwrap(), "--ckpt-dir", "x", "--seed", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("none.csv"));

    let empty = t.path().join("empty.csv");
    fs::write(&empty, "path,domain,label\n").unwrap();
    let ckpt = t.path().join("ck.r2c");
    let out = r2c(&["eval", "--model", &format!("m={}", ckpt.display()), "--manifest", empty.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no samples"));
}

#[test]
fn train_requires_a_seed() {
    let out = r2c(&["train", "--manifest", "m.csv", "--ckpt-dir", "c"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}
