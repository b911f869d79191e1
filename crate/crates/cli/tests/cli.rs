//! Drives the `dadin` binary end to end on the bundled fixture.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dadin::data::synthetic::{generate_log, SyntheticConfig};

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic")
}

fn dadin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dadin")).args(args).output().expect("spawn dadin")
}

/// Runs with the desk preset on the fixture and asserts success.
fn ok(args: &[&str], out: &Path) -> String {
    let data = fixture();
    let mut full = vec!["--preset", "desk", "--data-dir", data.to_str().unwrap(), "-o", out.to_str().unwrap()];
    full.extend_from_slice(args);
    let o = dadin(&full);
    assert!(
        o.status.success(),
        "dadin {full:?} failed:\n{}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn resample_is_deterministic_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["resample", "--seeds", "3"], &a);
    ok(&["resample", "--seeds", "3"], &b);
    for f in ["split.json", "vocab.json", "config.toml"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
    let c = dir.path().join("c");
    ok(&["resample", "--seeds", "4"], &c);
    assert_ne!(read(a.join("split.json")), read(c.join("split.json")));

    let stdout = ok(&["resample", "--a-cross", "0"], &dir.path().join("cold"));
    assert!(stdout.contains("disjoint"), "{stdout}");
}

#[test]
fn train_then_eval_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let split = dir.path().join("split");
    let train = dir.path().join("train");
    ok(&["resample"], &split);
    let stdout = ok(&["train", "--manifest", split.to_str().unwrap(), "--epochs", "1"], &train);
    assert!(stdout.contains("lambda1 1 lambda2 0.1 lambda3 0.1 alpha 0.5"), "{stdout}");
    // Training reuses the manifest unchanged.
    assert_eq!(read(split.join("split.json")), read(train.join("split.json")));
    for line in read(train.join("train_log.jsonl")).lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["kind"] == "step" || v["kind"] == "eval", "{line}");
    }

    let ckpt = train.join("model.ckpt");
    let manifest = split.to_str().unwrap();
    let e1 = dir.path().join("e1");
    let e2 = dir.path().join("e2");
    ok(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--manifest", manifest], &e1);
    ok(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--manifest", manifest], &e2);
    assert_eq!(read(e1.join("eval.json")), read(e2.join("eval.json")));
    assert_eq!(read(e1.join("eval.json")), read(train.join("eval.json")));

    let pca = dir.path().join("pca");
    ok(&["export-pca", "--checkpoint", ckpt.to_str().unwrap(), "--manifest", manifest], &pca);
    assert_eq!(read(pca.join("pca.tsv")).lines().count(), 1 + 2 * 10_000);
    let summary: serde_json::Value = serde_json::from_str(&read(pca.join("pca_summary.json"))).unwrap();
    assert!(summary["da"]["positive_distance"].as_f64().unwrap().is_finite());
}

#[test]
fn config_snapshot_replays_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    ok(&["train", "--epochs", "1", "--seeds", "2", "--lambda2", "0.3"], &first);
    let snapshot = first.join("config.toml");
    let replay = dir.path().join("replay");
    // The snapshot alone, without preset or data flags, reproduces the run.
    let o = dadin(&["train", "-c", snapshot.to_str().unwrap(), "-o", replay.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(first.join("eval.json")), read(replay.join("eval.json")));
    assert_eq!(read(first.join("model.ckpt")), read(replay.join("model.ckpt")));
    assert_eq!(read(snapshot), read(replay.join("config.toml")));
}

#[test]
fn config_file_is_layered_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.toml");
    fs::write(&file, "[weights]\nlambda2 = 0.3\nalpha = 0.7\n\n[model]\nembed_dim = 4\n").unwrap();
    let out = dir.path().join("out");
    let o = dadin(&[
        "resample",
        "-c",
        file.to_str().unwrap(),
        "--data-dir",
        fixture().to_str().unwrap(),
        "--alpha",
        "0.2",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let snap: toml::Table = toml::from_str(&read(out.join("config.toml"))).unwrap();
    let w = snap["weights"].as_table().unwrap();
    assert_eq!(w["lambda1"].as_float(), Some(1.0));
    assert_eq!(w["lambda2"].as_float(), Some(0.3));
    assert_eq!(w["alpha"].as_float(), Some(0.2));
    let m = snap["model"].as_table().unwrap();
    assert_eq!(m["embed_dim"].as_integer(), Some(4));
    // Keys the file leaves out keep the full-size defaults.
    assert_eq!(m["seqlen"].as_integer(), Some(20));
}

#[test]
fn default_weights_are_echoed_in_the_header() {
    // No data, so the run stops after the header with an error.
    let dir = tempfile::tempdir().unwrap();
    let o = dadin(&["train", "-o", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("lambda1 1 lambda2 1 lambda3 1 alpha 0.5"), "{stdout}");
    assert!(stdout.contains("d 64"), "{stdout}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("no input data"));
}

#[test]
fn ablation_of_one_variant_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ab");
    ok(&["ablate", "--variants", "DADIN++", "--seeds", "0", "--epochs", "1"], &out);
    let tsv = read(out.join("ablation.tsv"));
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines.len(), 2, "{tsv}");
    assert!(lines[1].starts_with("DADIN++\t"));
    let table: serde_json::Value = serde_json::from_str(&read(out.join("ablation.json"))).unwrap();
    assert_eq!(table["rows"].as_array().unwrap().len(), 1);
}

#[test]
fn loss_curves_write_one_file_per_setting() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lc");
    ok(&["loss-curves", "--grid", "1:1,0.5:1,0:0", "--epochs", "1"], &out);
    let mut headers = Vec::new();
    for stem in ["loss_l2-1_l3-1", "loss_l2-0.5_l3-1", "loss_l2-0_l3-0"] {
        let text = read(out.join(format!("{stem}.tsv")));
        headers.push(text.lines().next().unwrap().to_owned());
        assert!(text.lines().count() > 2);
    }
    headers.dedup();
    assert_eq!(headers.len(), 3);
    // With both domain weights at zero the objective is exactly λ1·L_y.
    let gated = read(out.join("loss_l2-0_l3-0.tsv"));
    for line in gated.lines().skip(2) {
        let cols: Vec<f64> = line.split('\t').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols[5], cols[1], "{line}");
    }
}

#[test]
fn toy_study_writes_its_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("toy");
    let o = dadin(&["toy", "--grid", "10", "--seeds", "0", "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(out.join("toy_boundary.tsv")).lines().count(), 1 + 100);
    assert_eq!(read(out.join("toy_pca.tsv")).lines().count(), 1 + 2 * 600);
    let summary = read(out.join("toy_summary.tsv"));
    assert_eq!(summary.lines().count(), 2);
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = fixture();
    let data = data.to_str().unwrap();
    let o = d.join("o");
    let o = o.to_str().unwrap();

    let unknown = dadin(&["ablate", "--variants", "NOPE", "--data-dir", data, "-o", o]);
    assert!(!unknown.status.success());
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("DADIN++"));

    let bad_weight = dadin(&["resample", "--alpha", "1.5", "--data-dir", data, "-o", o]);
    assert!(!bad_weight.status.success());

    let bad_toml = d.join("bad.toml");
    fs::write(&bad_toml, "[weights\n").unwrap();
    assert!(!dadin(&["resample", "-c", bad_toml.to_str().unwrap(), "--data-dir", data, "-o", o]).status.success());

    let missing = dadin(&["resample", "--data-dir", d.join("nowhere").to_str().unwrap(), "-o", o]);
    assert!(!missing.status.success());

    let junk = d.join("junk.ckpt");
    fs::write(&junk, "garbage\n").unwrap();
    assert!(!dadin(&["eval", "--checkpoint", junk.to_str().unwrap(), "--data-dir", data, "-o", o]).status.success());
}

#[test]
fn checkpoint_from_other_data_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let small = dir.path().join("small");
    let cfg = SyntheticConfig {
        n_users: 30,
        n_target_items: 9,
        n_source_items: 11,
        ..SyntheticConfig::default()
    };
    generate_log(&cfg).unwrap().write_csv(&small).unwrap();
    let train = dir.path().join("train");
    let o = dadin(&[
        "train", "--preset", "desk", "--epochs", "1", "--data-dir", small.to_str().unwrap(), "-o", train.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = train.join("model.ckpt");
    let e = dadin(&[
        "eval",
        "--preset",
        "desk",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data-dir",
        fixture().to_str().unwrap(),
        "-o",
        dir.path().join("e").to_str().unwrap(),
    ]);
    assert!(!e.status.success());
    assert!(String::from_utf8_lossy(&e.stderr).contains("feature layout"));
}
