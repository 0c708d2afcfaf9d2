use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn gbe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gbe"))
        .args(args)
        .env_remove("GBE_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = gbe(args);
    assert!(
        out.status.success(),
        "gbe {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_dataset(dir: &Path) -> PathBuf {
    let out = dir.join("data");
    ok(&[
        "gen-dataset",
        "--nodes",
        "16",
        "--objects",
        "4",
        "--worlds",
        "1",
        "--unseen-worlds",
        "1",
        "--episodes-per-object",
        "2",
        "--out",
        s(&out),
    ]);
    out
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn csv_rows(p: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(p).unwrap();
    r.records().map(Result::unwrap).collect()
}

#[test]
fn gen_dataset_writes_four_splits_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let a = small_dataset(tmp.path());
    let index = json(&a.join("dataset.json"));
    let splits = index["splits"].as_object().unwrap();
    let names: Vec<&str> = splits.keys().map(String::as_str).collect();
    assert_eq!(names, ["train", "val_seen_house", "val_seen_instruction", "val_unseen_house"]);
    let seen: Vec<u64> = serde_json::from_value(index["seen_houses"].clone()).unwrap();
    let unseen: Vec<u64> = serde_json::from_value(index["unseen_houses"].clone()).unwrap();
    assert!(seen.iter().all(|w| !unseen.contains(w)));

    let m = json(&a.join("manifest.json"));
    assert_eq!(m["command"], "gen-dataset");
    assert_eq!(m["content_hash"].as_str().unwrap().len(), 64);
    assert!(m["outputs"].as_array().unwrap().len() >= 5);

    let b = tmp.path().join("again");
    ok(&[
        "gen-dataset", "--nodes", "16", "--objects", "4", "--worlds", "1", "--unseen-worlds", "1",
        "--episodes-per-object", "2", "--out", s(&b),
    ]);
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
}

#[test]
fn seen_instruction_episodes_reuse_training_instructions() {
    let tmp = TempDir::new().unwrap();
    let d = small_dataset(tmp.path());
    let train = json(&d.join("splits/train.json"));
    let seen = json(&d.join("splits/val_seen_instruction.json"));
    let train_instr: Vec<_> = train.as_array().unwrap().iter().map(|e| e["instruction"].clone()).collect();
    for e in seen.as_array().unwrap() {
        assert!(train_instr.contains(&e["instruction"]));
    }
}

#[test]
fn train_then_eval_round_trip() {
    let tmp = TempDir::new().unwrap();
    let d = small_dataset(tmp.path());
    let run = tmp.path().join("run");
    ok(&["train", "--dataset", s(&d), "--iterations", "3", "--eval-every", "2", "--lr", "1e-3", "--out", s(&run)]);
    for f in ["checkpoint.json", "train_config.json", "curve.csv", "manifest.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let curve = csv_rows(&run.join("curve.csv"));
    assert_eq!(curve.len(), 3);
    assert!(curve[0][3].is_empty() && !curve[1][3].is_empty());
    let header = csv::Reader::from_path(run.join("curve.csv")).unwrap().headers().unwrap().clone();
    assert_eq!(header.iter().collect::<Vec<_>>(), ["iteration", "L_nav", "L_loc", "eval_SR", "eval_SPL", "eval_SFPL"]);

    let again = tmp.path().join("run2");
    ok(&["train", "--dataset", s(&d), "--iterations", "3", "--eval-every", "2", "--lr", "1e-3", "--out", s(&again)]);
    for f in ["checkpoint.json", "manifest.json"] {
        assert_eq!(fs::read(run.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }

    let ev = tmp.path().join("eval");
    ok(&["eval", "--dataset", s(&d), "--checkpoint", s(&run.join("checkpoint.json")), "--out", s(&ev)]);
    let rows = csv_rows(&ev.join("eval.csv"));
    let header = csv::Reader::from_path(ev.join("eval.csv")).unwrap().headers().unwrap().clone();
    assert_eq!(
        header.iter().collect::<Vec<_>>(),
        ["split", "episode", "NE", "OSR", "SR", "SPL", "SFPL", "sfpl_splstyle"]
    );
    let aggregates: Vec<_> = rows.iter().filter(|r| &r[1] == "aggregate").collect();
    assert_eq!(aggregates.len(), 3);
    for r in &aggregates {
        let v: Vec<f64> = (2..8).map(|i| r[i].parse().unwrap()).collect();
        let (osr, sr, spl, sfpl) = (v[1], v[2], v[3], v[4]);
        assert!(spl <= sr && sr <= osr && sfpl <= sr);
    }
    let m = json(&ev.join("manifest.json"));
    assert!(m["inputs"].as_array().unwrap().iter().any(|i| i["path"] == "checkpoint.json"));
}

#[test]
fn ablation_flags_reach_the_training_config() {
    let tmp = TempDir::new().unwrap();
    let d = small_dataset(tmp.path());
    let run = tmp.path().join("ablate");
    let out = ok(&[
        "train", "--dataset", s(&d), "--iterations", "1", "--no-ge", "--zero-vision", "--zero-language",
        "--granularity", "1", "--out", s(&run),
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda = (0.5, 0.25, 0)"));
    let cfg = json(&run.join("train_config.json"));
    assert_eq!(cfg["weights"]["ge"], 0.0);
    assert_eq!(cfg["modality"]["vision"], false);
    assert_eq!(cfg["modality"]["language"], false);
    let m = json(&run.join("manifest.json"));
    assert_eq!(m["config"]["granularity"], "1");
    assert_eq!(m["config"]["weights"]["ge"], 0.0);
}

#[test]
fn teacher_and_random_baselines() {
    let tmp = TempDir::new().unwrap();
    let d = small_dataset(tmp.path());
    let t = tmp.path().join("teacher");
    ok(&["eval", "--dataset", s(&d), "--agent", "teacher", "--split", "val_unseen_house", "--out", s(&t)]);
    let rows = csv_rows(&t.join("eval.csv"));
    let agg = rows.iter().find(|r| &r[1] == "aggregate").unwrap();
    assert_eq!((&agg[4], &agg[5]), ("1", "1"));

    let r = tmp.path().join("random");
    ok(&["baseline-random", "--dataset", s(&d), "--split", "val-unseen-house,val_seen_house", "--seed", "4", "--out", s(&r)]);
    let rows = csv_rows(&r.join("eval.csv"));
    assert_eq!(rows.iter().filter(|r| &r[1] == "aggregate").count(), 2);
    let traj = json(&r.join("trajectories.json"));
    assert!(traj["val_unseen_house"].as_array().unwrap().len() > 0);

    let far = tmp.path().join("far");
    ok(&["baseline-random", "--dataset", s(&d), "--min-path-length", "1000", "--split", "val_unseen_house", "--out", s(&far)]);
    let rows = csv_rows(&far.join("eval.csv"));
    assert_eq!(rows.len(), 1, "only the aggregate row remains");
}

#[test]
fn out_dir_defaults_to_environment_variable() {
    let tmp = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gbe"))
        .args(["gen-world", "--seed", "3", "--nodes", "12", "--objects", "2", "--regions", "2"])
        .env("GBE_OUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let dir = tmp.path().join("gen-world");
    assert!(dir.join("manifest.json").is_file());
    let worlds: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("world-"))
        .collect();
    assert_eq!(worlds.len(), 1);
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let code = |o: Output| o.status.code().unwrap();
    assert_eq!(code(gbe(&["--help"])), 0);
    assert_eq!(code(gbe(&["no-such-command"])), 1);
    assert_eq!(code(gbe(&["gen-dataset", "--granularity", "9", "--out", s(tmp.path())])), 1);
    assert_eq!(code(gbe(&["gen-world", "--nodes", "1", "--out", s(tmp.path())])), 1);
    let missing = tmp.path().join("nope");
    assert_eq!(code(gbe(&["train", "--dataset", s(&missing)])), 1);

    let d = small_dataset(tmp.path());
    assert_eq!(code(gbe(&["eval", "--dataset", s(&d), "--out", s(tmp.path())])), 1);
    let nan = tmp.path().join("nan");
    let out = gbe(&["train", "--dataset", s(&d), "--iterations", "3", "--lr", "1e300", "--out", s(&nan)]);
    assert_eq!(code(out), 2);
}
