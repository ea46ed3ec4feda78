use std::path::Path;
use std::process::{Command, Output};

use toric_reopt::formats;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_toric-reopt"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn binary")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    run(dir, args).status.code().expect("exit code")
}

const TINY_DECODER: &[&str] = &["--hidden-layers", "2", "--hidden-scale", "1", "--batch", "50", "--epochs", "2", "--lr", "1e-3"];

fn with<'a>(base: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    base.iter().chain(extra).copied().collect()
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        ok(dir.path(), &["gen-data", "--L", "3", "--p", "0.05", "--n", "1000", "--seed", "1", "--out", "d.tcqd", "--deterministic"]);
    }
    let read = |name: &str| dirs.each_ref().map(|d| std::fs::read(d.path().join(name)).unwrap());
    let [a, b] = read("d.tcqd");
    assert_eq!(a, b);
    let [la, lb] = read("d.tcqd.log.jsonl");
    assert_eq!(la, lb);
    let (data, header) = formats::read_dataset(&dirs[0].path().join("d.tcqd")).unwrap();
    assert_eq!((header.l, data.len()), (3, 1000));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(d, &["gen-data", "--L", "1", "--out", "x"]), 2);
    assert_eq!(code(d, &["gen-data", "--p", "2", "--out", "x"]), 2);
    assert_eq!(code(d, &["gen-data", "--out", "x", "--set", "nonsense=1"]), 2);
    assert_eq!(code(d, &["no-such-command"]), 2);
    std::fs::write(d.join("junk.tcnn"), b"not a model at all").unwrap();
    assert_eq!(code(d, &["evaluate", "--decoder", "junk.tcnn", "--out", "r.csv"]), 3);

    ok(d, &["gen-data", "--L", "3", "--n", "200", "--out", "d3.tcqd"]);
    ok(d, &["gen-data", "--L", "2", "--n", "200", "--out", "d2.tcqd"]);
    ok(d, &with(&["train-decoder", "--data", "d2.tcqd", "--out", "m2.tcnn"], TINY_DECODER));
    // dataset where a model is expected
    assert_eq!(code(d, &["evaluate", "--decoder", "d3.tcqd", "--out", "r.csv"]), 3);
    // L = 2 decoder against an L = 3 dataset
    assert_eq!(code(d, &["evaluate", "--decoder", "m2.tcnn", "--data", "d3.tcqd", "--out", "r.csv"]), 4);
    assert_eq!(code(d, &["reoptimize", "--decoder", "m2.tcnn", "--data", "d3.tcqd", "--out", "r.tcnn"]), 4);
    // non-finite learning rate drives the loss to NaN
    assert_eq!(code(d, &["train-decoder", "--data", "d2.tcqd", "--out", "nan.tcnn", "--lr", "1e300", "--epochs", "3", "--hidden-layers", "2", "--hidden-scale", "1"]), 5);
}

#[test]
fn corrupted_artifacts_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "--L", "2", "--n", "100", "--out", "d.tcqd"]);
    ok(d, &with(&["train-decoder", "--data", "d.tcqd", "--out", "m.tcnn"], TINY_DECODER));
    let mut bytes = std::fs::read(d.join("m.tcnn")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    std::fs::write(d.join("bad.tcnn"), &bytes).unwrap();
    assert_eq!(code(d, &["evaluate", "--decoder", "bad.tcnn", "--out", "r.csv", "--p-min", "0.05", "--p-max", "0.05"]), 3);
    let data = std::fs::read(d.join("d.tcqd")).unwrap();
    std::fs::write(d.join("short.tcqd"), &data[..data.len() - 9]).unwrap();
    assert_eq!(code(d, &["train-decoder", "--data", "short.tcqd", "--out", "x.tcnn"]), 3);
    assert!(!d.join("x.tcnn").exists());
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let det = "--deterministic";
    ok(d, &["gen-data", "--L", "2", "--n", "2000", "--seed", "3", "--out", "d.tcqd", det]);
    ok(d, &with(&["train-decoder", "--data", "d.tcqd", "--out", "m.tcnn", "--seed", "3", det], TINY_DECODER));
    ok(d, &["train-approx", "--L", "2", "--hidden-scale", "4", "--n-train", "2000", "--n-test", "500", "--batch", "64", "--epochs", "2", "--lr", "1e-3", "--out", "f.tcnn", det]);
    ok(d, &["reoptimize", "--decoder", "m.tcnn", "--data", "d.tcqd", "--f-model", "f.tcnn", "--epochs", "3", "--lr", "1e-3", "--batch", "100", "--out", "r.tcnn", det]);
    ok(d, &["reoptimize", "--decoder", "m.tcnn", "--data", "d.tcqd", "--epochs", "1", "--lr", "1e-4", "--batch", "100", "--out", "rx.tcnn", det]);
    let grid = ["--p-min", "0.01", "--p-max", "0.05", "--p-step", "0.02", "--trials", "4000", det];
    ok(d, &with(&["evaluate", "--decoder", "m.tcnn", "--data", "d.tcqd", "--out", "m.csv"], &grid));
    ok(d, &with(&["evaluate", "--decoder", "r.tcnn", "--out", "r.csv"], &grid));
    ok(d, &with(&["compare", "--before", "m.tcnn", "--after", "r.tcnn", "--out", "c.csv"], &grid));
    ok(d, &["export-plot", "--input", "c.csv", "--out", "c.svg", "--title", "before/after", det]);

    let m = std::fs::read_to_string(d.join("m.csv")).unwrap();
    let r = std::fs::read_to_string(d.join("r.csv")).unwrap();
    assert!(m.starts_with("p,trials,ler\n"));
    assert_eq!(m.lines().count(), 4);
    // reoptimized through the trained approximator: measurably different sweep
    assert_ne!(m, r);
    let tuned = formats::read_decoder(&d.join("r.tcnn")).unwrap();
    let reopt = tuned.meta.reopt.expect("reoptimization metadata");
    assert!(reopt.field.starts_with("approximated:"));
    let exact = formats::read_decoder(&d.join("rx.tcnn")).unwrap();
    assert_eq!(exact.meta.reopt.unwrap().field, "exact");

    let c = std::fs::read_to_string(d.join("c.csv")).unwrap();
    assert!(c.starts_with("p,before_mean,before_std,after_mean,after_std,diff_mean,diff_std\n"));
    let svg = std::fs::read_to_string(d.join("c.svg")).unwrap();
    assert!(svg.contains(&c));

    let log = std::fs::read_to_string(d.join("r.tcnn.log.jsonl")).unwrap();
    let events: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(events[0]["event"], "start");
    assert_eq!(events.iter().filter(|e| e["event"] == "epoch").count(), 3);
    assert_eq!(events.last().unwrap()["status"], 0);
    assert!(events[0]["config"].as_str().unwrap().contains("reopt_epochs = 3"));
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.cfg"), "# small\nL = 2\ndata_n = 50\nseed = 9\n").unwrap();
    ok(d, &["gen-data", "--config", "run.cfg", "--out", "a.tcqd", "--deterministic"]);
    ok(d, &["gen-data", "--L", "2", "--n", "50", "--seed", "9", "--out", "a2.tcqd", "--deterministic", "--log", "a.tcqd.log.jsonl2"]);
    let (a, ha) = formats::read_dataset(&d.join("a.tcqd")).unwrap();
    let (b, hb) = formats::read_dataset(&d.join("a2.tcqd")).unwrap();
    assert_eq!(a, b);
    // output paths are part of the stamped configuration
    assert_ne!(ha.config_hash, hb.config_hash);
    ok(d, &["gen-data", "--config", "run.cfg", "--set", "data_n=70", "--out", "c.tcqd"]);
    assert_eq!(formats::read_dataset(&d.join("c.tcqd")).unwrap().0.len(), 70);
    std::fs::write(d.join("bad.cfg"), "L = 2\nwhat = 1\n").unwrap();
    assert_eq!(code(d, &["gen-data", "--config", "bad.cfg", "--out", "x.tcqd"]), 2);
}

#[test]
fn studies_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let common = [
        "--L", "2", "--n", "100", "--seeds", "2", "--p-min", "0.05", "--p-max", "0.05", "--trials", "500",
        "--set", "decoder_hidden_layers=1", "--set", "decoder_hidden_scale=1", "--set", "decoder_epochs=1",
        "--set", "reopt_epochs=1", "--set", "decoder_batch=50", "--set", "reopt_batch=50",
    ];
    ok(d, &with(&["scaling-study", "--multipliers", "1,2", "--out", "s.csv"], &common));
    ok(d, &with(&["bias-study", "--etas", "0.5,5", "--out", "b.csv"], &common));
    let s = std::fs::read_to_string(d.join("s.csv")).unwrap();
    assert_eq!(s.lines().count(), 1 + 3);
    let b = std::fs::read_to_string(d.join("b.csv")).unwrap();
    assert!(b.starts_with("eta,p,"));
    assert_eq!(b.lines().count(), 1 + 2);
    ok(d, &["export-plot", "--input", "s.csv", "--out", "s.svg"]);
}
