use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::CommandFactory;
use serde_json::Value;

use super::{execute, Cli};
use metricmap::trainer::TrainConfig;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn cli(args: &[&str]) -> Result<(), (u8, String)> {
    execute(std::iter::once("metricmap").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn failure(args: &[&str]) -> (u8, String) {
    cli(args).expect_err("command should fail")
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let (code, msg) = failure(&["train", "--data", "x", "--out", "y", "--bogus"]);
    assert_eq!(code, 2);
    assert!(msg.starts_with("error[usage]"), "{msg}");
    assert!(msg.contains("--bogus"), "{msg}");
    assert_eq!(failure(&["frobnicate"]).0, 2);
    assert_eq!(failure(&["train", "--data", "x"]).0, 2);
}

#[test]
fn documented_defaults_match_training_defaults() {
    let mut cmd = Cli::command();
    let help = cmd.find_subcommand_mut("train").unwrap().render_long_help().to_string();
    let d = TrainConfig::default();
    for (flag, value) in [
        ("--epochs", d.epochs.to_string()),
        ("--batch", d.batch.to_string()),
        ("--lr", d.lr.to_string()),
        ("--lambda", d.lambda.to_string()),
        ("--w1", format!("{:.1}", d.w1)),
        ("--w2", d.w2.to_string()),
        ("--seed", d.seed.to_string()),
        ("--mu", format!("{:.1}", d.mu)),
        ("--mu1", format!("{:.1}", d.mu1)),
        ("--k", format!("{:.1}", d.k)),
    ] {
        let block = help
            .split(&format!("{flag} <"))
            .nth(1)
            .unwrap_or_else(|| panic!("{flag} missing"));
        let block = block.split("\n      --").next().unwrap();
        assert!(block.contains(&format!("[default: {value}]")), "{flag}: {block}");
    }
    assert_eq!(
        (d.epochs, d.batch, d.lr, d.lambda, d.w1, d.w2, d.mu, d.k),
        (20, 1000, 0.002, 0.125, 1.0, 0.3, 2.0, 1.0)
    );
}

#[test]
fn errors_carry_codes_and_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.akrc");
    let train = fixture("synthetic_train.akrm");

    let (code, msg) = failure(&["train", "--data", s(&train), "--out", s(&out), "--epochs", "0"]);
    assert_eq!(code, 2);
    assert!(msg.starts_with("error[invalid_config]"), "{msg}");

    let (code, _) = failure(&["train", "--data", s(&train), "--out", s(&out), "--balance", "l3"]);
    assert_eq!(code, 2);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "e0,e1,score\n1,2,3\n4,nan,5\n").unwrap();
    let (code, msg) = failure(&["train", "--data", s(&bad), "--out", s(&out)]);
    assert_eq!(code, 3);
    assert!(msg.starts_with("error[non_finite_value]"), "{msg}");

    let (code, msg) = failure(&["project", "--model", s(&train), "--data", s(&train), "--out", s(&out)]);
    assert_eq!(code, 3);
    assert!(msg.starts_with("error[bad_magic]"), "{msg}");

    let (code, msg) = failure(&[
        "eval",
        "--model",
        "/nonexistent.akrc",
        "--train",
        "x",
        "--test",
        "y",
        "--out",
        "z",
    ]);
    assert_eq!(code, 5);
    assert!(msg.starts_with("error[io]"), "{msg}");

    let (code, msg) = failure(&[
        "train",
        "--data",
        s(&train),
        "--out",
        s(&out),
        "--lr",
        "1e300",
        "--epochs",
        "1",
    ]);
    assert_eq!(code, 4, "{msg}");
    assert!(msg.starts_with("error[diverged_training]"), "{msg}");
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

// Cell centres recomputed from the exported box and resolution.
fn centres(g: &Value) -> Vec<([f64; 2], Option<f64>)> {
    let b: Vec<f64> = g["bbox"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let (nw, nh) = (g["nw"].as_u64().unwrap() as usize, g["nh"].as_u64().unwrap() as usize);
    let values = g["values"].as_array().unwrap();
    let mut out = Vec::new();
    for j in 0..nh {
        for i in 0..nw {
            let x = b[0] + ((i as f64 + 0.5) / nw as f64) * (b[1] - b[0]);
            let y = b[2] + ((j as f64 + 0.5) / nh as f64) * (b[3] - b[2]);
            out.push(([x, y], values[j * nw + i].as_f64()));
        }
    }
    out
}

#[test]
fn fixture_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    let (train, test) = (fixture("synthetic_train.akrm"), fixture("synthetic_test.akrm"));
    let model = d("m.akrc");
    let model = s(&model);

    let started = Instant::now();
    cli(&["train", "--data", s(&train), "--out", model]).unwrap();
    cli(&[
        "eval",
        "--model",
        model,
        "--train",
        s(&train),
        "--test",
        s(&test),
        "--out",
        s(&d("eval.json")),
    ])
    .unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "train + eval took {elapsed:.1}s");

    let history = read_json(&d("m.history.json"));
    assert_eq!(history["epochs"].as_array().unwrap().len(), 20);
    let report = read_json(&d("eval.json"));
    let mae = report[0]["out_of_sample"]["mae"].as_f64().unwrap();
    assert!(mae.is_finite() && mae > 0.0);
    assert_eq!(report[0]["anchors"], 2000);

    cli(&["project", "--model", model, "--data", s(&test), "--out", s(&d("p.csv"))]).unwrap();
    let text = std::fs::read_to_string(d("p.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("id,x,y,score"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 500);
    assert_eq!(rows[0][0], "test-00000");
    for r in &rows {
        let (x, y): (f64, f64) = (r[1].parse().unwrap(), r[2].parse().unwrap());
        assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
    }

    // Coarse grid over a quarter of the map against the fine grid over the
    // whole map: 10 x 10 cell centres coincide exactly.
    let (g30, g500, png) = (d("g30.json"), d("g500.json"), d("g500.png"));
    cli(&[
        "contour",
        "--model",
        model,
        "--data",
        s(&train),
        "--out",
        s(&g30),
        "--grid",
        "30",
        "--bbox",
        "0,0.5,0,0.5",
    ])
    .unwrap();
    cli(&[
        "contour",
        "--model",
        model,
        "--data",
        s(&train),
        "--out",
        s(&g500),
        "--image",
        s(&png),
    ])
    .unwrap();
    let fine: HashMap<(u64, u64), Option<f64>> = centres(&read_json(&g500))
        .into_iter()
        .map(|(p, v)| ((p[0].to_bits(), p[1].to_bits()), v))
        .collect();
    let mut matched = 0;
    for (p, v) in centres(&read_json(&g30)) {
        if let Some(w) = fine.get(&(p[0].to_bits(), p[1].to_bits())) {
            assert_eq!(v.map(f64::to_bits), w.map(f64::to_bits), "at {p:?}");
            matched += 1;
        }
    }
    assert_eq!(matched, 100);
    assert_eq!(&std::fs::read(&png).unwrap()[1..4], b"PNG");
}
