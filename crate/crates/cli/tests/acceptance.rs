//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use metricmap::benchmark::{parse_method_list, project, run_benchmark, summarize, trustworthiness, MethodSummary};
use metricmap::contour::{grid_eval, normalize_projection, BBox, ContourEstimator, Frame, KernelSpec};
use metricmap::dataio::{
    decode_checkpoint, decode_dataset, encode_checkpoint, encode_dataset, load_checkpoint, load_dataset,
};
use metricmap::model::{init_model, KernelParams, Mode};
use metricmap::synthetic::{synthetic_task, SyntheticSpec};
use metricmap::trainer::{grad_check, TrainConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_metricmap")
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/golden")
        .join(name)
}

fn gradient_correctness() -> Outcome {
    let started = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(2024);
    let x = Array2::from_shape_fn((64, 8), |_| r.random_range(-1.0..1.0));
    let s: Vec<f64> = (0..64).map(|_| r.random_range(0.5..2.5)).collect();
    let val: Vec<bool> = (0..64).map(|i| i % 5 == 0).collect();
    let mut model = init_model(8, 1).map_err(|e| e.to_string())?;
    model.kernel = KernelParams::from_effective(1.7, 0.8);
    let cfg = TrainConfig {
        batch: 64,
        ..Default::default()
    };
    let rep = grad_check(&model, x.view(), &s, &val, &cfg, 1e-4, 1e-3).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    check(
        rep.passed() && rep.checked == model.num_params() && secs < 60.0,
        format!(
            "{}/{} parameters, max relative error {:.2e}, {:.1}s",
            rep.checked - rep.offending.len(),
            model.num_params(),
            rep.max_rel_error,
            secs
        ),
    )
}

fn nw_oracle() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let m = 1 + trial % 10;
        let anchors: Vec<[f64; 2]> = (0..m)
            .map(|_| [r.random_range(-3.0..3.0), r.random_range(-2.0..2.0)])
            .collect();
        let values: Vec<f64> = (0..m).map(|_| r.random_range(-2.0..5.0)).collect();
        let frame = Frame::from_points(&anchors).map_err(|e| e.to_string())?;
        let (a, b) = (r.random_range(0.3..4.0), r.random_range(0.2..2.0));
        let kernel = KernelSpec::generalized(KernelParams::from_effective(a, b));
        let est = ContourEstimator::new(frame, anchors.clone(), values.clone(), kernel).map_err(|e| e.to_string())?;
        let x0 = r.random_range(-0.3..0.6);
        let y0 = r.random_range(-0.3..0.6);
        let bbox = BBox::new(x0, x0 + r.random_range(0.1..0.9), y0, y0 + r.random_range(0.1..0.9))
            .map_err(|e| e.to_string())?;
        let grid = grid_eval(&est, bbox, 10, 10).map_err(|e| e.to_string())?;
        for j in 0..10 {
            for i in 0..10 {
                let q = grid.position(i, j);
                let p = [
                    frame.min[0] + q[0] * (frame.max[0] - frame.min[0]),
                    frame.min[1] + q[1] * (frame.max[1] - frame.min[1]),
                ];
                let (mut num, mut den) = (0.0, 0.0);
                for (c, v) in anchors.iter().zip(&values) {
                    let u = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
                    let w = 1.0 / (1.0 + a * u.powf(b));
                    num += w * v;
                    den += w;
                }
                worst = worst.max((grid.value(i, j).unwrap_or(f64::NAN) - num / den).abs());
            }
        }
    }
    check(
        worst < 1e-10,
        format!("20 x 100 positions, max abs difference {worst:.2e}"),
    )
}

fn brute_force_trust(x: &Array2<f64>, y: &[[f64; 2]], n: usize) -> f64 {
    let pts = x.nrows();
    let hd = |i: usize, j: usize| -> f64 { x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b).powi(2)).sum() };
    let ld = |i: usize, j: usize| (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
    let mut total = 0usize;
    for i in 0..pts {
        let mut by_high: Vec<usize> = (0..pts).filter(|&k| k != i).collect();
        by_high.sort_by(|&a, &b| hd(i, a).total_cmp(&hd(i, b)).then(a.cmp(&b)));
        let mut by_low = by_high.clone();
        by_low.sort_by(|&a, &b| ld(i, a).total_cmp(&ld(i, b)).then(a.cmp(&b)));
        for &j in &by_low[..n] {
            let rank = 1 + by_high.iter().position(|&k| k == j).unwrap();
            total += rank.saturating_sub(n);
        }
    }
    let (nf, pf) = (n as f64, pts as f64);
    1.0 - 2.0 / (pf * nf * (2.0 * pf - 3.0 * nf - 1.0)) * total as f64
}

fn trust_oracle() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..100 {
        let pts = r.random_range(8..=50);
        let d = r.random_range(2..=5);
        let n = r.random_range(1..=((2 * pts - 2) / 3).min(10));
        let mut x = Array2::from_shape_fn((pts, d), |_| r.random_range(-1.0..1.0));
        if trial % 4 == 0 {
            x.mapv_inplace(|v: f64| (v * 3.0).round());
        }
        let y: Vec<[f64; 2]> = (0..pts)
            .map(|_| [r.random_range(0.0..1.0), r.random_range(0.0..1.0)])
            .collect();
        let got = trustworthiness(x.view(), &y, n).map_err(|e| e.to_string())?;
        let want = brute_force_trust(&x, &y, n);
        if got != want {
            return Err(format!("instance {trial} (N={pts}, n={n}): {got} vs {want}"));
        }
    }
    Ok("100 instances, exact equality".into())
}

struct SyntheticResults {
    medians: HashMap<String, MethodSummary>,
    ordering_seconds: f64,
}

impl SyntheticResults {
    fn get(&self, method: &str) -> Result<&MethodSummary, String> {
        self.medians
            .get(method)
            .ok_or_else(|| format!("no result for {method}"))
    }
}

fn run_synthetic() -> Result<SyntheticResults, String> {
    let task = synthetic_task(&SyntheticSpec::default()).map_err(|e| e.to_string())?;
    let seeds: Vec<u64> = (0..5).collect();
    let base = TrainConfig::default();
    let mut medians = HashMap::new();
    let mut run = |list: &str| -> Result<f64, String> {
        let started = Instant::now();
        let methods = parse_method_list(list).map_err(|e| e.to_string())?;
        let reports = run_benchmark(&task.train, &task.test, &methods, &seeds, &base).map_err(|e| e.to_string())?;
        for s in summarize(&reports) {
            eprintln!("  {:<36} median out mae {:.4} rmse {:.4}", s.method, s.mae, s.rmse);
            medians.insert(s.method.clone(), s);
        }
        Ok(started.elapsed().as_secs_f64())
    };
    let ordering_seconds = run("akrmap,akrmap_no_kr(silverman),pca_rbf(silverman)")?;
    run("akrmap_no_gk,akrmap(w1=0),akrmap(w2=0),pca_rbf(silverman,scale=0.1)")?;
    Ok(SyntheticResults {
        medians,
        ordering_seconds,
    })
}

fn ordering(r: &SyntheticResults) -> Outcome {
    let ak = r.get("akrmap")?.mae;
    let no_kr = r.get("akrmap_no_kr")?.mae;
    let pca = r.get("pca_rbf(silverman)")?.mae;
    check(
        ak <= 0.9 * no_kr && ak <= 0.9 * pca && r.ordering_seconds < 300.0,
        format!(
            "median out mae akrmap {ak:.4}, akrmap_no_kr {no_kr:.4} ({:+.1}%), pca_rbf {pca:.4} ({:+.1}%), need <= -10%; {:.0}s",
            100.0 * (ak / no_kr - 1.0),
            100.0 * (ak / pca - 1.0),
            r.ordering_seconds
        ),
    )
}

fn ablation(r: &SyntheticResults) -> Outcome {
    let ak = r.get("akrmap")?.mae;
    let no_gk = r.get("akrmap_no_gk")?.mae;
    let no_kr = r.get("akrmap_no_kr")?.mae;
    check(
        ak <= no_gk && no_gk <= no_kr,
        format!("median out mae akrmap {ak:.4}, akrmap_no_gk {no_gk:.4}, akrmap_no_kr {no_kr:.4}"),
    )
}

fn weighting(r: &SyntheticResults) -> Outcome {
    let full = r.get("akrmap")?.mae;
    let mut notes = Vec::new();
    let mut hard_fail = false;
    let mut report_only = false;
    for name in ["akrmap(w1=0)", "akrmap(w2=0)"] {
        let v = r.get(name)?.mae;
        let margin = v / full - 1.0;
        if margin < -0.10 {
            hard_fail = true;
        }
        if margin.abs() < 0.05 || margin < 0.0 {
            report_only = true;
        }
        notes.push(format!("{name} {v:.4} ({:+.1}%)", 100.0 * margin));
    }
    let detail = format!(
        "akrmap {full:.4}; {}{}",
        notes.join(", "),
        if report_only {
            " [report-only: margin under 5% or degenerate setting within 10%]"
        } else {
            ""
        }
    );
    check(!hard_fail, detail)
}

fn pathology(r: &SyntheticResults) -> Outcome {
    let h = r.get("pca_rbf(silverman)")?;
    let small = r.get("pca_rbf(silverman,scale=0.1)")?;
    check(
        small.mae > h.mae && small.rmse > h.rmse,
        format!(
            "h_silverman mae {:.4} rmse {:.4}; 0.1 h_silverman mae {:.4} rmse {:.4}",
            h.mae, h.rmse, small.mae, small.rmse
        ),
    )
}

fn train_deterministic(out: &std::path::Path) -> Result<Vec<u8>, String> {
    let status = Command::new(bin())
        .args(["train", "--deterministic", "--data"])
        .arg(fixture("synthetic_train.akrm"))
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("train exited with {status}"));
    }
    std::fs::read(out).map_err(|e| e.to_string())
}

fn determinism(dir: &std::path::Path) -> Outcome {
    let a = train_deterministic(&dir.join("a.akrc"))?;
    let b = train_deterministic(&dir.join("b.akrc"))?;
    check(
        a == b,
        format!("two checkpoints of {} bytes, identical: {}", a.len(), a == b),
    )
}

fn zoom_purity(dir: &std::path::Path) -> Outcome {
    let mut model = load_checkpoint(&dir.join("a.akrc")).map_err(|e| e.to_string())?;
    model.mode = Mode::Inference;
    let ds = load_dataset(&fixture("synthetic_train.akrm")).map_err(|e| e.to_string())?;
    let raw = project(&model, ds.features().view()).map_err(|e| e.to_string())?;
    let proj = normalize_projection(&raw).map_err(|e| e.to_string())?;
    let est = ContourEstimator::from_projection(&proj, ds.scores_f64(), KernelSpec::generalized(model.kernel))
        .map_err(|e| e.to_string())?;
    let full = grid_eval(&est, BBox::UNIT, 128, 128).map_err(|e| e.to_string())?;
    let mut r = ChaCha8Rng::seed_from_u64(99);
    let mut compared = 0;
    for _ in 0..20 {
        let w = 1usize << r.random_range(1..6);
        let k = [1usize, 3, 5, 7][r.random_range(0..4)];
        let (i0, j0) = (r.random_range(0..=128 - w), r.random_range(0..=128 - w));
        let f = |v: usize| v as f64 / 128.0;
        let bbox = BBox::new(f(i0), f(i0 + w), f(j0), f(j0 + w)).map_err(|e| e.to_string())?;
        let zoom = grid_eval(&est, bbox, k * w, k * w).map_err(|e| e.to_string())?;
        for a in 0..w {
            for b in 0..w {
                let (zi, zj) = (k * a + k / 2, k * b + k / 2);
                let same_pos = zoom.position(zi, zj) == full.position(i0 + a, j0 + b);
                let (u, v) = (zoom.value(zi, zj), full.value(i0 + a, j0 + b));
                if !same_pos || u.map(f64::to_bits) != v.map(f64::to_bits) {
                    return Err(format!("box {bbox:?} x{k}: cell ({a},{b}) differs: {u:?} vs {v:?}"));
                }
                compared += 1;
            }
        }
    }
    Ok(format!("20 nested boxes, {compared} coincident cells bit-identical"))
}

// Little-endian fields decoded by explicit shifts, independent of the library reader.
struct Le<'a>(&'a [u8], usize);

impl Le<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], String> {
        let s = self.0.get(self.1..self.1 + n).ok_or("unexpected end of file")?;
        self.1 += n;
        Ok(s)
    }
    fn uint(&mut self, n: usize) -> Result<u64, String> {
        Ok(self.take(n)?.iter().rev().fold(0u64, |acc, &b| (acc << 8) | b as u64))
    }
}

fn format_round_trips() -> Outcome {
    let mut notes = Vec::new();
    for name in ["small.akrm", "small.akrc"] {
        let bytes = std::fs::read(golden(name)).map_err(|e| format!("{name}: {e}"))?;
        let again = if name.ends_with("akrm") {
            encode_dataset(&decode_dataset(&bytes).map_err(|e| e.to_string())?)
        } else {
            encode_checkpoint(&decode_checkpoint(&bytes).map_err(|e| e.to_string())?)
        };
        if again != bytes {
            return Err(format!("{name}: load then save changes the bytes"));
        }
        notes.push(format!("{name} {} bytes", bytes.len()));
    }

    let path = fixture("synthetic_train.akrm");
    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    let ds = load_dataset(&path).map_err(|e| e.to_string())?;
    if encode_dataset(&ds) != bytes {
        return Err("fixture: load then save changes the bytes".into());
    }
    let mut r = Le(&bytes, 0);
    let magic = r.take(4)?.to_vec();
    let version = r.uint(4)?;
    let (n, d) = (r.uint(8)? as usize, r.uint(8)? as usize);
    if magic != b"AKRM" || version != 1 || (n, d) != (ds.n(), ds.d()) {
        return Err("fixture header disagrees with the independent reader".into());
    }
    for (i, want) in ds.x.iter().enumerate() {
        if f32::from_bits(r.uint(4)? as u32).to_bits() != want.to_bits() {
            return Err(format!("fixture feature {i} disagrees with the independent reader"));
        }
    }
    for want in &ds.scores {
        if f32::from_bits(r.uint(4)? as u32).to_bits() != want.to_bits() {
            return Err("fixture scores disagree with the independent reader".into());
        }
    }
    notes.push(format!("fixture {} bytes, both readers agree", bytes.len()));
    Ok(notes.join("; "))
}

fn main() {
    let started = Instant::now();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, outcome: Outcome| {
        match &outcome {
            Ok(d) => println!("PASS  {name}: {d}"),
            Err(d) => println!("FAIL  {name}: {d}"),
        }
        results.push((name, outcome));
    };

    report("gradient correctness", gradient_correctness());
    report("NW estimator oracle", nw_oracle());
    report("trustworthiness oracle", trust_oracle());
    report("format round-trips", format_round_trips());

    let dir = tempfile::tempdir().expect("temporary directory");
    report("deterministic training", determinism(dir.path()));
    report("zoom purity", zoom_purity(dir.path()));

    match run_synthetic() {
        Ok(r) => {
            report("synthetic ordering", ordering(&r));
            report("ablation separation", ablation(&r));
            report("train/val weighting", weighting(&r));
            report("small-bandwidth pathology", pathology(&r));
        }
        Err(e) => {
            for name in [
                "synthetic ordering",
                "ablation separation",
                "train/val weighting",
                "small-bandwidth pathology",
            ] {
                report(name, Err(e.clone()));
            }
        }
    }

    let failed: Vec<&str> = results.iter().filter(|(_, o)| o.is_err()).map(|(n, _)| *n).collect();
    println!(
        "\n{} passed, {} failed in {:.0?}",
        results.len() - failed.len(),
        failed.len(),
        Duration::from_secs(started.elapsed().as_secs())
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
