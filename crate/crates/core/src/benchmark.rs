//! Evaluation harness: mapping errors, trustworthiness, the PCA baseline and
//! method-by-seed benchmark runs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::contour::{ContourEstimator, Frame, KernelSpec};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{select_bandwidth, BandwidthMethod};
use crate::model::ModelState;
use crate::par;
use crate::trainer::{train, TrainConfig};

pub const TRUST_NEIGHBORHOODS: [usize; 4] = [20, 30, 40, 50];
pub const LAMBDA_SWEEP: [f64; 4] = [0.05, 0.125, 0.25, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub mae: f64,
    /// Percent; `None` when some target is exactly zero.
    pub mape: Option<f64>,
    pub rmse: f64,
}

fn check_aligned(estimates: &[f64], targets: &[f64]) -> Result<()> {
    if estimates.is_empty() || estimates.len() != targets.len() {
        return Err(Error::InvalidInput(format!(
            "need aligned nonempty vectors, got {} estimates and {} targets",
            estimates.len(),
            targets.len()
        )));
    }
    Ok(())
}

/// Mean absolute percentage error, in percent.
pub fn mape(estimates: &[f64], targets: &[f64]) -> Result<f64> {
    check_aligned(estimates, targets)?;
    if let Some(i) = targets.iter().position(|&t| t == 0.0) {
        return Err(Error::MapeUndefined(i));
    }
    let total: f64 = estimates.iter().zip(targets).map(|(e, t)| ((e - t) / t).abs()).sum();
    Ok(100.0 * total / targets.len() as f64)
}

pub fn error_metrics(estimates: &[f64], targets: &[f64]) -> Result<ErrorMetrics> {
    check_aligned(estimates, targets)?;
    let n = targets.len() as f64;
    let mae = estimates.iter().zip(targets).map(|(e, t)| (e - t).abs()).sum::<f64>() / n;
    let mse = estimates.iter().zip(targets).map(|(e, t)| (e - t).powi(2)).sum::<f64>() / n;
    Ok(ErrorMetrics {
        mae,
        mape: mape(estimates, targets).ok(),
        rmse: mse.sqrt(),
    })
}

fn check_neighborhood(n: usize, points: usize) -> Result<()> {
    let denom = 2 * points as i64 - 3 * n as i64 - 1;
    if n == 0 || n >= points || denom <= 0 {
        return Err(Error::InvalidNeighborhood { n, points });
    }
    Ok(())
}

/// Indices of all other points ordered by distance, ties by index.
fn neighbor_order(i: usize, n: usize, dist: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut others: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (dist(j), j)).collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.into_iter().map(|(_, j)| j).collect()
}

fn sq_euclid(x: &ArrayView2<f64>, i: usize, j: usize) -> f64 {
    x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Trustworthiness `T(n)` for several neighbourhood sizes at once.
pub fn trustworthiness_multi(x: ArrayView2<f64>, y: &[[f64; 2]], ns: &[usize]) -> Result<Vec<f64>> {
    let points = x.nrows();
    if y.len() != points {
        return Err(Error::InvalidInput(format!(
            "{points} rows but {} projected points",
            y.len()
        )));
    }
    for &n in ns {
        check_neighborhood(n, points)?;
    }
    let n_max = ns.iter().copied().max().unwrap_or(0);
    // Per point: sum over 2D intruders of (rank - n), one entry per n.
    let penalties = par::map_range(points, |i| {
        let mut rank = vec![0usize; points];
        for (r, j) in neighbor_order(i, points, |j| sq_euclid(&x, i, j))
            .into_iter()
            .enumerate()
        {
            rank[j] = r + 1;
        }
        let low = neighbor_order(i, points, |j| {
            let (a, b) = (y[i], y[j]);
            (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
        });
        let low = &low[..n_max];
        ns.iter()
            .map(|&n| low[..n].iter().map(|&j| rank[j].saturating_sub(n) as u64).sum::<u64>())
            .collect::<Vec<u64>>()
    });
    Ok(ns
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let total: u64 = penalties.iter().map(|p| p[k]).sum();
            let (nf, pf) = (n as f64, points as f64);
            1.0 - 2.0 / (pf * nf * (2.0 * pf - 3.0 * nf - 1.0)) * total as f64
        })
        .collect())
}

pub fn trustworthiness(x: ArrayView2<f64>, y: &[[f64; 2]], n: usize) -> Result<f64> {
    trustworthiness_multi(x, y, &[n]).map(|v| v[0])
}

/// Top-two principal axes of a data matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit-norm components, largest-magnitude loading positive.
    pub components: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
}

impl Pca {
    pub fn fit(x: ArrayView2<f64>) -> Result<Pca> {
        let (n, d) = x.dim();
        if n < 3 {
            return Err(Error::TooFewPoints(n));
        }
        if d < 2 {
            return Err(Error::InvalidDimension(d));
        }
        let mean: Vec<f64> = (0..d).map(|c| x.column(c).sum() / n as f64).collect();
        let centered = DMatrix::from_fn(n, d, |r, c| x[(r, c)] - mean[c]);
        let cov = (centered.transpose() * &centered) / (n - 1) as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let top = eig.eigenvalues[order[0]];
        let second = eig.eigenvalues[order[1]];
        if !(top > 0.0) || second <= top * 1e-12 {
            return Err(Error::DegenerateData(format!(
                "data has rank < 2 (eigenvalues {top:e}, {second:e})"
            )));
        }
        let component = |k: usize| {
            let mut v: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
            let lead = v
                .iter()
                .copied()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                .map(|(_, l)| l)
                .unwrap_or(1.0);
            if lead < 0.0 {
                v.iter_mut().for_each(|c| *c = -*c);
            }
            v
        };
        Ok(Pca {
            mean,
            components: [component(0), component(1)],
            explained_variance: [top, second],
        })
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Vec<[f64; 2]>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                found: x.ncols(),
            });
        }
        Ok(x.rows()
            .into_iter()
            .map(|row| {
                let mut out = [0.0; 2];
                for (k, comp) in self.components.iter().enumerate() {
                    out[k] = row
                        .iter()
                        .zip(&self.mean)
                        .zip(comp)
                        .map(|((v, m), c)| (v - m) * c)
                        .sum();
                }
                out
            })
            .collect())
    }
}

pub fn pca_project(x: ArrayView2<f64>) -> Result<Vec<[f64; 2]>> {
    Pca::fit(x)?.transform(x)
}

/// Projection model's output as 2D points.
pub fn project(model: &ModelState, x: ArrayView2<f64>) -> Result<Vec<[f64; 2]>> {
    let y = model.forward(x)?;
    Ok(y.rows().into_iter().map(|r| [r[0], r[1]]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Akrmap,
    /// Neighbourhood-only projection with a Gaussian-RBF contour.
    AkrmapNoKr,
    /// Kernel frozen at the standard t-kernel.
    AkrmapNoGk,
    PcaRbf,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Akrmap => "akrmap",
            Method::AkrmapNoKr => "akrmap_no_kr",
            Method::AkrmapNoGk => "akrmap_no_gk",
            Method::PcaRbf => "pca_rbf",
        }
    }

    pub fn is_trained(&self) -> bool {
        !matches!(self, Method::PcaRbf)
    }
}

/// A benchmark method with options, written `name` or `name(arg,key=value,..)`.
///
/// `pca_rbf` and `akrmap_no_kr` take a bandwidth selector (`silverman`,
/// `alb`, `loocv`; default `silverman`) and `scale=` to multiply it. Trained
/// methods accept any training-configuration key, e.g. `akrmap(w1=0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: Method,
    pub bandwidth: BandwidthMethod,
    pub scale: f64,
    pub overrides: Vec<(String, String)>,
}

impl MethodSpec {
    pub fn new(method: Method) -> Self {
        MethodSpec {
            method,
            bandwidth: BandwidthMethod::Silverman,
            scale: 1.0,
            overrides: Vec::new(),
        }
    }

    pub fn with_override(mut self, key: &str, value: impl ToString) -> Self {
        self.overrides.push((key.to_string(), value.to_string()));
        self
    }

    fn uses_rbf(&self) -> bool {
        matches!(self.method, Method::PcaRbf | Method::AkrmapNoKr)
    }

    /// Training configuration for this method and seed.
    pub fn train_config(&self, base: &TrainConfig, seed: u64) -> Result<TrainConfig> {
        let mut table = match toml::Value::try_from(base) {
            Ok(toml::Value::Table(t)) => t,
            _ => return Err(Error::InvalidConfig("configuration is not a table".into())),
        };
        for (k, v) in &self.overrides {
            let value = match toml::from_str::<toml::Table>(&format!("v = {v}")) {
                Ok(mut t) => t.remove("v").unwrap(),
                Err(_) => toml::Value::String(v.clone()),
            };
            table.insert(k.clone(), value);
        }
        let mut cfg: TrainConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(format!("{self}: {}", e.message())))?;
        cfg.seed = seed;
        cfg.ablate_kr = self.method == Method::AkrmapNoKr;
        cfg.ablate_gk = self.method == Method::AkrmapNoGk;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut args = Vec::new();
        if self.method == Method::PcaRbf || (self.uses_rbf() && self.bandwidth != BandwidthMethod::Silverman) {
            args.push(self.bandwidth.as_str().to_string());
        }
        if self.uses_rbf() && self.scale != 1.0 {
            args.push(format!("scale={}", self.scale));
        }
        args.extend(self.overrides.iter().map(|(k, v)| format!("{k}={v}")));
        if args.is_empty() {
            write!(f, "{}", self.method.name())
        } else {
            write!(f, "{}({})", self.method.name(), args.join(","))
        }
    }
}

impl FromStr for MethodSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |msg: &str| Error::InvalidConfig(format!("method {s:?}: {msg}"));
        let (name, args) = match s.find('(') {
            Some(open) => {
                if !s.ends_with(')') {
                    return Err(bad("missing closing parenthesis"));
                }
                (&s[..open], Some(&s[open + 1..s.len() - 1]))
            }
            None => (s, None),
        };
        let method = match name.trim() {
            "akrmap" => Method::Akrmap,
            "akrmap_no_kr" => Method::AkrmapNoKr,
            "akrmap_no_gk" => Method::AkrmapNoGk,
            "pca_rbf" => Method::PcaRbf,
            _ => return Err(bad("unknown method")),
        };
        let mut spec = MethodSpec::new(method);
        for arg in args
            .into_iter()
            .flat_map(|a| a.split(','))
            .map(str::trim)
            .filter(|a| !a.is_empty())
        {
            match arg.split_once('=') {
                None if spec.uses_rbf() => spec.bandwidth = arg.parse()?,
                None => return Err(bad(&format!("unexpected argument {arg:?}"))),
                Some(("scale", v)) if spec.uses_rbf() => {
                    spec.scale = v.trim().parse().map_err(|_| bad("scale must be a number"))?;
                    if !(spec.scale > 0.0) || !spec.scale.is_finite() {
                        return Err(bad("scale must be positive"));
                    }
                }
                Some((k, v)) if method.is_trained() => {
                    spec.overrides.push((k.trim().to_string(), v.trim().to_string()))
                }
                Some(_) => return Err(bad(&format!("unexpected argument {arg:?}"))),
            }
        }
        Ok(spec)
    }
}

/// Splits a method list on commas outside parentheses.
pub fn parse_method_list(s: &str) -> Result<Vec<MethodSpec>> {
    let mut out = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(s[start..i].parse()?);
                start = i + 1;
            }
            _ => {}
        }
        if depth < 0 {
            return Err(Error::InvalidConfig(format!("unbalanced parentheses in {s:?}")));
        }
    }
    if depth != 0 {
        return Err(Error::InvalidConfig(format!("unbalanced parentheses in {s:?}")));
    }
    out.push(s[start..].parse()?);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub metric: String,
    pub seed: u64,
    pub in_sample: ErrorMetrics,
    pub out_of_sample: ErrorMetrics,
    /// `T(n)` on the out-of-sample set; sizes too large for the set are omitted.
    pub trustworthiness: BTreeMap<usize, f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    /// Global RBF bandwidth, for RBF contours.
    pub bandwidth: Option<f64>,
    /// Number of anchors in the contour estimator (training points only).
    pub anchors: usize,
    pub runtime_s: f64,
}

/// A fitted projection + contour estimator, ready to query.
pub struct FittedMethod {
    pub estimator: ContourEstimator,
    pub model: Option<ModelState>,
    pub pca: Option<Pca>,
    pub bandwidth: Option<f64>,
}

impl FittedMethod {
    pub fn project(&self, x: ArrayView2<f64>) -> Result<Vec<[f64; 2]>> {
        match (&self.model, &self.pca) {
            (Some(m), _) => project(m, x),
            (None, Some(p)) => p.transform(x),
            _ => Err(Error::InvalidInput("fitted method has no projection".into())),
        }
    }
}

fn rbf_kernel(spec: &MethodSpec, anchors: &[[f64; 2]], values: &[f64]) -> Result<(KernelSpec, f64)> {
    let sel = select_bandwidth(spec.bandwidth, anchors, values)?;
    let h = sel.h * spec.scale;
    let kernel = match sel.per_point {
        Some(per) => KernelSpec::AdaptiveRbf {
            h: per.iter().map(|v| v * spec.scale).collect(),
        },
        None => KernelSpec::Rbf { h },
    };
    Ok((kernel, h))
}

/// Estimator anchored at `anchors` with the model's own kernel.
pub fn model_estimator(model: &ModelState, anchors: Vec<[f64; 2]>, values: Vec<f64>) -> Result<ContourEstimator> {
    let frame = Frame::from_points(&anchors)?;
    ContourEstimator::new(frame, anchors, values, KernelSpec::generalized(model.kernel))
}

/// Trains or fits `spec` on `train` only.
pub fn fit_method(spec: &MethodSpec, train_set: &Dataset, base: &TrainConfig, seed: u64) -> Result<FittedMethod> {
    let x = train_set.features();
    let s = train_set.scores_f64();
    let tag = |e: Error| e.tagged(spec.to_string());
    if spec.method == Method::PcaRbf {
        let pca = Pca::fit(x.view()).map_err(tag)?;
        let anchors = pca.transform(x.view())?;
        let (kernel, h) = rbf_kernel(spec, &anchors, &s).map_err(tag)?;
        let frame = Frame::from_points(&anchors)?;
        return Ok(FittedMethod {
            estimator: ContourEstimator::new(frame, anchors, s, kernel)?,
            model: None,
            pca: Some(pca),
            bandwidth: Some(h),
        });
    }
    let cfg = spec.train_config(base, seed).map_err(tag)?;
    let (model, _) = train(x.view(), &s, &cfg).map_err(tag)?;
    let anchors = project(&model, x.view())?;
    let (estimator, bandwidth) = if spec.method == Method::AkrmapNoKr {
        let (kernel, h) = rbf_kernel(spec, &anchors, &s).map_err(tag)?;
        let frame = Frame::from_points(&anchors)?;
        (ContourEstimator::new(frame, anchors, s, kernel)?, Some(h))
    } else {
        (model_estimator(&model, anchors, s)?, None)
    };
    Ok(FittedMethod {
        estimator,
        model: Some(model),
        pca: None,
        bandwidth,
    })
}

fn estimates(est: &ContourEstimator, points: &[[f64; 2]]) -> Result<Vec<f64>> {
    let v = est.estimate_many_raw(points);
    if v.iter().any(|e| !e.is_finite()) {
        return Err(Error::EmptyNeighborhood);
    }
    Ok(v)
}

/// Scores a fitted method on its training set (in-sample) and `test`
/// (out-of-sample). The test set is only ever queried.
pub fn evaluate_fitted(fitted: &FittedMethod, train_set: &Dataset, test: &Dataset) -> Result<EvalReport> {
    let started = Instant::now();
    let xtr = train_set.features();
    let xte = test.features();
    let ytr = fitted.project(xtr.view())?;
    let yte = fitted.project(xte.view())?;
    let in_sample = error_metrics(&estimates(&fitted.estimator, &ytr)?, &train_set.scores_f64())?;
    let out_of_sample = error_metrics(&estimates(&fitted.estimator, &yte)?, &test.scores_f64())?;
    let ns: Vec<usize> = TRUST_NEIGHBORHOODS
        .iter()
        .copied()
        .filter(|&n| check_neighborhood(n, test.n()).is_ok())
        .collect();
    let trust = trustworthiness_multi(xte.view(), &yte, &ns)?;
    let (alpha, beta) = match (&fitted.model, fitted.estimator.kernel()) {
        (Some(m), _) => {
            let (a, b) = m.kernel.effective();
            (Some(a), Some(b))
        }
        _ => (None, None),
    };
    Ok(EvalReport {
        method: String::new(),
        metric: "score".into(),
        seed: 0,
        in_sample,
        out_of_sample,
        trustworthiness: ns.into_iter().zip(trust).collect(),
        alpha,
        beta,
        bandwidth: fitted.bandwidth,
        anchors: fitted.estimator.anchors().len(),
        runtime_s: started.elapsed().as_secs_f64(),
    })
}

/// Evaluates a trained model with its learned kernel.
pub fn evaluate_model(model: &ModelState, train_set: &Dataset, test: &Dataset) -> Result<EvalReport> {
    let x = train_set.features();
    let anchors = project(model, x.view())?;
    let fitted = FittedMethod {
        estimator: model_estimator(model, anchors, train_set.scores_f64())?,
        model: Some(model.clone()),
        pca: None,
        bandwidth: None,
    };
    let mut report = evaluate_fitted(&fitted, train_set, test)?;
    report.method = "akrmap".into();
    report.seed = model.seed;
    Ok(report)
}

/// One row per method and seed, in method-major order.
pub fn run_benchmark(
    train_set: &Dataset,
    test: &Dataset,
    methods: &[MethodSpec],
    seeds: &[u64],
    base: &TrainConfig,
) -> Result<Vec<EvalReport>> {
    if train_set.d() != test.d() {
        return Err(Error::DimensionMismatch {
            expected: train_set.d(),
            found: test.d(),
        });
    }
    let cells: Vec<(&MethodSpec, u64)> = methods
        .iter()
        .flat_map(|m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    par::map_slice(&cells, |&(spec, seed)| {
        let started = Instant::now();
        let fitted = fit_method(spec, train_set, base, seed)?;
        let mut report = evaluate_fitted(&fitted, train_set, test).map_err(|e| e.tagged(spec.to_string()))?;
        report.method = spec.to_string();
        report.seed = seed;
        report.runtime_s = started.elapsed().as_secs_f64();
        Ok(report)
    })
    .into_iter()
    .collect()
}

/// Benchmarks `akrmap` across the trade-off sweep of `lambda`.
pub fn lambda_sweep(train_set: &Dataset, test: &Dataset, seeds: &[u64], base: &TrainConfig) -> Result<Vec<EvalReport>> {
    let methods: Vec<MethodSpec> = LAMBDA_SWEEP
        .iter()
        .map(|&l| MethodSpec::new(Method::Akrmap).with_override("lambda", l))
        .collect();
    run_benchmark(train_set, test, &methods, seeds, base)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => values[n / 2],
        _ => 0.5 * (values[n / 2 - 1] + values[n / 2]),
    }
}

/// Median out-of-sample metrics per method, in first-seen order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub seeds: usize,
    pub mae: f64,
    pub rmse: f64,
    pub mape: Option<f64>,
}

pub fn summarize(reports: &[EvalReport]) -> Vec<MethodSummary> {
    let mut order: Vec<&str> = Vec::new();
    for r in reports {
        if !order.contains(&r.method.as_str()) {
            order.push(&r.method);
        }
    }
    order
        .into_iter()
        .map(|m| {
            let rows: Vec<&EvalReport> = reports.iter().filter(|r| r.method == m).collect();
            let pick = |f: fn(&EvalReport) -> Option<f64>| {
                let mut v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
                (v.len() == rows.len()).then(|| median(&mut v))
            };
            MethodSummary {
                method: m.to_string(),
                seeds: rows.len(),
                mae: pick(|r| Some(r.out_of_sample.mae)).unwrap(),
                rmse: pick(|r| Some(r.out_of_sample.rmse)).unwrap(),
                mape: pick(|r| r.out_of_sample.mape),
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Delimiter-separated report, one row per method and seed.
pub fn write_report_csv<W: std::io::Write>(reports: &[EvalReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "method", "metric", "seed", "in_mae", "in_mape", "in_rmse", "out_mae", "out_mape", "out_rmse",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    header.extend(TRUST_NEIGHBORHOODS.iter().map(|n| format!("T{n}")));
    header.extend(["alpha", "beta", "bandwidth", "anchors", "runtime_s"].map(String::from));
    w.write_record(&header)?;
    for r in reports {
        let mut rec = vec![
            r.method.clone(),
            r.metric.clone(),
            r.seed.to_string(),
            r.in_sample.mae.to_string(),
            opt(r.in_sample.mape),
            r.in_sample.rmse.to_string(),
            r.out_of_sample.mae.to_string(),
            opt(r.out_of_sample.mape),
            r.out_of_sample.rmse.to_string(),
        ];
        rec.extend(
            TRUST_NEIGHBORHOODS
                .iter()
                .map(|n| opt(r.trustworthiness.get(n).copied())),
        );
        rec.extend([
            opt(r.alpha),
            opt(r.beta),
            opt(r.bandwidth),
            r.anchors.to_string(),
            r.runtime_s.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn report_json(reports: &[EvalReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)?)
}
