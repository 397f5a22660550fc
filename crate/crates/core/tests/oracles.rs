//! Library results checked against small, independent reference
//! implementations written directly from the defining formulas.

#![allow(clippy::needless_range_loop, clippy::type_complexity)]

use metricmap::benchmark::{trustworthiness, Pca};
use metricmap::contour::{grid_eval, BBox, ContourEstimator, Frame, KernelSpec};
use metricmap::kernels::{log_spaced, loocv_bandwidth};
use metricmap::model::{init_model, KernelParams, Mode, BN_EPSILON};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(r: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| r.random_range(-1.0..1.0))
}

// Plain-loop network evaluation, batch statistics computed per column.
fn oracle_forward(model: &metricmap::model::ModelState, x: &Array2<f64>, train: bool) -> Vec<Vec<f64>> {
    let mut act: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    for layer in &model.mlp.layers {
        let (out, inp) = layer.weight.dim();
        let mut z = vec![vec![0.0; out]; act.len()];
        for (b, a) in act.iter().enumerate() {
            for o in 0..out {
                let mut acc = layer.bias[o];
                for i in 0..inp {
                    acc += layer.weight[(o, i)] * a[i];
                }
                z[b][o] = acc;
            }
        }
        if let Some(bn) = &layer.norm {
            for o in 0..out {
                let (mean, var) = if train {
                    let m = z.iter().map(|r| r[o]).sum::<f64>() / z.len() as f64;
                    let v = z.iter().map(|r| (r[o] - m).powi(2)).sum::<f64>() / z.len() as f64;
                    (m, v)
                } else {
                    (bn.running_mean[o], bn.running_var[o])
                };
                for row in z.iter_mut() {
                    let xhat = (row[o] - mean) / (var + BN_EPSILON).sqrt();
                    row[o] = (bn.scale[o] * xhat + bn.shift[o]).max(0.0);
                }
            }
        }
        act = z;
    }
    act
}

#[test]
fn forward_matches_layer_by_layer_oracle() {
    let mut r = rng(1);
    for seed in 0..5 {
        let x = random_matrix(&mut r, 12, 6);
        let mut model = init_model(6, seed).unwrap();
        // Non-trivial batch-norm parameters and running statistics.
        for layer in &mut model.mlp.layers {
            if let Some(bn) = &mut layer.norm {
                bn.scale.mapv_inplace(|_| r.random_range(0.5..1.5));
                bn.shift.mapv_inplace(|_| r.random_range(-0.3..0.3));
                bn.running_mean.mapv_inplace(|_| r.random_range(-0.2..0.2));
                bn.running_var.mapv_inplace(|_| r.random_range(0.5..2.0));
            }
        }
        for (mode, train) in [(Mode::Train, true), (Mode::Inference, false)] {
            model.mode = mode;
            let y = model.forward(x.view()).unwrap();
            let want = oracle_forward(&model, &x, train);
            for (b, row) in want.iter().enumerate() {
                for c in 0..2 {
                    assert!((y[(b, c)] - row[c]).abs() < 1e-12, "{mode:?} row {b}");
                }
            }
        }
    }
}

#[test]
fn inference_rows_are_independent() {
    let mut r = rng(2);
    let x = random_matrix(&mut r, 9, 4);
    let model = init_model(4, 3).unwrap().with_mode(Mode::Inference);
    let all = model.forward(x.view()).unwrap();
    for i in 0..9 {
        let one = model.forward(x.slice(ndarray::s![i..i + 1, ..])).unwrap();
        assert_eq!(one.row(0), all.row(i));
    }
}

fn oracle_nw(query: [f64; 2], anchors: &[[f64; 2]], values: &[f64], k: impl Fn(f64) -> f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, v) in anchors.iter().zip(values) {
        let w = k((query[0] - a[0]).powi(2) + (query[1] - a[1]).powi(2));
        num += w * v;
        den += w;
    }
    num / den
}

#[test]
fn grid_values_match_scalar_regression() {
    let mut r = rng(3);
    for trial in 0..10 {
        let m = 1 + trial % 10;
        let anchors: Vec<[f64; 2]> = (0..m)
            .map(|_| [r.random_range(-2.0..3.0), r.random_range(-1.0..1.0)])
            .collect();
        let values: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..4.0)).collect();
        let frame = Frame::from_points(&anchors).unwrap();
        let (a, b) = (r.random_range(0.5..3.0), r.random_range(0.3..1.5));
        let h = r.random_range(0.3..1.0);
        let kernels: Vec<(KernelSpec, Box<dyn Fn(f64) -> f64>)> = vec![
            (
                KernelSpec::generalized(KernelParams::from_effective(a, b)),
                Box::new(move |u: f64| 1.0 / (1.0 + a * u.powf(b))),
            ),
            (
                KernelSpec::Rbf { h },
                Box::new(move |u: f64| (-u / (2.0 * h * h)).exp()),
            ),
        ];
        for (spec, k) in kernels {
            let est = ContourEstimator::new(frame, anchors.clone(), values.clone(), spec).unwrap();
            // 100 random positions: cell centres of a 10x10 grid over a random box.
            let x0 = r.random_range(-0.2..0.5);
            let y0 = r.random_range(-0.2..0.5);
            let bbox = BBox::new(x0, x0 + r.random_range(0.2..0.8), y0, y0 + r.random_range(0.2..0.8)).unwrap();
            let grid = grid_eval(&est, bbox, 10, 10).unwrap();
            for j in 0..10 {
                for i in 0..10 {
                    let q = grid.position(i, j);
                    let raw = [
                        frame.min[0] + q[0] * (frame.max[0] - frame.min[0]),
                        frame.min[1] + q[1] * (frame.max[1] - frame.min[1]),
                    ];
                    let want = oracle_nw(raw, &anchors, &values, &k);
                    let got = grid.value(i, j).unwrap();
                    assert!((got - want).abs() < 1e-10, "trial {trial}: {got} vs {want}");
                }
            }
        }
    }
}

// Ranks recomputed from scratch for every pair.
fn oracle_trust(x: &Array2<f64>, y: &[[f64; 2]], n: usize) -> f64 {
    let pts = x.nrows();
    let hd = |i: usize, j: usize| -> f64 { x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b).powi(2)).sum() };
    let ld = |i: usize, j: usize| -> f64 { (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2) };
    let rank = |i: usize, j: usize, d: &dyn Fn(usize, usize) -> f64| -> usize {
        1 + (0..pts)
            .filter(|&k| k != i && k != j)
            .filter(|&k| d(i, k) < d(i, j) || (d(i, k) == d(i, j) && k < j))
            .count()
    };
    let mut total = 0usize;
    for i in 0..pts {
        for j in 0..pts {
            if j == i {
                continue;
            }
            let r_low = rank(i, j, &ld);
            let r_high = rank(i, j, &hd);
            if r_low <= n && r_high > n {
                total += r_high - n;
            }
        }
    }
    let (nf, pf) = (n as f64, pts as f64);
    1.0 - 2.0 / (pf * nf * (2.0 * pf - 3.0 * nf - 1.0)) * total as f64
}

#[test]
fn trustworthiness_matches_brute_force() {
    let mut r = rng(4);
    for trial in 0..100 {
        let pts = r.random_range(6..=50);
        let d = r.random_range(2..=6);
        let max_n = ((2 * pts - 2) / 3).min(10).min(pts - 1);
        let n = r.random_range(1..=max_n);
        let mut x = random_matrix(&mut r, pts, d);
        if trial % 5 == 0 {
            // Coarse values force distance ties.
            x.mapv_inplace(|v| (v * 2.0).round());
        }
        let y: Vec<[f64; 2]> = (0..pts)
            .map(|_| [r.random_range(0.0..1.0), r.random_range(0.0..1.0)])
            .collect();
        let got = trustworthiness(x.view(), &y, n).unwrap();
        assert_eq!(got, oracle_trust(&x, &y, n), "trial {trial}: N={pts} n={n}");
    }
}

// Cyclic Jacobi eigenvalue iteration for a symmetric matrix.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

#[test]
fn pca_reconstruction_is_optimal_rank_two() {
    let mut r = rng(5);
    for _ in 0..5 {
        let (n, d) = (20, 5);
        let x = random_matrix(&mut r, n, d);
        let pca = Pca::fit(x.view()).unwrap();
        let y = pca.transform(x.view()).unwrap();
        let mut err = 0.0;
        for i in 0..n {
            for c in 0..d {
                let rec = pca.mean[c] + y[i][0] * pca.components[0][c] + y[i][1] * pca.components[1][c];
                err += (x[(i, c)] - rec).powi(2);
            }
        }
        let mean: Vec<f64> = (0..d).map(|c| x.column(c).sum() / n as f64).collect();
        let scatter: Vec<Vec<f64>> = (0..d)
            .map(|a| {
                (0..d)
                    .map(|b| (0..n).map(|i| (x[(i, a)] - mean[a]) * (x[(i, b)] - mean[b])).sum())
                    .collect()
            })
            .collect();
        let best: f64 = jacobi_eigenvalues(scatter)[2..].iter().sum();
        assert!((err - best).abs() < 1e-8, "{err} vs {best}");

        let dot: f64 = pca.components[0]
            .iter()
            .zip(&pca.components[1])
            .map(|(a, b)| a * b)
            .sum();
        assert!(dot.abs() < 1e-12);
        for comp in &pca.components {
            let lead = comp.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap();
            assert!(lead > 0.0);
        }
    }
}

#[test]
fn loocv_matches_brute_force() {
    let mut r = rng(6);
    for _ in 0..10 {
        let m = r.random_range(3..40);
        let pts: Vec<[f64; 2]> = (0..m)
            .map(|_| [r.random_range(0.0..1.0), r.random_range(0.0..1.0)])
            .collect();
        let vals: Vec<f64> = pts
            .iter()
            .map(|p| (3.0 * p[0]).sin() + p[1] + r.random_range(-0.1..0.1))
            .collect();
        let cands = log_spaced(0.02, 1.0, 12);
        let sel = loocv_bandwidth(&pts, &vals, &cands).unwrap();
        let mut scores = Vec::new();
        for &h in &cands {
            let mut total = 0.0;
            for j in 0..m {
                let (mut num, mut den) = (0.0, 0.0);
                for k in (0..m).filter(|&k| k != j) {
                    let u = (pts[j][0] - pts[k][0]).powi(2) + (pts[j][1] - pts[k][1]).powi(2);
                    let w = (-u / (2.0 * h * h)).exp();
                    num += w * vals[k];
                    den += w;
                }
                total += if den > 1e-300 {
                    (vals[j] - num / den).powi(2)
                } else {
                    f64::INFINITY
                };
            }
            scores.push(total / m as f64);
        }
        for (a, b) in sel.cv_scores.iter().zip(&scores) {
            assert!(a == b || (a - b).abs() <= 1e-12 * b.abs());
        }
        let best = (0..cands.len())
            .filter(|&i| scores[i].is_finite())
            .min_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)))
            .unwrap();
        assert_eq!(sel.h, cands[best]);
    }
}
