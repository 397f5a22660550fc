//! Loss terms: Nadaraya-Watson regression error, the multi-scale
//! neighbourhood KL term and their combination.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{generalized_kernel_jet, sq_dist, MIN_DENOMINATOR};
use crate::par;

/// Floor applied to affinities inside the logarithm of the KL term.
pub const AFFINITY_FLOOR: f64 = 1e-12;
pub const ENTROPY_TOLERANCE: f64 = 1e-5;
pub const ENTROPY_MAX_ITER: usize = 50;

/// Nadaraya-Watson estimate at `query` from weighted anchors.
///
/// `kernel` receives the squared distance between the query and an anchor.
pub fn nw_estimate<K>(query: [f64; 2], anchors: &[[f64; 2]], values: &[f64], kernel: K) -> Result<f64>
where
    K: Fn(f64) -> f64,
{
    if anchors.is_empty() || anchors.len() != values.len() {
        return Err(Error::InvalidInput(format!(
            "need matching nonempty anchors/values, got {} and {}",
            anchors.len(),
            values.len()
        )));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (a, &s) in anchors.iter().zip(values) {
        let w = kernel(sq_dist(&query, a));
        num += w * s;
        den += w;
    }
    if !(den >= MIN_DENOMINATOR) {
        return Err(Error::EmptyNeighborhood);
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MseParts {
    pub mse_vl: f64,
    pub mse_tr: f64,
    pub mse_r: f64,
}

fn mean_sq(est: &[f64], target: &[f64]) -> f64 {
    est.iter().zip(target).map(|(e, t)| (e - t) * (e - t)).sum::<f64>() / est.len() as f64
}

/// Weighted train/validation regression loss `w1 * MSE_vl + w2 * MSE_tr`.
pub fn mse_r(est_tr: &[f64], s_tr: &[f64], est_vl: &[f64], s_vl: &[f64], w1: f64, w2: f64) -> Result<MseParts> {
    if est_vl.is_empty() {
        return Err(Error::SplitConfiguration("validation split is empty".into()));
    }
    if est_tr.is_empty() {
        return Err(Error::SplitConfiguration("training split is empty".into()));
    }
    if est_tr.len() != s_tr.len() || est_vl.len() != s_vl.len() {
        return Err(Error::InvalidInput("estimates and targets are misaligned".into()));
    }
    let mse_vl = mean_sq(est_vl, s_vl);
    let mse_tr = mean_sq(est_tr, s_tr);
    Ok(MseParts {
        mse_vl,
        mse_tr,
        mse_r: w1 * mse_vl + w2 * mse_tr,
    })
}

/// Pairwise affinities of one batch in both spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrices {
    pub p: Array2<f64>,
    pub q: Array2<f64>,
    pub batch_size: usize,
}

fn pairwise_sq_dists(x: ArrayView2<f64>) -> Array2<f64> {
    let b = x.nrows();
    let rows = par::map_range(b, |i| {
        let xi = x.row(i);
        (0..b)
            .map(|j| {
                xi.iter()
                    .zip(x.row(j).iter())
                    .map(|(a, c)| (a - c) * (a - c))
                    .sum::<f64>()
            })
            .collect::<Vec<f64>>()
    });
    Array2::from_shape_vec((b, b), rows.into_iter().flatten().collect()).unwrap()
}

/// Terms with `beta * d` above this are dropped (weight below 2e-22).
const EXP_CUTOFF: f64 = 50.0;

/// Conditional distribution at precision `beta` over ascending shifted
/// distances. Fills `probs` (zero past the cutoff) and returns
/// `(entropy, d entropy / d ln beta)`.
fn row_entropy(sorted: &[f64], beta: f64, probs: &mut [f64]) -> (f64, f64) {
    let live = sorted.partition_point(|&d| beta * d <= EXP_CUTOFF).max(1);
    let mut z = 0.0;
    for (p, &d) in probs[..live].iter_mut().zip(sorted) {
        *p = (-beta * d).exp();
        z += *p;
    }
    probs[live..].iter_mut().for_each(|p| *p = 0.0);
    let (mut mean_d, mut mean_d2) = (0.0, 0.0);
    for (p, &d) in probs[..live].iter_mut().zip(sorted) {
        *p /= z;
        mean_d += *p * d;
        mean_d2 += *p * d * d;
    }
    let entropy = z.ln() + beta * mean_d;
    let var = (mean_d2 - mean_d * mean_d).max(0.0);
    (entropy, -beta * beta * var)
}

/// Finds the precision whose conditional distribution has the requested
/// entropy, by Newton steps in `ln beta` kept inside a bisection bracket
/// (halved geometrically, or widened while unbounded).
/// Returns the precision and the entropy slope there.
fn solve_precision(sorted: &[f64], target: f64, start: f64, upper: f64, probs: &mut [f64]) -> (f64, f64) {
    let (mut lo, mut hi) = (0.0_f64, upper);
    let mut beta = start;
    let mut slope = 0.0;
    for _ in 0..ENTROPY_MAX_ITER {
        let (h, dh) = row_entropy(sorted, beta, probs);
        slope = dh;
        let diff = h - target;
        if diff.abs() < ENTROPY_TOLERANCE {
            return (beta, slope);
        }
        if diff > 0.0 {
            lo = beta;
        } else {
            hi = beta;
        }
        let newton = if dh < 0.0 { beta * (-diff / dh).exp() } else { f64::NAN };
        beta = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else if hi.is_finite() && lo > 0.0 {
            (lo * hi).sqrt()
        } else if hi.is_finite() {
            0.5 * hi
        } else {
            beta * 2.0
        };
    }
    row_entropy(sorted, beta, probs);
    (beta, slope)
}

/// Perplexity-free high-dimensional affinities.
///
/// For each dyadic perplexity `2^h`, `h = 1..=floor(log2(B/2))`, every row gets
/// a Gaussian conditional distribution calibrated to entropy `h ln 2`; the
/// conditionals are averaged over levels, symmetrised and normalised to sum 1.
pub fn high_dim_affinities(x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let b = x.nrows();
    if b < 4 {
        return Err(Error::InvalidInput(format!(
            "neighbourhood affinities need at least 4 rows, got {b}"
        )));
    }
    let d2 = pairwise_sq_dists(x);
    if d2.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateBatch);
    }
    let levels = ((b as f64 / 2.0).log2().floor() as usize).max(1);
    let rows = par::map_range(b, |i| {
        let row = d2.row(i);
        let mut order: Vec<usize> = (0..b).filter(|&j| j != i).collect();
        order.sort_by(|&a, &c| row[a].total_cmp(&row[c]).then(a.cmp(&c)));
        let d_min = row[order[0]];
        let sorted: Vec<f64> = order.iter().map(|&j| row[j] - d_min).collect();
        let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
        let mut probs = vec![0.0; sorted.len()];
        let mut acc = vec![0.0; b];
        let mut beta = if mean > 0.0 { 1.0 / mean } else { 1.0 };
        let mut upper = f64::INFINITY;
        for h in 1..=levels {
            let target = h as f64 * std::f64::consts::LN_2;
            let (found, slope) = solve_precision(&sorted, target, beta, upper, &mut probs);
            // Larger perplexities need smaller precisions; predict the next
            // one from the local entropy slope.
            upper = found;
            let step = if slope < 0.0 {
                (std::f64::consts::LN_2 / slope).exp()
            } else {
                0.5
            };
            beta = found * step.clamp(1e-3, 0.9);
            for (&j, &p) in order.iter().zip(&probs) {
                acc[j] += p / levels as f64;
            }
        }
        acc
    });
    let mut p = Array2::zeros((b, b));
    for (i, row) in rows.iter().enumerate() {
        for j in 0..b {
            p[[i, j]] = (row[j] + rows[j][i]) / (2.0 * b as f64);
        }
    }
    let total: f64 = p.iter().sum();
    p.mapv_inplace(|v| v / total);
    Ok(p)
}

/// Student-t affinities of the projected batch. Returns `(Q, W, Z)` where
/// `W` holds the unnormalised kernel values and `Z` their off-diagonal sum.
pub fn low_dim_affinities(y: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>, f64) {
    let b = y.nrows();
    let rows = par::map_range(b, |i| {
        (0..b)
            .map(|j| {
                if i == j {
                    0.0
                } else {
                    let dx = y[[i, 0]] - y[[j, 0]];
                    let dy = y[[i, 1]] - y[[j, 1]];
                    1.0 / (1.0 + dx * dx + dy * dy)
                }
            })
            .collect::<Vec<f64>>()
    });
    let z: f64 = rows.iter().map(|r| r.iter().sum::<f64>()).sum();
    let w = Array2::from_shape_vec((b, b), rows.into_iter().flatten().collect()).unwrap();
    let q = w.mapv(|v| v / z);
    (q, w, z)
}

fn kl_value(p: &Array2<f64>, q: &Array2<f64>) -> f64 {
    let b = p.nrows();
    let rows = par::map_range(b, |i| {
        let mut s = 0.0;
        for j in 0..b {
            let pij = p[[i, j]];
            if i != j && pij > 0.0 {
                s += pij * (pij.max(AFFINITY_FLOOR) / q[[i, j]].max(AFFINITY_FLOOR)).ln();
            }
        }
        s
    });
    rows.iter().sum()
}

/// KL divergence between the perplexity-free high-dimensional affinities of
/// `x` and the Student-t affinities of `y`.
pub fn kl_neighborhood(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<(f64, AffinityMatrices)> {
    if x.nrows() != y.nrows() || y.ncols() != 2 {
        return Err(Error::InvalidInput("batch shapes do not match".into()));
    }
    let p = high_dim_affinities(x)?;
    let (q, _, _) = low_dim_affinities(y);
    let kl = kl_value(&p, &q);
    Ok((
        kl,
        AffinityMatrices {
            batch_size: p.nrows(),
            p,
            q,
        },
    ))
}

/// KL value for fixed `P` and its gradient with respect to the projected rows.
pub(crate) fn kl_with_grad(p: &Array2<f64>, y: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let b = y.nrows();
    let (q, w, _) = low_dim_affinities(y);
    let kl = kl_value(p, &q);
    // Mass of P whose Q entry is above the floor (1 unless something underflows).
    let live: f64 = par::map_range(b, |i| {
        (0..b)
            .filter(|&j| j != i && q[[i, j]] > AFFINITY_FLOOR)
            .map(|j| p[[i, j]])
            .sum::<f64>()
    })
    .iter()
    .sum();
    let coef = |i: usize, j: usize| {
        let on = if q[[i, j]] > AFFINITY_FLOOR { 1.0 } else { 0.0 };
        p[[i, j]] * w[[i, j]] * on - live * q[[i, j]] * w[[i, j]]
    };
    let rows = par::map_range(b, |i| {
        let (mut gx, mut gy) = (0.0, 0.0);
        for j in 0..b {
            if j == i {
                continue;
            }
            let c = 2.0 * (coef(i, j) + coef(j, i));
            gx += c * (y[[i, 0]] - y[[j, 0]]);
            gy += c * (y[[i, 1]] - y[[j, 1]]);
        }
        [gx, gy]
    });
    let grad = Array2::from_shape_vec((b, 2), rows.into_iter().flatten().collect()).unwrap();
    (kl, grad)
}

/// Kernel-regression error of one batch with its gradients.
#[derive(Debug, Clone)]
pub(crate) struct RegressionTerms {
    pub parts: MseParts,
    /// d MSE_r / d y
    pub grad_y: Array2<f64>,
    /// d MSE_r / d alpha, d MSE_r / d beta (effective parameters)
    pub grad_alpha: f64,
    pub grad_beta: f64,
}

/// Nadaraya-Watson regression loss of a batch: every row is a query, only
/// training rows act as anchors.
pub(crate) fn regression_terms(
    y: ArrayView2<f64>,
    s: &[f64],
    is_val: &[bool],
    alpha: f64,
    beta: f64,
    w1: f64,
    w2: f64,
) -> Result<RegressionTerms> {
    let b = y.nrows();
    let n_vl = is_val.iter().filter(|&&v| v).count();
    let n_tr = b - n_vl;
    if n_tr == 0 {
        return Err(Error::SplitConfiguration(
            "batch has no training members to act as anchors".into(),
        ));
    }
    let pt = |i: usize| [y[[i, 0]], y[[i, 1]]];
    // Row q of `g`: d MSE_r / d u_qk for each training anchor k.
    struct Row {
        g: Vec<f64>,
        sq_err: f64,
        d_alpha: f64,
        d_beta: f64,
        ok: bool,
    }
    let rows = par::map_range(b, |q| {
        let yq = pt(q);
        let mut jets = Vec::with_capacity(b);
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..b {
            if is_val[k] {
                jets.push(None);
                continue;
            }
            let jet = generalized_kernel_jet(sq_dist(&yq, &pt(k)), alpha, beta);
            num += jet.value * s[k];
            den += jet.value;
            jets.push(Some(jet));
        }
        if !(den >= MIN_DENOMINATOR) || !num.is_finite() {
            return Row {
                g: Vec::new(),
                sq_err: f64::NAN,
                d_alpha: 0.0,
                d_beta: 0.0,
                ok: false,
            };
        }
        let est = num / den;
        let err = est - s[q];
        let weight = if is_val[q] { w1 / n_vl as f64 } else { w2 / n_tr as f64 };
        let d_est = 2.0 * weight * err;
        let mut g = vec![0.0; b];
        let (mut d_alpha, mut d_beta) = (0.0, 0.0);
        for (k, jet) in jets.iter().enumerate() {
            if let Some(jet) = jet {
                let g_k = d_est * (s[k] - est) / den;
                g[k] = g_k * jet.d_sq;
                d_alpha += g_k * jet.d_alpha;
                d_beta += g_k * jet.d_beta;
            }
        }
        Row {
            g,
            sq_err: err * err,
            d_alpha,
            d_beta,
            ok: true,
        }
    });
    if rows.iter().any(|r| !r.ok) {
        return Err(Error::EmptyNeighborhood);
    }
    let (mut sum_vl, mut sum_tr, mut grad_alpha, mut grad_beta) = (0.0, 0.0, 0.0, 0.0);
    for (q, r) in rows.iter().enumerate() {
        if is_val[q] {
            sum_vl += r.sq_err;
        } else {
            sum_tr += r.sq_err;
        }
        grad_alpha += r.d_alpha;
        grad_beta += r.d_beta;
    }
    let mse_vl = if n_vl > 0 { sum_vl / n_vl as f64 } else { 0.0 };
    let mse_tr = sum_tr / n_tr as f64;
    let mse_r = if n_vl > 0 { w1 * mse_vl } else { 0.0 } + w2 * mse_tr;

    let grad_rows = par::map_range(b, |i| {
        let yi = pt(i);
        let (mut gx, mut gy) = (0.0, 0.0);
        for j in 0..b {
            if j == i {
                continue;
            }
            // u_ij depends on y_i through both the (i as query, j as anchor)
            // and (j as query, i as anchor) entries.
            let c = 2.0 * (rows[i].g[j] + rows[j].g[i]);
            if c != 0.0 {
                let yj = pt(j);
                gx += c * (yi[0] - yj[0]);
                gy += c * (yi[1] - yj[1]);
            }
        }
        [gx, gy]
    });
    Ok(RegressionTerms {
        parts: MseParts { mse_vl, mse_tr, mse_r },
        grad_y: Array2::from_shape_vec((b, 2), grad_rows.into_iter().flatten().collect()).unwrap(),
        grad_alpha,
        grad_beta,
    })
}

/// Optional sigmoid re-weighting of one loss term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Balance {
    #[default]
    None,
    /// `L = lambda * MSE_r + w(KL, mu) * KL`
    L1 { mu: f64, k: f64 },
    /// `L = w(MSE_r, mu1) * lambda * MSE_r + KL`
    L2 { mu1: f64, k: f64 },
}

/// `1 / (1 + exp(-k (x - mu)))`
pub fn sigmoid_weight(x: f64, mu: f64, k: f64) -> f64 {
    1.0 / (1.0 + (-k * (x - mu)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse_vl: f64,
    pub mse_tr: f64,
    pub mse_r: f64,
    pub kl: f64,
    pub total: f64,
    pub lambda: f64,
    /// Multiplier applied to `lambda * MSE_r`.
    pub w_mse: f64,
    /// Multiplier applied to `KL`.
    pub w_kl: f64,
    /// `dL / dMSE_r` and `dL / dKL`, gradients flowing through any sigmoid weight.
    pub d_mse_r: f64,
    pub d_kl: f64,
}

impl LossBreakdown {
    /// `(w_mse * lambda) * mse_r + w_kl * kl`, the rule every variant uses.
    pub fn recompute(&self) -> f64 {
        compose(self.w_mse, self.lambda, self.mse_r, self.w_kl, self.kl)
    }
}

#[inline]
fn compose(w_mse: f64, lambda: f64, mse_r: f64, w_kl: f64, kl: f64) -> f64 {
    (w_mse * lambda) * mse_r + w_kl * kl
}

/// Combines the regression and neighbourhood terms.
pub fn total_loss(mse: MseParts, kl: f64, lambda: f64, balance: Balance) -> Result<LossBreakdown> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
    }
    let (w_mse, w_kl, d_mse_r, d_kl) = match balance {
        Balance::None => (1.0, 1.0, lambda, 1.0),
        Balance::L1 { mu, k } => {
            check_k(k)?;
            let w = sigmoid_weight(kl, mu, k);
            (1.0, w, lambda, w + kl * k * w * (1.0 - w))
        }
        Balance::L2 { mu1, k } => {
            check_k(k)?;
            let w = sigmoid_weight(mse.mse_r, mu1, k);
            (w, 1.0, lambda * (w + mse.mse_r * k * w * (1.0 - w)), 1.0)
        }
    };
    Ok(LossBreakdown {
        mse_vl: mse.mse_vl,
        mse_tr: mse.mse_tr,
        mse_r: mse.mse_r,
        kl,
        total: compose(w_mse, lambda, mse.mse_r, w_kl, kl),
        lambda,
        w_mse,
        w_kl,
        d_mse_r,
        d_kl,
    })
}

/// Breakdown for neighbourhood-only training: the regression terms are
/// reported but carry zero weight.
pub fn kl_only_loss(mse: MseParts, kl: f64, lambda: f64) -> LossBreakdown {
    LossBreakdown {
        mse_vl: mse.mse_vl,
        mse_tr: mse.mse_tr,
        mse_r: mse.mse_r,
        kl,
        total: compose(0.0, lambda, mse.mse_r, 1.0, kl),
        lambda,
        w_mse: 0.0,
        w_kl: 1.0,
        d_mse_r: 0.0,
        d_kl: 1.0,
    }
}

fn check_k(k: f64) -> Result<()> {
    if !(k > 0.0) {
        return Err(Error::InvalidConfig(format!("balance rate k must be > 0, got {k}")));
    }
    Ok(())
}
