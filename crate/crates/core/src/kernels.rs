//! Kernel functions and bandwidth selectors.
//!
//! The generalized t-kernel `K(x) = (1 + a |x|^(2b))^-1` is what the projection
//! learns with. The Gaussian RBF and its bandwidth selectors (Silverman plug-in,
//! adaptive local bandwidth, leave-one-out CV) back the classical baselines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::KernelParams;
use crate::par;

/// Kernel-regression denominators below this are treated as empty.
pub const MIN_DENOMINATOR: f64 = 1e-300;

fn check_sq_norm(sq_norm: f64) -> Result<()> {
    if !(sq_norm >= 0.0) || !sq_norm.is_finite() {
        return Err(Error::InvalidInput(format!(
            "squared norm must be finite and non-negative, got {sq_norm}"
        )));
    }
    Ok(())
}

/// `(1 + alpha * sq_norm^beta)^-1` with `alpha = alpha_raw^2`, `beta = beta_raw^2`.
pub fn generalized_kernel(sq_norm: f64, kernel: KernelParams) -> Result<f64> {
    check_sq_norm(sq_norm)?;
    Ok(generalized_kernel_unchecked(sq_norm, kernel.alpha(), kernel.beta()))
}

#[inline]
pub(crate) fn generalized_kernel_unchecked(sq_norm: f64, alpha: f64, beta: f64) -> f64 {
    if sq_norm == 0.0 {
        return 1.0;
    }
    1.0 / (1.0 + alpha * sq_norm.powf(beta))
}

/// Kernel value together with its partial derivatives.
#[derive(Debug, Clone, Copy)]
pub(crate) struct KernelJet {
    pub value: f64,
    /// dK / d(sq_norm)
    pub d_sq: f64,
    /// dK / d(alpha)
    pub d_alpha: f64,
    /// dK / d(beta)
    pub d_beta: f64,
}

#[inline]
pub(crate) fn generalized_kernel_jet(sq_norm: f64, alpha: f64, beta: f64) -> KernelJet {
    if sq_norm <= 0.0 {
        // The self-pair: value is pinned at 1 and the distance gradient cancels
        // between the two endpoints, so all partials are taken as zero.
        return KernelJet {
            value: 1.0,
            d_sq: 0.0,
            d_alpha: 0.0,
            d_beta: 0.0,
        };
    }
    let ln_u = sq_norm.ln();
    let t = (beta * ln_u).exp();
    let k = 1.0 / (1.0 + alpha * t);
    let k2 = k * k;
    KernelJet {
        value: k,
        d_sq: -alpha * beta * t / sq_norm * k2,
        d_alpha: -t * k2,
        d_beta: -alpha * t * ln_u * k2,
    }
}

/// `exp(-sq_norm / (2 h^2))`.
pub fn gaussian_rbf(sq_norm: f64, h: f64) -> Result<f64> {
    check_bandwidth(h)?;
    check_sq_norm(sq_norm)?;
    Ok((-sq_norm / (2.0 * h * h)).exp())
}

fn check_bandwidth(h: f64) -> Result<()> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidBandwidth(h));
    }
    Ok(())
}

/// Silverman's plug-in rule `h = (4 / ((d + 2) n))^(1 / (d + 4)) * sigma_hat`.
pub fn silverman_bandwidth(n: usize, d: usize, sigma_hat: f64) -> Result<f64> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput(format!(
            "silverman rule needs n >= 1 and d >= 1 (got n={n}, d={d})"
        )));
    }
    if !(sigma_hat > 0.0) || !sigma_hat.is_finite() {
        return Err(Error::DegenerateData(format!(
            "scale estimate must be positive, got {sigma_hat}"
        )));
    }
    let (n, d) = (n as f64, d as f64);
    Ok((4.0 / ((d + 2.0) * n)).powf(1.0 / (d + 4.0)) * sigma_hat)
}

/// Scale estimate for 2D points: the mean of the two per-axis sample
/// standard deviations.
pub fn sigma_hat_2d(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for axis in 0..2 {
        let mean = points.iter().map(|p| p[axis]).sum::<f64>() / n as f64;
        let var = points.iter().map(|p| (p[axis] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        total += var.sqrt();
    }
    total / 2.0
}

/// Silverman bandwidth of a 2D point set.
pub fn silverman_2d(points: &[[f64; 2]]) -> Result<f64> {
    let sigma = sigma_hat_2d(points);
    if sigma <= 0.0 {
        return Err(Error::DegenerateData("projected points have zero spread".into()));
    }
    silverman_bandwidth(points.len(), 2, sigma)
}

/// Gaussian KDE values at each point, self included.
pub fn pilot_densities(points: &[[f64; 2]], h: f64) -> Result<Vec<f64>> {
    check_bandwidth(h)?;
    let n = points.len() as f64;
    let norm = 1.0 / (n * 2.0 * std::f64::consts::PI * h * h);
    let inv = 1.0 / (2.0 * h * h);
    Ok(par::map_slice(points, |p| {
        norm * points.iter().map(|q| (-(sq_dist(p, q)) * inv).exp()).sum::<f64>()
    }))
}

/// Adaptive local bandwidths `h_i = (G / f_i)^2 * h`, with `G` the geometric
/// mean of the pilot densities.
pub fn alb_bandwidths(h: f64, densities: &[f64]) -> Result<Vec<f64>> {
    check_bandwidth(h)?;
    if let Some((index, &value)) = densities
        .iter()
        .enumerate()
        .find(|(_, f)| !(**f > 0.0) || !f.is_finite())
    {
        return Err(Error::InvalidDensity { index, value });
    }
    if densities.is_empty() {
        return Ok(Vec::new());
    }
    let log_g = densities.iter().map(|f| f.ln()).sum::<f64>() / densities.len() as f64;
    Ok(densities
        .iter()
        .map(|f| {
            let ratio = (log_g - f.ln()).exp();
            ratio * ratio * h
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthMethod {
    Silverman,
    Alb,
    Loocv,
}

impl BandwidthMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            BandwidthMethod::Silverman => "silverman",
            BandwidthMethod::Alb => "alb",
            BandwidthMethod::Loocv => "loocv",
        }
    }
}

impl std::str::FromStr for BandwidthMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "silverman" => Ok(BandwidthMethod::Silverman),
            "alb" => Ok(BandwidthMethod::Alb),
            "loocv" => Ok(BandwidthMethod::Loocv),
            other => Err(Error::InvalidConfig(format!("unknown bandwidth selector {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSelection {
    pub method: BandwidthMethod,
    pub h: f64,
    /// Per-anchor bandwidths (ALB only).
    pub per_point: Option<Vec<f64>>,
    pub sigma_hat: Option<f64>,
    pub candidates: Vec<f64>,
    pub cv_scores: Vec<f64>,
}

#[inline]
pub(crate) fn sq_dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Leave-one-out CV score of a Gaussian-RBF Nadaraya-Watson fit, or `+inf`
/// when some held-out point has an underflowing denominator.
pub fn loocv_score(points: &[[f64; 2]], values: &[f64], h: f64) -> f64 {
    let inv = 1.0 / (2.0 * h * h);
    let residuals = par::map_range(points.len(), |j| {
        let (mut num, mut den) = (0.0, 0.0);
        for (k, (p, &y)) in points.iter().zip(values).enumerate() {
            if k == j {
                continue;
            }
            let w = (-sq_dist(&points[j], p) * inv).exp();
            num += w * y;
            den += w;
        }
        if den < MIN_DENOMINATOR {
            f64::INFINITY
        } else {
            let r = values[j] - num / den;
            r * r
        }
    });
    residuals.iter().sum::<f64>() / points.len() as f64
}

/// Picks the candidate bandwidth with the smallest leave-one-out CV score.
/// Ties go to the smaller bandwidth.
pub fn loocv_bandwidth(points: &[[f64; 2]], values: &[f64], candidates: &[f64]) -> Result<BandwidthSelection> {
    if points.len() < 3 {
        return Err(Error::TooFewPoints(points.len()));
    }
    if points.len() != values.len() {
        return Err(Error::InvalidInput("points and values differ in length".into()));
    }
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no candidate bandwidths".into()));
    }
    for &h in candidates {
        check_bandwidth(h)?;
    }
    let scores: Vec<f64> = candidates.iter().map(|&h| loocv_score(points, values, h)).collect();
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) if s < scores[b] || (s == scores[b] && candidates[i] < candidates[b]) => Some(i),
            keep => keep,
        };
    }
    let best = best.ok_or(Error::NoValidBandwidth)?;
    Ok(BandwidthSelection {
        method: BandwidthMethod::Loocv,
        h: candidates[best],
        per_point: None,
        sigma_hat: None,
        candidates: candidates.to_vec(),
        cv_scores: scores,
    })
}

/// `count` log-spaced values covering `[lo, hi]`.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

pub const LOOCV_GRID_SIZE: usize = 20;

/// Runs one of the three selectors with its default settings on 2D anchors.
pub fn select_bandwidth(method: BandwidthMethod, points: &[[f64; 2]], values: &[f64]) -> Result<BandwidthSelection> {
    let sigma = sigma_hat_2d(points);
    let h_s = silverman_bandwidth(points.len(), 2, sigma)?;
    match method {
        BandwidthMethod::Silverman => Ok(BandwidthSelection {
            method,
            h: h_s,
            per_point: None,
            sigma_hat: Some(sigma),
            candidates: Vec::new(),
            cv_scores: Vec::new(),
        }),
        BandwidthMethod::Alb => {
            let densities = pilot_densities(points, h_s)?;
            let per_point = alb_bandwidths(h_s, &densities)?;
            Ok(BandwidthSelection {
                method,
                h: h_s,
                per_point: Some(per_point),
                sigma_hat: Some(sigma),
                candidates: Vec::new(),
                cv_scores: Vec::new(),
            })
        }
        BandwidthMethod::Loocv => {
            let grid = log_spaced(h_s / 10.0, h_s * 10.0, LOOCV_GRID_SIZE);
            let mut sel = loocv_bandwidth(points, values, &grid)?;
            sel.sigma_hat = Some(sigma);
            Ok(sel)
        }
    }
}
