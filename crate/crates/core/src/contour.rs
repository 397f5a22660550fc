//! Normalised projections, contour grids and point sampling.
//!
//! Grid positions live in the normalised unit square. Every estimator maps a
//! position back to projection coordinates before evaluating the kernel
//! regression, so a cell value depends only on its position: zooming or
//! changing resolution never changes the value at a given point.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{generalized_kernel_unchecked, sq_dist, MIN_DENOMINATOR};
use crate::model::KernelParams;
use crate::par;

pub const DEFAULT_GRID: usize = 500;
pub const DEFAULT_TAU: f64 = 0.05;

/// Per-axis min-max frame of a projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Frame {
    pub fn from_points(points: &[[f64; 2]]) -> Result<Frame> {
        if points.is_empty() {
            return Err(Error::InvalidInput("no points to normalise".into()));
        }
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for (row, p) in points.iter().enumerate() {
            for a in 0..2 {
                if !p[a].is_finite() {
                    return Err(Error::NonFinite {
                        row,
                        what: "projected coordinate".into(),
                    });
                }
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        Ok(Frame { min, max })
    }

    /// Degenerate axes (max == min) map to 0.5.
    #[inline]
    pub fn normalize(&self, p: [f64; 2]) -> [f64; 2] {
        let mut out = [0.5; 2];
        for a in 0..2 {
            let span = self.max[a] - self.min[a];
            if span > 0.0 {
                out[a] = (p[a] - self.min[a]) / span;
            }
        }
        out
    }

    #[inline]
    pub fn denormalize(&self, q: [f64; 2]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for a in 0..2 {
            let span = self.max[a] - self.min[a];
            out[a] = if span > 0.0 {
                self.min[a] + q[a] * span
            } else {
                self.min[a] + (q[a] - 0.5)
            };
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection2D {
    pub raw: Vec<[f64; 2]>,
    pub frame: Frame,
    pub normalized: Vec<[f64; 2]>,
}

pub fn normalize_projection(raw: &[[f64; 2]]) -> Result<Projection2D> {
    let frame = Frame::from_points(raw)?;
    let normalized = raw.iter().map(|&p| frame.normalize(p)).collect();
    Ok(Projection2D {
        raw: raw.to_vec(),
        frame,
        normalized,
    })
}

/// Kernel used by a contour estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    /// Learned generalized t-kernel (raw parameters, squared on use).
    Generalized {
        alpha_raw: f64,
        beta_raw: f64,
    },
    Rbf {
        h: f64,
    },
    /// Gaussian RBF with one bandwidth per anchor.
    AdaptiveRbf {
        h: Vec<f64>,
    },
}

impl KernelSpec {
    pub fn generalized(k: KernelParams) -> Self {
        KernelSpec::Generalized {
            alpha_raw: k.alpha_raw,
            beta_raw: k.beta_raw,
        }
    }

    /// Short descriptor without the per-anchor vector.
    pub fn describe(&self) -> String {
        match self {
            KernelSpec::Generalized { alpha_raw, beta_raw } => format!(
                "generalized(alpha={:.6},beta={:.6})",
                alpha_raw * alpha_raw,
                beta_raw * beta_raw
            ),
            KernelSpec::Rbf { h } => format!("rbf(h={h:.6})"),
            KernelSpec::AdaptiveRbf { h } => format!("adaptive_rbf(n={})", h.len()),
        }
    }
}

/// Frozen anchors and kernel: evaluates the Nadaraya-Watson estimate at any
/// position.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourEstimator {
    frame: Frame,
    anchors: Vec<[f64; 2]>,
    values: Vec<f64>,
    kernel: KernelSpec,
    /// `-2 ln h_k` for adaptive bandwidths.
    log_norm: Vec<f64>,
}

impl ContourEstimator {
    /// `anchors` are in projection (un-normalised) coordinates, `frame` maps
    /// the unit square onto them.
    pub fn new(frame: Frame, anchors: Vec<[f64; 2]>, values: Vec<f64>, kernel: KernelSpec) -> Result<Self> {
        if anchors.is_empty() || anchors.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "need matching nonempty anchors and values, got {} and {}",
                anchors.len(),
                values.len()
            )));
        }
        let log_norm = match &kernel {
            KernelSpec::Rbf { h } if !(*h > 0.0) => return Err(Error::InvalidBandwidth(*h)),
            KernelSpec::AdaptiveRbf { h } => {
                if h.len() != anchors.len() {
                    return Err(Error::InvalidInput("one bandwidth per anchor required".into()));
                }
                if let Some(bad) = h.iter().find(|v| !(**v > 0.0)) {
                    return Err(Error::InvalidBandwidth(*bad));
                }
                h.iter().map(|v| -2.0 * v.ln()).collect()
            }
            _ => Vec::new(),
        };
        Ok(ContourEstimator {
            frame,
            anchors,
            values,
            kernel,
            log_norm,
        })
    }

    /// Estimator over a projection's own points.
    pub fn from_projection(proj: &Projection2D, values: Vec<f64>, kernel: KernelSpec) -> Result<Self> {
        Self::new(proj.frame, proj.raw.clone(), values, kernel)
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn anchors(&self) -> &[[f64; 2]] {
        &self.anchors
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn normalized_anchors(&self) -> Vec<[f64; 2]> {
        self.anchors.iter().map(|&a| self.frame.normalize(a)).collect()
    }

    pub fn score_range(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Estimate at a normalised position.
    pub fn estimate(&self, position: [f64; 2]) -> Result<f64> {
        self.estimate_raw(self.frame.denormalize(position))
    }

    /// Estimate at a point in projection coordinates.
    pub fn estimate_raw(&self, y: [f64; 2]) -> Result<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        match &self.kernel {
            KernelSpec::Generalized { alpha_raw, beta_raw } => {
                let (alpha, beta) = (alpha_raw * alpha_raw, beta_raw * beta_raw);
                for (a, &s) in self.anchors.iter().zip(&self.values) {
                    let w = generalized_kernel_unchecked(sq_dist(&y, a), alpha, beta);
                    num += w * s;
                    den += w;
                }
            }
            KernelSpec::Rbf { h } => {
                // Weights relative to the nearest anchor; the ratio is unchanged.
                let inv = 1.0 / (2.0 * h * h);
                let u_min = self
                    .anchors
                    .iter()
                    .map(|a| sq_dist(&y, a))
                    .fold(f64::INFINITY, f64::min);
                for (a, &s) in self.anchors.iter().zip(&self.values) {
                    let w = (-(sq_dist(&y, a) - u_min) * inv).exp();
                    num += w * s;
                    den += w;
                }
            }
            KernelSpec::AdaptiveRbf { h } => {
                let logw = |k: usize| -sq_dist(&y, &self.anchors[k]) / (2.0 * h[k] * h[k]) + self.log_norm[k];
                let top = (0..self.anchors.len()).map(logw).fold(f64::NEG_INFINITY, f64::max);
                for (k, &s) in self.values.iter().enumerate() {
                    let w = (logw(k) - top).exp();
                    num += w * s;
                    den += w;
                }
            }
        }
        if !(den >= MIN_DENOMINATOR) || !num.is_finite() {
            return Err(Error::EmptyNeighborhood);
        }
        Ok(num / den)
    }

    /// Estimates at many projection-space points; failures are `NaN`.
    pub fn estimate_many_raw(&self, points: &[[f64; 2]]) -> Vec<f64> {
        par::map_slice(points, |&p| self.estimate_raw(p).unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl BBox {
    pub const UNIT: BBox = BBox {
        xmin: 0.0,
        xmax: 1.0,
        ymin: 0.0,
        ymax: 1.0,
    };

    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<BBox> {
        let b = BBox { xmin, xmax, ymin, ymax };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.xmin, self.xmax, self.ymin, self.ymax];
        if vals.iter().any(|v| !v.is_finite()) || self.xmin >= self.xmax || self.ymin >= self.ymax {
            return Err(Error::InvalidInput(format!(
                "invalid bounding box {self:?}: need finite min < max on both axes"
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.xmin && p[0] <= self.xmax && p[1] >= self.ymin && p[1] <= self.ymax
    }

    /// Centre of cell `(i, j)` of an `nw x nh` subdivision.
    #[inline]
    pub fn cell_center(&self, i: usize, j: usize, nw: usize, nh: usize) -> [f64; 2] {
        [
            self.xmin + ((i as f64 + 0.5) / nw as f64) * (self.xmax - self.xmin),
            self.ymin + ((j as f64 + 0.5) / nh as f64) * (self.ymax - self.ymin),
        ]
    }
}

impl std::str::FromStr for BBox {
    type Err = Error;

    /// Parses `xmin,xmax,ymin,ymax`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidConfig(format!("bad bbox {s:?}: {e}")))?;
        if parts.len() != 4 {
            return Err(Error::InvalidConfig(format!("bbox needs 4 values, got {s:?}")));
        }
        BBox::new(parts[0], parts[1], parts[2], parts[3])
    }
}

/// Row-major grid of estimates; index `j * nw + i` is column `i`, row `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourGrid {
    pub bbox: BBox,
    pub nw: usize,
    pub nh: usize,
    /// `NaN` where the cell is masked.
    pub values: Vec<f64>,
    /// `true` = rendered.
    pub mask: Vec<bool>,
    pub kernel: KernelSpec,
    pub score_min: f64,
    pub score_max: f64,
}

impl ContourGrid {
    pub fn position(&self, i: usize, j: usize) -> [f64; 2] {
        self.bbox.cell_center(i, j, self.nw, self.nh)
    }

    pub fn value(&self, i: usize, j: usize) -> Option<f64> {
        let c = j * self.nw + i;
        self.mask[c].then_some(self.values[c])
    }

    pub fn to_export(&self) -> GridExport {
        GridExport {
            bbox: [self.bbox.xmin, self.bbox.xmax, self.bbox.ymin, self.bbox.ymax],
            nw: self.nw,
            nh: self.nh,
            values: self
                .values
                .iter()
                .zip(&self.mask)
                .map(|(&v, &m)| (m && v.is_finite()).then_some(v))
                .collect(),
            mask: self.mask.clone(),
            score_min: self.score_min,
            score_max: self.score_max,
            kernel: self.kernel.describe(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_export())?)
    }

    /// RGB raster, one pixel per cell, top row = largest y. Masked cells are white.
    pub fn to_rgb(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.nw * self.nh * 3);
        let span = self.score_max - self.score_min;
        for r in 0..self.nh {
            let j = self.nh - 1 - r;
            for i in 0..self.nw {
                let rgb = match self.value(i, j) {
                    Some(v) => {
                        let t = if span > 0.0 { (v - self.score_min) / span } else { 0.5 };
                        colormap(t)
                    }
                    None => [255, 255, 255],
                };
                out.extend_from_slice(&rgb);
            }
        }
        out
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let img = image::RgbImage::from_raw(self.nw as u32, self.nh as u32, self.to_rgb())
            .ok_or_else(|| Error::Image("raster size mismatch".into()))?;
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image(e.to_string()))
    }
}

/// Serialisable grid: `{bbox, nw, nh, values, mask, score_min, score_max}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridExport {
    pub bbox: [f64; 4],
    pub nw: usize,
    pub nh: usize,
    pub values: Vec<Option<f64>>,
    pub mask: Vec<bool>,
    pub score_min: f64,
    pub score_max: f64,
    pub kernel: String,
}

const RAMP: [[f64; 3]; 7] = [
    [68.0, 1.0, 84.0],
    [68.0, 58.0, 131.0],
    [49.0, 104.0, 142.0],
    [33.0, 145.0, 140.0],
    [53.0, 183.0, 121.0],
    [144.0, 215.0, 67.0],
    [253.0, 231.0, 37.0],
];

/// Fixed sequential ramp from dark purple (0) to yellow (1).
pub fn colormap(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (RAMP.len() - 1) as f64;
    let i = (x.floor() as usize).min(RAMP.len() - 2);
    let f = x - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (RAMP[i][c] + f * (RAMP[i + 1][c] - RAMP[i][c])).round() as u8;
    }
    out
}

/// Evaluates the estimator at every cell centre of `bbox`. Cells whose
/// neighbourhood is numerically empty are masked.
pub fn grid_eval(est: &ContourEstimator, bbox: BBox, nw: usize, nh: usize) -> Result<ContourGrid> {
    bbox.validate()?;
    if nw < 2 || nh < 2 {
        return Err(Error::InvalidInput(format!("grid must be at least 2x2, got {nw}x{nh}")));
    }
    let mut values = vec![f64::NAN; nw * nh];
    par::for_each_chunk_mut(&mut values, nw, |j, row| {
        for (i, v) in row.iter_mut().enumerate() {
            *v = est.estimate(bbox.cell_center(i, j, nw, nh)).unwrap_or(f64::NAN);
        }
    });
    let mask = values.iter().map(|v| v.is_finite()).collect();
    let (score_min, score_max) = est.score_range();
    Ok(ContourGrid {
        bbox,
        nw,
        nh,
        values,
        mask,
        kernel: est.kernel().clone(),
        score_min,
        score_max,
    })
}

/// Uniform bucket index over 2D points for radius queries.
struct Buckets {
    cell: f64,
    map: HashMap<(i64, i64), Vec<usize>>,
}

impl Buckets {
    fn key(cell: f64, p: [f64; 2]) -> (i64, i64) {
        ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64)
    }

    fn new(cell: f64) -> Self {
        Buckets {
            cell,
            map: HashMap::new(),
        }
    }

    fn insert(&mut self, idx: usize, p: [f64; 2]) {
        self.map.entry(Self::key(self.cell, p)).or_default().push(idx);
    }

    /// Calls `f` on every stored index in the 3x3 block around `p`.
    fn any_near(&self, p: [f64; 2], mut f: impl FnMut(usize) -> bool) -> bool {
        let (cx, cy) = Self::key(self.cell, p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(ids) = self.map.get(&(cx + dx, cy + dy)) {
                    if ids.iter().any(|&i| f(i)) {
                        return true;
                    }
                }
            }
        }
        false
    }
}

/// Masks every cell whose nearest anchor (normalised coordinates) is farther
/// than `tau`.
pub fn cutoff_mask(grid: &mut ContourGrid, anchors: &[[f64; 2]], tau: f64) -> Result<()> {
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("cutoff distance must be > 0, got {tau}")));
    }
    if tau.is_infinite() {
        return Ok(());
    }
    let tau2 = tau * tau;
    let mut buckets = Buckets::new(tau);
    for (i, &a) in anchors.iter().enumerate() {
        buckets.insert(i, a);
    }
    let (nw, nh, bbox) = (grid.nw, grid.nh, grid.bbox);
    let keep = par::map_range(nw * nh, |c| {
        let p = bbox.cell_center(c % nw, c / nw, nw, nh);
        buckets.any_near(p, |k| sq_dist(&p, &anchors[k]) <= tau2)
    });
    for (c, k) in keep.into_iter().enumerate() {
        if !k {
            grid.mask[c] = false;
            grid.values[c] = f64::NAN;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    Random { count: usize },
    Poisson { radius: f64 },
}

/// Chooses a subset of points for overlay. Returns sorted indices.
///
/// Poisson sampling visits points in a seeded random order and keeps each one
/// that is at least `radius` away from everything kept so far, so the result
/// is both well separated and maximal.
pub fn sample_points(points: &[[f64; 2]], method: Sampling, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = match method {
        Sampling::Random { count } => {
            if count > points.len() {
                return Err(Error::InvalidCount {
                    count,
                    available: points.len(),
                });
            }
            rand::seq::index::sample(&mut rng, points.len(), count).into_vec()
        }
        Sampling::Poisson { radius } => {
            if !(radius >= 0.0) {
                return Err(Error::InvalidInput(format!("radius must be >= 0, got {radius}")));
            }
            if radius == 0.0 {
                (0..points.len()).collect()
            } else {
                let mut order: Vec<usize> = (0..points.len()).collect();
                order.shuffle(&mut rng);
                let r2 = radius * radius;
                let mut buckets = Buckets::new(radius);
                let mut kept = Vec::new();
                for i in order {
                    let p = points[i];
                    if !buckets.any_near(p, |k| sq_dist(&p, &points[k]) < r2) {
                        buckets.insert(i, p);
                        kept.push(i);
                    }
                }
                kept
            }
        }
    };
    picked.sort_unstable();
    Ok(picked)
}
