//! Synthetic metric-landscape task: 2D latents, randomly rotated into `d`
//! dimensions with small noise padding, and a smooth two-bump metric.

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    /// Std-dev of the padding coordinates.
    pub padding_noise: f64,
    /// Std-dev of additive metric noise.
    pub metric_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_train: 2000,
            n_test: 500,
            dim: 16,
            padding_noise: 0.1,
            metric_noise: 0.15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub train: Dataset,
    pub test: Dataset,
    pub latents_train: Vec<[f64; 2]>,
    pub latents_test: Vec<[f64; 2]>,
}

/// Noise-free metric over latent coordinates in `[-1, 1]^2`.
pub fn bump_metric(z: [f64; 2]) -> f64 {
    let bump = |c: [f64; 2], sigma: f64, amp: f64| {
        let d2 = (z[0] - c[0]).powi(2) + (z[1] - c[1]).powi(2);
        amp * (-d2 / (2.0 * sigma * sigma)).exp()
    };
    1.0 + bump([-0.45, -0.35], 0.22, 1.0) + bump([0.4, 0.35], 0.3, 0.7)
}

/// Haar-distributed orthogonal matrix via QR of a Gaussian matrix.
fn random_rotation(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn synthetic_task(spec: &SyntheticSpec) -> Result<SyntheticTask> {
    if spec.dim < 2 {
        return Err(Error::InvalidDimension(spec.dim));
    }
    if spec.n_train < 2 || spec.n_test < 2 {
        return Err(Error::TooFewPoints(spec.n_train.min(spec.n_test)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rot = random_rotation(spec.dim, &mut rng);
    let mut make = |n: usize, prefix: &str| -> Result<(Dataset, Vec<[f64; 2]>)> {
        let mut x = Array2::<f32>::zeros((n, spec.dim));
        let mut scores = Vec::with_capacity(n);
        let mut latents = Vec::with_capacity(n);
        let mut v = vec![0.0; spec.dim];
        for i in 0..n {
            let z = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
            v[0] = z[0];
            v[1] = z[1];
            for pad in v.iter_mut().skip(2) {
                *pad = spec.padding_noise * rng.sample::<f64, _>(StandardNormal);
            }
            for r in 0..spec.dim {
                x[(i, r)] = (0..spec.dim).map(|c| rot[(r, c)] * v[c]).sum::<f64>() as f32;
            }
            let noise: f64 = rng.sample(StandardNormal);
            scores.push((bump_metric(z) + spec.metric_noise * noise) as f32);
            latents.push(z);
        }
        let ids = (0..n).map(|i| format!("{prefix}-{i:05}")).collect();
        let meta = latents
            .iter()
            .map(|z| format!("latent=({:.4},{:.4})", z[0], z[1]))
            .collect();
        Ok((Dataset::new(x, scores, Some(ids), Some(meta))?, latents))
    };
    let (train, latents_train) = make(spec.n_train, "train")?;
    let (test, latents_test) = make(spec.n_test, "test")?;
    Ok(SyntheticTask {
        train,
        test,
        latents_train,
        latents_test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_rotation(6, &mut rng);
        let err = (q.transpose() * &q - DMatrix::identity(6, 6)).abs().max();
        assert!(err < 1e-12);
    }

    #[test]
    fn task_shape_and_determinism() {
        let spec = SyntheticSpec {
            n_train: 50,
            n_test: 20,
            dim: 5,
            seed: 3,
            ..Default::default()
        };
        let a = synthetic_task(&spec).unwrap();
        let b = synthetic_task(&spec).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!((a.train.n(), a.train.d(), a.test.n()), (50, 5, 20));
        assert!(a.train.scores.iter().all(|&s| s > 0.5));
    }

    #[test]
    fn bump_peaks() {
        assert!((bump_metric([-0.45, -0.35]) - 2.0).abs() < 0.01);
        assert!(bump_metric([1.0, -1.0]) < 1.05);
    }
}
