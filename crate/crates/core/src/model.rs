//! Projection network and learnable kernel parameters.
//!
//! The network is a fixed four-layer MLP. The first three layers map `d -> d`
//! and apply `linear -> batch norm -> ReLU`; the last layer is a plain affine
//! map `d -> 2` so the projection can cover the whole plane.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const NUM_LAYERS: usize = 4;
pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn identity(width: usize) -> Self {
        BatchNorm {
            scale: Array1::ones(width),
            shift: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out_dim x in_dim`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    /// Present on every layer except the output layer.
    pub norm: Option<BatchNorm>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// Raw kernel parameters; the kernel uses their squares so that the
/// effective values can never go negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub alpha_raw: f64,
    pub beta_raw: f64,
}

impl KernelParams {
    /// The plain Student-t kernel `(1 + |x|^2)^-1`.
    pub const STANDARD: KernelParams = KernelParams {
        alpha_raw: 1.0,
        beta_raw: 1.0,
    };

    pub fn alpha(&self) -> f64 {
        self.alpha_raw * self.alpha_raw
    }

    pub fn beta(&self) -> f64 {
        self.beta_raw * self.beta_raw
    }

    pub fn effective(&self) -> (f64, f64) {
        (self.alpha(), self.beta())
    }

    /// Raw parameters reproducing the given effective values.
    pub fn from_effective(alpha: f64, beta: f64) -> Self {
        KernelParams {
            alpha_raw: alpha.max(0.0).sqrt(),
            beta_raw: beta.max(0.0).sqrt(),
        }
    }
}

impl Default for KernelParams {
    fn default() -> Self {
        Self::STANDARD
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub mlp: MlpParams,
    pub kernel: KernelParams,
    pub input_dim: usize,
    pub mode: Mode,
    pub seed: u64,
}

pub fn init_model(d: usize, seed: u64) -> Result<ModelState> {
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [(d, d), (d, d), (d, d), (d, 2)];
    let layers = dims
        .iter()
        .enumerate()
        .map(|(i, &(fan_in, out))| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight = Array2::from_shape_fn((out, fan_in), |_| rng.random_range(-bound..=bound));
            Layer {
                weight,
                bias: Array1::zeros(out),
                norm: (i + 1 < NUM_LAYERS).then(|| BatchNorm::identity(out)),
            }
        })
        .collect();
    Ok(ModelState {
        mlp: MlpParams { layers },
        kernel: KernelParams::STANDARD,
        input_dim: d,
        mode: Mode::Train,
        seed,
    })
}

/// Per-layer values saved by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    input: Array2<f64>,
    /// Normalised pre-activations, `None` for the output layer.
    xhat: Option<Array2<f64>>,
    /// Post-norm, pre-ReLU activations.
    pre_relu: Option<Array2<f64>>,
    inv_std: Option<Array1<f64>>,
    pub batch_mean: Option<Array1<f64>>,
    pub batch_var: Option<Array1<f64>>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub layers: Vec<LayerCache>,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub scale: Option<Array1<f64>>,
    pub shift: Option<Array1<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub layers: Vec<LayerGrad>,
}

fn check_input(model: &ModelState, x: &ArrayView2<f64>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if x.ncols() != model.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim,
            found: x.ncols(),
        });
    }
    if let Some((idx, _)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite value at row {}",
            idx / x.ncols()
        )));
    }
    Ok(())
}

impl ModelState {
    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    /// Evaluates the network in the model's current mode. Train mode uses batch
    /// statistics but does not touch the running estimates.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_input(self, &x)?;
        match self.mode {
            Mode::Inference => Ok(self.forward_inference_unchecked(x)),
            Mode::Train => self.forward_train(x).map(|(y, _)| y),
        }
    }

    fn forward_inference_unchecked(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut act = x.to_owned();
        for layer in &self.mlp.layers {
            let mut z = act.dot(&layer.weight.t()) + &layer.bias;
            if let Some(bn) = &layer.norm {
                let inv_std = bn.running_var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
                for mut row in z.rows_mut() {
                    for c in 0..row.len() {
                        let xhat = (row[c] - bn.running_mean[c]) * inv_std[c];
                        row[c] = (bn.scale[c] * xhat + bn.shift[c]).max(0.0);
                    }
                }
            }
            act = z;
        }
        act
    }

    /// Train-mode forward pass returning everything the backward pass needs.
    pub fn forward_train(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        check_input(self, &x)?;
        let b = x.nrows();
        if b < 2 {
            return Err(Error::BatchTooSmall(b));
        }
        let mut act = x.to_owned();
        let mut caches = Vec::with_capacity(self.mlp.layers.len());
        for layer in &self.mlp.layers {
            let z = act.dot(&layer.weight.t()) + &layer.bias;
            match &layer.norm {
                None => {
                    caches.push(LayerCache {
                        input: act,
                        xhat: None,
                        pre_relu: None,
                        inv_std: None,
                        batch_mean: None,
                        batch_var: None,
                    });
                    act = z;
                }
                Some(bn) => {
                    let mean = z.mean_axis(Axis(0)).expect("nonempty batch");
                    let centered = &z - &mean;
                    let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
                    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
                    let xhat = &centered * &inv_std;
                    let pre = &xhat * &bn.scale + &bn.shift;
                    let out = pre.mapv(|v| v.max(0.0));
                    caches.push(LayerCache {
                        input: act,
                        xhat: Some(xhat),
                        pre_relu: Some(pre),
                        inv_std: Some(inv_std),
                        batch_mean: Some(mean),
                        batch_var: Some(var),
                    });
                    act = out;
                }
            }
        }
        Ok((
            act,
            ForwardCache {
                layers: caches,
                batch_size: b,
            },
        ))
    }

    /// Back-propagates `d_out` (gradient of the loss w.r.t. the `B x 2`
    /// output) through the network.
    pub fn backward(&self, cache: &ForwardCache, d_out: ArrayView2<f64>) -> MlpGradients {
        let b = cache.batch_size as f64;
        let mut grad = d_out.to_owned();
        let mut out = Vec::with_capacity(self.mlp.layers.len());
        for (layer, lc) in self.mlp.layers.iter().zip(&cache.layers).rev() {
            let (dz, scale_grad, shift_grad) = match (&layer.norm, &lc.xhat) {
                (Some(bn), Some(xhat)) => {
                    let pre = lc.pre_relu.as_ref().unwrap();
                    let inv_std = lc.inv_std.as_ref().unwrap();
                    let mut dy = grad;
                    dy.zip_mut_with(pre, |g, &p| {
                        if p <= 0.0 {
                            *g = 0.0
                        }
                    });
                    let dscale = (&dy * xhat).sum_axis(Axis(0));
                    let dshift = dy.sum_axis(Axis(0));
                    let dxhat = &dy * &bn.scale;
                    let sum_dxhat = dxhat.sum_axis(Axis(0));
                    let sum_dxhat_xhat = (&dxhat * xhat).sum_axis(Axis(0));
                    let dz = ((&dxhat * b) - &sum_dxhat - &(xhat * &sum_dxhat_xhat)) * &(inv_std / b);
                    (dz, Some(dscale), Some(dshift))
                }
                _ => (grad, None, None),
            };
            let dw = dz.t().dot(&lc.input);
            let db = dz.sum_axis(Axis(0));
            grad = dz.dot(&layer.weight);
            out.push(LayerGrad {
                weight: dw,
                bias: db,
                scale: scale_grad,
                shift: shift_grad,
            });
        }
        out.reverse();
        MlpGradients { layers: out }
    }

    /// Exponential running-statistics update from a train-mode pass.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        let b = cache.batch_size as f64;
        let unbias = if b > 1.0 { b / (b - 1.0) } else { 1.0 };
        for (layer, lc) in self.mlp.layers.iter_mut().zip(&cache.layers) {
            if let (Some(bn), Some(mean), Some(var)) = (layer.norm.as_mut(), &lc.batch_mean, &lc.batch_var) {
                bn.running_mean
                    .zip_mut_with(mean, |r, &m| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m);
                bn.running_var
                    .zip_mut_with(var, |r, &v| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias);
            }
        }
    }

    /// Number of trainable scalars, kernel parameters included.
    pub fn num_params(&self) -> usize {
        self.mlp
            .layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len() + l.norm.as_ref().map_or(0, |n| 2 * n.scale.len()))
            .sum::<usize>()
            + 2
    }

    /// Trainable parameters in canonical order: per layer weight (row-major),
    /// bias, scale, shift; then `alpha_raw`, `beta_raw`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for l in &self.mlp.layers {
            v.extend(l.weight.iter());
            v.extend(l.bias.iter());
            if let Some(n) = &l.norm {
                v.extend(n.scale.iter());
                v.extend(n.shift.iter());
            }
        }
        v.push(self.kernel.alpha_raw);
        v.push(self.kernel.beta_raw);
        v
    }

    pub fn load_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut it = flat.iter().copied();
        for l in &mut self.mlp.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|w| *w = it.next().unwrap());
            if let Some(n) = &mut l.norm {
                n.scale.iter_mut().for_each(|w| *w = it.next().unwrap());
                n.shift.iter_mut().for_each(|w| *w = it.next().unwrap());
            }
        }
        self.kernel.alpha_raw = it.next().unwrap();
        self.kernel.beta_raw = it.next().unwrap();
    }

    /// Human-readable names matching [`ModelState::to_flat`].
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.num_params());
        for (i, l) in self.mlp.layers.iter().enumerate() {
            let cols = l.in_dim();
            for k in 0..l.weight.len() {
                names.push(format!("layer{i}.weight[{},{}]", k / cols, k % cols));
            }
            names.extend((0..l.bias.len()).map(|k| format!("layer{i}.bias[{k}]")));
            if let Some(n) = &l.norm {
                names.extend((0..n.scale.len()).map(|k| format!("layer{i}.bn_scale[{k}]")));
                names.extend((0..n.shift.len()).map(|k| format!("layer{i}.bn_shift[{k}]")));
            }
        }
        names.push("alpha_raw".into());
        names.push("beta_raw".into());
        names
    }

    pub fn all_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
            && self.mlp.layers.iter().all(|l| {
                l.norm.as_ref().is_none_or(|n| {
                    n.running_mean.iter().all(|v| v.is_finite())
                        && n.running_var.iter().all(|v| v.is_finite() && *v > 0.0)
                })
            })
    }
}

impl MlpGradients {
    pub fn zeros_like(model: &ModelState) -> Self {
        MlpGradients {
            layers: model
                .mlp
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                    scale: l.norm.as_ref().map(|n| Array1::zeros(n.scale.len())),
                    shift: l.norm.as_ref().map(|n| Array1::zeros(n.shift.len())),
                })
                .collect(),
        }
    }

    pub(crate) fn extend_flat(&self, v: &mut Vec<f64>) {
        for l in &self.layers {
            v.extend(l.weight.iter());
            v.extend(l.bias.iter());
            if let (Some(s), Some(t)) = (&l.scale, &l.shift) {
                v.extend(s.iter());
                v.extend(t.iter());
            }
        }
    }
}
