//! Joint optimisation of the projection network and the kernel parameters.

mod adam;
mod gradcheck;

pub use adam::{clip_global_norm, Adam};
pub use gradcheck::{grad_check, grad_check_against, relative_error, GradCheckReport, Mismatch};

use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    high_dim_affinities, kl_only_loss, kl_with_grad, regression_terms, total_loss, Balance, LossBreakdown,
};
use crate::model::{init_model, ForwardCache, KernelParams, MlpGradients, Mode, ModelState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub lambda: f64,
    pub w1: f64,
    pub w2: f64,
    pub seed: u64,
    /// Train on the neighbourhood term alone.
    pub ablate_kr: bool,
    /// Freeze the kernel at the standard t-kernel.
    pub ablate_gk: bool,
    /// `none`, `l1` or `l2`.
    pub balance: String,
    pub mu: f64,
    pub mu1: f64,
    pub k: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch: 1000,
            lr: 0.002,
            lambda: 0.125,
            w1: 1.0,
            w2: 0.3,
            seed: 42,
            ablate_kr: false,
            ablate_gk: false,
            balance: "none".into(),
            mu: 2.0,
            mu1: 1.0,
            k: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 10.0,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn balance_mode(&self) -> Result<Balance> {
        match self.balance.as_str() {
            "none" => Ok(Balance::None),
            "l1" => Ok(Balance::L1 { mu: self.mu, k: self.k }),
            "l2" => Ok(Balance::L2 {
                mu1: self.mu1,
                k: self.k,
            }),
            other => Err(Error::InvalidConfig(format!("unknown balance mode {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch < 4 {
            return bad(format!("batch must be >= 4, got {}", self.batch));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.w1 >= 0.0) || !(self.w2 >= 0.0) {
            return bad("w1 and w2 must be >= 0".into());
        }
        if let Balance::L1 { k, .. } | Balance::L2 { k, .. } = self.balance_mode()? {
            if !(k > 0.0) {
                return bad(format!("balance rate k must be > 0, got {k}"));
            }
        }
        Ok(())
    }
}

/// Which rows hold out as validation queries in a given epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub epoch: usize,
    pub seed: u64,
    pub validation: Vec<bool>,
}

impl SplitAssignment {
    pub fn num_validation(&self) -> usize {
        self.validation.iter().filter(|&&v| v).count()
    }
}

fn epoch_rng(seed: u64, epoch: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * epoch as u64 + purpose);
    rng
}

/// Random 9:1 train/validation partition for one epoch.
pub fn split_epoch(n: usize, seed: u64, epoch: usize) -> Result<SplitAssignment> {
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    let n_val = ((n as f64 / 10.0).round() as usize).max(1);
    let mut rng = epoch_rng(seed, epoch, 0);
    let mut validation = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, n_val) {
        validation[i] = true;
    }
    Ok(SplitAssignment {
        epoch,
        seed,
        validation,
    })
}

/// Gradient of the loss with respect to every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub mlp: MlpGradients,
    pub alpha_raw: f64,
    pub beta_raw: f64,
}

impl Gradients {
    /// Same ordering as [`ModelState::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        self.mlp.extend_flat(&mut v);
        v.push(self.alpha_raw);
        v.push(self.beta_raw);
        v
    }
}

pub(crate) struct StepOutput {
    pub loss: LossBreakdown,
    pub grads: Gradients,
    pub cache: ForwardCache,
}

/// Loss only, for finite-difference checks.
pub(crate) fn loss_value(
    model: &ModelState,
    x: ArrayView2<f64>,
    s: &[f64],
    is_val: &[bool],
    config: &TrainConfig,
    p: &Array2<f64>,
) -> Result<f64> {
    step_with_affinities(model, x, s, is_val, config, p).map(|o| o.loss.total)
}

pub(crate) fn step_with_affinities(
    model: &ModelState,
    x: ArrayView2<f64>,
    s: &[f64],
    is_val: &[bool],
    config: &TrainConfig,
    p: &Array2<f64>,
) -> Result<StepOutput> {
    if s.len() != x.nrows() || is_val.len() != x.nrows() {
        return Err(Error::InvalidInput("batch, scores and mask differ in length".into()));
    }
    let (y, cache) = model.forward_train(x)?;
    let (kl, kl_grad) = kl_with_grad(p, y.view());
    let (alpha, beta) = model.kernel.effective();
    let (loss, d_y, g_alpha_raw, g_beta_raw) = if config.ablate_kr {
        let parts = regression_terms(y.view(), s, is_val, alpha, beta, config.w1, config.w2)
            .map(|r| r.parts)
            .unwrap_or_default();
        (kl_only_loss(parts, kl, config.lambda), kl_grad, 0.0, 0.0)
    } else {
        let reg = regression_terms(y.view(), s, is_val, alpha, beta, config.w1, config.w2)?;
        let loss = total_loss(reg.parts, kl, config.lambda, config.balance_mode()?)?;
        let d_y = &reg.grad_y * loss.d_mse_r + &kl_grad * loss.d_kl;
        let (ga, gb) = if config.ablate_gk {
            (0.0, 0.0)
        } else {
            (
                loss.d_mse_r * reg.grad_alpha * 2.0 * model.kernel.alpha_raw,
                loss.d_mse_r * reg.grad_beta * 2.0 * model.kernel.beta_raw,
            )
        };
        (loss, d_y, ga, gb)
    };
    if !loss.total.is_finite() {
        return Err(Error::Diverged { epoch: 0, batch: 0 });
    }
    let mlp = model.backward(&cache, d_y.view());
    Ok(StepOutput {
        loss,
        grads: Gradients {
            mlp,
            alpha_raw: g_alpha_raw,
            beta_raw: g_beta_raw,
        },
        cache,
    })
}

/// Loss and exact gradients for one batch.
///
/// Validation rows (`is_val`) are regression queries only; the training rows
/// of the batch are the kernel-regression anchors.
pub fn compute_gradients(
    model: &ModelState,
    x: ArrayView2<f64>,
    s: &[f64],
    is_val: &[bool],
    config: &TrainConfig,
) -> Result<(LossBreakdown, Gradients)> {
    let p = high_dim_affinities(x)?;
    step_with_affinities(model, x, s, is_val, config, &p).map(|o| (o.loss, o.grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's batches.
    pub loss: LossBreakdown,
    pub alpha: f64,
    pub beta: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

fn mean_breakdown(items: &[LossBreakdown]) -> LossBreakdown {
    let n = items.len() as f64;
    let avg = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
    LossBreakdown {
        mse_vl: avg(|l| l.mse_vl),
        mse_tr: avg(|l| l.mse_tr),
        mse_r: avg(|l| l.mse_r),
        kl: avg(|l| l.kl),
        total: avg(|l| l.total),
        lambda: items[0].lambda,
        w_mse: avg(|l| l.w_mse),
        w_kl: avg(|l| l.w_kl),
        d_mse_r: avg(|l| l.d_mse_r),
        d_kl: avg(|l| l.d_kl),
    }
}

/// Splits a permutation into `ceil(n / batch)` batches of near-equal size,
/// merging batches when they would fall below 4 rows.
pub fn make_batches(order: &[usize], batch: usize) -> Vec<Vec<usize>> {
    let n = order.len();
    let mut count = n.div_ceil(batch.max(1)).max(1);
    while count > 1 && n / count < 4 {
        count -= 1;
    }
    let base = n / count;
    let extra = n % count;
    let mut out = Vec::with_capacity(count);
    let mut start = 0;
    for i in 0..count {
        let len = base + usize::from(i < extra);
        out.push(order[start..start + len].to_vec());
        start += len;
    }
    out
}

/// Trains a fresh model on `(x, s)`.
pub fn train(x: ArrayView2<f64>, s: &[f64], config: &TrainConfig) -> Result<(ModelState, TrainHistory)> {
    train_with_callback(x, s, config, |_| {})
}

/// As [`train`], invoking `on_epoch` after every epoch.
pub fn train_with_callback<F>(
    x: ArrayView2<f64>,
    s: &[f64],
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<(ModelState, TrainHistory)>
where
    F: FnMut(&EpochRecord),
{
    config.validate()?;
    let n = x.nrows();
    if s.len() != n {
        return Err(Error::InvalidInput(format!("{} score values for {} rows", s.len(), n)));
    }
    if n < 4 {
        return Err(Error::TooFewPoints(n));
    }
    let mut model = init_model(x.ncols(), config.seed)?;
    if config.ablate_gk {
        model.kernel = KernelParams::STANDARD;
    }
    let mut adam = Adam::new(
        model.num_params(),
        config.lr,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    );
    let batch_size = config.batch.min(n);
    let mut history = TrainHistory::default();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let split = split_epoch(n, config.seed, epoch)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut epoch_rng(config.seed, epoch, 1));
        let mut losses = Vec::new();
        for (bi, idx) in make_batches(&order, batch_size).iter().enumerate() {
            let xb = x.select(Axis(0), idx);
            let sb: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
            let vb: Vec<bool> = idx.iter().map(|&i| split.validation[i]).collect();
            let p = high_dim_affinities(xb.view())?;
            let out = step_with_affinities(&model, xb.view(), &sb, &vb, config, &p).map_err(|e| match e {
                Error::Diverged { .. } | Error::EmptyNeighborhood => Error::Diverged { epoch, batch: bi },
                other => other,
            })?;
            let mut grads = out.grads.to_flat();
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, batch: bi });
            }
            clip_global_norm(&mut grads, config.clip_norm);
            let mut params = model.to_flat();
            adam.step(&mut params, &grads);
            model.load_flat(&params);
            model.update_running_stats(&out.cache);
            debug_assert!(model.all_finite(), "non-finite parameters after step");
            debug_assert!(model.kernel.alpha() >= 0.0 && model.kernel.beta() >= 0.0);
            if !model.all_finite() {
                return Err(Error::Diverged { epoch, batch: bi });
            }
            losses.push(out.loss);
        }
        let (alpha, beta) = model.kernel.effective();
        let record = EpochRecord {
            epoch,
            loss: mean_breakdown(&losses),
            alpha,
            beta,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.epochs.push(record);
    }
    model.mode = Mode::Inference;
    Ok((model, history))
}
