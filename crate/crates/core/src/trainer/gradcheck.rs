use ndarray::ArrayView2;
use serde::Serialize;

use super::{loss_value, step_with_affinities, Gradients, TrainConfig};
use crate::error::Result;
use crate::losses::high_dim_affinities;
use crate::model::ModelState;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mismatch {
    pub index: usize,
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter with the largest relative error.
    pub worst: Option<Mismatch>,
    /// Every parameter whose relative error exceeds the tolerance.
    pub offending: Vec<Mismatch>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.offending.is_empty()
    }
}

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient against central differences
/// `(f(θ + h) - f(θ - h)) / 2h` for every trainable scalar. Frozen kernel
/// parameters (`ablate_gk`) are skipped. No gradient clipping is applied.
pub fn grad_check(
    model: &ModelState,
    x: ArrayView2<f64>,
    s: &[f64],
    is_val: &[bool],
    config: &TrainConfig,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let p = high_dim_affinities(x)?;
    let analytic = step_with_affinities(model, x, s, is_val, config, &p)?.grads;
    grad_check_against(model, x, s, is_val, config, &analytic, step, tolerance)
}

/// As [`grad_check`] but against a caller-supplied gradient.
#[allow(clippy::too_many_arguments)]
pub fn grad_check_against(
    model: &ModelState,
    x: ArrayView2<f64>,
    s: &[f64],
    is_val: &[bool],
    config: &TrainConfig,
    analytic: &Gradients,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let p = high_dim_affinities(x)?;
    let analytic = analytic.to_flat();
    let names = model.param_names();
    let base = model.to_flat();
    let n = base.len();
    let skip_kernel = config.ablate_gk;

    let mut probe = model.clone();
    let mut theta = base.clone();
    let mut mismatches = Vec::new();
    let mut checked = 0;
    for i in 0..n {
        if skip_kernel && i >= n - 2 {
            continue;
        }
        theta[i] = base[i] + step;
        probe.load_flat(&theta);
        let plus = loss_value(&probe, x, s, is_val, config, &p)?;
        theta[i] = base[i] - step;
        probe.load_flat(&theta);
        let minus = loss_value(&probe, x, s, is_val, config, &p)?;
        theta[i] = base[i];
        let numeric = (plus - minus) / (2.0 * step);
        checked += 1;
        mismatches.push(Mismatch {
            index: i,
            name: names[i].clone(),
            analytic: analytic[i],
            numeric,
            rel_error: relative_error(analytic[i], numeric),
        });
    }
    let worst = mismatches
        .iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .cloned();
    let offending = mismatches
        .into_iter()
        .filter(|m| !(m.rel_error < tolerance) && tolerance.is_finite())
        .collect();
    Ok(GradCheckReport {
        checked,
        max_rel_error: worst.as_ref().map_or(0.0, |w| w.rel_error),
        worst,
        offending,
        tolerance,
    })
}
