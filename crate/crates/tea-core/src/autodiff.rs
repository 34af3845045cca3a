//! Reverse-mode differentiation driver for the forecaster.
//!
//! The tape is static: every forward kernel in this crate records exactly
//! the intermediates its hand-written adjoint needs, and [`loss_and_grad`]
//! chains those adjoints from the mean-squared-error loss back to every
//! trainable tensor. Tucker loadings are refit on each forward pass but held
//! constant under differentiation; to compare against finite differences the
//! factors must therefore be frozen via [`SampleFactors`], otherwise the
//! numerical derivative also measures the (deliberately ignored) sensitivity
//! of the refit loadings.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Result, TensorError};
use crate::metrics::mse;
use crate::model::{
    model_backward, model_forward_ctx, ModelConfig, ModelParams, NamedTensors, SampleFactors,
};
use crate::tensor::DenseTensor;

/// One training sample: encoder input window (`seq_len × d_raw`) and the
/// forecast target (`pred_len × d_raw`).
pub type Sample = (DenseTensor, DenseTensor);

/// Mean of the per-sample MSE losses over a batch.
pub fn batch_loss(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[Sample],
    mut caches: Option<&mut Vec<SampleFactors>>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(TensorError::InvalidArgument("empty batch".into()));
    }
    if let Some(c) = caches.as_deref_mut() {
        c.resize(batch.len(), SampleFactors::default());
    }
    let mut total = 0.0;
    for (i, (enc, target)) in batch.iter().enumerate() {
        let cache = caches.as_deref_mut().map(|c| &mut c[i]);
        let (pred, _) = model_forward_ctx(enc, params, cfg, cache, None)?;
        total += mse(&pred, target)?;
    }
    let loss = total / batch.len() as f64;
    if !loss.is_finite() {
        return Err(TensorError::NumericalError("batch loss".into()));
    }
    Ok(loss)
}

/// Batch loss plus its gradient with respect to every trainable parameter,
/// as a name → tensor map aligned with [`ModelParams::to_map`].
pub fn loss_and_grad(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[Sample],
    mut caches: Option<&mut Vec<SampleFactors>>,
) -> Result<(f64, NamedTensors)> {
    if batch.is_empty() {
        return Err(TensorError::InvalidArgument("empty batch".into()));
    }
    if let Some(c) = caches.as_deref_mut() {
        c.resize(batch.len(), SampleFactors::default());
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut acc: Option<NamedTensors> = None;
    for (i, (enc, target)) in batch.iter().enumerate() {
        let cache = caches.as_deref_mut().map(|c| &mut c[i]);
        let (pred, ctx) = model_forward_ctx(enc, params, cfg, cache, None)?;
        total += mse(&pred, target)?;
        // d(mean MSE)/d(pred) = 2 (pred - target) / (elements · batch).
        let n = pred.data().len() as f64;
        let mut dpred = pred.sub(target)?;
        dpred = dpred.scale(2.0 * scale / n);
        let grads = model_backward(&dpred, params, cfg, &ctx)?.to_map();
        match acc.as_mut() {
            None => acc = Some(grads),
            Some(a) => {
                for (name, g) in grads {
                    let slot = a.get_mut(&name).ok_or_else(|| {
                        TensorError::InvalidArgument(alloc::format!(
                            "gradient map mismatch at {name}"
                        ))
                    })?;
                    for (sv, gv) in slot.data_mut().iter_mut().zip(g.data()) {
                        *sv += gv;
                    }
                }
            }
        }
    }
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(TensorError::NumericalError("batch loss".into()));
    }
    let grads = acc.expect("non-empty batch");
    for t in grads.values() {
        if !t.is_finite() {
            return Err(TensorError::NumericalError("gradient".into()));
        }
    }
    Ok((loss, grads))
}

/// Result of a finite-difference sweep over every parameter coordinate.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub coords_checked: usize,
}

/// Central-difference check of [`loss_and_grad`] over all coordinates.
///
/// Factors are frozen at the unperturbed point so the numerical and analytic
/// derivatives agree on what is held constant. `denom_floor` guards the
/// relative error against near-zero gradients.
pub fn finite_difference_check(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[Sample],
    step: f64,
    denom_floor: f64,
) -> Result<GradCheckReport> {
    let mut caches: Vec<SampleFactors> = Vec::new();
    // Populate the factor caches at the nominal point.
    let (_, analytic) = loss_and_grad(params, cfg, batch, Some(&mut caches))?;
    let mut probe = params.clone();
    let mut map = params.to_map();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        coords_checked: 0,
    };
    let names: Vec<String> = map.keys().cloned().collect();
    for name in names {
        let len = map[&name].data().len();
        for idx in 0..len {
            let orig = map[&name].data()[idx];
            map.get_mut(&name).unwrap().data_mut()[idx] = orig + step;
            probe.assign_from_map(&map)?;
            let up = batch_loss(&probe, cfg, batch, Some(&mut caches))?;
            map.get_mut(&name).unwrap().data_mut()[idx] = orig - step;
            probe.assign_from_map(&map)?;
            let down = batch_loss(&probe, cfg, batch, Some(&mut caches))?;
            map.get_mut(&name).unwrap().data_mut()[idx] = orig;
            let fd = (up - down) / (2.0 * step);
            let an = analytic[&name].data()[idx];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(denom_floor);
            report.coords_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = alloc::format!("{name}[{idx}]");
            }
        }
    }
    probe.assign_from_map(&map)?;
    Ok(report)
}
