//! Finite-difference checks of objective gradients.

use alloc::vec::Vec;

use rand::Rng as _;

use crate::data::{Features, Rating};
use crate::error::Result;
use crate::model::DmfModel;
use crate::quantizer::Quantizer;
use crate::rng;
use crate::train::{evaluate_objective, Mode, Objective};

/// Which scalar a gradient entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRef {
    /// Entry `index` of tensor `tensor` in [`DmfModel::parameters`] order.
    Model { tensor: usize, index: usize },
    /// Interior boundary `b_{k+1}`.
    Boundary(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter with the largest error, its analytic and numeric gradient.
    pub worst: Option<(ParamRef, f64, f64)>,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    libm::fabs(analytic - numeric) / libm::fmax(floor, libm::fmax(libm::fabs(analytic), libm::fabs(numeric)))
}

/// Copy of `model` with every weight and bias drawn from `U(-scale, scale)`.
pub fn randomized(model: &DmfModel, seed: u64, scale: f64) -> DmfModel {
    let mut out = model.clone();
    let mut r = rng::named_rng(seed, "gradcheck");
    for p in out.parameters_mut() {
        p.values_mut().iter_mut().for_each(|v| *v = r.gen_range(-scale..scale));
    }
    out
}

/// True when some value fed to the quantizer lies within `margin` of a
/// selector knot, where the surrogate is not differentiable.
pub fn near_knot(
    model: &DmfModel,
    quantizer: &Quantizer,
    features: &Features,
    batch: &[Rating],
    objective: &Objective,
    margin: f64,
) -> Result<bool> {
    let pairs: Vec<(usize, usize)> = batch.iter().map(|e| (e.row, e.col)).collect();
    let preds = model.predict_pairs(features, &pairs)?;
    let knots = quantizer.knots();
    Ok(preds.iter().zip(batch).any(|(&f, e)| {
        let x = if objective.residual_quantization { f - e.value } else { f };
        knots.iter().any(|k| libm::fabs(x - k) < margin)
    }))
}

/// Compares the tape gradient of `objective` with central differences of
/// step `h` for every model parameter and interior boundary.
pub fn check_objective(
    model: &DmfModel,
    quantizer: Option<&Quantizer>,
    features: &Features,
    batch: &[Rating],
    objective: &Objective,
    h: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    let q = if objective.mode == Mode::DmfD { quantizer } else { None };
    let value = evaluate_objective(model, q, features, batch, objective)?;
    let loss = |m: &DmfModel, q: Option<&Quantizer>| evaluate_objective(m, q, features, batch, objective).map(|v| v.loss);
    let mut report = GradCheckReport { checked: 0, max_rel_error: 0.0, worst: None };
    let mut record = |at: ParamRef, a: f64, n: f64| {
        let e = relative_error(a, n, floor);
        report.checked += 1;
        if e > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = libm::fmax(report.max_rel_error, e);
            report.worst = Some((at, a, n));
        }
    };

    let sizes: Vec<usize> = model.parameters().iter().map(|t| t.len()).collect();
    for (t, &len) in sizes.iter().enumerate() {
        for k in 0..len {
            let shifted = |delta: f64| -> Result<f64> {
                let mut m = model.clone();
                m.parameters_mut()[t].values_mut()[k] += delta;
                loss(&m, q)
            };
            let n = (shifted(h)? - shifted(-h)?) / (2.0 * h);
            record(ParamRef::Model { tensor: t, index: k }, value.model_grads[t].values()[k], n);
        }
    }
    if let (Some(q), Some(bg)) = (q, value.boundary_grads.as_ref()) {
        for k in 0..bg.len() {
            let shifted = |delta: f64| -> Result<f64> {
                let mut qq = q.clone();
                let mut b = q.interior().to_vec();
                b[k] += delta;
                qq.set_interior(&b)?;
                loss(model, Some(&qq))
            };
            let n = (shifted(h)? - shifted(-h)?) / (2.0 * h);
            record(ParamRef::Boundary(k), bg[k], n);
        }
    }
    Ok(report)
}
