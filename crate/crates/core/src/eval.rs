//! Error metrics and per-area evaluation.

use alloc::format;
use alloc::vec::Vec;

use crate::data::{Area, AreaSplit, Features, RatingMatrix};
use crate::error::{Error, Result};
use crate::model::DmfModel;
use crate::quantizer::Quantizer;

/// Root mean square error over `(prediction, target)` pairs.
pub fn rmse(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Contract("rmse of an empty set".into()));
    }
    let sse: f64 = pairs.iter().map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(libm::sqrt(sse / pairs.len() as f64))
}

/// Mean absolute error over `(prediction, target)` pairs.
pub fn mae(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Contract("mae of an empty set".into()));
    }
    Ok(pairs.iter().map(|(p, t)| libm::fabs(p - t)).sum::<f64>() / pairs.len() as f64)
}

/// Nearest member of the uniform level set `levels`, ties rounding up,
/// values beyond either end clamped.
pub fn round_to_level(x: f64, levels: &[f64]) -> f64 {
    let last = levels.len() - 1;
    if last == 0 {
        return levels[0];
    }
    let step = (levels[last] - levels[0]) / last as f64;
    let k = libm::floor((x - levels[0]) / step + 0.5);
    if k <= 0.0 {
        levels[0]
    } else if k >= last as f64 {
        levels[last]
    } else {
        levels[k as usize]
    }
}

/// Original-domain levels matching the scaled levels of `quantizer`.
pub fn original_levels(model: &DmfModel, quantizer: &Quantizer) -> Result<Vec<f64>> {
    let s = model.scaling();
    let levels = s.level_values(quantizer.delta() * (s.mu() - s.alpha()))?;
    if levels.len() != quantizer.num_levels() {
        return Err(Error::Config(format!(
            "quantizer has {} levels, rating range gives {}",
            quantizer.num_levels(),
            levels.len()
        )));
    }
    Ok(levels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    RealValued,
    Discrete,
    RoundedBaseline,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::RealValued => "real",
            EvalMode::Discrete => "discrete",
            EvalMode::RoundedBaseline => "rounded",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Overall,
    Area(Area),
}

impl Scope {
    pub fn label(self) -> &'static str {
        match self {
            Scope::Overall => "overall",
            Scope::Area(a) => a.label(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScopeMetrics {
    pub scope: Scope,
    pub count: usize,
    /// `None` when the scope holds no entries.
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
}

impl ScopeMetrics {
    fn from_pairs(scope: Scope, pairs: &[(f64, f64)]) -> Result<Self> {
        if pairs.is_empty() {
            return Ok(ScopeMetrics { scope, count: 0, rmse: None, mae: None });
        }
        Ok(ScopeMetrics { scope, count: pairs.len(), rmse: Some(rmse(pairs)?), mae: Some(mae(pairs)?) })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mode: EvalMode,
    /// Overall first, then areas I to IV.
    pub scopes: Vec<ScopeMetrics>,
}

impl MetricsReport {
    pub fn overall(&self) -> &ScopeMetrics {
        &self.scopes[0]
    }

    pub fn area(&self, area: Area) -> &ScopeMetrics {
        &self.scopes[1 + area.index()]
    }

    /// `RMSE >= MAE` in every non-empty scope and counts add up.
    pub fn check(&self) -> Result<()> {
        for s in &self.scopes {
            if let (Some(r), Some(m)) = (s.rmse, s.mae) {
                if !(r >= 0.0 && m >= 0.0 && r >= m * (1.0 - 1e-12)) {
                    return Err(Error::Validation(format!("scope {}: rmse {} < mae {}", s.scope.label(), r, m)));
                }
            }
        }
        let parts: usize = self.scopes[1..].iter().map(|s| s.count).sum();
        if parts != self.overall().count {
            return Err(Error::Validation(format!("area counts sum to {}, overall {}", parts, self.overall().count)));
        }
        Ok(())
    }
}

/// Original-domain predictions for the entries `idx` of a scaled matrix.
pub fn predictions(
    model: &DmfModel,
    quantizer: Option<&Quantizer>,
    matrix: &RatingMatrix,
    features: &Features,
    idx: &[usize],
    mode: EvalMode,
) -> Result<Vec<(f64, f64)>> {
    let pairs: Vec<(usize, usize)> = idx
        .iter()
        .map(|&k| matrix.entries().get(k).map(|e| (e.row, e.col)).ok_or(Error::Index { index: k, bound: matrix.len() }))
        .collect::<Result<_>>()?;
    let raw = model.predict_pairs(features, &pairs)?;
    let s = model.scaling();
    let out: Vec<f64> = match mode {
        EvalMode::RealValued => raw.iter().map(|&f| s.unscale(f)).collect(),
        EvalMode::Discrete => {
            let q = quantizer.ok_or_else(|| Error::State("discrete evaluation needs a quantizer".into()))?;
            let levels = original_levels(model, q)?;
            raw.iter().map(|&f| levels[q.hard_index(f)]).collect()
        }
        EvalMode::RoundedBaseline => {
            let levels = s.level_values(1.0)?;
            raw.iter().map(|&f| round_to_level(s.unscale(f), &levels)).collect()
        }
    };
    Ok(out.into_iter().zip(idx).map(|(p, &k)| (p, s.unscale(matrix.entries()[k].value))).collect())
}

/// Metrics overall and per area. `areas` should already be restricted to the
/// evaluation entries; each pair is checked against its area before it is
/// predicted.
pub fn evaluate_areas(
    model: &DmfModel,
    quantizer: Option<&Quantizer>,
    matrix: &RatingMatrix,
    features: &Features,
    areas: &AreaSplit,
    mode: EvalMode,
) -> Result<MetricsReport> {
    let mut all = Vec::new();
    let mut per_area = Vec::with_capacity(4);
    for area in Area::ALL {
        let idx = areas.area(area);
        for &k in idx {
            let e = &matrix.entries()[k];
            let actual = Area::classify(features.is_row_seen(e.row), features.is_col_seen(e.col));
            if actual != area {
                return Err(Error::Contract(format!(
                    "entry ({}, {}) listed in area {} but lies in {}",
                    e.row,
                    e.col,
                    area.label(),
                    actual.label()
                )));
            }
        }
        let pairs = predictions(model, quantizer, matrix, features, idx, mode)?;
        per_area.push(ScopeMetrics::from_pairs(Scope::Area(area), &pairs)?);
        all.extend(pairs);
    }
    let mut scopes = Vec::with_capacity(5);
    scopes.push(ScopeMetrics::from_pairs(Scope::Overall, &all)?);
    scopes.extend(per_area);
    let report = MetricsReport { mode, scopes };
    report.check()?;
    Ok(report)
}

/// Real-valued predictions unscaled and rounded to the nearest integer
/// rating: the comparator for discrete training.
pub fn rounded_baseline(
    model: &DmfModel,
    matrix: &RatingMatrix,
    features: &Features,
    areas: &AreaSplit,
) -> Result<MetricsReport> {
    evaluate_areas(model, None, matrix, features, areas, EvalMode::RoundedBaseline)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn metric_examples() {
        assert_eq!(rmse(&[(2.0, 2.0), (4.0, 4.0)]).unwrap(), 0.0);
        assert_eq!(mae(&[(2.0, 2.0)]).unwrap(), 0.0);
        assert_eq!(rmse(&[(3.0, 1.0), (1.0, 3.0)]).unwrap(), 2.0);
        assert_eq!(mae(&[(3.0, 1.0), (1.0, 3.0)]).unwrap(), 2.0);
        assert!(rmse(&[]).is_err());
        assert!(mae(&[]).is_err());
    }

    #[test]
    fn metrics_match_direct_formula() {
        let mut rng = crate::rng::rng(3);
        let pairs: Vec<(f64, f64)> = (0..100).map(|_| (rng.gen_range(0.0..6.0), rng.gen_range(1.0..5.0))).collect();
        let mut sse = 0.0;
        let mut sae = 0.0;
        for (p, t) in &pairs {
            sse += (p - t) * (p - t);
            sae += libm::fabs(p - t);
        }
        assert!(libm::fabs(rmse(&pairs).unwrap() - libm::sqrt(sse / 100.0)) < 1e-12);
        assert!(libm::fabs(mae(&pairs).unwrap() - sae / 100.0) < 1e-12);
        assert!(rmse(&pairs).unwrap() >= mae(&pairs).unwrap());
    }

    #[test]
    fn rounding_convention() {
        let levels = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(round_to_level(3.4, &levels), 3.0);
        assert_eq!(round_to_level(3.5, &levels), 4.0);
        assert_eq!(round_to_level(5.2, &levels), 5.0);
        assert_eq!(round_to_level(-3.0, &levels), 1.0);
        assert_eq!(round_to_level(1.49, &levels), 1.0);
    }
}
