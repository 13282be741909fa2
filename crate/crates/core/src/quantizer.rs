//! Hard quantizer, its smooth logistic surrogate, and the sharpness schedule.
//!
//! A quantizer over `d` uniformly spaced levels `I_1 < ... < I_d` (gap `Δ`)
//! owns boundaries `b_0 < ... < b_d`. The hard map sends `x` to `I_v` when
//! `x` lies in `[b_{v-1}, b_v)`. The surrogate replaces each step at an
//! interior boundary `b_v` by a logistic of slope `λ`, selected by the fixed
//! knots `q = [b_0, I_2, ..., I_{d-1}, b_d]`:
//!
//! ```text
//! G(x) = I_v + Δ * σ(λ (x - b_v))    for q_v <= x < q_{v+1},  v = 1..d-1
//! ```
//!
//! Only the interior boundaries are learnable; `b_0` and `b_d` stay at the
//! uniform reference endpoints.

use alloc::format;
use alloc::vec::Vec;

use crate::data::Scaling;
use crate::error::{Error, Result};
use crate::tape::{logistic, SigmoidSegments};

/// Smallest gap kept between consecutive boundaries.
pub const MIN_BOUNDARY_GAP: f64 = 1e-4;

/// Verifies that `levels` are strictly increasing with one constant gap and
/// returns that gap.
pub fn level_gap(levels: &[f64]) -> Result<f64> {
    if levels.len() < 2 {
        return Err(Error::Config(format!("need at least 2 quantization levels, got {}", levels.len())));
    }
    if levels.iter().any(|l| !l.is_finite()) {
        return Err(Error::Config("quantization levels must be finite".into()));
    }
    let delta = levels[1] - levels[0];
    if delta <= 0.0 {
        return Err(Error::Config("quantization levels must be strictly increasing".into()));
    }
    let tol = 1e-9 * libm::fmax(1.0, delta);
    for w in levels.windows(2) {
        if libm::fabs((w[1] - w[0]) - delta) > tol {
            return Err(Error::Config(format!(
                "quantization levels must be uniformly spaced (gap {} vs {})",
                w[1] - w[0],
                delta
            )));
        }
    }
    Ok(delta)
}

/// Boundaries of the uniform quantizer for `levels`: midpoints between
/// neighbours plus half a gap beyond each extreme level.
pub fn uniform_reference(levels: &[f64]) -> Result<Vec<f64>> {
    let delta = level_gap(levels)?;
    let d = levels.len();
    let mut b = Vec::with_capacity(d + 1);
    b.push(levels[0] - delta / 2.0);
    b.extend(levels.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    b.push(levels[d - 1] + delta / 2.0);
    Ok(b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer {
    levels: Vec<f64>,
    boundaries: Vec<f64>,
    reference: Vec<f64>,
    knots: Vec<f64>,
    delta: f64,
    lambda: f64,
}

impl Quantizer {
    /// Quantizer with boundaries at the uniform reference.
    pub fn uniform(levels: Vec<f64>, lambda: f64) -> Result<Self> {
        let reference = uniform_reference(&levels)?;
        Quantizer::with_boundaries(levels, reference, lambda)
    }

    /// Levels for ratings `alpha, alpha + step, ..., beta`, expressed in the
    /// scaled domain of `scaling`.
    pub fn for_ratings(scaling: &Scaling, step: f64, lambda: f64) -> Result<Self> {
        let levels = scaling.level_values(step)?.into_iter().map(|l| scaling.scale(l)).collect();
        Quantizer::uniform(levels, lambda)
    }

    /// Rebuilds a quantizer from stored state. Endpoints must equal the
    /// reference endpoints and the order must be strict.
    pub fn with_boundaries(levels: Vec<f64>, boundaries: Vec<f64>, lambda: f64) -> Result<Self> {
        let delta = level_gap(&levels)?;
        let reference = uniform_reference(&levels)?;
        let d = levels.len();
        if boundaries.len() != d + 1 {
            return Err(Error::Config(format!("{} levels need {} boundaries, got {}", d, d + 1, boundaries.len())));
        }
        if boundaries[0] != reference[0] || boundaries[d] != reference[d] {
            return Err(Error::Config("outer boundaries must sit at the reference endpoints".into()));
        }
        if boundaries.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("boundaries must be strictly increasing".into()));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("sharpness must be positive and finite, got {}", lambda)));
        }
        let mut knots = Vec::with_capacity(d);
        knots.push(boundaries[0]);
        knots.extend_from_slice(&levels[1..d - 1]);
        knots.push(boundaries[d]);
        Ok(Quantizer { levels, boundaries, reference, knots, delta, lambda })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn set_lambda(&mut self, lambda: f64) -> Result<()> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("sharpness must be positive and finite, got {}", lambda)));
        }
        self.lambda = lambda;
        Ok(())
    }

    /// The learnable boundaries `b_1..b_{d-1}`.
    pub fn interior(&self) -> &[f64] {
        &self.boundaries[1..self.levels.len()]
    }

    /// Replaces the interior boundaries and projects them back to a strictly
    /// increasing sequence with gaps of at least [`MIN_BOUNDARY_GAP`].
    pub fn set_interior(&mut self, values: &[f64]) -> Result<()> {
        let d = self.levels.len();
        if values.len() != d - 1 {
            return Err(Error::dim("set_interior", format!("{} values for {} interior boundaries", values.len(), d - 1)));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("boundary update"));
        }
        self.boundaries[1..d].copy_from_slice(values);
        self.project();
        Ok(())
    }

    fn project(&mut self) {
        let d = self.levels.len();
        for v in 1..d {
            let lo = self.boundaries[v - 1] + MIN_BOUNDARY_GAP;
            if self.boundaries[v] < lo {
                self.boundaries[v] = lo;
            }
        }
        for v in (1..d).rev() {
            let hi = self.boundaries[v + 1] - MIN_BOUNDARY_GAP;
            if self.boundaries[v] > hi {
                self.boundaries[v] = hi;
            }
        }
    }

    /// Index `v` (0-based) of the interval `[b_v, b_{v+1})` containing `x`.
    /// Values below `b_0` map to the first level, values at or above `b_d` to
    /// the last.
    pub fn hard_index(&self, x: f64) -> usize {
        self.interior().partition_point(|&b| b <= x)
    }

    pub fn hard_quantize(&self, x: f64) -> f64 {
        self.levels[self.hard_index(x)]
    }

    /// Segment description used by the differentiable tape operation.
    pub fn segments(&self) -> SigmoidSegments {
        let d = self.levels.len();
        SigmoidSegments {
            knots: self.knots.clone(),
            bases: self.levels[..d - 1].to_vec(),
            height: self.delta,
            slope: self.lambda,
        }
    }

    /// Index (0-based) of the selector segment owning `x`.
    pub fn segment(&self, x: f64) -> usize {
        let d = self.levels.len();
        self.knots[1..d - 1].partition_point(|&k| k <= x)
    }

    pub fn soft_quantize(&self, x: f64) -> f64 {
        let v = self.segment(x);
        self.levels[v] + self.delta * logistic(self.lambda * (x - self.boundaries[v + 1]))
    }

    /// `(dG/dx, dG/db)` where `b` is the interior boundary active at `x`.
    pub fn soft_quantize_grad(&self, x: f64) -> (f64, f64) {
        let v = self.segment(x);
        let s = logistic(self.lambda * (x - self.boundaries[v + 1]));
        let d = self.delta * self.lambda * s * (1.0 - s);
        (d, -d)
    }

    /// `||b - b_ref||^2`.
    pub fn boundary_penalty(&self) -> f64 {
        self.boundaries.iter().zip(&self.reference).map(|(b, r)| (b - r) * (b - r)).sum()
    }

    /// Gradient of [`Quantizer::boundary_penalty`] with respect to the
    /// interior boundaries.
    pub fn boundary_penalty_grad(&self) -> Vec<f64> {
        let d = self.levels.len();
        (1..d).map(|v| 2.0 * (self.boundaries[v] - self.reference[v])).collect()
    }

    /// Reference values of the interior boundaries.
    pub fn interior_reference(&self) -> &[f64] {
        &self.reference[1..self.levels.len()]
    }
}

/// Geometric sharpness schedule `λ(t) = λ_start (λ_end / λ_start)^(t / T)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaSchedule {
    start: f64,
    end: f64,
    total_epochs: usize,
}

impl LambdaSchedule {
    pub fn new(start: f64, end: f64, total_epochs: usize) -> Result<Self> {
        if !(start > 0.0 && start.is_finite()) {
            return Err(Error::Config(format!("lambda_start must be positive, got {}", start)));
        }
        if !(end >= start && end.is_finite()) {
            return Err(Error::Config(format!("lambda_end ({}) must be >= lambda_start ({})", end, start)));
        }
        Ok(LambdaSchedule { start, end, total_epochs })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn total_epochs(&self) -> usize {
        self.total_epochs
    }

    /// Sharpness for epoch `t`, held at `λ_end` from `t = T` on.
    pub fn at(&self, t: usize) -> f64 {
        if t >= self.total_epochs {
            return self.end;
        }
        if t == 0 {
            return self.start;
        }
        let frac = t as f64 / self.total_epochs as f64;
        self.start * libm::pow(self.end / self.start, frac)
    }
}
