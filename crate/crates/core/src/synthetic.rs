//! Low-rank test matrices.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::data::{Rating, RatingMatrix, Scaling};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct LowRank {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    /// Share of the `rows * cols` cells that are observed.
    pub observed_fraction: f64,
    /// `Some(k)`: ratings are the integers `1..=k`. `None`: real values in
    /// `[1, 5]`.
    pub levels: Option<usize>,
    pub seed: u64,
}

impl LowRank {
    /// The rating range of generated matrices.
    pub fn scaling(&self) -> Result<Scaling> {
        match self.levels {
            Some(k) => Scaling::new(1.0, k as f64),
            None => Scaling::new(1.0, 5.0),
        }
    }

    /// Generates the matrix.
    ///
    /// Factors are uniform on `[-1, 1]`. Without levels, the scaled value of
    /// cell `(i, j)` is `<u_i, v_j> / rank`, which the cosine head can
    /// represent exactly once `d >= rank + 2`. With levels, that value is
    /// standardized and cut into integer ratings around the middle level.
    pub fn generate(&self) -> Result<RatingMatrix> {
        if self.rows == 0 || self.cols == 0 || self.rank == 0 {
            return Err(Error::Config("rows, cols and rank must be positive".into()));
        }
        if !(self.observed_fraction > 0.0 && self.observed_fraction <= 1.0) {
            return Err(Error::Config(format!("observed fraction {} outside (0, 1]", self.observed_fraction)));
        }
        if self.levels.is_some_and(|k| k < 2) {
            return Err(Error::Config("need at least 2 levels".into()));
        }
        let scaling = self.scaling()?;
        let mut rng = rng::named_rng(self.seed, "synthetic");
        let u: Vec<f64> = (0..self.rows * self.rank).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let v: Vec<f64> = (0..self.cols * self.rank).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let cell = |i: usize, j: usize| -> f64 {
            let r = self.rank;
            (0..r).map(|k| u[i * r + k] * v[j * r + k]).sum::<f64>() / r as f64
        };

        let mut cells: Vec<(usize, usize)> =
            (0..self.rows).flat_map(|i| (0..self.cols).map(move |j| (i, j))).collect();
        let keep = libm::round(self.observed_fraction * cells.len() as f64) as usize;
        cells.shuffle(&mut rng);
        cells.truncate(keep.max(1));
        cells.sort_unstable();

        let values: Vec<f64> = match self.levels {
            None => cells.iter().map(|&(i, j)| scaling.unscale(cell(i, j))).collect(),
            Some(k) => {
                let all: Vec<f64> = (0..self.rows).flat_map(|i| (0..self.cols).map(move |j| (i, j))).map(|(i, j)| cell(i, j)).collect();
                let mean = all.iter().sum::<f64>() / all.len() as f64;
                let var = all.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / all.len() as f64;
                let sd = libm::sqrt(var).max(1e-12);
                let mid = (1.0 + k as f64) / 2.0;
                let spread = (k as f64 - 1.0) / 3.0;
                cells
                    .iter()
                    .map(|&(i, j)| {
                        let z = (cell(i, j) - mean) / sd;
                        libm::round(mid + spread * z).clamp(1.0, k as f64)
                    })
                    .collect()
            }
        };
        let entries = cells.into_iter().zip(values).map(|((row, col), value)| Rating { row, col, value }).collect();
        RatingMatrix::new(self.rows, self.cols, entries, scaling)
    }
}

/// Appends a copy of row `row` of an unscaled matrix as a new last row. Returns the new matrix
/// and, for every entry of the copy, the index of the entry it copies.
pub fn with_cloned_row(matrix: &RatingMatrix, row: usize) -> Result<(RatingMatrix, Vec<(usize, usize)>)> {
    if matrix.is_scaled() {
        return Err(Error::State("clone rows before scaling".into()));
    }
    if row >= matrix.rows() {
        return Err(Error::Index { index: row, bound: matrix.rows() });
    }
    let clone = matrix.rows();
    let mut entries = matrix.entries().to_vec();
    let mut pairs = Vec::new();
    for (k, e) in matrix.entries().iter().enumerate() {
        if e.row == row {
            pairs.push((entries.len(), k));
            entries.push(Rating { row: clone, ..*e });
        }
    }
    Ok((RatingMatrix::new(clone + 1, matrix.cols(), entries, matrix.scaling())?, pairs))
}
