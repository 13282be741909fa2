//! Observed-entry storage, value scaling, random splits, extendability areas
//! and the input vectors fed to the two branches.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{SparseRows, Tensor};

/// Linear map between the rating range `[alpha, beta]` and `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    alpha: f64,
    beta: f64,
}

impl Scaling {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite() && alpha < beta) {
            return Err(Error::Config(format!("rating range needs alpha < beta, got [{}, {}]", alpha, beta)));
        }
        Ok(Scaling { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Midpoint `(alpha + beta) / 2`.
    pub fn mu(&self) -> f64 {
        (self.alpha + self.beta) / 2.0
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.alpha && value <= self.beta
    }

    /// `(x - mu) / (mu - alpha)`
    pub fn scale(&self, x: f64) -> f64 {
        let mu = self.mu();
        (x - mu) / (mu - self.alpha)
    }

    /// Inverse of [`Scaling::scale`].
    pub fn unscale(&self, y: f64) -> f64 {
        let mu = self.mu();
        y * (mu - self.alpha) + mu
    }

    /// `alpha, alpha + step, ..., beta`; the range must be a whole number of
    /// steps.
    pub fn level_values(&self, step: f64) -> Result<Vec<f64>> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::Config(format!("level step must be positive, got {}", step)));
        }
        let span = (self.beta - self.alpha) / step;
        let count = libm::round(span);
        if libm::fabs(span - count) > 1e-9 || count < 1.0 {
            return Err(Error::Config(format!(
                "range [{}, {}] is not a whole number of steps of {}",
                self.alpha, self.beta, step
            )));
        }
        let count = count as usize;
        Ok((0..=count)
            .map(|k| if k == count { self.beta } else { self.alpha + k as f64 * step })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Sparse matrix of observed entries.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Rating>,
    scaling: Scaling,
    scaled: bool,
}

impl RatingMatrix {
    /// Builds an unscaled matrix. Values must lie in `[alpha, beta]` and
    /// every `(row, col)` may appear once.
    pub fn new(rows: usize, cols: usize, entries: Vec<Rating>, scaling: Scaling) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::NoEntries);
        }
        for e in &entries {
            if e.row >= rows {
                return Err(Error::Index { index: e.row, bound: rows });
            }
            if e.col >= cols {
                return Err(Error::Index { index: e.col, bound: cols });
            }
            if !scaling.contains(e.value) {
                return Err(Error::Validation(format!(
                    "value {} at ({}, {}) outside [{}, {}]",
                    e.value,
                    e.row,
                    e.col,
                    scaling.alpha(),
                    scaling.beta()
                )));
            }
        }
        let mut keys: Vec<(usize, usize)> = entries.iter().map(|e| (e.row, e.col)).collect();
        keys.sort_unstable();
        if let Some(w) = keys.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateEntry { row: w[0].0, col: w[0].1 });
        }
        Ok(RatingMatrix { rows, cols, entries, scaling, scaled: false })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[Rating] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scaling(&self) -> Scaling {
        self.scaling
    }

    pub fn is_scaled(&self) -> bool {
        self.scaled
    }

    pub fn density(&self) -> f64 {
        self.entries.len() as f64 / (self.rows as f64 * self.cols as f64)
    }

    /// Copy with every value mapped into `[-1, 1]`.
    pub fn scale(&self) -> Result<RatingMatrix> {
        if self.scaled {
            return Err(Error::State("matrix is already scaled".into()));
        }
        let entries = self
            .entries
            .iter()
            .map(|e| Rating { value: self.scaling.scale(e.value), ..*e })
            .collect();
        Ok(RatingMatrix { entries, scaled: true, ..*self })
    }

    /// Copy with values mapped back to `[alpha, beta]`.
    pub fn unscale(&self) -> Result<RatingMatrix> {
        if !self.scaled {
            return Err(Error::State("matrix is not scaled".into()));
        }
        let entries = self
            .entries
            .iter()
            .map(|e| Rating { value: self.scaling.unscale(e.value), ..*e })
            .collect();
        Ok(RatingMatrix { entries, scaled: false, ..*self })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self> {
        let all = [train, validation, test];
        if all.iter().any(|f| !f.is_finite() || *f < 0.0) || train <= 0.0 {
            return Err(Error::Config(format!(
                "split fractions must be non-negative with a positive train share, got {:?}",
                all
            )));
        }
        if libm::fabs(train + validation + test - 1.0) > 1e-9 {
            return Err(Error::Config(format!("split fractions must sum to 1, got {:?}", all)));
        }
        Ok(SplitFractions { train, validation, test })
    }
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.75, validation: 0.05, test: 0.20 }
    }
}

/// Disjoint entry-index sets; each list is sorted.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitSets {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles the entry indices under `seed` and cuts them by `fractions`.
pub fn random_split(matrix: &RatingMatrix, fractions: SplitFractions, seed: u64) -> Result<SplitSets> {
    let fractions = SplitFractions::new(fractions.train, fractions.validation, fractions.test)?;
    let n = matrix.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng(seed));

    let n_train = (libm::round(fractions.train * n as f64) as usize).min(n);
    let n_val = (libm::round(fractions.validation * n as f64) as usize).min(n - n_train);
    let mut train = order[..n_train].to_vec();
    let mut validation = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(SplitSets { train, validation, test })
}

/// Extendability areas, by whether an entry's row and column were seen in
/// training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Area {
    /// seen row, seen column
    I,
    /// unseen row, seen column
    II,
    /// seen row, unseen column
    III,
    /// unseen row, unseen column
    IV,
}

impl Area {
    pub const ALL: [Area; 4] = [Area::I, Area::II, Area::III, Area::IV];

    pub fn classify(row_seen: bool, col_seen: bool) -> Area {
        match (row_seen, col_seen) {
            (true, true) => Area::I,
            (false, true) => Area::II,
            (true, false) => Area::III,
            (false, false) => Area::IV,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Area::I => "I",
            Area::II => "II",
            Area::III => "III",
            Area::IV => "IV",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AreaSplit {
    row_seen: Vec<bool>,
    col_seen: Vec<bool>,
    areas: [Vec<usize>; 4],
}

impl AreaSplit {
    /// Every row and column seen; all entries in area I.
    pub fn full(matrix: &RatingMatrix) -> Self {
        AreaSplit::from_seen(matrix, vec![true; matrix.rows()], vec![true; matrix.cols()])
    }

    pub fn from_seen(matrix: &RatingMatrix, row_seen: Vec<bool>, col_seen: Vec<bool>) -> Self {
        let mut areas: [Vec<usize>; 4] = Default::default();
        for (k, e) in matrix.entries().iter().enumerate() {
            areas[Area::classify(row_seen[e.row], col_seen[e.col]).index()].push(k);
        }
        AreaSplit { row_seen, col_seen, areas }
    }

    pub fn seen_rows(&self) -> Vec<usize> {
        (0..self.row_seen.len()).filter(|&i| self.row_seen[i]).collect()
    }

    pub fn seen_cols(&self) -> Vec<usize> {
        (0..self.col_seen.len()).filter(|&j| self.col_seen[j]).collect()
    }

    pub fn is_row_seen(&self, row: usize) -> bool {
        self.row_seen.get(row).copied().unwrap_or(false)
    }

    pub fn is_col_seen(&self, col: usize) -> bool {
        self.col_seen.get(col).copied().unwrap_or(false)
    }

    pub fn area_of(&self, row: usize, col: usize) -> Area {
        Area::classify(self.is_row_seen(row), self.is_col_seen(col))
    }

    pub fn area(&self, area: Area) -> &[usize] {
        &self.areas[area.index()]
    }

    /// Same seen sets, with every area intersected with `subset` (entry
    /// indices, any order).
    pub fn restrict(&self, subset: &[usize]) -> AreaSplit {
        let mut keep = subset.to_vec();
        keep.sort_unstable();
        let areas = self.areas.clone().map(|a| a.into_iter().filter(|k| keep.binary_search(k).is_ok()).collect());
        AreaSplit { row_seen: self.row_seen.clone(), col_seen: self.col_seen.clone(), areas }
    }
}

/// Holds out `round(row_fraction * n)` rows and `round(col_fraction * m)`
/// columns at random and sorts every entry into its area.
pub fn area_split(matrix: &RatingMatrix, row_fraction: f64, col_fraction: f64, seed: u64) -> Result<AreaSplit> {
    for (name, f) in [("row", row_fraction), ("column", col_fraction)] {
        if !(0.0..1.0).contains(&f) {
            return Err(Error::Config(format!("{} holdout fraction must lie in [0, 1), got {}", name, f)));
        }
    }
    let pick = |count: usize, fraction: f64, label: &str| -> Result<Vec<bool>> {
        let held = libm::round(fraction * count as f64) as usize;
        if held >= count {
            return Err(Error::Config(format!("{} holdout leaves no seen {}s", label, label)));
        }
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(&mut rng::named_rng(seed, label));
        let mut seen = vec![true; count];
        for &k in &order[..held] {
            seen[k] = false;
        }
        Ok(seen)
    };
    let row_seen = pick(matrix.rows(), row_fraction, "row")?;
    let col_seen = pick(matrix.cols(), col_fraction, "column")?;
    Ok(AreaSplit::from_seen(matrix, row_seen, col_seen))
}

/// Builds the branch inputs from a set of visible (scaled) entries.
///
/// Row vectors live over the seen columns and column vectors over the seen
/// rows, whatever the row or column itself, so every extendability case
/// feeds the trained model vectors of the right length. Unobserved
/// coordinates are zero, which is the scaled midpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    row_pos: Vec<Option<usize>>,
    col_pos: Vec<Option<usize>>,
    row_dim: usize,
    col_dim: usize,
    by_row: Vec<Vec<(usize, f64)>>,
    by_col: Vec<Vec<(usize, f64)>>,
}

impl Features {
    /// `visible` lists the entries whose values may be read as inputs,
    /// typically the training split; everything else is masked.
    pub fn new(matrix: &RatingMatrix, visible: &[usize], areas: &AreaSplit) -> Result<Self> {
        if !matrix.is_scaled() {
            return Err(Error::State("features are built from a scaled matrix".into()));
        }
        let positions = |seen: &dyn Fn(usize) -> bool, count: usize| {
            let mut next = 0;
            let pos: Vec<Option<usize>> = (0..count)
                .map(|k| {
                    seen(k).then(|| {
                        next += 1;
                        next - 1
                    })
                })
                .collect();
            (pos, next)
        };
        let (row_pos, col_dim) = positions(&|i| areas.is_row_seen(i), matrix.rows());
        let (col_pos, row_dim) = positions(&|j| areas.is_col_seen(j), matrix.cols());
        if row_dim == 0 || col_dim == 0 {
            return Err(Error::Config("no seen rows or columns".into()));
        }

        let mut by_row = vec![Vec::new(); matrix.rows()];
        let mut by_col = vec![Vec::new(); matrix.cols()];
        for &k in visible {
            let e = matrix.entries().get(k).ok_or(Error::Index { index: k, bound: matrix.len() })?;
            if let Some(p) = col_pos[e.col] {
                by_row[e.row].push((p, e.value));
            }
            if let Some(p) = row_pos[e.row] {
                by_col[e.col].push((p, e.value));
            }
        }
        by_row.iter_mut().chain(by_col.iter_mut()).for_each(|v| v.sort_unstable_by_key(|x| x.0));
        Ok(Features { row_pos, col_pos, row_dim, col_dim, by_row, by_col })
    }

    /// Input length of the row branch (number of seen columns).
    pub fn row_dim(&self) -> usize {
        self.row_dim
    }

    /// Input length of the column branch (number of seen rows).
    pub fn col_dim(&self) -> usize {
        self.col_dim
    }

    pub fn rows(&self) -> usize {
        self.by_row.len()
    }

    pub fn cols(&self) -> usize {
        self.by_col.len()
    }

    pub fn is_row_seen(&self, row: usize) -> bool {
        self.row_pos.get(row).is_some_and(|p| p.is_some())
    }

    pub fn is_col_seen(&self, col: usize) -> bool {
        self.col_pos.get(col).is_some_and(|p| p.is_some())
    }

    /// `(input position, scaled value)` pairs of a row.
    pub fn row_observations(&self, row: usize) -> Result<&[(usize, f64)]> {
        self.by_row.get(row).map(|v| &v[..]).ok_or(Error::Index { index: row, bound: self.rows() })
    }

    pub fn col_observations(&self, col: usize) -> Result<&[(usize, f64)]> {
        self.by_col.get(col).map(|v| &v[..]).ok_or(Error::Index { index: col, bound: self.cols() })
    }

    pub fn row_vector(&self, row: usize) -> Result<Tensor> {
        Ok(self.row_batch(&[row])?.to_dense().into_vector())
    }

    pub fn col_vector(&self, col: usize) -> Result<Tensor> {
        Ok(self.col_batch(&[col])?.to_dense().into_vector())
    }

    pub fn row_batch(&self, rows: &[usize]) -> Result<SparseRows> {
        let mut out = SparseRows::new(self.row_dim);
        for &r in rows {
            out.push_row(self.row_observations(r)?.iter().copied())?;
        }
        Ok(out)
    }

    pub fn col_batch(&self, cols: &[usize]) -> Result<SparseRows> {
        let mut out = SparseRows::new(self.col_dim);
        for &c in cols {
            out.push_row(self.col_observations(c)?.iter().copied())?;
        }
        Ok(out)
    }

    /// Appends an unseen row described by `(column, scaled value)` pairs.
    /// Observations on unseen columns are dropped. Returns the new row index.
    pub fn push_row(&mut self, observations: &[(usize, f64)]) -> Result<usize> {
        let obs = Self::project(observations, &self.col_pos)?;
        if obs.is_empty() {
            return Err(Error::Validation("new row has no observations on seen columns".into()));
        }
        self.by_row.push(obs);
        self.row_pos.push(None);
        Ok(self.by_row.len() - 1)
    }

    /// Appends an unseen column described by `(row, scaled value)` pairs.
    pub fn push_col(&mut self, observations: &[(usize, f64)]) -> Result<usize> {
        let obs = Self::project(observations, &self.row_pos)?;
        if obs.is_empty() {
            return Err(Error::Validation("new column has no observations on seen rows".into()));
        }
        self.by_col.push(obs);
        self.col_pos.push(None);
        Ok(self.by_col.len() - 1)
    }

    fn project(observations: &[(usize, f64)], pos: &[Option<usize>]) -> Result<Vec<(usize, f64)>> {
        let mut out = Vec::with_capacity(observations.len());
        for &(k, v) in observations {
            let p = pos.get(k).ok_or(Error::Index { index: k, bound: pos.len() })?;
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("scaled value {} outside [-1, 1]", v)));
            }
            if let Some(p) = p {
                out.push((*p, v));
            }
        }
        out.sort_unstable_by_key(|x| x.0);
        if out.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Validation("repeated observation in new vector".into()));
        }
        Ok(out)
    }
}

impl Tensor {
    /// Flattens a single-row matrix into a rank-1 tensor.
    pub(crate) fn into_vector(self) -> Tensor {
        let values = self.into_values();
        Tensor::from_parts(vec![values.len()], values)
    }
}
