//! Split manifest: which entries train, validate and test, and which rows
//! and columns are held out. Entry indices refer to the order of ratings
//! in the source file.

use std::path::Path;

use dmf_core::data::{area_split, random_split};
use dmf_core::{AreaSplit, RatingMatrix, SplitFractions, SplitSets};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FORMAT: &str = "dmf-split-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub entries: usize,
    /// FNV-1a over the parsed entries; ties the manifest to its data.
    pub fingerprint: String,
    pub fractions: [f64; 3],
    pub row_holdout: f64,
    pub col_holdout: f64,
    pub held_out_rows: Vec<usize>,
    pub held_out_cols: Vec<usize>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Dataset summary written next to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub rows: usize,
    pub cols: usize,
    pub entries: usize,
    pub density: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mean_rating: f64,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    /// Entry counts of areas I to IV.
    pub areas: [usize; 4],
}

pub fn fingerprint(matrix: &RatingMatrix) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    eat(&(matrix.rows() as u64).to_le_bytes());
    eat(&(matrix.cols() as u64).to_le_bytes());
    for e in matrix.entries() {
        eat(&(e.row as u64).to_le_bytes());
        eat(&(e.col as u64).to_le_bytes());
        eat(&e.value.to_bits().to_le_bytes());
    }
    format!("{:016x}", h)
}

impl Manifest {
    /// Draws the splits. `split_seed` drives the entry split and
    /// `holdout_seed` the held-out rows and columns.
    pub fn build(
        matrix: &RatingMatrix,
        fractions: SplitFractions,
        holdout: Option<(f64, f64)>,
        seed: u64,
    ) -> Result<Self> {
        let sets = random_split(matrix, fractions, dmf_core::rng::sub_seed(seed, "split"))?;
        let (rh, ch) = holdout.unwrap_or((0.0, 0.0));
        let areas = if holdout.is_some() {
            area_split(matrix, rh, ch, dmf_core::rng::sub_seed(seed, "holdout"))?
        } else {
            AreaSplit::full(matrix)
        };
        let held = |n: usize, seen: &dyn Fn(usize) -> bool| (0..n).filter(|&k| !seen(k)).collect::<Vec<_>>();
        Ok(Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            seed,
            rows: matrix.rows(),
            cols: matrix.cols(),
            entries: matrix.len(),
            fingerprint: fingerprint(matrix),
            fractions: [fractions.train, fractions.validation, fractions.test],
            row_holdout: rh,
            col_holdout: ch,
            held_out_rows: held(matrix.rows(), &|i| areas.is_row_seen(i)),
            held_out_cols: held(matrix.cols(), &|j| areas.is_col_seen(j)),
            train: sets.train,
            validation: sets.validation,
            test: sets.test,
        })
    }

    pub fn sets(&self) -> SplitSets {
        SplitSets { train: self.train.clone(), validation: self.validation.clone(), test: self.test.clone() }
    }

    pub fn areas(&self, matrix: &RatingMatrix) -> AreaSplit {
        let mut rows = vec![true; matrix.rows()];
        let mut cols = vec![true; matrix.cols()];
        self.held_out_rows.iter().for_each(|&i| rows[i] = false);
        self.held_out_cols.iter().for_each(|&j| cols[j] = false);
        AreaSplit::from_seen(matrix, rows, cols)
    }

    /// Fails unless the manifest was drawn for `matrix`.
    pub fn check(&self, matrix: &RatingMatrix, path: &Path) -> Result<()> {
        if self.rows != matrix.rows() || self.cols != matrix.cols() || self.entries != matrix.len() {
            return Err(Error::config(
                path,
                format!(
                    "manifest describes {}x{} with {} entries, data is {}x{} with {}",
                    self.rows,
                    self.cols,
                    self.entries,
                    matrix.rows(),
                    matrix.cols(),
                    matrix.len()
                ),
            ));
        }
        if self.fingerprint != fingerprint(matrix) {
            return Err(Error::config(path, "manifest fingerprint does not match the data; rerun prepare"));
        }
        Ok(())
    }

    pub fn stats(&self, matrix: &RatingMatrix) -> Stats {
        let areas = self.areas(matrix);
        let s = matrix.scaling();
        Stats {
            rows: matrix.rows(),
            cols: matrix.cols(),
            entries: matrix.len(),
            density: matrix.density(),
            alpha: s.alpha(),
            beta: s.beta(),
            mean_rating: matrix.entries().iter().map(|e| e.value).sum::<f64>() / matrix.len() as f64,
            train: self.train.len(),
            validation: self.validation.len(),
            test: self.test.len(),
            areas: dmf_core::Area::ALL.map(|a| areas.area(a).len()),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let m: Manifest =
            serde_json::from_str(text).map_err(|e| Error::format(path, format!("bad manifest: {}", e)))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::format(path, format!("not a split manifest (format {:?})", m.format)));
        }
        if m.version != MANIFEST_VERSION {
            return Err(Error::format(path, format!("unsupported manifest version {}", m.version)));
        }
        let n = m.train.len() + m.validation.len() + m.test.len();
        let mut all: Vec<usize> = m.train.iter().chain(&m.validation).chain(&m.test).copied().collect();
        all.sort_unstable();
        all.dedup();
        if n != m.entries || all.len() != n || all.last().is_some_and(|&k| k >= m.entries) {
            return Err(Error::format(path, "split sets do not partition the entries"));
        }
        if m.held_out_rows.iter().any(|&i| i >= m.rows) || m.held_out_cols.iter().any(|&j| j >= m.cols) {
            return Err(Error::format(path, "held-out index out of range"));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dmf_core::synthetic::LowRank;

    #[test]
    fn round_trip_and_partition() {
        let m = LowRank { rows: 30, cols: 20, rank: 2, observed_fraction: 0.5, levels: Some(5), seed: 3 }
            .generate()
            .unwrap();
        let man = Manifest::build(&m, SplitFractions::default(), Some((0.2, 0.2)), 9).unwrap();
        assert_eq!(man.train.len() + man.validation.len() + man.test.len(), 300);
        assert_eq!((man.train.len(), man.validation.len(), man.test.len()), (225, 15, 60));
        assert_eq!(man.held_out_rows.len(), 6);
        assert_eq!(man.held_out_cols.len(), 4);
        let back = Manifest::from_json(&man.to_json(), Path::new("m.json")).unwrap();
        assert_eq!(back, man);
        back.check(&m, Path::new("m.json")).unwrap();
        let st = man.stats(&m);
        assert_eq!(st.areas.iter().sum::<usize>(), 300);
        assert_eq!(man.to_json(), Manifest::build(&m, SplitFractions::default(), Some((0.2, 0.2)), 9).unwrap().to_json());
    }

    #[test]
    fn rejects_mismatch() {
        let m = LowRank { rows: 10, cols: 8, rank: 1, observed_fraction: 0.5, levels: Some(5), seed: 1 }
            .generate()
            .unwrap();
        let other = LowRank { seed: 2, ..LowRank { rows: 10, cols: 8, rank: 1, observed_fraction: 0.5, levels: Some(5), seed: 1 } }
            .generate()
            .unwrap();
        let man = Manifest::build(&m, SplitFractions::default(), None, 1).unwrap();
        assert!(man.check(&other, Path::new("m")).is_err());
        let mut text = man.to_json().replace("\"version\": 1", "\"version\": 7");
        assert!(Manifest::from_json(&text, Path::new("m")).is_err());
        text = man.to_json().replace(&format!("\"entries\": {}", m.len()), "\"entries\": 3");
        assert!(Manifest::from_json(&text, Path::new("m")).is_err());
    }
}
